//! Dirichlet form, gradient, divergence, Laplacians, heat flow and Γ₂.
//!
//! With `G` the per-cell P1 gradient and `W` the cell masses, the stiffness
//! is `S = GᵀWG`, the divergence `div = −M⁻¹GᵀW` and the Laplacian
//! `Δ = −M⁻¹S`, so `div ∘ ∇ = Δ` holds as an operator identity.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::error::{CalcError, Result};
use crate::fields::{self, CellScalar, OneForm, ScalarField, SignedMeasure, VectorField};
use crate::linalg::{self, Cholesky, Csr};
use crate::poly::Polynomial;
use crate::report::{self, Measurement};
use crate::space::DiscreteSpace;

/// Maximal implicit Euler step of every heat flow.
pub const HEAT_STEP: f64 = 0.01;

/// Heat time at which measure densities are read off in pointwise checks.
pub const DENSITY_SMOOTHING: f64 = 0.05;

#[derive(Debug)]
pub struct Dirichlet {
    grad: Csr,
    grad_t_w: Csr,
    stiffness: Csr,
    mass: Vec<f64>,
    cell_weights: Vec<f64>,
    heat_factors: Mutex<HashMap<u64, Arc<Cholesky>>>,
}

/// Number of implicit Euler steps and their length for flowing up to time `t`.
pub fn heat_steps(t: f64) -> (usize, f64) {
    if t <= 0.0 {
        return (0, 0.0);
    }
    let n = (t / HEAT_STEP - 1e-12).ceil().max(1.0) as usize;
    (n, t / n as f64)
}

impl Dirichlet {
    pub fn new(space: &DiscreteSpace) -> Result<Self> {
        if !space.is_orthonormal() {
            return Err(CalcError::InvalidArgument("calculus operators need orthonormal cell frames".into()));
        }
        let mut trips = Vec::new();
        for (c, cell) in space.cells().iter().enumerate() {
            let g = space.geometry(c);
            for (i, &v) in cell.vertices().iter().enumerate() {
                for a in 0..cell.dim {
                    trips.push((2 * c + a, v, g.grads[i][a]));
                }
            }
        }
        let grad = Csr::from_triplets(2 * space.n_cells(), space.n_vertices(), &trips);
        let cell_weights: Vec<f64> = space.cell_mass().iter().flat_map(|&m| [m, m]).collect();
        let grad_t_w = grad.transpose().scale_cols(&cell_weights);
        let stiffness = grad_t_w.matmul(&grad);
        Ok(Dirichlet {
            grad,
            grad_t_w,
            stiffness,
            mass: space.vertex_mass().to_vec(),
            cell_weights,
            heat_factors: Mutex::new(HashMap::new()),
        })
    }

    /// Gradient operator, rows `2c + a` for frame component `a` of cell `c`.
    pub fn grad_matrix(&self) -> &Csr {
        &self.grad
    }

    pub fn stiffness(&self) -> &Csr {
        &self.stiffness
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Cell masses repeated once per frame component.
    pub fn cell_weights(&self) -> &[f64] {
        &self.cell_weights
    }

    pub fn gradient(&self, f: &ScalarField) -> VectorField {
        VectorField::from_flat(&self.grad.mul_vec(&f.0))
    }

    pub fn differential(&self, f: &ScalarField) -> OneForm {
        OneForm(self.gradient(f).0)
    }

    /// `E(f) = ½∫|∇f|² dm`.
    pub fn energy(&self, f: &ScalarField) -> f64 {
        0.5 * linalg::dot(&f.0, &self.stiffness.mul_vec(&f.0))
    }

    /// Per-cell `⟨∇f,∇g⟩`.
    pub fn cell_carre(&self, f: &ScalarField, g: &ScalarField) -> Vec<f64> {
        let a = self.grad.mul_vec(&f.0);
        let b = self.grad.mul_vec(&g.0);
        a.chunks_exact(2).zip(b.chunks_exact(2)).map(|(x, y)| x[0] * y[0] + x[1] * y[1]).collect()
    }

    /// Carré du champ `Γ(f,g)` on vertices.
    pub fn carre_du_champ(&self, space: &DiscreteSpace, f: &ScalarField, g: &ScalarField) -> ScalarField {
        ScalarField(fields::to_vertices(space, &self.cell_carre(f, g)))
    }

    pub fn divergence(&self, x: &VectorField) -> ScalarField {
        let y = self.grad_t_w.mul_vec(&x.flatten());
        ScalarField(y.iter().zip(&self.mass).map(|(v, m)| -v / m).collect())
    }

    pub fn laplacian(&self, f: &ScalarField) -> ScalarField {
        let y = self.stiffness.mul_vec(&f.0);
        ScalarField(y.iter().zip(&self.mass).map(|(v, m)| -v / m).collect())
    }

    /// `𝚫f` with vertex weights `−Sf`.
    pub fn measure_laplacian(&self, f: &ScalarField) -> SignedMeasure {
        SignedMeasure(self.stiffness.mul_vec(&f.0).iter().map(|v| -v).collect())
    }

    fn heat_factor(&self, dt: f64) -> Result<Arc<Cholesky>> {
        let key = dt.to_bits();
        let mut cache = self.heat_factors.lock().expect("heat cache poisoned");
        if let Some(f) = cache.get(&key) {
            return Ok(f.clone());
        }
        let a = self.stiffness.add(&Csr::diagonal(&self.mass), dt, 1.0);
        let f = Arc::new(Cholesky::new(&a)?);
        cache.insert(key, f.clone());
        Ok(f)
    }

    /// One implicit Euler step `(M + dt S) u' = M u`.
    pub fn heat_step(&self, f: &ScalarField, dt: f64) -> Result<ScalarField> {
        let factor = self.heat_factor(dt)?;
        let rhs: Vec<f64> = f.0.iter().zip(&self.mass).map(|(a, m)| a * m).collect();
        Ok(ScalarField(factor.solve(&rhs)))
    }

    /// `h_t f`, implicit Euler with `Δt = t/⌈t/0.01⌉`.
    pub fn heat_flow(&self, f: &ScalarField, t: f64) -> Result<ScalarField> {
        Ok(self.heat_trajectory(f, t)?.pop().expect("trajectory contains the initial datum"))
    }

    /// Every implicit Euler iterate of `h_s f`, `s ∈ [0,t]`, including `f` itself.
    pub fn heat_trajectory(&self, f: &ScalarField, t: f64) -> Result<Vec<ScalarField>> {
        if t < 0.0 || !t.is_finite() {
            return Err(CalcError::InvalidArgument(format!("heat flow time must be nonnegative, got {t}")));
        }
        let (n, dt) = heat_steps(t);
        let mut out = Vec::with_capacity(n + 1);
        out.push(f.clone());
        for _ in 0..n {
            let next = self.heat_step(out.last().expect("nonempty"), dt)?;
            out.push(next);
        }
        Ok(out)
    }

    /// Density of `μ` tested against the heat kernel at time `eps`, i.e. the
    /// density of `h_eps μ`. With `eps = 0` this is the plain density `μ/m`.
    pub fn smoothed_density(&self, mu: &SignedMeasure, eps: f64) -> Result<ScalarField> {
        let dens = ScalarField(mu.0.iter().zip(&self.mass).map(|(x, m)| x / m).collect());
        self.heat_flow(&dens, eps)
    }

    /// Solves `−Δu = g` for `g` of zero mean on each component, returning the
    /// solution of zero mean.
    pub fn poisson(&self, space: &DiscreteSpace, g: &ScalarField) -> Result<ScalarField> {
        let kernel = component_indicators(space);
        let rhs: Vec<f64> = g.0.iter().zip(&self.mass).map(|(a, m)| a * m).collect();
        let out = linalg::pcg(|x| self.stiffness.mul_vec(x), &rhs, &self.stiffness.diag(), &kernel, 1e-13, 20 * space.n_vertices() + 100)?;
        Ok(ScalarField(out.x))
    }

    /// `Γ₂(f,g) = ½𝚫⟨∇f,∇g⟩ − ½(⟨∇f,∇Δg⟩ + ⟨∇g,∇Δf⟩) m`.
    ///
    /// The cell quantity `⟨∇f,∇g⟩` is moved to vertices with the
    /// mass-weighted average before the measure-valued Laplacian is taken;
    /// the density term is averaged onto vertices the same way.
    pub fn gamma2(&self, space: &DiscreteSpace, f: &ScalarField, g: &ScalarField) -> SignedMeasure {
        let fg = ScalarField(fields::to_vertices(space, &self.cell_carre(f, g)));
        let lap = self.measure_laplacian(&fg);
        let lf = self.laplacian(f);
        let lg = self.laplacian(g);
        let a = self.cell_carre(f, &lg);
        let b = self.cell_carre(g, &lf);
        let dens: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
        let dv = fields::to_vertices(space, &dens);
        SignedMeasure(lap.0.iter().zip(&dv).zip(&self.mass).map(|((l, d), m)| 0.5 * l - d * m).collect())
    }

    /// Per-cell `H[f](g,h) = ½(⟨∇⟨∇f,∇g⟩,∇h⟩ + ⟨∇⟨∇f,∇h⟩,∇g⟩ − ⟨∇f,∇⟨∇g,∇h⟩⟩)`, where
    /// each inner product is averaged onto vertices before differentiating.
    pub fn hessian_form_cells(&self, space: &DiscreteSpace, f: &ScalarField, g: &ScalarField, h: &ScalarField) -> CellScalar {
        let lift = |a: &ScalarField, b: &ScalarField| ScalarField(fields::to_vertices(space, &self.cell_carre(a, b)));
        let fg = lift(f, g);
        let fh = lift(f, h);
        let gh = lift(g, h);
        let t1 = self.cell_carre(&fg, h);
        let t2 = self.cell_carre(&fh, g);
        let t3 = self.cell_carre(f, &gh);
        CellScalar(t1.iter().zip(&t2).zip(&t3).map(|((a, b), c)| 0.5 * (a + b - c)).collect())
    }

    /// `H[f](g,h)` averaged onto vertices.
    pub fn hessian_form(&self, space: &DiscreteSpace, f: &ScalarField, g: &ScalarField, h: &ScalarField) -> ScalarField {
        self.hessian_form_cells(space, f, g, h).to_vertices(space)
    }

    /// Bakry-Émery contraction `|∇h_t f|² ≤ e^{−2Kt} h_t(|∇f|²)` at vertices,
    /// together with the first-power variant `|∇h_t f| ≤ e^{−Kt} h_t(|∇f|)`.
    /// The gap is the worst violation relative to the largest right-hand side.
    pub fn bakry_emery(&self, space: &DiscreteSpace, f: &ScalarField, t: f64, kappa: f64) -> Result<(Measurement, Measurement)> {
        let (_, dt) = heat_steps(t);
        let sq = |g: &ScalarField| ScalarField(fields::to_vertices(space, &self.cell_carre(g, g)));
        let abs = |g: &ScalarField| {
            ScalarField(fields::to_vertices(space, &self.cell_carre(g, g).iter().map(|x| x.max(0.0).sqrt()).collect::<Vec<_>>()))
        };
        let ft = self.heat_flow(f, t)?;
        let lhs2 = sq(&ft);
        let rhs2 = self.heat_flow(&sq(f), t)?.scale((-2.0 * kappa * t).exp());
        let lhs1 = abs(&ft);
        let rhs1 = self.heat_flow(&abs(f), t)?.scale((-kappa * t).exp());
        let summarize = |l: &ScalarField, r: &ScalarField| {
            let scale = linalg::max_abs(&r.0).max(linalg::max_abs(&l.0));
            let gap = report::max_violation(&l.0, &r.0, scale);
            Measurement::new(linalg::max_abs(&l.0), linalg::max_abs(&r.0), gap, space.h()).with_dt(dt)
        };
        Ok((summarize(&lhs2, &rhs2), summarize(&lhs1, &rhs1)))
    }

    /// Terms of the multivariate Γ₂ chain rule for `Φ(f₁,…,fₙ)`.
    pub fn multivariate_gamma2(&self, space: &DiscreteSpace, phi: &Polynomial, fs: &[ScalarField]) -> Result<MultivariateGamma2> {
        if phi.n_vars() != fs.len() {
            return Err(CalcError::InvalidArgument(format!("Φ has {} variables, got {} functions", phi.n_vars(), fs.len())));
        }
        if phi.eval(&vec![0.0; fs.len()]).abs() > 0.0 {
            return Err(CalcError::InvalidArgument("Φ(0) must vanish".into()));
        }
        let n = fs.len();
        let nv = space.n_vertices();
        let point = |v: usize| fs.iter().map(|f| f.0[v]).collect::<Vec<f64>>();
        let d1: Vec<Vec<f64>> = (0..n).map(|i| (0..nv).map(|v| phi.partial(i).eval(&point(v))).collect()).collect();
        let d2: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|i| (0..n).map(|j| (0..nv).map(|v| phi.partial(i).partial(j).eval(&point(v))).collect()).collect())
            .collect();
        let carre: Vec<Vec<Vec<f64>>> = (0..n)
            .map(|i| (0..n).map(|j| fields::to_vertices(space, &self.cell_carre(&fs[i], &fs[j]))).collect())
            .collect();
        let mut a = vec![0.0; nv];
        let mut d = vec![0.0; nv];
        for i in 0..n {
            for j in 0..n {
                let g2 = self.gamma2(space, &fs[i], &fs[j]);
                for v in 0..nv {
                    a[v] += d1[i][v] * d1[j][v] * g2.0[v];
                    d[v] += d1[i][v] * d1[j][v] * carre[i][j][v];
                }
            }
        }
        let mut b = vec![0.0; nv];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if d2[j][k].iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    let h = self.hessian_form(space, &fs[i], &fs[j], &fs[k]);
                    for v in 0..nv {
                        b[v] += 2.0 * d1[i][v] * d2[j][k][v] * h.0[v];
                    }
                }
            }
        }
        let mut c = vec![0.0; nv];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        for v in 0..nv {
                            c[v] += d2[i][k][v] * d2[j][l][v] * carre[i][j][v] * carre[k][l][v];
                        }
                    }
                }
            }
        }
        let composed = ScalarField((0..nv).map(|v| phi.eval(&point(v))).collect());
        let gamma2 = self.gamma2(space, &composed, &composed);
        let grad_sq = ScalarField(fields::to_vertices(space, &self.cell_carre(&composed, &composed)));
        let rhs = SignedMeasure((0..nv).map(|v| a[v] + (b[v] + c[v]) * self.mass[v]).collect());
        let gamma_gap = gamma2.sub(&rhs).tv_norm() / gamma2.tv_norm().max(rhs.tv_norm()).max(f64::MIN_POSITIVE);
        let grad_gap = report::relative_l2(&grad_sq.0, &d, &self.mass);
        let gamma_gap = Measurement::new(gamma2.tv_norm(), rhs.tv_norm(), gamma_gap, space.h());
        Ok(MultivariateGamma2 {
            a: SignedMeasure(a),
            b: ScalarField(b),
            c: ScalarField(c),
            d: ScalarField(d),
            gamma2,
            grad_sq,
            gamma_gap,
            grad_gap: Measurement::new(0.0, 0.0, grad_gap, space.h()),
        })
    }
}

/// Decomposition returned by [`Dirichlet::multivariate_gamma2`].
#[derive(Clone, Debug)]
pub struct MultivariateGamma2 {
    pub a: SignedMeasure,
    pub b: ScalarField,
    pub c: ScalarField,
    pub d: ScalarField,
    /// Directly computed `Γ₂(Φ(f))`.
    pub gamma2: SignedMeasure,
    /// Directly computed `|∇Φ(f)|²`.
    pub grad_sq: ScalarField,
    /// Relative total variation of `Γ₂(Φ(f)) − A − (B+C)m`.
    pub gamma_gap: Measurement,
    /// Relative `L²` distance between `|∇Φ(f)|²` and `D`.
    pub grad_gap: Measurement,
}

/// Indicator vectors of the connected components, the kernel of `S`.
pub fn component_indicators(space: &DiscreteSpace) -> Vec<Vec<f64>> {
    let comp = space.vertex_component();
    (0..space.n_components())
        .map(|k| comp.iter().map(|&c| if c == k { 1.0 } else { 0.0 }).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn torus(n: usize) -> (DiscreteSpace, Dirichlet) {
        let s = DiscreteSpace::flat_torus(n, 2.0 * PI).unwrap();
        let d = Dirichlet::new(&s).unwrap();
        (s, d)
    }

    fn chart_fn(s: &DiscreteSpace, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        ScalarField(s.chart().unwrap().iter().map(|p| f(p[0], p[1])).collect())
    }

    #[test]
    fn stiffness_is_symmetric_psd_with_constant_kernel() {
        let (s, d) = torus(8);
        assert!(d.stiffness().asymmetry() < 1e-14);
        let one = ScalarField::constant(&s, 1.0);
        assert!(linalg::max_abs(&d.stiffness().mul_vec(&one.0)) < 1e-12);
        let f = chart_fn(&s, |x, y| (x + 2.0 * y).sin());
        assert!(d.energy(&f) > 0.0);
    }

    #[test]
    fn five_point_stencil_on_grid() {
        let (s, d) = torus(8);
        let h = 2.0 * PI / 8.0;
        let st = d.stiffness();
        assert!((st.get(0, 0) - 4.0).abs() < 1e-12);
        assert!((st.get(0, 1) + 1.0).abs() < 1e-12);
        assert!(st.get(0, 9).abs() < 1e-12);
        assert!((s.vertex_mass()[0] - h * h).abs() < 1e-12);
    }

    #[test]
    fn divergence_is_negative_adjoint_of_gradient() {
        let (s, d) = torus(8);
        for k in 0..20 {
            let g = chart_fn(&s, |x, y| ((k + 1) as f64 * 0.3 * x).cos() + (y - 0.1 * k as f64).sin());
            let x = VectorField((0..s.n_cells()).map(|c| [(c as f64 * 0.17 + k as f64).sin(), (c as f64 * 0.05).cos()]).collect());
            let lhs = d.divergence(&x).inner(&s, &g);
            let rhs = -x.inner(&s, &d.gradient(&g));
            assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn divergence_of_gradient_is_laplacian() {
        let (s, d) = torus(6);
        let f = chart_fn(&s, |x, y| x.sin() * y.cos());
        let a = d.divergence(&d.gradient(&f));
        let b = d.laplacian(&f);
        assert!(linalg::max_abs(&linalg::sub(&a.0, &b.0)) < 1e-12);
        assert!(d.measure_laplacian(&f).total().abs() < 1e-10);
    }

    #[test]
    fn sine_is_an_eigenfunction() {
        let mut prev = f64::INFINITY;
        for n in [8, 16, 32] {
            let (s, d) = torus(n);
            let f = chart_fn(&s, |x, _| x.sin());
            let err = linalg::max_abs(&linalg::add(&d.laplacian(&f).0, &f.0));
            let h = 2.0 * PI / n as f64;
            assert!(err <= h * h / 12.0 + 1e-12, "n={n} err={err}");
            assert!(err < prev);
            prev = err;
        }
    }

    #[test]
    fn integration_by_parts_for_carre_du_champ() {
        let (s, d) = torus(8);
        let f = chart_fn(&s, |x, y| (x - y).sin());
        let g = chart_fn(&s, |x, y| (2.0 * y).cos() + x.cos());
        let lhs = d.carre_du_champ(&s, &f, &g).integral(&s);
        let rhs = -f.inner(&s, &d.laplacian(&g));
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn heat_flow_basics() {
        let (s, d) = torus(16);
        let c = ScalarField::constant(&s, 2.5);
        assert!(linalg::max_abs(&linalg::sub(&d.heat_flow(&c, 0.3).unwrap().0, &c.0)) < 1e-12);
        let f = chart_fn(&s, |x, _| x.sin());
        assert_eq!(d.heat_flow(&f, 0.0).unwrap(), f);
        assert!(d.heat_flow(&f, -1.0).is_err());
        let norm2 = f.inner(&s, &f);
        for t in [0.01, 0.1, 1.0] {
            let ft = d.heat_flow(&f, t).unwrap();
            assert!(d.energy(&ft) <= norm2 / (4.0 * t));
        }
        // Spectral oracle: e^{−t} sin x, up to O(h²) + O(Δt).
        let t = 0.5;
        let ft = d.heat_flow(&f, t).unwrap();
        let want = f.scale((-t as f64).exp());
        let err = linalg::max_abs(&linalg::sub(&ft.0, &want.0));
        assert!(err < 0.01, "err {err}");
        let traj = d.heat_trajectory(&f, t).unwrap();
        for w in traj.windows(2) {
            assert!(w[1].inner(&s, &w[1]) <= w[0].inner(&s, &w[0]));
            assert!(d.energy(&w[1]) <= d.energy(&w[0]));
        }
    }

    #[test]
    fn gamma2_mass_identity_and_symmetry() {
        let s = DiscreteSpace::icosphere(2, 1.0).unwrap();
        let d = Dirichlet::new(&s).unwrap();
        let f = ScalarField((0..s.n_vertices()).map(|v| { let p = s.ambient_coords(v); p[0] * p[1] + p[2] }).collect());
        let g = ScalarField((0..s.n_vertices()).map(|v| s.ambient_coords(v)[1].powi(2)).collect());
        let lf = d.laplacian(&f);
        let mass = d.gamma2(&s, &f, &f).total();
        let want = lf.inner(&s, &lf);
        assert!((mass - want).abs() <= 1e-8 * want);
        let a = d.gamma2(&s, &f, &g);
        let b = d.gamma2(&s, &g, &f);
        assert!(a.sub(&b).tv_norm() < 1e-10 * a.tv_norm());
        let c = ScalarField::constant(&s, 1.0);
        assert!(d.gamma2(&s, &c, &c).tv_norm() < 1e-12);
    }

    #[test]
    fn hessian_form_identities() {
        let (s, d) = torus(12);
        let f = chart_fn(&s, |x, y| x.sin() + 0.3 * y.cos());
        let g = chart_fn(&s, |x, y| (x + y).cos());
        let h = chart_fn(&s, |_, y| y.sin());
        let a = d.hessian_form_cells(&s, &f, &g, &h);
        let b = d.hessian_form_cells(&s, &f, &h, &g);
        assert!(linalg::max_abs(&linalg::sub(&a.0, &b.0)) < 1e-13);
        // 2H[f](f,g) = ⟨∇|∇f|²,∇g⟩
        let hf = d.hessian_form_cells(&s, &f, &f, &g);
        let sq = ScalarField(fields::to_vertices(&s, &d.cell_carre(&f, &f)));
        let rhs = d.cell_carre(&sq, &g);
        for c in 0..s.n_cells() {
            assert!((2.0 * hf.0[c] - rhs[c]).abs() < 1e-10);
        }
    }

    #[test]
    fn chain_rule_and_locality_of_differential() {
        let mut prev = f64::INFINITY;
        for n in [16, 32] {
            let (s, d) = torus(n);
            let f = chart_fn(&s, |x, y| x.sin() + y.cos());
            let sq = f.map(|x| x * x);
            let lhs = d.gradient(&sq);
            let fc = fields::to_cells(&s, &f.0);
            let rhs = d.gradient(&f).scale_cells(&fc.iter().map(|x| 2.0 * x).collect::<Vec<_>>());
            let err = lhs.sub(&rhs).lp_norm(&s, crate::Exponent::Finite(2.0)) / rhs.lp_norm(&s, crate::Exponent::Finite(2.0));
            assert!(err < 0.75 * prev);
            prev = err;
        }
        let (s, d) = torus(16);
        let f = chart_fn(&s, |x, y| x.sin() * y.cos());
        let g = ScalarField(f.0.iter().zip(s.chart().unwrap()).map(|(v, p)| if p[0] < PI { *v } else { 0.0 }).collect());
        let (df, dg) = (d.gradient(&f), d.gradient(&g));
        for c in 0..s.n_cells() {
            if s.cell(c).vertices().iter().all(|&v| s.chart().unwrap()[v][0] < PI) {
                assert_eq!(df.0[c], dg.0[c]);
            }
        }
    }

    #[test]
    fn bakry_emery_at_time_zero_is_exact() {
        let (s, d) = torus(8);
        let f = chart_fn(&s, |x, y| x.sin() * y.cos());
        let (be2, be1) = d.bakry_emery(&s, &f, 0.0, 0.0).unwrap();
        assert_eq!(be2.gap, 0.0);
        assert_eq!(be1.gap, 0.0);
    }

    #[test]
    fn multivariate_identity_map() {
        let (s, d) = torus(8);
        let f = chart_fn(&s, |x, y| x.sin() * y.cos());
        let phi = Polynomial::variable(1, 0);
        let m = d.multivariate_gamma2(&s, &phi, std::slice::from_ref(&f)).unwrap();
        assert!(m.a.sub(&d.gamma2(&s, &f, &f)).tv_norm() < 1e-12);
        assert!(m.b.0.iter().chain(&m.c.0).all(|&x| x == 0.0));
        assert!(m.gamma_gap.gap < 1e-12 && m.grad_gap.gap < 1e-12);
        let bad = Polynomial::constant(1, 1.0).add(&phi);
        assert!(d.multivariate_gamma2(&s, &bad, &[f]).is_err());
    }
}
