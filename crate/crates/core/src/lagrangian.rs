//! Curves of measures and the continuity equation: residual checks,
//! dynamic optimal transport, and the second-order differentiation formula.
//!
//! A curve stores probability weights `μ_t(v)` on vertices. Cell quantities
//! are integrated against `μ_t` through the density `μ_t/m` averaged onto
//! cells, so `∫q dμ_t = Σ_c m_c ρ̄_c q_c`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::covariant::{self, CovariantOperator};
use crate::dirichlet::Dirichlet;
use crate::error::{CalcError, Result};
use crate::fields::{self, ScalarField, VectorField};
use crate::hessian::HessianOperator;
use crate::linalg::{self, Cholesky, Csr};
use crate::report::Measurement;
use crate::space::DiscreteSpace;

/// Tolerance on the total mass of each slice.
pub const MASS_TOLERANCE: f64 = 1e-12;
/// Largest vertex count for which the heat semigroup is evaluated through a
/// dense eigendecomposition.
pub const DENSE_HEAT_LIMIT: usize = 1200;
/// Relative diagonal shift in the transport Poisson problems.
pub const DRY_SHIFT: f64 = 1e-12;

#[derive(Clone, Debug, Serialize)]
pub struct MeasureCurve {
    pub times: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    /// `max_t max_v μ_t(v)/m_v`.
    pub compression: f64,
}

impl MeasureCurve {
    pub fn new(space: &DiscreteSpace, times: Vec<f64>, weights: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != weights.len() {
            return Err(CalcError::Mismatch(format!("{} times but {} slices", times.len(), weights.len())));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CalcError::InvalidArgument("times must increase strictly".into()));
        }
        let mut compression: f64 = 0.0;
        for (i, w) in weights.iter().enumerate() {
            if w.len() != space.n_vertices() {
                return Err(CalcError::Mismatch(format!("slice {i} has {} weights, space has {} vertices", w.len(), space.n_vertices())));
            }
            if w.iter().any(|x| !(*x >= 0.0)) {
                return Err(CalcError::InvalidArgument(format!("slice {i} has a negative or non-finite weight")));
            }
            let total: f64 = w.iter().sum();
            if (total - 1.0).abs() > MASS_TOLERANCE * w.len() as f64 {
                return Err(CalcError::InvalidArgument(format!("slice {i} has total mass {total}")));
            }
            for (x, m) in w.iter().zip(space.vertex_mass()) {
                compression = compression.max(x / m);
            }
        }
        Ok(MeasureCurve { times, weights, compression })
    }

    pub fn constant(space: &DiscreteSpace, weights: Vec<f64>, times: Vec<f64>) -> Result<Self> {
        let w = vec![weights; times.len()];
        Self::new(space, times, w)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Density `μ_t/m` at slice `i`.
    pub fn density(&self, space: &DiscreteSpace, i: usize) -> ScalarField {
        ScalarField(self.weights[i].iter().zip(space.vertex_mass()).map(|(w, m)| w / m).collect())
    }

    /// Per-cell mass of slice `i`, `m_c ρ̄_c`.
    pub fn cell_weights(&self, space: &DiscreteSpace, i: usize) -> Vec<f64> {
        let rho = fields::to_cells(space, &self.density(space, i).0);
        rho.iter().zip(space.cell_mass()).map(|(r, m)| r * m).collect()
    }

    pub fn mass_defect(&self) -> f64 {
        self.weights.iter().map(|w| (w.iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// The common step of a uniform grid.
    pub fn uniform_step(&self) -> Result<f64> {
        if self.len() < 2 {
            return Err(CalcError::InvalidArgument("curve needs at least two times".into()));
        }
        let dt = (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64;
        if self.times.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt) {
            return Err(CalcError::InvalidArgument("time grid is not uniform".into()));
        }
        Ok(dt)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VelocityTrack {
    pub fields: Vec<VectorField>,
    /// `‖(X_{i+1} − X_{i−1})/(t_{i+1} − t_{i−1})‖_{L²(m)}` at interior times.
    pub time_derivative_norms: Vec<f64>,
    /// Trapezoidal `∫∫|X_t|² dμ_t dt`.
    pub kinetic_energy: f64,
}

impl VelocityTrack {
    pub fn new(space: &DiscreteSpace, curve: &MeasureCurve, fields: Vec<VectorField>) -> Result<Self> {
        if fields.len() != curve.len() {
            return Err(CalcError::Mismatch(format!("{} velocity fields for {} times", fields.len(), curve.len())));
        }
        if let Some(x) = fields.iter().find(|x| x.0.len() != space.n_cells()) {
            return Err(CalcError::Mismatch(format!("velocity field has {} cells, space has {}", x.0.len(), space.n_cells())));
        }
        let t = &curve.times;
        let time_derivative_norms = (1..fields.len().saturating_sub(1))
            .map(|i| {
                let d = fields[i + 1].sub(&fields[i - 1]).scale(1.0 / (t[i + 1] - t[i - 1]));
                d.inner(space, &d).sqrt()
            })
            .collect();
        let energy: Vec<f64> = (0..fields.len()).map(|i| integrate_cells(&curve.cell_weights(space, i), &sq_norms(space, &fields[i]))).collect();
        let kinetic_energy = t.windows(2).enumerate().map(|(i, w)| 0.5 * (w[1] - w[0]) * (energy[i] + energy[i + 1])).sum();
        Ok(VelocityTrack { fields, time_derivative_norms, kinetic_energy })
    }
}

fn sq_norms(space: &DiscreteSpace, x: &VectorField) -> Vec<f64> {
    (0..x.0.len()).map(|c| fields::metric_dot(space.metric(c), &x.0[c], &x.0[c])).collect()
}

fn integrate_cells(weights: &[f64], q: &[f64]) -> f64 {
    weights.iter().zip(q).map(|(w, x)| w * x).sum()
}

fn check_grids(space: &DiscreteSpace, curve: &MeasureCurve, track: &VelocityTrack) -> Result<()> {
    if track.fields.len() != curve.len() {
        return Err(CalcError::Mismatch(format!("{} velocity fields for {} times", track.fields.len(), curve.len())));
    }
    if curve.weights.iter().any(|w| w.len() != space.n_vertices()) || track.fields.iter().any(|x| x.0.len() != space.n_cells()) {
        return Err(CalcError::Mismatch("curve or track lives on a different space".into()));
    }
    Ok(())
}

/// `d/dt ∫f dμ_t = ∫df(X_t) dμ_t` with centered differences at interior
/// times, for every `f` in `fs`. The gap is the worst residual relative to
/// the largest `∫|∇f||X_t| dμ_t`.
pub fn continuity_residual(
    space: &DiscreteSpace,
    dirichlet: &Dirichlet,
    curve: &MeasureCurve,
    track: &VelocityTrack,
    fs: &[ScalarField],
) -> Result<Measurement> {
    check_grids(space, curve, track)?;
    if curve.len() < 3 {
        return Err(CalcError::InvalidArgument("continuity residual needs at least three times".into()));
    }
    let t = &curve.times;
    let (mut worst, mut scale, mut lhs_max, mut rhs_max) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for f in fs {
        let grad = dirichlet.gradient(f);
        let values: Vec<f64> = curve.weights.iter().map(|w| linalg::dot(w, &f.0)).collect();
        for i in 1..curve.len() - 1 {
            let lhs = (values[i + 1] - values[i - 1]) / (t[i + 1] - t[i - 1]);
            let cw = curve.cell_weights(space, i);
            let x = &track.fields[i];
            let (mut rhs, mut bound) = (0.0, 0.0);
            for c in 0..space.n_cells() {
                let g = space.metric(c);
                rhs += cw[c] * fields::metric_dot(g, &grad.0[c], &x.0[c]);
                bound += cw[c] * (fields::metric_dot(g, &grad.0[c], &grad.0[c]) * fields::metric_dot(g, &x.0[c], &x.0[c])).sqrt();
            }
            worst = worst.max((lhs - rhs).abs());
            scale = scale.max(bound);
            lhs_max = lhs_max.max(lhs.abs());
            rhs_max = rhs_max.max(rhs.abs());
        }
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    let gap = if scale > 0.0 { worst / scale } else { worst };
    Ok(Measurement::new(lhs_max, rhs_max, gap, space.h()).with_dt(dt).with_detail("mass_defect", curve.mass_defect()))
}

/// `μ_t = h_t(ρ₀)m` with `X_t = −∇ρ_t/ρ̄_t` on cells where the density is
/// positive. Up to [`DENSE_HEAT_LIMIT`] vertices the semigroup is exact;
/// beyond that it is the implicit Euler flow.
pub fn heat_flow_curve(
    space: &DiscreteSpace,
    dirichlet: &Dirichlet,
    rho0: &ScalarField,
    times: &[f64],
) -> Result<(MeasureCurve, VelocityTrack)> {
    if rho0.len() != space.n_vertices() {
        return Err(CalcError::Mismatch(format!("density has {} values, space has {} vertices", rho0.len(), space.n_vertices())));
    }
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(CalcError::InvalidArgument("heat-flow times must be nonnegative".into()));
    }
    let mass = space.vertex_mass();
    let total: f64 = rho0.0.iter().zip(mass).map(|(r, m)| r * m).sum();
    if !(total > 0.0) {
        return Err(CalcError::InvalidArgument("initial density has no mass".into()));
    }
    let densities: Vec<Vec<f64>> = if space.n_vertices() <= DENSE_HEAT_LIMIT {
        let k = dirichlet.stiffness().to_dense();
        let m = DMatrix::from_diagonal(&DVector::from_column_slice(mass));
        let (vals, vecs) = linalg::generalized_symmetric_eigen(&k, &m)?;
        let weighted = DVector::from_iterator(mass.len(), rho0.0.iter().zip(mass).map(|(r, m)| r * m));
        let coeff = vecs.transpose() * weighted;
        times
            .iter()
            .map(|&t| {
                let c = DVector::from_iterator(vals.len(), vals.iter().zip(coeff.iter()).map(|(l, a)| a * (-l.max(0.0) * t).exp()));
                (&vecs * c).iter().copied().collect()
            })
            .collect()
    } else {
        times.iter().map(|&t| dirichlet.heat_flow(rho0, t).map(|f| f.0)).collect::<Result<_>>()?
    };
    let mut weights = Vec::with_capacity(times.len());
    let mut velocities = Vec::with_capacity(times.len());
    for rho in &densities {
        let w: Vec<f64> = rho.iter().zip(mass).map(|(r, m)| (r * m).max(0.0)).collect();
        let s: f64 = w.iter().sum();
        weights.push(w.iter().map(|x| x / s).collect());
        let f = ScalarField(rho.clone());
        let grad = dirichlet.gradient(&f);
        let bar = fields::to_cells(space, rho);
        velocities.push(VectorField(
            grad.0.iter().zip(&bar).map(|(g, r)| if *r > 0.0 { [-g[0] / r, -g[1] / r] } else { [0.0, 0.0] }).collect(),
        ));
    }
    let curve = MeasureCurve::new(space, times.to_vec(), weights)?;
    let track = VelocityTrack::new(space, &curve, velocities)?;
    Ok((curve, track))
}

/// Pushforward of `ρ₀ m` along the chart translation `x ↦ x + tv`, with the
/// constant velocity `v`. The cell frames must be aligned with the chart,
/// as on the flat torus, and `rho0` must be periodic when the chart is.
pub fn chart_flow_curve(
    space: &DiscreteSpace,
    rho0: impl Fn([f64; 2]) -> f64,
    velocity: [f64; 2],
    times: &[f64],
) -> Result<(MeasureCurve, VelocityTrack)> {
    let chart = space.chart().ok_or_else(|| CalcError::InvalidArgument(format!("{} has no chart", space.descriptor())))?;
    let mut weights = Vec::with_capacity(times.len());
    for &t in times {
        let w: Vec<f64> = chart
            .iter()
            .zip(space.vertex_mass())
            .map(|(p, m)| rho0([p[0] - t * velocity[0], p[1] - t * velocity[1]]) * m)
            .collect();
        if w.iter().any(|x| !(*x >= 0.0)) {
            return Err(CalcError::InvalidArgument("chart density must be nonnegative".into()));
        }
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return Err(CalcError::InvalidArgument("chart density has no mass".into()));
        }
        weights.push(w.iter().map(|x| x / s).collect());
    }
    let curve = MeasureCurve::new(space, times.to_vec(), weights)?;
    let x = VectorField(vec![velocity; space.n_cells()]);
    let track = VelocityTrack::new(space, &curve, vec![x; times.len()])?;
    Ok((curve, track))
}

/// Probability weights `∝ m_v (1 − r²/R²)³₊` around `center` in the chart,
/// with distances taken modulo `period` when given.
pub fn chart_bump(space: &DiscreteSpace, center: [f64; 2], radius: f64, period: Option<f64>) -> Result<Vec<f64>> {
    let chart = space.chart().ok_or_else(|| CalcError::InvalidArgument(format!("{} has no chart", space.descriptor())))?;
    let wrap = |d: f64| match period {
        Some(p) => d - p * (d / p).round(),
        None => d,
    };
    let w: Vec<f64> = chart
        .iter()
        .zip(space.vertex_mass())
        .map(|(p, m)| {
            let r2 = (wrap(p[0] - center[0]).powi(2) + wrap(p[1] - center[1]).powi(2)) / (radius * radius);
            m * (1.0 - r2).max(0.0).powi(3)
        })
        .collect();
    let s: f64 = w.iter().sum();
    if !(s > 0.0) {
        return Err(CalcError::InvalidArgument("bump contains no vertex".into()));
    }
    Ok(w.iter().map(|x| x / s).collect())
}

/// `d²/dt² ∫f dμ_t = ∫ Hf(X_t,X_t) + ⟨∇f,∂_tX_t⟩ + ⟨∇_{X_t}X_t,∇f⟩ dμ_t` on
/// a uniform grid. The left side is the centered second difference with
/// step `Δt`; `∂_tX_t` is the centered first difference. Times within four
/// steps of either end are excluded.
///
/// Details: `richardson_ratio` compares the second differences at steps
/// `Δt, 2Δt, 4Δt` and is close to `1/4` when they converge at second order;
/// `extrapolated_gap` uses the Richardson combination `(4D_Δt − D_2Δt)/3`.
pub fn second_order_formula(
    space: &DiscreteSpace,
    dirichlet: &Dirichlet,
    hop: &HessianOperator,
    cop: &CovariantOperator,
    curve: &MeasureCurve,
    track: &VelocityTrack,
    f: &ScalarField,
) -> Result<Measurement> {
    check_grids(space, curve, track)?;
    let dt = curve.uniform_step()?;
    let n = curve.len();
    if n < 9 {
        return Err(CalcError::InvalidArgument("second-order formula needs at least nine times".into()));
    }
    let values: Vec<f64> = curve.weights.iter().map(|w| linalg::dot(w, &f.0)).collect();
    let second = |i: usize, s: usize| (values[i + s] - 2.0 * values[i] + values[i - s]) / (s as f64 * dt).powi(2);
    let hess = hop.apply(f);
    let grad = dirichlet.gradient(f);
    let (mut worst, mut worst_extrap, mut scale) = (0.0f64, 0.0f64, 0.0f64);
    let (mut fine_diff, mut coarse_diff) = (0.0f64, 0.0f64);
    let (mut lhs_max, mut rhs_max) = (0.0f64, 0.0f64);
    for i in 4..n - 4 {
        let x = &track.fields[i];
        let dx = track.fields[i + 1].sub(&track.fields[i - 1]).scale(0.5 / dt);
        let nabla_xx = covariant::directional_derivative(&cop.apply(x), x);
        let cw = curve.cell_weights(space, i);
        let (mut rhs, mut bound) = (0.0, 0.0);
        for c in 0..space.n_cells() {
            let g = space.metric(c);
            let (h, v) = (&hess.0[c], &x.0[c]);
            let hxx = v[0] * (h[0][0] * v[0] + h[0][1] * v[1]) + v[1] * (h[1][0] * v[0] + h[1][1] * v[1]);
            let a = fields::metric_dot(g, &grad.0[c], &dx.0[c]);
            let b = fields::metric_dot(g, &nabla_xx.0[c], &grad.0[c]);
            rhs += cw[c] * (hxx + a + b);
            let norm = |u: &[f64; 2]| fields::metric_dot(g, u, u).sqrt();
            let hs = (h[0][0].powi(2) + h[0][1].powi(2) + h[1][0].powi(2) + h[1][1].powi(2)).sqrt();
            bound += cw[c] * (hs * norm(v).powi(2) + norm(&grad.0[c]) * (norm(&dx.0[c]) + norm(&nabla_xx.0[c])));
        }
        let (d1, d2, d4) = (second(i, 1), second(i, 2), second(i, 4));
        worst = worst.max((d1 - rhs).abs());
        worst_extrap = worst_extrap.max(((4.0 * d1 - d2) / 3.0 - rhs).abs());
        fine_diff = fine_diff.max((d1 - d2).abs());
        coarse_diff = coarse_diff.max((d2 - d4).abs());
        scale = scale.max(bound);
        lhs_max = lhs_max.max(d1.abs());
        rhs_max = rhs_max.max(rhs.abs());
    }
    let rel = |x: f64| if scale > 0.0 { x / scale } else { x };
    let ratio = if coarse_diff > 0.0 { fine_diff / coarse_diff } else { 0.0 };
    Ok(Measurement::new(lhs_max, rhs_max, rel(worst), space.h())
        .with_dt(dt)
        .with_detail("richardson_ratio", ratio)
        .with_detail("extrapolated_gap", rel(worst_extrap)))
}

/// Solver settings for [`benamou_brenier`].
#[derive(Clone, Copy, Debug)]
pub struct TransportOptions {
    pub steps: usize,
    pub max_iter: usize,
    /// Stop once the relative change of the primal iterate falls below this.
    pub rtol: f64,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions { steps: 8, max_iter: 4000, rtol: 1e-7 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TransportSolution {
    /// Discrete kinetic energy, the approximation of `W₂²(μ₀,μ₁)`.
    pub value: f64,
    /// Measures at the integer times `k/N`, endpoints included.
    pub nodes: MeasureCurve,
    /// Time-averaged measures at the half steps `(k+½)/N`.
    pub midpoints: MeasureCurve,
    /// Velocities at the half steps; `∫∫|X|² dμ dt` reproduces `value`.
    pub track: VelocityTrack,
    pub iterations: usize,
    /// Frank-Wolfe gap, an upper bound on `value − optimum`. It is loose when
    /// the path has nearly empty regions.
    pub optimality_gap: f64,
    /// Relative change of the primal iterate in the last iteration.
    pub primal_change: f64,
    pub converged: bool,
}

struct Dynamic<'a> {
    space: &'a DiscreteSpace,
    g: &'a Csr,
    gt: Csr,
    cell_w: &'a [f64],
    to_cells: Csr,
    grounded: Vec<usize>,
    steps: usize,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
}

struct Evaluation {
    value: f64,
    grad_mu: Vec<Vec<f64>>,
    potentials: Vec<Vec<f64>>,
}

impl<'a> Dynamic<'a> {
    fn new(space: &'a DiscreteSpace, dirichlet: &'a Dirichlet, mu0: &[f64], mu1: &[f64], steps: usize) -> Self {
        let comp = space.vertex_component();
        let mut grounded = Vec::new();
        for k in 0..space.n_components() {
            if let Some(v) = (0..comp.len()).find(|&v| comp[v] == k) {
                grounded.push(v);
            }
        }
        Dynamic {
            space,
            g: dirichlet.grad_matrix(),
            gt: dirichlet.grad_matrix().transpose(),
            cell_w: dirichlet.cell_weights(),
            to_cells: fields::to_cells_matrix(space),
            grounded,
            steps,
            mu0: mu0.to_vec(),
            mu1: mu1.to_vec(),
        }
    }

    fn slices(&self, inner: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut all = Vec::with_capacity(self.steps + 1);
        all.push(self.mu0.clone());
        all.extend(inner.iter().cloned());
        all.push(self.mu1.clone());
        all
    }

    /// `Σ_k τ sₖᵀ L(ρ̄ₖ)⁻¹ sₖ` and its gradient in the interior weights.
    fn evaluate(&self, inner: &[Vec<f64>]) -> Result<Evaluation> {
        let tau = 1.0 / self.steps as f64;
        let all = self.slices(inner);
        let mass = self.space.vertex_mass();
        let nv = mass.len();
        let mut value = 0.0;
        let mut grad_mu = vec![vec![0.0; nv]; self.steps - 1];
        let mut potentials = Vec::with_capacity(self.steps);
        for k in 0..self.steps {
            let rho: Vec<f64> = (0..nv).map(|v| 0.5 * (all[k][v] + all[k + 1][v]) / mass[v]).collect();
            let bar = self.to_cells.mul_vec(&rho);
            let s: Vec<f64> = (0..nv).map(|v| (all[k + 1][v] - all[k][v]) / tau).collect();
            let phi = self.solve(&bar, &s)?;
            value += tau * linalg::dot(&s, &phi);
            let gphi = self.g.mul_vec(&phi);
            let sq: Vec<f64> = (0..bar.len()).map(|c| self.cell_w[2 * c] * (gphi[2 * c].powi(2) + gphi[2 * c + 1].powi(2))).collect();
            let back = self.to_cells.tmul_vec(&sq);
            for v in 0..nv {
                let d_rho = -tau * back[v] * 0.5 / mass[v];
                if k >= 1 {
                    grad_mu[k - 1][v] += -2.0 * phi[v] + d_rho;
                }
                if k + 1 < self.steps {
                    grad_mu[k][v] += 2.0 * phi[v] + d_rho;
                }
            }
            potentials.push(phi);
        }
        Ok(Evaluation { value, grad_mu, potentials })
    }

    /// Grounded solve of `Gᵀ diag(w ρ̄) G φ = s`. Vertices surrounded by empty
/// cells decouple through a relative diagonal shift of [`DRY_SHIFT`].
    fn solve(&self, bar: &[f64], s: &[f64]) -> Result<Vec<f64>> {
        let d: Vec<f64> = (0..self.cell_w.len()).map(|r| self.cell_w[r] * bar[r / 2]).collect();
        let mut l = self.gt.scale_cols(&d).matmul(self.g);
        let pin = l.diag().iter().fold(0.0f64, |a, b| a.max(*b)).max(1e-300);
        let mut t: Vec<(usize, usize, f64)> = (0..l.nrows()).map(|v| (v, v, DRY_SHIFT * pin)).collect();
        t.extend(self.grounded.iter().map(|&v| (v, v, pin)));
        l = l.add(&Csr::from_triplets(l.nrows(), l.ncols(), &t), 1.0, 1.0);
        Ok(Cholesky::new(&l)?.solve(s))
    }
}

/// Dynamic optimal transport between two probability weight vectors:
/// minimizes `Σ_k τ Σ_c m_c |J_c|²/ρ̄_c` over vertex densities at the
/// interior times `k/N` and cellwise momenta `J` at the half steps, subject
/// to `m_v(ρ_{k+1} − ρ_k)/τ = (Gᵀ W J_k)_v`. Here `ρ̄` is the cell average of
/// `(ρ_k + ρ_{k+1})/2`.
///
/// The solver is the primal-dual method of Chambolle and Pock. The
/// continuity constraint is imposed by exact projection, and the transport
/// cost enters through its pointwise proximal map. The reported value is the
/// minimal energy over momenta for the final densities, obtained from
/// weighted Poisson problems.
pub fn benamou_brenier(
    space: &DiscreteSpace,
    dirichlet: &Dirichlet,
    mu0: &[f64],
    mu1: &[f64],
    opts: TransportOptions,
) -> Result<TransportSolution> {
    let nv = space.n_vertices();
    for (name, mu) in [("μ₀", mu0), ("μ₁", mu1)] {
        if mu.len() != nv {
            return Err(CalcError::Mismatch(format!("{name} has {} weights, space has {nv} vertices", mu.len())));
        }
        if mu.iter().any(|x| !(*x >= 0.0)) || (mu.iter().sum::<f64>() - 1.0).abs() > MASS_TOLERANCE * nv as f64 {
            return Err(CalcError::InvalidArgument(format!("{name} is not a probability vector")));
        }
    }
    if opts.steps < 2 {
        return Err(CalcError::InvalidArgument("transport needs at least two time steps".into()));
    }
    let comp = space.vertex_component();
    let ncomp = space.n_components();
    let (mut m0, mut m1) = (vec![0.0; ncomp], vec![0.0; ncomp]);
    for v in 0..nv {
        m0[comp[v]] += mu0[v];
        m1[comp[v]] += mu1[v];
    }
    if let Some(k) = (0..ncomp).find(|&k| (m0[k] - m1[k]).abs() > 1e-9) {
        return Err(CalcError::Infeasible(format!("component {k} carries mass {} at the start and {} at the end", m0[k], m1[k])));
    }
    let dynamic = Dynamic::new(space, dirichlet, mu0, mu1, opts.steps);
    let (inner, iterations, primal_change) = PrimalDual::new(&dynamic)?.run(opts)?;
    let converged = primal_change < opts.rtol;
    let ev = dynamic.evaluate(&inner)?;
    let value = ev.value;

    let mut fw = 0.0;
    for (k, muk) in inner.iter().enumerate() {
        let gk = &ev.grad_mu[k];
        for c in 0..ncomp {
            let verts: Vec<usize> = (0..nv).filter(|&v| comp[v] == c).collect();
            let lin: f64 = verts.iter().map(|&v| muk[v] * gk[v]).sum();
            let low = verts.iter().map(|&v| gk[v]).fold(f64::INFINITY, f64::min);
            fw += lin - m0[c] * low;
        }
    }

    let all = dynamic.slices(&inner);
    let n = opts.steps;
    let node_times: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let nodes = MeasureCurve::new(space, node_times, all.iter().map(|w| normalized(w)).collect())?;
    let mid_times: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
    let mid_weights: Vec<Vec<f64>> = (0..n).map(|k| normalized(&linalg::add(&all[k], &all[k + 1]).iter().map(|x| 0.5 * x).collect::<Vec<_>>())).collect();
    let midpoints = MeasureCurve::new(space, mid_times, mid_weights)?;
    let velocities: Vec<VectorField> = ev.potentials.iter().map(|phi| dirichlet.gradient(&ScalarField(phi.clone()))).collect();
    let mut track = VelocityTrack::new(space, &midpoints, velocities)?;
    track.kinetic_energy = (0..n)
        .map(|k| integrate_cells(&midpoints.cell_weights(space, k), &sq_norms(space, &track.fields[k])) / n as f64)
        .sum();
    Ok(TransportSolution { value, nodes, midpoints, track, iterations, optimality_gap: fw.max(0.0), primal_change, converged })
}

/// State of the primal-dual iteration. Primal variables are the interior
/// densities and the momenta, with the inner products weighted by `τ m_v`
/// and `τ m_c`; the dual variables live on cells at the half steps.
struct PrimalDual<'d, 'a> {
    dy: &'d Dynamic<'a>,
    nv: usize,
    rows: usize,
    rho0: Vec<f64>,
    rho1: Vec<f64>,
    to_vertices: Csr,
    a: Csr,
    b: Vec<f64>,
    d_inv: Vec<f64>,
    schur: Cholesky,
}

impl<'d, 'a> PrimalDual<'d, 'a> {
    fn new(dy: &'d Dynamic<'a>) -> Result<Self> {
        let space = dy.space;
        let n = dy.steps;
        let tau = 1.0 / n as f64;
        let nv = space.n_vertices();
        let rows = dy.cell_w.len();
        let mass = space.vertex_mass();
        let n_rho = (n - 1) * nv;
        let gtw = dy.gt.scale_cols(dy.cell_w);
        let mut t = Vec::new();
        for k in 0..n {
            for v in 0..nv {
                let r = k * nv + v;
                if k + 1 < n {
                    t.push((r, k * nv + v, mass[v] / tau));
                }
                if k >= 1 {
                    t.push((r, (k - 1) * nv + v, -mass[v] / tau));
                }
                for (col, x) in gtw.row(v) {
                    t.push((r, n_rho + k * rows + col, -x));
                }
            }
        }
        let a = Csr::from_triplets(n * nv, n_rho + n * rows, &t);
        let rho0: Vec<f64> = dy.mu0.iter().zip(mass).map(|(w, m)| w / m).collect();
        let rho1: Vec<f64> = dy.mu1.iter().zip(mass).map(|(w, m)| w / m).collect();
        let mut b = vec![0.0; n * nv];
        for v in 0..nv {
            b[v] += mass[v] * rho0[v] / tau;
            b[(n - 1) * nv + v] -= mass[v] * rho1[v] / tau;
        }
        let mut d_inv = Vec::with_capacity(n_rho + n * rows);
        for _ in 1..n {
            d_inv.extend(mass.iter().map(|m| 1.0 / (tau * m)));
        }
        for _ in 0..n {
            d_inv.extend(dy.cell_w.iter().map(|w| 1.0 / (tau * w)));
        }
        let mut s = a.scale_cols(&d_inv).matmul(&a.transpose());
        let pin = s.diag().iter().fold(0.0f64, |x, y| x.max(*y));
        let p: Vec<(usize, usize, f64)> = dy.grounded.iter().map(|&v| (v, v, pin)).collect();
        s = s.add(&Csr::from_triplets(s.nrows(), s.ncols(), &p), 1.0, 1.0);
        let schur = Cholesky::new(&s)?;
        Ok(PrimalDual { dy, nv, rows, rho0, rho1, to_vertices: fields::to_vertices_matrix(space), a, b, d_inv, schur })
    }

    /// Weighted projection onto the continuity constraint.
    fn project(&self, x: &mut [f64]) {
        let r = linalg::sub(&self.a.mul_vec(x), &self.b);
        let lambda = self.schur.solve(&r);
        let corr = self.a.tmul_vec(&lambda);
        for ((xi, c), d) in x.iter_mut().zip(&corr).zip(&self.d_inv) {
            *xi -= d * c;
        }
    }

    fn density<'s>(&'s self, x: &'s [f64], k: usize) -> &'s [f64] {
        let n = self.dy.steps;
        if k == 0 {
            &self.rho0
        } else if k == n {
            &self.rho1
        } else {
            &x[(k - 1) * self.nv..k * self.nv]
        }
    }

    /// `K x`: cell averages of the time-averaged densities, and the momenta.
    fn forward(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = self.dy.steps;
        let bars = (0..n)
            .map(|k| {
                let avg: Vec<f64> = self.density(x, k).iter().zip(self.density(x, k + 1)).map(|(a, b)| 0.5 * (a + b)).collect();
                self.dy.to_cells.mul_vec(&avg)
            })
            .collect();
        (bars, x[(n - 1) * self.nv..].to_vec())
    }

    /// Adjoint of the linear part of `K` in the weighted inner products.
    fn adjoint(&self, r: &[Vec<f64>], mom: &[f64]) -> Vec<f64> {
        let n = self.dy.steps;
        let mut out = Vec::with_capacity((n - 1) * self.nv + mom.len());
        for k in 1..n {
            let a = self.to_vertices.mul_vec(&r[k - 1]);
            let b = self.to_vertices.mul_vec(&r[k]);
            out.extend(a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)));
        }
        out.extend_from_slice(mom);
        out
    }

    fn run(&self, opts: TransportOptions) -> Result<(Vec<Vec<f64>>, usize, f64)> {
        let n = self.dy.steps;
        let nv = self.nv;
        let nc = self.rows / 2;
        let mut x = vec![0.0; (n - 1) * nv + n * self.rows];
        for k in 1..n {
            let t = k as f64 / n as f64;
            for v in 0..nv {
                x[(k - 1) * nv + v] = (1.0 - t) * self.rho0[v] + t * self.rho1[v];
            }
        }
        self.project(&mut x);
        let mut x_bar = x.clone();
        let mut y_r = vec![vec![0.0; nc]; n];
        let mut y_m = vec![0.0; n * self.rows];
        let (sigma, step) = (PD_STEP, PD_STEP);
        let norm_x = |v: &[f64]| -> f64 {
            v.iter().zip(&self.d_inv).map(|(a, d)| a * a / d).sum::<f64>().sqrt()
        };
        let mut change = f64::INFINITY;
        for it in 0..opts.max_iter {
            let (kr, km) = self.forward(&x_bar);
            for k in 0..n {
                for c in 0..nc {
                    let r0 = y_r[k][c] + sigma * kr[k][c];
                    let base = k * self.rows + 2 * c;
                    let n0 = [y_m[base] + sigma * km[base], y_m[base + 1] + sigma * km[base + 1]];
                    let (pr, pn) = prox_perspective(r0 / sigma, [n0[0] / sigma, n0[1] / sigma], 1.0 / sigma);
                    y_r[k][c] = r0 - sigma * pr;
                    y_m[base] = n0[0] - sigma * pn[0];
                    y_m[base + 1] = n0[1] - sigma * pn[1];
                }
            }
            let adj = self.adjoint(&y_r, &y_m);
            let mut xn: Vec<f64> = x.iter().zip(&adj).map(|(a, g)| a - step * g).collect();
            self.project(&mut xn);
            let diff: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            change = norm_x(&diff) / norm_x(&xn).max(f64::MIN_POSITIVE);
            x_bar = xn.iter().zip(&x).map(|(a, b)| 2.0 * a - b).collect();
            x = xn;
            if change < opts.rtol {
                return Ok((self.weights(&x), it + 1, change));
            }
        }
        Ok((self.weights(&x), opts.max_iter, change))
    }

    /// Interior probability weights, with negative roundoff removed.
    fn weights(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mass = self.dy.space.vertex_mass();
        let comp = self.dy.space.vertex_component();
        let mut target = vec![0.0; self.dy.space.n_components()];
        for v in 0..self.nv {
            target[comp[v]] += self.dy.mu0[v];
        }
        (1..self.dy.steps)
            .map(|k| {
                let mut w: Vec<f64> = self.density(x, k).iter().zip(mass).map(|(r, m)| (r * m).max(0.0)).collect();
                let mut have = vec![0.0; target.len()];
                for v in 0..self.nv {
                    have[comp[v]] += w[v];
                }
                for v in 0..self.nv {
                    if have[comp[v]] > 0.0 {
                        w[v] *= target[comp[v]] / have[comp[v]];
                    }
                }
                w
            })
            .collect()
    }
}

/// Step sizes of the primal-dual iteration; `‖K‖ ≤ 1` in the weighted norms.
const PD_STEP: f64 = 0.99;

/// Proximal map of `γ|n|²/r` at `(r₀, n₀)`.
fn prox_perspective(r0: f64, n0: [f64; 2], gamma: f64) -> (f64, [f64; 2]) {
    let nn = n0[0] * n0[0] + n0[1] * n0[1];
    if r0 <= -nn / (4.0 * gamma) {
        return (0.0, [0.0, 0.0]);
    }
    // The root of (r − r₀)(r + 2γ)² = γ|n₀|² on (max(r₀, 0), ∞) is unique.
    let g = |r: f64| (r - r0) * (r + 2.0 * gamma).powi(2) - gamma * nn;
    let mut lo = r0.max(0.0);
    let mut hi = lo + (gamma * nn).cbrt() + 1e-300;
    while g(hi) < 0.0 {
        hi = 2.0 * hi + 1e-300;
    }
    let mut r = hi;
    for _ in 0..100 {
        let gr = g(r);
        if gr.abs() <= 1e-15 * (gamma * nn).max(f64::MIN_POSITIVE) {
            break;
        }
        if gr > 0.0 {
            hi = r;
        } else {
            lo = r;
        }
        let dg = (r + 2.0 * gamma) * (3.0 * r + 2.0 * gamma - 2.0 * r0);
        let newton = r - gr / dg;
        r = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let f = r / (r + 2.0 * gamma);
    (r, [n0[0] * f, n0[1] * f])
}

/// Discrete kinetic energy `Σ_k τ sₖᵀ L(ρ̄ₖ)⁻¹ sₖ` of a path of probability
/// weights at uniform times `k/N`, endpoints included.
pub fn path_energy(space: &DiscreteSpace, dirichlet: &Dirichlet, path: &[Vec<f64>]) -> Result<f64> {
    if path.len() < 2 {
        return Err(CalcError::InvalidArgument("path needs at least two slices".into()));
    }
    let dynamic = Dynamic::new(space, dirichlet, &path[0], &path[path.len() - 1], path.len() - 1);
    Ok(dynamic.evaluate(&path[1..path.len() - 1])?.value)
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// Shortest-path distances from `source` along edges.
pub fn graph_distances(space: &DiscreteSpace, source: usize) -> Vec<f64> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    let nv = space.n_vertices();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nv];
    for (e, [a, b]) in space.edges().iter().enumerate() {
        let l = space.edge_length()[e];
        adj[*a].push((*b, l));
        adj[*b].push((*a, l));
    }
    let mut dist = vec![f64::INFINITY; nv];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Reverse((OrdF64(0.0), source)));
    while let Some(Reverse((OrdF64(d), v))) = heap.pop() {
        if d > dist[v] {
            continue;
        }
        for &(w, l) in &adj[v] {
            if d + l < dist[w] {
                dist[w] = d + l;
                heap.push(Reverse((OrdF64(d + l), w)));
            }
        }
    }
    dist
}

#[derive(Clone, Copy, PartialEq, PartialOrd)]
struct OrdF64(f64);
impl Eq for OrdF64 {}
impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Squared Wasserstein distance by the transport linear program over the
/// supports, with squared shortest-path distances as costs.
pub fn transport_lp(space: &DiscreteSpace, mu0: &[f64], mu1: &[f64]) -> Result<f64> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let nv = space.n_vertices();
    if mu0.len() != nv || mu1.len() != nv {
        return Err(CalcError::Mismatch("transport endpoints live on a different space".into()));
    }
    let src: Vec<usize> = (0..nv).filter(|&v| mu0[v] > 0.0).collect();
    let dst: Vec<usize> = (0..nv).filter(|&v| mu1[v] > 0.0).collect();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let mut vars = Vec::with_capacity(src.len());
    let mut feasible = false;
    for &a in &src {
        let d = graph_distances(space, a);
        let row: Vec<_> = dst.iter().map(|&b| if d[b].is_finite() { Some(lp.add_var(d[b] * d[b], (0.0, f64::INFINITY))) } else { None }).collect();
        feasible |= row.iter().any(Option::is_some);
        vars.push(row);
    }
    if !feasible && !src.is_empty() {
        return Err(CalcError::Infeasible("supports lie in different components".into()));
    }
    for (i, &a) in src.iter().enumerate() {
        let terms: Vec<_> = vars[i].iter().flatten().map(|v| (*v, 1.0)).collect();
        lp.add_constraint(&terms[..], ComparisonOp::Eq, mu0[a]);
    }
    for (j, &b) in dst.iter().enumerate() {
        let terms: Vec<_> = vars.iter().filter_map(|row| row[j]).map(|v| (v, 1.0)).collect();
        lp.add_constraint(&terms[..], ComparisonOp::Eq, mu1[b]);
    }
    let sol = lp.solve().map_err(|e| match e {
        minilp::Error::Infeasible => CalcError::Infeasible("transport program has no feasible plan".into()),
        other => CalcError::Solver(format!("transport program: {other}")),
    })?;
    Ok(sol.objective())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus(n: usize) -> (DiscreteSpace, Dirichlet) {
        let s = DiscreteSpace::build(&format!("flat_torus:n={n}")).unwrap();
        let d = Dirichlet::new(&s).unwrap();
        (s, d)
    }

    #[test]
    fn static_curve_has_zero_residual() {
        let (s, d) = torus(6);
        let w = normalized(s.vertex_mass());
        let curve = MeasureCurve::constant(&s, w, vec![0.0, 0.1, 0.2, 0.3]).unwrap();
        let track = VelocityTrack::new(&s, &curve, vec![VectorField::zeros(&s); 4]).unwrap();
        let f = ScalarField(s.chart().unwrap().iter().map(|p| p[0].sin()).collect());
        assert_eq!(continuity_residual(&s, &d, &curve, &track, &[f]).unwrap().gap, 0.0);
        assert_eq!(track.kinetic_energy, 0.0);
    }

    #[test]
    fn curve_validation() {
        let (s, _) = torus(4);
        let nv = s.n_vertices();
        assert!(MeasureCurve::new(&s, vec![0.0], vec![vec![0.5 / nv as f64; nv]]).is_err());
        assert!(MeasureCurve::new(&s, vec![0.0, 0.0], vec![normalized(s.vertex_mass()); 2]).is_err());
        let mut w = normalized(s.vertex_mass());
        w[0] = -w[0];
        assert!(MeasureCurve::new(&s, vec![0.0], vec![w]).is_err());
    }

    #[test]
    fn heat_curve_conserves_mass_and_solves_the_equation() {
        let (s, d) = torus(12);
        let rho = ScalarField(s.chart().unwrap().iter().map(|p| 1.0 + 0.5 * p[0].cos() * p[1].sin()).collect());
        let times: Vec<f64> = (0..7).map(|i| 0.1 + 0.02 * i as f64).collect();
        let (curve, track) = heat_flow_curve(&s, &d, &rho, &times).unwrap();
        assert!(curve.mass_defect() < 1e-12);
        let fs: Vec<ScalarField> = vec![ScalarField(s.chart().unwrap().iter().map(|p| p[0].cos()).collect())];
        let r = continuity_residual(&s, &d, &curve, &track, &fs).unwrap();
        assert!(r.gap < 1e-3, "{}", r.gap);
    }

    #[test]
    fn equal_endpoints_cost_nothing() {
        let (s, d) = torus(6);
        let w = normalized(s.vertex_mass());
        let sol = benamou_brenier(&s, &d, &w, &w, TransportOptions { steps: 4, ..Default::default() }).unwrap();
        assert!(sol.value < 1e-12);
        assert_eq!(transport_lp(&s, &w, &w).unwrap().abs() < 1e-12, true);
    }

    #[test]
    fn disconnected_supports_are_infeasible() {
        let s = DiscreteSpace::build("flat_torus:n=4+flat_torus:n=4").unwrap();
        let d = Dirichlet::new(&s).unwrap();
        let comp = s.vertex_component();
        let a = normalized(&(0..s.n_vertices()).map(|v| if comp[v] == 0 { 1.0 } else { 0.0 }).collect::<Vec<_>>());
        let b = normalized(&(0..s.n_vertices()).map(|v| if comp[v] == 1 { 1.0 } else { 0.0 }).collect::<Vec<_>>());
        assert!(matches!(benamou_brenier(&s, &d, &a, &b, TransportOptions::default()), Err(CalcError::Infeasible(_))));
        assert!(matches!(transport_lp(&s, &a, &b), Err(CalcError::Infeasible(_))));
    }

    #[test]
    fn graph_distance_on_a_path() {
        let s = DiscreteSpace::build("interval:n=4,length=2").unwrap();
        let d = graph_distances(&s, 0);
        assert!((d[4] - 2.0).abs() < 1e-12);
    }
}
