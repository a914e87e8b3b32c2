//! Covariant derivative of vector fields, the Levi-Civita rules, the
//! connection Laplacian and its heat flow.
//!
//! Tensors use `T[a][b] = ⟨∇_{e_a} X, e_b⟩`. The generator route writes
//! `X = Σᵢ gᵢ∇fᵢ` over the coordinate lifts `fᵢ` of the bank, cell by cell,
//! and sets `∇X = Σᵢ ∇gᵢ ⊗ ∇fᵢ + gᵢ Hfᵢ`, with the cell coefficients `gᵢ`
//! averaged onto vertices before differentiating.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bank::TestFunctionBank;
use crate::dirichlet::{heat_steps, Dirichlet};
use crate::error::{CalcError, Result};
use crate::fields::{self, ScalarField, Tensor2Field, VectorField};
use crate::hessian::{self, HessianOperator};
use crate::linalg::{self, Cholesky, Csr};
use crate::report::{self, Measurement};
use crate::space::DiscreteSpace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariantMethod {
    Generator,
    WeakLsq,
}

impl std::str::FromStr for CovariantMethod {
    type Err = CalcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "generator" => Ok(CovariantMethod::Generator),
            "weak-lsq" | "lsq" => Ok(CovariantMethod::WeakLsq),
            _ => Err(CalcError::InvalidArgument(format!("unknown covariant method {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CovariantResult {
    #[serde(rename = "T")]
    pub t: Tensor2Field,
    pub residual: f64,
    pub method: CovariantMethod,
    /// Set when the generator decomposition was too poor and the weak
    /// solver was used instead.
    pub fallback: bool,
}

/// Relative decomposition residual above which the generator route is abandoned.
pub const DECOMPOSITION_THRESHOLD: f64 = 1e-6;

#[derive(Debug)]
pub struct CovariantOperator {
    /// `X ↦ ∇X`, rows `4c + 2a + b`, columns `2c + a`.
    nabla: Csr,
    /// `X ↦ (gᵢ)` per lift, each `cells × 2·cells`.
    coefficients: Vec<Csr>,
    /// `X ↦ Σᵢ gᵢ∇fᵢ`, which is the identity where the lift gradients span.
    reconstruction: Csr,
    lift_grads: Vec<VectorField>,
    lift_hessians: Vec<Tensor2Field>,
    /// `NᵀW_T N`.
    energy_form: Csr,
    cell_weights: Vec<f64>,
    flow_factors: Mutex<HashMap<u64, Arc<Cholesky>>>,
}

impl CovariantOperator {
    pub fn new(space: &DiscreteSpace, dirichlet: &Dirichlet, bank: &TestFunctionBank, hop: &HessianOperator) -> Result<Self> {
        let lifts = bank.lifts();
        if lifts.is_empty() {
            return Err(CalcError::InvalidArgument("the bank has no coordinate lifts".into()));
        }
        let nc = space.n_cells();
        let k = lifts.len();
        let lift_grads: Vec<VectorField> = lifts.iter().map(|f| dirichlet.gradient(f)).collect();
        let lift_hessians: Vec<Tensor2Field> = lifts.iter().map(|f| hop.apply(f)).collect();
        // Per cell, g = J⁺X with J = [∇f₁ … ∇f_k] restricted to the cell's dimension.
        let mut coef_trips: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); k];
        let mut rec_trips = Vec::new();
        for c in 0..nc {
            let dim = space.cell(c).dim;
            let j = DMatrix::from_fn(dim, k, |a, i| lift_grads[i].0[c][a]);
            let svd = j.clone().svd(true, true);
            let cutoff = 1e-10 * svd.singular_values.max();
            let pinv = svd.pseudo_inverse(cutoff.max(f64::MIN_POSITIVE)).map_err(|e| CalcError::Solver(e.to_string()))?;
            let proj = &j * &pinv;
            for i in 0..k {
                for a in 0..dim {
                    coef_trips[i].push((c, 2 * c + a, pinv[(i, a)]));
                }
            }
            for a in 0..dim {
                for b in 0..dim {
                    rec_trips.push((2 * c + a, 2 * c + b, proj[(a, b)]));
                }
            }
        }
        let coefficients: Vec<Csr> = coef_trips.iter().map(|t| Csr::from_triplets(nc, 2 * nc, t)).collect();
        let reconstruction = Csr::from_triplets(2 * nc, 2 * nc, &rec_trips);
        let grad_avg = dirichlet.grad_matrix().matmul(&fields::to_vertices_matrix(space));
        let mut nabla = Csr::zeros(4 * nc, 2 * nc);
        for i in 0..k {
            let mut e = Vec::with_capacity(8 * nc);
            let mut h = Vec::with_capacity(4 * nc);
            for c in 0..nc {
                let u = lift_grads[i].0[c];
                let hm = lift_hessians[i].0[c];
                for a in 0..2 {
                    for b in 0..2 {
                        e.push((4 * c + 2 * a + b, 2 * c + a, u[b]));
                        h.push((4 * c + 2 * a + b, c, hm[a][b]));
                    }
                }
            }
            let e = Csr::from_triplets(4 * nc, 2 * nc, &e);
            let h = Csr::from_triplets(4 * nc, nc, &h);
            let term = e.matmul(&grad_avg).add(&h, 1.0, 1.0).matmul(&coefficients[i]);
            nabla = nabla.add(&term, 1.0, 1.0);
        }
        let tensor_weights: Vec<f64> = space.cell_mass().iter().flat_map(|&m| [m; 4]).collect();
        let energy_form = nabla.transpose().scale_cols(&tensor_weights).matmul(&nabla);
        Ok(CovariantOperator {
            nabla,
            coefficients,
            reconstruction,
            lift_grads,
            lift_hessians,
            energy_form,
            cell_weights: dirichlet.cell_weights().to_vec(),
            flow_factors: Mutex::new(HashMap::new()),
        })
    }

    /// Sparse matrix of `X ↦ ∇X`.
    pub fn matrix(&self) -> &Csr {
        &self.nabla
    }

    /// `∇X` by the generator route.
    pub fn apply(&self, x: &VectorField) -> Tensor2Field {
        Tensor2Field::from_flat(&self.nabla.mul_vec(&x.flatten()))
    }

    /// Coefficients `gᵢ` (cell values) of the decomposition `X = Σ gᵢ∇fᵢ`.
    pub fn decompose(&self, x: &VectorField) -> Vec<Vec<f64>> {
        let flat = x.flatten();
        self.coefficients.iter().map(|c| c.mul_vec(&flat)).collect()
    }

    /// `‖X − Σ gᵢ∇fᵢ‖ / ‖X‖`.
    pub fn decomposition_residual(&self, x: &VectorField) -> f64 {
        let flat = x.flatten();
        let r = linalg::sub(&self.reconstruction.mul_vec(&flat), &flat);
        let n = linalg::wdot(&self.cell_weights, &flat, &flat);
        let e = linalg::wdot(&self.cell_weights, &r, &r);
        if n > 0.0 { (e / n).sqrt() } else { 0.0 }
    }

    pub fn solve(&self, space: &DiscreteSpace, dirichlet: &Dirichlet, x: &VectorField, method: CovariantMethod) -> CovariantResult {
        match method {
            CovariantMethod::Generator => {
                let residual = self.decomposition_residual(x);
                if residual > DECOMPOSITION_THRESHOLD {
                    let mut r = self.solve_weak(space, dirichlet, x);
                    r.fallback = true;
                    return r;
                }
                CovariantResult { t: self.apply(x), residual, method, fallback: false }
            }
            CovariantMethod::WeakLsq => self.solve_weak(space, dirichlet, x),
        }
    }

    /// Tests `∫h T:(∇g₁⊗∇g₂) = ∫ −⟨X,∇g₂⟩div(h∇g₁) − h Hg₂(X,∇g₁)` against vertex
    /// hat functions `h` and ordered pairs of lifts, and solves for `T`.
    fn solve_weak(&self, space: &DiscreteSpace, dirichlet: &Dirichlet, x: &VectorField) -> CovariantResult {
        let k = self.lift_grads.len();
        let nc = space.n_cells();
        let mut rows = Vec::with_capacity(k * k);
        let mut ys = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                let (u1, u2) = (&self.lift_grads[i], &self.lift_grads[j]);
                let xg2 = ScalarField(fields::to_vertices(space, &fields::pairing(&fields::OneForm(u2.0.clone()), x)));
                let d = dirichlet.gradient(&xg2);
                let hx = fields::contract_first(&self.lift_hessians[j].transpose(), x);
                let y: Vec<f64> = (0..nc)
                    .map(|c| {
                        let a = d.0[c][0] * u1.0[c][0] + d.0[c][1] * u1.0[c][1];
                        let b = hx.0[c][0] * u1.0[c][0] + hx.0[c][1] * u1.0[c][1];
                        a - b
                    })
                    .collect();
                let r: Vec<Vec<f64>> = (0..nc)
                    .map(|c| {
                        let (p, q) = (u1.0[c], u2.0[c]);
                        if space.cell(c).dim == 1 {
                            vec![p[0] * q[0]]
                        } else {
                            vec![p[0] * q[0], p[0] * q[1], p[1] * q[0], p[1] * q[1]]
                        }
                    })
                    .collect();
                rows.push(r);
                ys.push(y);
            }
        }
        let (sol, residual) = hessian::weak_cell_lsq(space, &rows, &ys, 4);
        CovariantResult { t: Tensor2Field::from_flat(&sol), residual, method: CovariantMethod::WeakLsq, fallback: false }
    }

    /// `Δ_C X = −W⁻¹NᵀW_T N X`.
    pub fn connection_laplacian(&self, x: &VectorField) -> VectorField {
        let y = self.energy_form.mul_vec(&x.flatten());
        VectorField::from_flat(&y.iter().zip(&self.cell_weights).map(|(v, w)| -v / w).collect::<Vec<_>>())
    }

    fn flow_factor(&self, dt: f64) -> Result<Arc<Cholesky>> {
        let key = dt.to_bits();
        let mut cache = self.flow_factors.lock().expect("flow cache poisoned");
        if let Some(f) = cache.get(&key) {
            return Ok(f.clone());
        }
        let a = self.energy_form.add(&Csr::diagonal(&self.cell_weights), dt, 1.0);
        let f = Arc::new(Cholesky::new(&a)?);
        cache.insert(key, f.clone());
        Ok(f)
    }

    /// Implicit Euler iterates of `h_{C,s}X` for `s ∈ [0,t]`, with the same
    /// step rule as the scalar heat flow.
    pub fn heat_trajectory(&self, x: &VectorField, t: f64) -> Result<Vec<VectorField>> {
        if t < 0.0 || !t.is_finite() {
            return Err(CalcError::InvalidArgument(format!("heat flow time must be nonnegative, got {t}")));
        }
        let (n, dt) = heat_steps(t);
        let mut out = vec![x.clone()];
        for _ in 0..n {
            let factor = self.flow_factor(dt)?;
            let prev = out.last().expect("nonempty").flatten();
            let rhs: Vec<f64> = prev.iter().zip(&self.cell_weights).map(|(v, w)| v * w).collect();
            out.push(VectorField::from_flat(&factor.solve(&rhs)));
        }
        Ok(out)
    }

    pub fn heat_flow(&self, x: &VectorField, t: f64) -> Result<VectorField> {
        Ok(self.heat_trajectory(x, t)?.pop().expect("trajectory contains the initial datum"))
    }
}

/// `E_C(X) = ½∫|∇X|²_HS dm`.
pub fn connection_energy(space: &DiscreteSpace, t: &Tensor2Field) -> f64 {
    t.energy(space)
}

/// `∇_Z X` from `T = ∇X`.
pub fn directional_derivative(t: &Tensor2Field, z: &VectorField) -> VectorField {
    fields::contract_first(t, z)
}

/// `[X,Y] = ∇_X Y − ∇_Y X`.
pub fn lie_bracket(cop: &CovariantOperator, x: &VectorField, y: &VectorField) -> VectorField {
    directional_derivative(&cop.apply(y), x).sub(&directional_derivative(&cop.apply(x), y))
}

fn vector_measurement(dirichlet: &Dirichlet, space: &DiscreteSpace, lhs: &VectorField, rhs: &VectorField) -> Measurement {
    let gap = report::relative_l2(&lhs.flatten(), &rhs.flatten(), dirichlet.cell_weights());
    let n = |x: &VectorField| x.inner(space, x).sqrt();
    Measurement::new(n(lhs), n(rhs), gap, space.h())
}

fn tensor_measurement(space: &DiscreteSpace, lhs: &Tensor2Field, rhs: &Tensor2Field) -> Measurement {
    let n = |t: &Tensor2Field| (2.0 * t.energy(space)).sqrt();
    Measurement::new(n(lhs), n(rhs), hessian::tensor_gap(space, lhs, rhs), space.h())
}

fn scale_tensor(space: &DiscreteSpace, t: &Tensor2Field, f: &ScalarField) -> Tensor2Field {
    let fc = fields::to_cells(space, &f.0);
    Tensor2Field(t.0.iter().zip(&fc).map(|(m, s)| fields::mat_lin(*s, m, 0.0, m)).collect())
}

/// `[∇f,∇g] = (Hg(∇f,·) − Hf(∇g,·))♯`.
pub fn bracket_of_gradients(
    space: &DiscreteSpace,
    dirichlet: &Dirichlet,
    hop: &HessianOperator,
    cop: &CovariantOperator,
    f: &ScalarField,
    g: &ScalarField,
) -> Measurement {
    let (df, dg) = (dirichlet.gradient(f), dirichlet.gradient(g));
    let lhs = lie_bracket(cop, &df, &dg);
    let rhs = fields::contract_first(&hop.apply(g), &df).sub(&fields::contract_first(&hop.apply(f), &dg));
    vector_measurement(dirichlet, space, &lhs, &rhs)
}

/// `∇(fX) = ∇f ⊗ X + f∇X`.
pub fn covariant_leibniz(space: &DiscreteSpace, dirichlet: &Dirichlet, cop: &CovariantOperator, f: &ScalarField, x: &VectorField) -> Measurement {
    let lhs = cop.apply(&x.scale_by(space, f));
    let rhs = fields::outer(&dirichlet.gradient(f), x).add(&scale_tensor(space, &cop.apply(x), f));
    tensor_measurement(space, &lhs, &rhs)
}

/// `d⟨X,Y⟩(Z) = ⟨∇_Z X,Y⟩ + ⟨∇_Z Y,X⟩`, compared as cell functions.
pub fn metric_compatibility(
    space: &DiscreteSpace,
    dirichlet: &Dirichlet,
    cop: &CovariantOperator,
    x: &VectorField,
    y: &VectorField,
    z: &VectorField,
) -> Result<Measurement> {
    let xy = fields::pointwise_inner(space, x, y)?;
    let lhs = fields::cell_inner(space, &dirichlet.gradient(&xy), z)?;
    let a = fields::cell_inner(space, &directional_derivative(&cop.apply(x), z), y)?;
    let b = fields::cell_inner(space, &directional_derivative(&cop.apply(y), z), x)?;
    let rhs: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p + q).collect();
    let gap = report::relative_l2(&lhs, &rhs, space.cell_mass());
    let n = |v: &[f64]| linalg::wdot(space.cell_mass(), v, v).sqrt();
    Ok(Measurement::new(n(&lhs), n(&rhs), gap, space.h()))
}

/// `X(Y(f)) − Y(X(f)) = df(∇_X Y − ∇_Y X)`. The gap is normalized by the
/// size of the individual terms `X(Y(f))`, `Y(X(f))`, so that it is also
/// meaningful when both sides vanish in the limit.
pub fn torsion_free(
    space: &DiscreteSpace,
    dirichlet: &Dirichlet,
    cop: &CovariantOperator,
    f: &ScalarField,
    x: &VectorField,
    y: &VectorField,
) -> Result<Measurement> {
    let df = dirichlet.gradient(f);
    let deriv = |v: &VectorField, g: &ScalarField| -> Result<Vec<f64>> { fields::cell_inner(space, &dirichlet.gradient(g), v) };
    let yf = ScalarField(fields::to_vertices(space, &fields::cell_inner(space, &df, y)?));
    let xf = ScalarField(fields::to_vertices(space, &fields::cell_inner(space, &df, x)?));
    let xy = deriv(x, &yf)?;
    let yx = deriv(y, &xf)?;
    let lhs: Vec<f64> = xy.iter().zip(&yx).map(|(a, b)| a - b).collect();
    let rhs = fields::cell_inner(space, &df, &lie_bracket(cop, x, y))?;
    let w = space.cell_mass();
    let n = |v: &[f64]| linalg::wdot(w, v, v).sqrt();
    let diff = linalg::sub(&lhs, &rhs);
    let scale = n(&xy).max(n(&yx)).max(n(&rhs));
    let gap = if scale > 0.0 { n(&diff) / scale } else { 0.0 };
    Ok(Measurement::new(n(&lhs), n(&rhs), gap, space.h()))
}

/// Dual lower bound for `2E_C(X)`: the supremum of `2∫∇X:B − ‖B‖²` over the
/// span of `B = h ∇gₐ ⊗ ∇g_b`, `h ∈ {1} ∪ bank`, i.e. the squared norm of the
/// projection of `∇X` onto that span.
pub fn ec_duality(space: &DiscreteSpace, dirichlet: &Dirichlet, cop: &CovariantOperator, bank: &TestFunctionBank, x: &VectorField) -> Measurement {
    let t = cop.apply(x);
    let direct = 2.0 * connection_energy(space, &t);
    let grads: Vec<VectorField> = bank.lifts().iter().map(|g| dirichlet.gradient(g)).collect();
    let mut coeffs = vec![vec![1.0; space.n_cells()]];
    coeffs.extend(bank.scalars.iter().map(|h| fields::to_cells(space, &h.0)));
    let weights: Vec<f64> = space.cell_mass().iter().flat_map(|&m| [m.sqrt(); 4]).collect();
    let mut cols = Vec::new();
    for h in &coeffs {
        for a in &grads {
            for b in &grads {
                let o = fields::outer(a, b);
                cols.push(
                    o.0.iter()
                        .zip(h)
                        .flat_map(|(m, s)| [s * m[0][0], s * m[0][1], s * m[1][0], s * m[1][1]])
                        .zip(&weights)
                        .map(|(v, w)| v * w)
                        .collect::<Vec<f64>>(),
                );
            }
        }
    }
    let target: Vec<f64> = t.flatten().iter().zip(&weights).map(|(v, w)| v * w).collect();
    let value = hessian::projected_energy(&cols, &target);
    let shortfall = if direct > 0.0 { (direct - value) / direct } else { 0.0 };
    let excess = if direct > 0.0 { (value - direct).max(0.0) / direct } else { value.max(0.0) };
    Measurement::new(value, direct, shortfall, space.h()).with_detail("excess", excess).with_detail("family_size", cols.len() as f64)
}

/// Largest relative residual of `∫⟨Y,Δ_C X⟩ + ∫∇Y:∇X = 0` over the given pairs.
pub fn laplacian_adjointness(space: &DiscreteSpace, cop: &CovariantOperator, pairs: &[(VectorField, VectorField)]) -> f64 {
    let mut worst: f64 = 0.0;
    for (x, y) in pairs {
        let a = y.inner(space, &cop.connection_laplacian(x));
        let (tx, ty) = (cop.apply(x), cop.apply(y));
        let b: f64 = (0..space.n_cells()).map(|c| space.cell_mass()[c] * fields::hs_inner_cell(space.metric(c), &tx.0[c], &ty.0[c])).sum();
        let scale = (2.0 * tx.energy(space) * 2.0 * ty.energy(space)).sqrt().max(f64::MIN_POSITIVE);
        worst = worst.max((a + b).abs() / scale);
    }
    worst
}

/// `|h_{C,t}X|² ≤ h_t(|X|²)` at vertices.
pub fn kato_check(space: &DiscreteSpace, dirichlet: &Dirichlet, cop: &CovariantOperator, x: &VectorField, t: f64) -> Result<Measurement> {
    let (_, dt) = heat_steps(t);
    let sq = |v: &VectorField| -> Result<ScalarField> { fields::pointwise_inner(space, v, v) };
    let lhs = sq(&cop.heat_flow(x, t)?)?;
    let rhs = dirichlet.heat_flow(&sq(x)?, t)?;
    let scale = linalg::max_abs(&rhs.0).max(linalg::max_abs(&lhs.0));
    let gap = report::max_violation(&lhs.0, &rhs.0, scale);
    Ok(Measurement::new(linalg::max_abs(&lhs.0), linalg::max_abs(&rhs.0), gap, space.h()).with_dt(dt))
}

/// `∇X₁ = ∇X₂` on the interior of a region where `X₁ = X₂`.
pub fn covariant_locality(space: &DiscreteSpace, cop: &CovariantOperator, x1: &VectorField, x2: &VectorField, region: &[bool]) -> Result<Measurement> {
    if region.len() != space.n_cells() {
        return Err(CalcError::Mismatch(format!("region has {} cells, space has {}", region.len(), space.n_cells())));
    }
    let interior = hessian::interior_cells(space, region, 3);
    if !interior.iter().any(|&b| b) {
        return Err(CalcError::InvalidArgument("region has empty interior".into()));
    }
    let t1 = cop.apply(x1);
    let d = t1.sub(&cop.apply(x2)).cell_hs_sq(space);
    let worst = (0..d.len()).filter(|&c| interior[c]).map(|c| d[c].sqrt()).fold(0.0, f64::max);
    let scale = t1.cell_hs_sq(space).iter().map(|x| x.sqrt()).fold(0.0, f64::max);
    let gap = if scale > 0.0 { worst / scale } else { worst };
    Ok(Measurement::new(worst, 0.0, gap, space.h()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::BankConfig;
    use rand::{Rng, SeedableRng};

    struct Fixture {
        s: DiscreteSpace,
        d: Dirichlet,
        b: TestFunctionBank,
        h: HessianOperator,
        c: CovariantOperator,
    }

    fn setup(desc: &str) -> Fixture {
        let s = DiscreteSpace::build(desc).unwrap();
        let d = Dirichlet::new(&s).unwrap();
        let b = TestFunctionBank::new(&s, &d, BankConfig { nf: 8, nv: 3, seed: 42, tau: 0.05 }).unwrap();
        let h = HessianOperator::new(&s, &d, &b).unwrap();
        let c = CovariantOperator::new(&s, &d, &b, &h).unwrap();
        Fixture { s, d, b, h, c }
    }

    #[test]
    fn gradient_fields_have_hessian_derivative() {
        let gap = |n: usize| {
            let fx = setup(&format!("flat_torus:n={n}"));
            let f = &fx.b.scalars[5];
            let t = fx.c.apply(&fx.d.gradient(f));
            hessian::tensor_gap(&fx.s, &t, &fx.h.apply(f))
        };
        let (a, b) = (gap(16), gap(32));
        assert!(b < 0.75 * a, "{a} {b}");
    }

    #[test]
    fn parallel_frame_is_flat_and_zero_maps_to_zero() {
        let fx = setup("flat_torus:n=16");
        let e = VectorField(vec![[1.0, 0.0]; fx.s.n_cells()]);
        assert!(fx.c.decomposition_residual(&e) < 1e-12);
        let t = fx.c.apply(&e);
        assert!(t.cell_hs_sq(&fx.s).iter().all(|x| x.sqrt() < 0.05), "{}", t.cell_hs_sq(&fx.s).iter().cloned().fold(0.0, f64::max));
        let z = VectorField::zeros(&fx.s);
        assert!(fx.c.apply(&z).flatten().iter().all(|&x| x == 0.0));
        assert!(fx.c.heat_flow(&z, 0.05).unwrap().flatten().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn methods_agree() {
        let gap = |n: usize| {
            let fx = setup(&format!("flat_torus:n={n}"));
            let x = &fx.b.vectors[0];
            let a = fx.c.solve(&fx.s, &fx.d, x, CovariantMethod::Generator);
            let w = fx.c.solve(&fx.s, &fx.d, x, CovariantMethod::WeakLsq);
            assert!(!a.fallback);
            hessian::tensor_gap(&fx.s, &a.t, &w.t)
        };
        let (a, b) = (gap(16), gap(32));
        assert!(b < 0.75 * a, "{a} {b}");
    }

    #[test]
    fn connection_laplacian_is_adjoint_and_flow_dissipates() {
        let fx = setup("flat_torus:n=12");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut rand_field = || VectorField((0..fx.s.n_cells()).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect());
        let pairs: Vec<_> = (0..20).map(|_| (rand_field(), rand_field())).collect();
        assert!(laplacian_adjointness(&fx.s, &fx.c, &pairs) < 1e-10);
        let traj = fx.c.heat_trajectory(&fx.b.vectors[1], 0.1).unwrap();
        let energies: Vec<f64> = traj.iter().map(|x| connection_energy(&fx.s, &fx.c.apply(x))).collect();
        assert!(energies.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{energies:?}");
        assert!(fx.c.heat_flow(&fx.b.vectors[1], -1.0).is_err());
    }

    #[test]
    fn exact_algebraic_properties() {
        let fx = setup("flat_torus:n=12");
        let (x, y) = (&fx.b.vectors[0], &fx.b.vectors[1]);
        assert!(lie_bracket(&fx.c, x, x).flatten().iter().all(|&v| v == 0.0));
        let xy = lie_bracket(&fx.c, x, y);
        let yx = lie_bracket(&fx.c, y, x);
        assert!(xy.add(&yx).flatten().iter().all(|&v| v == 0.0));
        let t = fx.c.apply(x);
        let zn = fields::cell_norms(&fx.s, y);
        let dn = fields::cell_norms(&fx.s, &directional_derivative(&t, y));
        let tn = t.cell_hs_sq(&fx.s);
        for c in 0..fx.s.n_cells() {
            assert!(dn[c] <= tn[c].sqrt() * zn[c] * (1.0 + 1e-12) + 1e-14);
        }
        let f = &fx.b.scalars[4];
        let fz = directional_derivative(&t, &y.scale_by(&fx.s, f));
        let zf = directional_derivative(&t, y).scale_by(&fx.s, f);
        assert!(linalg::max_abs(&linalg::sub(&fz.flatten(), &zf.flatten())) < 1e-12);
        let c = ScalarField::constant(&fx.s, 2.0);
        assert!(covariant_leibniz(&fx.s, &fx.d, &fx.c, &c, x).gap < 1e-12);
    }

    #[test]
    fn calculus_rules_converge() {
        let run = |n: usize| {
            let fx = setup(&format!("flat_torus:n={n}"));
            let (x, y) = (&fx.b.vectors[0], &fx.b.vectors[1]);
            let f = &fx.b.scalars[6];
            [
                covariant_leibniz(&fx.s, &fx.d, &fx.c, f, x).gap,
                metric_compatibility(&fx.s, &fx.d, &fx.c, x, y, &fx.b.vectors[2]).unwrap().gap,
                torsion_free(&fx.s, &fx.d, &fx.c, f, x, y).unwrap().gap,
                bracket_of_gradients(&fx.s, &fx.d, &fx.h, &fx.c, &fx.b.scalars[4], &fx.b.scalars[5]).gap,
            ]
        };
        let (a, b) = (run(16), run(32));
        for k in 0..a.len() {
            assert!(b[k] <= 0.75 * a[k] || b[k] < 1e-9, "rule {k}: {a:?} {b:?}");
        }
    }

    #[test]
    fn duality_bounds_connection_energy() {
        let fx = setup("flat_torus:n=16");
        for x in &fx.b.vectors {
            let m = ec_duality(&fx.s, &fx.d, &fx.c, &fx.b, x);
            assert!(m.details["excess"] <= 1e-8);
            assert!(m.gap <= 0.2, "{m:?}");
        }
    }

    #[test]
    fn kato_inequality_at_zero_time_is_exact() {
        let fx = setup("flat_torus:n=12");
        let m = kato_check(&fx.s, &fx.d, &fx.c, &fx.b.vectors[0], 0.0).unwrap();
        assert_eq!(m.gap, 0.0);
    }
}
