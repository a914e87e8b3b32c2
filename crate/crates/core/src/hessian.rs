//! Weak Hessian, its energy, the key inequality and the Hessian calculus rules.
//!
//! For test functions `g₁, g₂` the Hessian is pinned down by
//!
//! `2 Hf(∇g₁,∇g₂) = ⟨∇g₁,∇⟨∇f,∇g₂⟩⟩ + ⟨∇g₂,∇⟨∇f,∇g₁⟩⟩ − ⟨∇f,∇⟨∇g₁,∇g₂⟩⟩`.
//!
//! The local method evaluates the right-hand side on each cell for pairs of
//! smoothed coordinate lifts and solves for the symmetric unknowns. The
//! weak method tests the same identity against vertex hat functions and
//! solves one global least-squares problem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bank::TestFunctionBank;
use crate::dirichlet::Dirichlet;
use crate::error::{CalcError, Result};
use crate::fields::{self, ScalarField, Tensor2Field, VectorField};
use crate::linalg::{self, Csr};
use crate::poly::Polynomial;
use crate::report::{self, Measurement};
use crate::space::DiscreteSpace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMethod {
    LocalFormula,
    WeakLsq,
}

impl std::str::FromStr for HessianMethod {
    type Err = CalcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local-formula" | "local" => Ok(HessianMethod::LocalFormula),
            "weak-lsq" | "lsq" => Ok(HessianMethod::WeakLsq),
            _ => Err(CalcError::InvalidArgument(format!("unknown Hessian method {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HessianResult {
    #[serde(rename = "H")]
    pub h: Tensor2Field,
    pub residual: f64,
    pub method: HessianMethod,
    /// Cells where the selected pairs do not determine the Hessian; the
    /// minimal-norm solution is used there.
    pub deficient_cells: Vec<usize>,
}

/// Pairs per cell in the local solve beyond the number of unknowns.
const EXTRA_PAIRS: usize = 2;

/// Linear map `f ↦ Hf` together with the per-pair evaluators it is built from.
#[derive(Clone, Debug)]
pub struct HessianOperator {
    pairs: Vec<(usize, usize)>,
    /// `f ↦ H[f](gᵢ,gⱼ)` per cell, one matrix per pair.
    pair_ops: Vec<Csr>,
    /// Per pair and cell, the coefficients of `(h₁₁, h₁₂, h₂₂)` in `H(∇gᵢ,∇gⱼ)`.
    pair_rows: Vec<Vec<[f64; 3]>>,
    selected: Vec<Vec<usize>>,
    /// `f ↦ Hf`, rows `4c + 2a + b`.
    local: Csr,
    deficient: Vec<usize>,
}

fn unknowns(dim: usize) -> usize {
    dim * (dim + 1) / 2
}

fn small_det(m: &DMatrix<f64>) -> f64 {
    m.clone().determinant()
}

/// Greedy selection of `count` rows maximizing `det(RᵀR + δI)` on the first
/// `active` columns. Ties keep the earliest row.
fn select_rows(rows: &[[f64; 3]], active: usize, count: usize) -> Vec<usize> {
    let scale = rows.iter().map(|r| r[..active].iter().map(|x| x * x).sum::<f64>()).fold(0.0, f64::max);
    let delta = 1e-6 * scale.max(f64::MIN_POSITIVE);
    let mut gram = DMatrix::<f64>::identity(active, active) * delta;
    let mut chosen = Vec::with_capacity(count);
    for _ in 0..count.min(rows.len()) {
        let mut best: Option<(usize, f64)> = None;
        for (k, r) in rows.iter().enumerate() {
            if chosen.contains(&k) {
                continue;
            }
            let v = DVector::from_column_slice(&r[..active]);
            let d = small_det(&(&gram + &v * v.transpose()));
            if best.is_none_or(|(_, b)| d > b) {
                best = Some((k, d));
            }
        }
        let (k, _) = best.expect("candidate rows remain");
        let v = DVector::from_column_slice(&rows[k][..active]);
        gram += &v * v.transpose();
        chosen.push(k);
    }
    chosen
}

fn flat_index(slot: usize) -> &'static [usize] {
    match slot {
        0 => &[0],
        1 => &[1, 2],
        _ => &[3],
    }
}

impl HessianOperator {
    pub fn new(space: &DiscreteSpace, dirichlet: &Dirichlet, bank: &TestFunctionBank) -> Result<Self> {
        let lifts = bank.lifts();
        if lifts.is_empty() {
            return Err(CalcError::InvalidArgument("the bank has no coordinate lifts".into()));
        }
        let nc = space.n_cells();
        let grad = dirichlet.grad_matrix();
        let grad_avg = grad.matmul(&fields::to_vertices_matrix(space));
        let grads: Vec<VectorField> = lifts.iter().map(|g| dirichlet.gradient(g)).collect();
        let dots: Vec<Csr> = grads.iter().map(fields::cell_dot_matrix).collect();
        // f ↦ ∇A⟨∇f,∇gᵢ⟩, per lift.
        let lifted: Vec<Csr> = dots.iter().map(|d| grad_avg.matmul(&d.matmul(grad))).collect();
        let mut pairs = Vec::new();
        let mut pair_ops = Vec::new();
        let mut pair_rows = Vec::new();
        for i in 0..lifts.len() {
            for j in i..lifts.len() {
                let gij = ScalarField(fields::to_vertices(space, &dirichlet.cell_carre(&lifts[i], &lifts[j])));
                let third = fields::cell_dot_matrix(&dirichlet.gradient(&gij)).matmul(grad);
                let op = dots[j].matmul(&lifted[i]).add(&dots[i].matmul(&lifted[j]), 0.5, 0.5).add(&third, 1.0, -0.5);
                let rows: Vec<[f64; 3]> = (0..nc)
                    .map(|c| {
                        let (u, v) = (grads[i].0[c], grads[j].0[c]);
                        [u[0] * v[0], u[0] * v[1] + u[1] * v[0], u[1] * v[1]]
                    })
                    .collect();
                pairs.push((i, j));
                pair_ops.push(op);
                pair_rows.push(rows);
            }
        }
        let mut selected = Vec::with_capacity(nc);
        let mut deficient = Vec::new();
        let mut trips = Vec::new();
        for c in 0..nc {
            let active = unknowns(space.cell(c).dim);
            let rows: Vec<[f64; 3]> = pair_rows.iter().map(|r| r[c]).collect();
            let sel = select_rows(&rows, active, active + EXTRA_PAIRS);
            let r = DMatrix::from_fn(sel.len(), active, |k, s| rows[sel[k]][s]);
            let svd = r.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let cutoff = 1e-10 * smax;
            if smax == 0.0 || svd.singular_values.iter().filter(|&&s| s > cutoff).count() < active {
                deficient.push(c);
            }
            let pinv = svd.pseudo_inverse(cutoff.max(f64::MIN_POSITIVE)).map_err(|e| CalcError::Solver(e.to_string()))?;
            for s in 0..active {
                for (k, &p) in sel.iter().enumerate() {
                    let w = pinv[(s, k)];
                    if w == 0.0 {
                        continue;
                    }
                    for (v, x) in pair_ops[p].row(c) {
                        for &slot in flat_index(s) {
                            trips.push((4 * c + slot, v, w * x));
                        }
                    }
                }
            }
            selected.push(sel);
        }
        let local = Csr::from_triplets(4 * nc, space.n_vertices(), &trips);
        Ok(HessianOperator { pairs, pair_ops, pair_rows, selected, local, deficient })
    }

    /// Sparse matrix of `f ↦ Hf` by the local formula.
    pub fn matrix(&self) -> &Csr {
        &self.local
    }

    /// Index pairs of coordinate lifts used as `(g₁, g₂)`.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn selected_pairs(&self, c: usize) -> &[usize] {
        &self.selected[c]
    }

    pub fn deficient_cells(&self) -> &[usize] {
        &self.deficient
    }

    /// `Hf` by the local formula.
    pub fn apply(&self, f: &ScalarField) -> Tensor2Field {
        Tensor2Field::from_flat(&self.local.mul_vec(&f.0))
    }

    /// Cell values of `H[f](gᵢ,gⱼ)` for pair `p`.
    pub fn pair_values(&self, p: usize, f: &ScalarField) -> Vec<f64> {
        self.pair_ops[p].mul_vec(&f.0)
    }

    pub fn solve(&self, space: &DiscreteSpace, f: &ScalarField, method: HessianMethod) -> HessianResult {
        match method {
            HessianMethod::LocalFormula => {
                let h = self.apply(f);
                let ys: Vec<Vec<f64>> = (0..self.pairs.len()).map(|p| self.pair_values(p, f)).collect();
                let mut res = 0.0;
                for (c, sel) in self.selected.iter().enumerate() {
                    let x = [h.0[c][0][0], h.0[c][0][1], h.0[c][1][1]];
                    for &p in sel {
                        let r = self.pair_rows[p][c];
                        let e = r[0] * x[0] + r[1] * x[1] + r[2] * x[2] - ys[p][c];
                        res += space.cell_mass()[c] * e * e;
                    }
                }
                HessianResult { h, residual: res.sqrt(), method, deficient_cells: self.deficient.clone() }
            }
            HessianMethod::WeakLsq => self.solve_weak(space, f),
        }
    }

    /// Tests the defining identity against every vertex hat function and all
    /// lift pairs, and returns the minimal-norm least-squares Hessian.
    fn solve_weak(&self, space: &DiscreteSpace, f: &ScalarField) -> HessianResult {
        let rows: Vec<Vec<Vec<f64>>> = self
            .pair_rows
            .iter()
            .map(|pr| pr.iter().enumerate().map(|(c, r)| r[..unknowns(space.cell(c).dim)].to_vec()).collect())
            .collect();
        let ys: Vec<Vec<f64>> = (0..self.pairs.len()).map(|p| self.pair_values(p, f)).collect();
        let (x, residual) = weak_cell_lsq(space, &rows, &ys, 3);
        let h = Tensor2Field(x.chunks_exact(3).map(|x| [[x[0], x[1]], [x[1], x[2]]]).collect());
        HessianResult { h, residual, method: HessianMethod::WeakLsq, deficient_cells: Vec::new() }
    }
}

/// Minimal-norm least squares for per-cell unknowns `x_c ∈ R^width` from the
/// hat-tested identities `Σ_{c∋v} m_c/(d+1) (r_{p,c}·x_c − y_{p,c}) = 0`, one
/// per vertex `v` and family index `p`. Rows are weighted by `1/√m_v`.
pub(crate) fn weak_cell_lsq(space: &DiscreteSpace, rows: &[Vec<Vec<f64>>], ys: &[Vec<f64>], width: usize) -> (Vec<f64>, f64) {
    let nv = space.n_vertices();
    let nc = space.n_cells();
    let mut trips = Vec::new();
    let mut rhs = vec![0.0; nv * rows.len()];
    for (p, (pr, y)) in rows.iter().zip(ys).enumerate() {
        for (c, cell) in space.cells().iter().enumerate() {
            let share = space.cell_mass()[c] / (cell.dim + 1) as f64;
            for &v in cell.vertices() {
                let row = p * nv + v;
                let w = share / space.vertex_mass()[v].sqrt();
                for (s, r) in pr[c].iter().enumerate() {
                    trips.push((row, width * c + s, w * r));
                }
                rhs[row] += w * y[c];
            }
        }
    }
    let a = Csr::from_triplets(nv * rows.len(), width * nc, &trips);
    let out = linalg::cgls(&a, &rhs, 1e-10, 20 * nc + 200);
    let r = linalg::sub(&a.mul_vec(&out.x), &rhs);
    (out.x, linalg::norm2(&r))
}

/// `E₂ = ½∫|Hf|²_HS dm`.
pub fn hessian_energy(space: &DiscreteSpace, h: &Tensor2Field) -> f64 {
    h.energy(space)
}

/// Relative `L²` distance of two tensor fields.
pub fn tensor_gap(space: &DiscreteSpace, a: &Tensor2Field, b: &Tensor2Field) -> f64 {
    let w: Vec<f64> = space.cell_mass().iter().flat_map(|&m| [m; 4]).collect();
    report::relative_l2(&a.flatten(), &b.flatten(), &w)
}

/// Outcome of the dual evaluation of `2E₂`.
#[derive(Clone, Debug)]
pub struct Duality {
    /// Best value of the sup expression over the family.
    pub value: f64,
    /// `2E₂(f)` computed directly.
    pub direct: f64,
    /// The sup expression with the linear term evaluated by the weak
    /// integration-by-parts formula instead of the solved Hessian.
    pub weak_value: f64,
    pub family_size: usize,
    pub measurement: Measurement,
}

/// Family `B = h sym(∇gₐ ⊗ ∇g_b)` with `h` the constant one or a bank member
/// and `(a, b)` ranging over lift pairs. Returns weighted columns.
pub(crate) fn tensor_family(space: &DiscreteSpace, dirichlet: &Dirichlet, bank: &TestFunctionBank) -> Vec<Tensor2Field> {
    let lifts = bank.lifts();
    let grads: Vec<VectorField> = lifts.iter().map(|g| dirichlet.gradient(g)).collect();
    let mut coeffs = vec![vec![1.0; space.n_cells()]];
    coeffs.extend(bank.scalars.iter().map(|h| fields::to_cells(space, &h.0)));
    let mut out = Vec::new();
    for h in &coeffs {
        for a in 0..grads.len() {
            for b in a..grads.len() {
                let t = fields::outer(&grads[a], &grads[b]);
                let (sym, _) = fields::sym_asym_split(&t);
                out.push(Tensor2Field(sym.0.iter().zip(h).map(|(m, s)| fields::mat_lin(*s, m, 0.0, m)).collect()));
            }
        }
    }
    out
}

/// Dual lower bound for `2E₂(f)`: the supremum of `2∫Hf(B) − ‖B‖²` over the
/// span of the bank tensor family, i.e. the squared norm of the projection
/// of `Hf` onto that span.
pub fn e2_duality(space: &DiscreteSpace, dirichlet: &Dirichlet, hop: &HessianOperator, bank: &TestFunctionBank, f: &ScalarField) -> Duality {
    let h = hop.apply(f);
    let family = tensor_family(space, dirichlet, bank);
    let direct = 2.0 * hessian_energy(space, &h);
    let weights: Vec<f64> = space.cell_mass().iter().flat_map(|&m| [m.sqrt(); 4]).collect();
    let target: Vec<f64> = h.flatten().iter().zip(&weights).map(|(x, w)| x * w).collect();
    let cols: Vec<Vec<f64>> = family.iter().map(|b| b.flatten().iter().zip(&weights).map(|(x, w)| x * w).collect()).collect();
    let value = projected_energy(&cols, &target);
    // Weak linear term: 2∫Hf(B) replaced by the integration-by-parts formula.
    let weak_value = weak_dual_value(space, dirichlet, bank, f, &cols);
    let shortfall = if direct > 0.0 { (direct - value) / direct } else { 0.0 };
    let excess = if direct > 0.0 { (value - direct).max(0.0) / direct } else { value.max(0.0) };
    let measurement = Measurement::new(value, direct, shortfall, space.h())
        .with_detail("excess", excess)
        .with_detail("weak_value", weak_value)
        .with_detail("family_size", family.len() as f64);
    Duality { value, direct, weak_value, family_size: family.len(), measurement }
}

/// `‖P y‖²` for `P` the orthogonal projection onto the span of `cols`.
pub(crate) fn projected_energy(cols: &[Vec<f64>], y: &[f64]) -> f64 {
    if cols.is_empty() {
        return 0.0;
    }
    let a = DMatrix::from_fn(y.len(), cols.len(), |i, j| cols[j][i]);
    let (x, _) = linalg::lstsq_min_norm(&a, &DVector::from_column_slice(y), 1e-10);
    (a * x).norm_squared()
}

fn weak_dual_value(space: &DiscreteSpace, dirichlet: &Dirichlet, bank: &TestFunctionBank, f: &ScalarField, cols: &[Vec<f64>]) -> f64 {
    let lifts = bank.lifts();
    let mut coeffs = vec![vec![1.0; space.n_cells()]];
    coeffs.extend(bank.scalars.iter().map(|h| fields::to_cells(space, &h.0)));
    let mut l = Vec::with_capacity(cols.len());
    for h in &coeffs {
        for a in 0..lifts.len() {
            for b in a..lifts.len() {
                let hv = dirichlet.hessian_form_cells(space, f, &lifts[a], &lifts[b]);
                l.push(2.0 * hv.0.iter().zip(h).zip(space.cell_mass()).map(|((x, s), m)| x * s * m).sum::<f64>());
            }
        }
    }
    let k = cols.len();
    let g = DMatrix::from_fn(k, k, |i, j| linalg::dot(&cols[i], &cols[j]));
    let lv = DVector::from_vec(l);
    let (z, _) = linalg::lstsq_min_norm(&g, &lv, 1e-10);
    0.25 * lv.dot(&z)
}

/// Density of `Γ₂(f,g)` with respect to the vertex masses.
pub fn gamma2_density(space: &DiscreteSpace, dirichlet: &Dirichlet, f: &ScalarField, g: &ScalarField) -> ScalarField {
    ScalarField(dirichlet.gamma2(space, f, g).0.iter().zip(space.vertex_mass()).map(|(x, m)| x / m).collect())
}

fn violation(space: &DiscreteSpace, lhs: &[f64], rhs: &[f64]) -> Measurement {
    let scale = linalg::max_abs(rhs).max(linalg::max_abs(lhs));
    Measurement::new(linalg::max_abs(lhs), linalg::max_abs(rhs), report::max_violation(lhs, rhs, scale), space.h())
}

/// Pointwise `|Σᵢⱼ ⟨∇fᵢ,∇hⱼ⟩⟨∇gᵢ,∇hⱼ⟩ + gᵢH[fᵢ](hⱼ,hⱼ)|² ≤ ρ Σⱼⱼ' ⟨∇hⱼ,∇hⱼ'⟩²` at
/// vertices, with `ρ` the density of the measure `μ((fᵢ),(gᵢ))`.
pub fn key_inequality(
    space: &DiscreteSpace,
    dirichlet: &Dirichlet,
    fs: &[ScalarField],
    gs: &[ScalarField],
    hs: &[ScalarField],
    kappa: f64,
) -> Result<Measurement> {
    if fs.len() != gs.len() {
        return Err(CalcError::Mismatch(format!("{} functions fᵢ but {} functions gᵢ", fs.len(), gs.len())));
    }
    let nv = space.n_vertices();
    let carre = |a: &ScalarField, b: &ScalarField| dirichlet.carre_du_champ(space, a, b).0;
    let hform = |f: &ScalarField, a: &ScalarField, b: &ScalarField| dirichlet.hessian_form(space, f, a, b).0;
    let mut rho = vec![0.0; nv];
    for i in 0..fs.len() {
        for k in 0..fs.len() {
            let g2 = gamma2_density(space, dirichlet, &fs[i], &fs[k]).0;
            let ff = carre(&fs[i], &fs[k]);
            let gg = carre(&gs[i], &gs[k]);
            let fg = carre(&fs[i], &gs[k]);
            let gf = carre(&gs[i], &fs[k]);
            let hh = hform(&fs[i], &fs[k], &gs[k]);
            for v in 0..nv {
                rho[v] += gs[i].0[v] * gs[k].0[v] * (g2[v] - kappa * ff[v])
                    + 2.0 * gs[i].0[v] * hh[v]
                    + 0.5 * (ff[v] * gg[v] + fg[v] * gf[v]);
            }
        }
    }
    let mut inner = vec![0.0; nv];
    for i in 0..fs.len() {
        for h in hs {
            let a = carre(&fs[i], h);
            let b = carre(&gs[i], h);
            let c = hform(&fs[i], h, h);
            for v in 0..nv {
                inner[v] += a[v] * b[v] + gs[i].0[v] * c[v];
            }
        }
    }
    let mut hsum = vec![0.0; nv];
    for a in hs {
        for b in hs {
            let x = carre(a, b);
            for v in 0..nv {
                hsum[v] += x[v] * x[v];
            }
        }
    }
    let lhs: Vec<f64> = inner.iter().map(|x| x * x).collect();
    let rhs: Vec<f64> = rho.iter().zip(&hsum).map(|(r, s)| r * s).collect();
    Ok(violation(space, &lhs, &rhs))
}

/// Pointwise `|Hf|²_HS ≤ γ₂(f,f) − K|∇f|²`. Both sides are densities of
/// measures read off after heat smoothing for time `eps` (see
/// [`Dirichlet::smoothed_density`]); `eps = 0` compares raw vertex values.
pub fn hs_bound(space: &DiscreteSpace, dirichlet: &Dirichlet, hop: &HessianOperator, f: &ScalarField, kappa: f64, eps: f64) -> Result<Measurement> {
    let hs = fields::to_vertices(space, &hop.apply(f).cell_hs_sq(space));
    let grad = dirichlet.carre_du_champ(space, f, f);
    let lhs_dens = ScalarField(hs.iter().zip(&grad.0).map(|(h, g)| h + kappa * g).collect());
    let lhs = dirichlet.heat_flow(&lhs_dens, eps)?;
    let rhs = dirichlet.smoothed_density(&dirichlet.gamma2(space, f, f), eps)?;
    let scale = linalg::max_abs(&rhs.0).max(linalg::max_abs(&lhs.0));
    let deviation = lhs.0.iter().zip(&rhs.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(violation(space, &lhs.0, &rhs.0)
        .with_detail("deviation", if scale > 0.0 { deviation / scale } else { deviation })
        .with_detail("smoothing", eps))
}

/// Integrated bound `E₂(f) ≤ ∫(Δf)² − K|∇f|² dm`. The detail `bochner_gap`
/// records `|2E₂ − ∫(Δf)² + K∫|∇f|²|` relative to the right-hand side,
/// which vanishes on flat spaces.
pub fn e2_apriori(space: &DiscreteSpace, dirichlet: &Dirichlet, hop: &HessianOperator, f: &ScalarField, kappa: f64) -> Measurement {
    let e2 = hessian_energy(space, &hop.apply(f));
    let lap = dirichlet.laplacian(f);
    let rhs = lap.inner(space, &lap) - 2.0 * kappa * dirichlet.energy(f);
    let scale = rhs.abs().max(e2.abs());
    let gap = if scale > 0.0 { (e2 - rhs).max(0.0) / scale } else { 0.0 };
    let bochner = if scale > 0.0 { (2.0 * e2 - rhs).abs() / scale } else { 0.0 };
    Measurement::new(e2, rhs, gap, space.h()).with_detail("bochner_gap", bochner)
}

fn scale_tensor(space: &DiscreteSpace, t: &Tensor2Field, f: &ScalarField) -> Tensor2Field {
    let fc = fields::to_cells(space, &f.0);
    Tensor2Field(t.0.iter().zip(&fc).map(|(m, s)| fields::mat_lin(*s, m, 0.0, m)).collect())
}

fn tensor_measurement(space: &DiscreteSpace, lhs: &Tensor2Field, rhs: &Tensor2Field) -> Measurement {
    let n = |t: &Tensor2Field| (2.0 * t.energy(space)).sqrt();
    Measurement::new(n(lhs), n(rhs), tensor_gap(space, lhs, rhs), space.h())
}

/// `H(f₁f₂) = f₂Hf₁ + f₁Hf₂ + df₁⊗df₂ + df₂⊗df₁`.
pub fn hessian_leibniz(space: &DiscreteSpace, dirichlet: &Dirichlet, hop: &HessianOperator, f1: &ScalarField, f2: &ScalarField) -> Measurement {
    let lhs = hop.apply(&f1.zip(f2, |a, b| a * b));
    let d1 = dirichlet.gradient(f1);
    let d2 = dirichlet.gradient(f2);
    let rhs = scale_tensor(space, &hop.apply(f1), f2)
        .add(&scale_tensor(space, &hop.apply(f2), f1))
        .add(&fields::outer(&d1, &d2))
        .add(&fields::outer(&d2, &d1));
    tensor_measurement(space, &lhs, &rhs)
}

/// `H(φ∘f) = φ''(f) df⊗df + φ'(f) Hf`.
pub fn hessian_chain(space: &DiscreteSpace, dirichlet: &Dirichlet, hop: &HessianOperator, f: &ScalarField, phi: &Polynomial) -> Result<Measurement> {
    if phi.n_vars() != 1 {
        return Err(CalcError::InvalidArgument("φ must be a polynomial in one variable".into()));
    }
    let d1 = phi.partial(0);
    let d2 = d1.partial(0);
    let lhs = hop.apply(&f.map(|x| phi.eval(&[x])));
    let df = dirichlet.gradient(f);
    let rhs = scale_tensor(space, &fields::outer(&df, &df), &f.map(|x| d2.eval(&[x]))).add(&scale_tensor(space, &hop.apply(f), &f.map(|x| d1.eval(&[x]))));
    Ok(tensor_measurement(space, &lhs, &rhs))
}

/// `d⟨∇f₁,∇f₂⟩ = Hf₁(∇f₂,·) + Hf₂(∇f₁,·)`.
pub fn grad_product_rule(space: &DiscreteSpace, dirichlet: &Dirichlet, hop: &HessianOperator, f1: &ScalarField, f2: &ScalarField) -> Measurement {
    let lhs = dirichlet.gradient(&dirichlet.carre_du_champ(space, f1, f2));
    let rhs = fields::contract_first(&hop.apply(f1), &dirichlet.gradient(f2)).add(&fields::contract_first(&hop.apply(f2), &dirichlet.gradient(f1)));
    let w: Vec<f64> = dirichlet.cell_weights().to_vec();
    let gap = report::relative_l2(&lhs.flatten(), &rhs.flatten(), &w);
    let n = |x: &VectorField| x.inner(space, x).sqrt();
    Measurement::new(n(&lhs), n(&rhs), gap, space.h())
}

/// Cells whose stencil, `rings` vertex-neighbourhoods deep, lies inside `region`.
pub fn interior_cells(space: &DiscreteSpace, region: &[bool], rings: usize) -> Vec<bool> {
    let mut inside = region.to_vec();
    for _ in 0..rings {
        let vert_ok: Vec<bool> = (0..space.n_vertices()).map(|v| space.vertex_cells(v).iter().all(|&c| inside[c])).collect();
        inside = space.cells().iter().map(|cell| cell.vertices().iter().all(|&v| vert_ok[v])).collect();
    }
    inside
}

/// `Hf₁ = Hf₂` on the interior of a region where `f₁ = f₂`. The gap is the
/// largest interior Hilbert-Schmidt difference relative to `max |Hf₁|`.
pub fn hessian_locality(space: &DiscreteSpace, hop: &HessianOperator, f1: &ScalarField, f2: &ScalarField, region: &[bool]) -> Result<Measurement> {
    if region.len() != space.n_cells() {
        return Err(CalcError::Mismatch(format!("region has {} cells, space has {}", region.len(), space.n_cells())));
    }
    let interior = interior_cells(space, region, 3);
    if !interior.iter().any(|&b| b) {
        return Err(CalcError::InvalidArgument("region has empty interior".into()));
    }
    let d = hop.apply(f1).sub(&hop.apply(f2)).cell_hs_sq(space);
    let n1 = hop.apply(f1).cell_hs_sq(space);
    let worst = (0..d.len()).filter(|&c| interior[c]).map(|c| d[c].sqrt()).fold(0.0, f64::max);
    let scale = n1.iter().map(|x| x.sqrt()).fold(0.0, f64::max);
    let gap = if scale > 0.0 { worst / scale } else { worst };
    Ok(Measurement::new(worst, 0.0, gap, space.h()).with_detail("interior_cells", interior.iter().filter(|&&b| b).count() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::BankConfig;

    fn setup(desc: &str) -> (DiscreteSpace, Dirichlet, TestFunctionBank, HessianOperator) {
        let s = DiscreteSpace::build(desc).unwrap();
        let d = Dirichlet::new(&s).unwrap();
        let b = TestFunctionBank::new(&s, &d, BankConfig { nf: 8, nv: 2, seed: 42, tau: 0.05 }).unwrap();
        let h = HessianOperator::new(&s, &d, &b).unwrap();
        (s, d, b, h)
    }

    fn chart_fn(s: &DiscreteSpace, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        ScalarField(s.chart().unwrap().iter().map(|p| f(p[0], p[1])).collect())
    }

    fn sine_error(n: usize) -> f64 {
        let (s, _, _, h) = setup(&format!("flat_torus:n={n}"));
        let hf = h.apply(&chart_fn(&s, |x, _| x.sin()));
        let mut err: f64 = 0.0;
        for c in 0..s.n_cells() {
            let x = s.cell_chart_centroid(c).unwrap()[0];
            let t = hf.0[c];
            err = err.max((t[0][0] + x.sin()).abs()).max(t[0][1].abs()).max(t[1][1].abs());
        }
        err
    }

    #[test]
    fn sine_hessian_matches_chart_oracle() {
        let (e1, e2) = (sine_error(16), sine_error(32));
        assert!(e2 < 0.75 * e1, "{e1} {e2}");
        assert!(e2 < 0.1, "{e2}");
    }

    #[test]
    fn hessian_is_symmetric_and_kills_constants() {
        let (s, _, b, h) = setup("flat_torus:n=16");
        for f in &b.scalars {
            let t = h.apply(f);
            assert!(t.0.iter().all(|m| m[0][1] == m[1][0]));
        }
        assert!(h.deficient_cells().is_empty());
        let c = ScalarField::constant(&s, 2.5);
        assert!(h.apply(&c).flatten().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn methods_agree_and_converge() {
        let gap = |n: usize| {
            let (s, _, b, h) = setup(&format!("flat_torus:n={n}"));
            let f = &b.scalars[5];
            let a = h.solve(&s, f, HessianMethod::LocalFormula);
            let w = h.solve(&s, f, HessianMethod::WeakLsq);
            assert!(a.residual.is_finite() && w.residual.is_finite());
            tensor_gap(&s, &a.h, &w.h)
        };
        let (g1, g2) = (gap(16), gap(32));
        assert!(g2 <= 0.75 * g1 || g2 < 1e-9, "{g1} {g2}");
    }

    #[test]
    fn duality_is_a_lower_bound() {
        let (s, d, b, h) = setup("flat_torus:n=16");
        for f in b.random_members() {
            let du = e2_duality(&s, &d, &h, &b, f);
            assert!(du.value <= du.direct * (1.0 + 1e-8), "{} {}", du.value, du.direct);
            assert!(du.value >= 0.8 * du.direct, "{} {}", du.value, du.direct);
        }
        let c = ScalarField::constant(&s, 1.0);
        let du = e2_duality(&s, &d, &h, &b, &c);
        assert!(du.value.abs() < 1e-20 && du.direct.abs() < 1e-20);
    }

    #[test]
    fn sine_integrated_bound() {
        let gap = |n: usize| {
            let (s, d, _, h) = setup(&format!("flat_torus:n={n}"));
            let m = e2_apriori(&s, &d, &h, &chart_fn(&s, |x, _| x.sin()), 0.0);
            // E₂(sin x) = π² and ∫ sin² x = 2π² on the torus of side 2π.
            assert!(m.gap == 0.0, "{m:?}");
            assert!((m.rhs / (2.0 * std::f64::consts::PI.powi(2)) - 1.0).abs() < 0.05);
            m.details["bochner_gap"]
        };
        let (a, b) = (gap(16), gap(32));
        assert!(b < 0.75 * a, "{a} {b}");
    }

    #[test]
    fn key_inequality_trivial_cases() {
        let (s, d, b, _) = setup("flat_torus:n=12");
        let m = key_inequality(&s, &d, &b.scalars[4..5], &b.scalars[5..6], &[], 0.0).unwrap();
        assert_eq!(m.gap, 0.0);
        assert!(key_inequality(&s, &d, &b.scalars[4..6], &b.scalars[5..6], &[], 0.0).is_err());
    }

    #[test]
    fn rules_with_trivial_arguments_are_exact() {
        let (s, d, b, h) = setup("flat_torus:n=12");
        let f = &b.scalars[6];
        let c = ScalarField::constant(&s, 3.0);
        assert!(hessian_leibniz(&s, &d, &h, f, &c).gap < 1e-12);
        let id = Polynomial::variable(1, 0);
        assert!(hessian_chain(&s, &d, &h, f, &id).unwrap().gap < 1e-12);
        let all = vec![true; s.n_cells()];
        assert_eq!(hessian_locality(&s, &h, f, f, &all).unwrap().gap, 0.0);
        assert!(hessian_locality(&s, &h, f, f, &vec![false; s.n_cells()]).is_err());
    }

    #[test]
    fn select_rows_prefers_independent_rows_and_breaks_ties_by_order() {
        let rows = [[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        let sel = select_rows(&rows, 3, 3);
        let mut sorted = sel.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 2, 3]);
    }
}
