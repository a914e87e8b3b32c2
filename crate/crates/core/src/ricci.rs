//! Measure-valued Ricci curvature
//! `Ric(X,Y) = ½𝚫⟨X,Y⟩ + (½⟨X,(Δ_H Y♭)♯⟩ + ½⟨Y,(Δ_H X♭)♯⟩ − ∇X:∇Y) m`
//! and the identities and bounds it satisfies.
//!
//! `X♭` is the `L²` projection of the per-cell field onto Whitney 1-forms,
//! `(Δ_H X♭)♯` is read back as a cell average, and `∇X` comes from the
//! covariant operator. For gradients `(∇f)♭ = df` holds exactly.

use serde::Serialize;

use crate::covariant::CovariantOperator;
use crate::dirichlet::Dirichlet;
use crate::error::{CalcError, Result};
use crate::exterior::{Cochain, CochainAssembly};
use crate::fields::{self, ScalarField, SignedMeasure, VectorField};
use crate::hessian::{self, HessianOperator};
use crate::linalg;
use crate::report::Measurement;
use crate::space::DiscreteSpace;

#[derive(Clone, Debug, Serialize)]
pub struct RicciMeasure {
    pub measure: SignedMeasure,
    pub x_id: String,
    pub y_id: String,
    pub kappa: f64,
}

/// The assemblies Ricci curvature is computed from.
#[derive(Clone, Copy)]
pub struct RicciContext<'a> {
    pub space: &'a DiscreteSpace,
    pub dirichlet: &'a Dirichlet,
    pub complex: &'a CochainAssembly,
    pub covariant: &'a CovariantOperator,
}

/// Vertex measure with per-cell density `values`.
fn cell_density_measure(space: &DiscreteSpace, values: &[f64]) -> SignedMeasure {
    ScalarField(fields::to_vertices(space, values)).to_measure(space)
}

fn cell_dot(space: &DiscreteSpace, x: &VectorField, y: &VectorField) -> Vec<f64> {
    (0..x.0.len()).map(|c| fields::metric_dot(space.metric(c), &x.0[c], &y.0[c])).collect()
}

impl<'a> RicciContext<'a> {
    pub fn new(space: &'a DiscreteSpace, dirichlet: &'a Dirichlet, complex: &'a CochainAssembly, covariant: &'a CovariantOperator) -> Self {
        RicciContext { space, dirichlet, complex, covariant }
    }

    pub fn flat(&self, x: &VectorField) -> Result<Cochain> {
        self.complex.flat(self.space, x)
    }

    /// `(Δ_H X♭)♯` per cell.
    pub fn hodge_sharp(&self, x: &VectorField) -> Result<VectorField> {
        let lap = self.complex.hodge_laplacian(&self.flat(x)?)?;
        Ok(VectorField(self.complex.to_kform(self.space, &lap)?.coeffs))
    }

    /// `E_H(X♭) = ½(‖dX♭‖² + ‖δX♭‖²)`.
    pub fn hodge_energy(&self, x: &VectorField) -> Result<f64> {
        self.complex.hodge_energy(&self.flat(x)?)
    }

    fn connection_product(&self, x: &VectorField, y: &VectorField) -> Vec<f64> {
        let (tx, ty) = (self.covariant.apply(x), self.covariant.apply(y));
        (0..self.space.n_cells()).map(|c| fields::hs_inner_cell(self.space.metric(c), &tx.0[c], &ty.0[c])).collect()
    }

    /// Per-cell `½⟨X,(Δ_H Y♭)♯⟩ + ½⟨Y,(Δ_H X♭)♯⟩ − ∇X:∇Y`.
    fn density_part(&self, x: &VectorField, y: &VectorField) -> Result<Vec<f64>> {
        let (hx, hy) = (self.hodge_sharp(x)?, self.hodge_sharp(y)?);
        let a = cell_dot(self.space, x, &hy);
        let b = cell_dot(self.space, y, &hx);
        let nn = self.connection_product(x, y);
        Ok((0..a.len()).map(|c| 0.5 * (a[c] + b[c]) - nn[c]).collect())
    }

    /// `½𝚫⟨X,Y⟩`.
    fn laplacian_part(&self, x: &VectorField, y: &VectorField) -> SignedMeasure {
        let xy = ScalarField(fields::to_vertices(self.space, &cell_dot(self.space, x, y)));
        self.dirichlet.measure_laplacian(&xy).scale(0.5)
    }

    pub fn ricci_measure(&self, x: &VectorField, y: &VectorField) -> Result<SignedMeasure> {
        Ok(self.laplacian_part(x, y).add(&cell_density_measure(self.space, &self.density_part(x, y)?)))
    }

    pub fn ricci(&self, x: &VectorField, y: &VectorField, x_id: &str, y_id: &str) -> Result<RicciMeasure> {
        Ok(RicciMeasure { measure: self.ricci_measure(x, y)?, x_id: x_id.into(), y_id: y_id.into(), kappa: self.space.kappa() })
    }

    /// `∫⟨dX♭,dY♭⟩ + δX♭δY♭ dm`.
    fn hodge_pairing(&self, x: &Cochain, y: &Cochain) -> Result<f64> {
        let cx = self.complex;
        let (dx, dy) = (cx.exterior_derivative(x)?, cx.exterior_derivative(y)?);
        let (sx, sy) = (cx.codifferential(x)?, cx.codifferential(y)?);
        Ok(cx.inner(&dx, &dy) + cx.inner(&sx, &sy))
    }

    /// Size of the terms entering `Ric(X,X)`, used to normalize density gaps.
    fn density_scale(&self, x: &VectorField, eps: f64) -> Result<f64> {
        let hx = self.hodge_sharp(x)?;
        let nn = self.connection_product(x, x);
        let terms: Vec<f64> = (0..nn.len())
            .map(|c| nn[c].abs() + (x.0[c][0].hypot(x.0[c][1])) * hx.0[c][0].hypot(hx.0[c][1]))
            .collect();
        let smoothed = self.dirichlet.heat_flow(&ScalarField(fields::to_vertices(self.space, &terms)), eps)?;
        Ok(linalg::max_abs(&smoothed.0))
    }

    fn sq_norm_density(&self, x: &VectorField) -> ScalarField {
        ScalarField(fields::to_vertices(self.space, &cell_dot(self.space, x, x)))
    }
}

/// `‖Ric(X,Y) − Ric(Y,X)‖_TV` relative to `‖Ric(X,Y)‖_TV`.
pub fn ricci_symmetry(ctx: &RicciContext, x: &VectorField, y: &VectorField) -> Result<Measurement> {
    let a = ctx.ricci_measure(x, y)?;
    let b = ctx.ricci_measure(y, x)?;
    let scale = a.tv_norm().max(b.tv_norm());
    let diff = a.sub(&b).tv_norm();
    Ok(Measurement::new(a.tv_norm(), b.tv_norm(), if scale > 0.0 { diff / scale } else { diff }, ctx.space.h()))
}

/// Bochner inequality `𝚫|X|²/2 ≥ (|∇X|² − ⟨X,(Δ_H X♭)♯⟩ + K|X|²) m` on
/// smoothed densities. The detail `total_mass` is `|𝚫(|X|²/2)(M)|`
/// relative to the size of the terms.
pub fn bochner_check(ctx: &RicciContext, x: &VectorField, kappa: f64, eps: f64) -> Result<Measurement> {
    let space = ctx.space;
    let lap = ctx.laplacian_part(x, x);
    let hx = ctx.hodge_sharp(x)?;
    let xhx = cell_dot(space, x, &hx);
    let nn = ctx.connection_product(x, x);
    let xx = cell_dot(space, x, x);
    let rhs_cells: Vec<f64> = (0..nn.len()).map(|c| nn[c] - xhx[c] + kappa * xx[c]).collect();
    let lhs = ctx.dirichlet.smoothed_density(&lap, eps)?;
    let rhs = ctx.dirichlet.heat_flow(&ScalarField(fields::to_vertices(space, &rhs_cells)), eps)?;
    let scale = ctx.density_scale(x, eps)?;
    let worst = rhs.0.iter().zip(&lhs.0).map(|(r, l)| (r - l).max(0.0)).fold(0.0, f64::max);
    let deviation = rhs.0.iter().zip(&lhs.0).map(|(r, l)| (r - l).abs()).fold(0.0, f64::max);
    let total_scale = nn.iter().zip(space.cell_mass()).map(|(a, m)| a.abs() * m).sum::<f64>().max(f64::MIN_POSITIVE);
    Ok(Measurement::new(linalg::max_abs(&lhs.0), linalg::max_abs(&rhs.0), if scale > 0.0 { worst / scale } else { worst }, space.h())
        .with_detail("deviation", if scale > 0.0 { deviation / scale } else { deviation })
        .with_detail("total_mass", lap.total().abs() / total_scale)
        .with_detail("smoothing", eps))
}

/// `Ric(X,X) ≥ K|X|² m` on smoothed densities.
pub fn ricci_lower_bound(ctx: &RicciContext, x: &VectorField, kappa: f64, eps: f64) -> Result<Measurement> {
    let lhs = ctx.dirichlet.smoothed_density(&ctx.ricci_measure(x, x)?, eps)?;
    let rhs = ctx.dirichlet.heat_flow(&ctx.sq_norm_density(x), eps)?.scale(kappa);
    let scale = ctx.density_scale(x, eps)?;
    let worst = rhs.0.iter().zip(&lhs.0).map(|(r, l)| (r - l).max(0.0)).fold(0.0, f64::max);
    let deviation = rhs.0.iter().zip(&lhs.0).map(|(r, l)| (r - l).abs()).fold(0.0, f64::max);
    Ok(Measurement::new(linalg::max_abs(&lhs.0), linalg::max_abs(&rhs.0), if scale > 0.0 { worst / scale } else { worst }, ctx.space.h())
        .with_detail("deviation", if scale > 0.0 { deviation / scale } else { deviation })
        .with_detail("smoothing", eps))
}

/// `Ric(X,Y)(M) = ∫⟨dX♭,dY♭⟩ + δX♭δY♭ − ∇X:∇Y dm`.
pub fn ricci_total_mass(ctx: &RicciContext, x: &VectorField, y: &VectorField) -> Result<Measurement> {
    let lhs = ctx.ricci_measure(x, y)?.total();
    let nn: f64 = ctx.connection_product(x, y).iter().zip(ctx.space.cell_mass()).map(|(a, m)| a * m).sum();
    let rhs = ctx.hodge_pairing(&ctx.flat(x)?, &ctx.flat(y)?)? - nn;
    let scale = (ctx.hodge_energy(x)? * ctx.hodge_energy(y)?).sqrt() + nn.abs();
    Ok(Measurement::new(lhs, rhs, if scale > 0.0 { (lhs - rhs).abs() / scale } else { (lhs - rhs).abs() }, ctx.space.h()))
}

/// `‖Ric(X,Y)‖_TV ≤ 2√(E_H(X♭)+K⁻‖X‖²)√(E_H(Y♭)+K⁻‖Y‖²)`. The detail
/// `margin` is `1 − lhs/rhs`; `hodge_minus_connection` records `E_H − E_C`
/// for `X`.
pub fn ricci_tv_bound(ctx: &RicciContext, x: &VectorField, y: &VectorField, kappa: f64) -> Result<Measurement> {
    let k_minus = (-kappa).max(0.0);
    let lhs = ctx.ricci_measure(x, y)?.tv_norm();
    let fx = ctx.hodge_energy(x)? + k_minus * x.inner(ctx.space, x);
    let fy = ctx.hodge_energy(y)? + k_minus * y.inner(ctx.space, y);
    let rhs = 2.0 * fx.max(0.0).sqrt() * fy.max(0.0).sqrt();
    let gap = if rhs > 0.0 { (lhs - rhs).max(0.0) / rhs } else { lhs };
    let ec = ctx.covariant.apply(x).energy(ctx.space);
    Ok(Measurement::new(lhs, rhs, gap, ctx.space.h())
        .with_detail("margin", if rhs > 0.0 { 1.0 - lhs / rhs } else { 0.0 })
        .with_detail("hodge_minus_connection", ctx.hodge_energy(x)? - ec))
}

/// `∫f dRic(X,Y)` by the definition, by moving derivatives onto `fY`, and
/// by the symmetric expression. The gap is the largest disagreement
/// relative to `sup|f|·2√(E_H(X♭)E_H(Y♭))`; details hold the three values.
pub fn ricci_representation(
    ctx: &RicciContext,
    hop: &HessianOperator,
    x: &VectorField,
    y: &VectorField,
    f: &ScalarField,
) -> Result<Measurement> {
    let space = ctx.space;
    let cx = ctx.complex;
    let d = ctx.dirichlet;
    let by_definition = ctx.ricci_measure(x, y)?.integrate(f);

    let (xf, yf) = (ctx.flat(x)?, ctx.flat(y)?);
    let fy = y.scale_by(space, f);
    let nn_fy: f64 = ctx.connection_product(x, &fy).iter().zip(space.cell_mass()).map(|(a, m)| a * m).sum();
    let moved = ctx.hodge_pairing(&xf, &ctx.flat(&fy)?)? - nn_fy;

    let fc = fields::to_cells(space, &f.0);
    let hf = hop.apply(f);
    let hxy: Vec<f64> = (0..space.n_cells())
        .map(|c| {
            let (h, a, b) = (hf.0[c], x.0[c], y.0[c]);
            a[0] * (h[0][0] * b[0] + h[0][1] * b[1]) + a[1] * (h[1][0] * b[0] + h[1][1] * b[1])
        })
        .collect();
    let df = d.gradient(f);
    let div_x = fields::to_cells(space, &d.divergence(x).0);
    let div_y = fields::to_cells(space, &d.divergence(y).0);
    let dfx = cell_dot(space, &df, x);
    let dfy = cell_dot(space, &df, y);
    let nn = ctx.connection_product(x, y);
    let cells: f64 = (0..space.n_cells())
        .map(|c| space.cell_mass()[c] * (hxy[c] + dfx[c] * div_y[c] + dfy[c] * div_x[c] - fc[c] * nn[c]))
        .sum();
    let (dx, dy) = (cx.exterior_derivative(&xf)?, cx.exterior_derivative(&yf)?);
    let ddf = cx.multiply(space, f, &dy)?;
    let (sx, sy) = (cx.codifferential(&xf)?, cx.codifferential(&yf)?);
    let sdf = cx.multiply(space, f, &sy)?;
    let symmetric = cells + cx.inner(&dx, &ddf) + cx.inner(&sx, &sdf);

    let scale = linalg::max_abs(&f.0) * 2.0 * (ctx.hodge_energy(x)? * ctx.hodge_energy(y)?).sqrt();
    let worst = (by_definition - moved).abs().max((by_definition - symmetric).abs()).max((moved - symmetric).abs());
    Ok(Measurement::new(by_definition, moved, if scale > 0.0 { worst / scale } else { worst }, space.h())
        .with_detail("definition", by_definition)
        .with_detail("moved_derivatives", moved)
        .with_detail("symmetric", symmetric))
}

/// `Ric(fX,Y) = f Ric(X,Y)`, compared after testing against the heat kernel
/// at time `eps`; the gap is the `L¹` distance of the smoothed densities
/// relative to `sup|f|·‖Ric(X,Y)‖` plus the size of the terms.
pub fn ricci_tensor_property(ctx: &RicciContext, f: &ScalarField, x: &VectorField, y: &VectorField, eps: f64) -> Result<Measurement> {
    let space = ctx.space;
    let lhs = ctx.ricci_measure(&x.scale_by(space, f), y)?;
    let base = ctx.ricci_measure(x, y)?;
    let rhs = SignedMeasure(base.0.iter().zip(&f.0).map(|(a, b)| a * b).collect());
    let (sl, sr) = (ctx.dirichlet.smoothed_density(&lhs, eps)?, ctx.dirichlet.smoothed_density(&rhs, eps)?);
    let dist = sl.zip(&sr, |a, b| (a - b).abs()).integral(space);
    let scale = linalg::max_abs(&f.0) * 2.0 * (ctx.hodge_energy(x)? * ctx.hodge_energy(y)?).sqrt();
    let raw = lhs.sub(&rhs).tv_norm();
    Ok(Measurement::new(lhs.tv_norm(), rhs.tv_norm(), if scale > 0.0 { dist / scale } else { dist }, space.h())
        .with_detail("raw_tv", if scale > 0.0 { raw / scale } else { raw })
        .with_detail("smoothing", eps))
}

/// `Ric(X,X) = Ric(Y,Y)` on the interior of a cell region where `X = Y`.
/// The interior is taken `rings` vertex neighbourhoods deep; the gap is the
/// `TV` distance there relative to `‖Ric(X,X)‖_TV`.
pub fn ricci_locality(ctx: &RicciContext, x: &VectorField, y: &VectorField, region: &[bool], rings: usize) -> Result<Measurement> {
    let space = ctx.space;
    if region.len() != space.n_cells() {
        return Err(CalcError::Mismatch(format!("region has {} cells, space has {}", region.len(), space.n_cells())));
    }
    let interior = hessian::interior_cells(space, region, rings);
    let verts: Vec<bool> = (0..space.n_vertices()).map(|v| space.vertex_cells(v).iter().all(|&c| interior[c])).collect();
    if !verts.iter().any(|&b| b) {
        return Err(CalcError::InvalidArgument("region has empty interior".into()));
    }
    let a = ctx.ricci_measure(x, x)?;
    let b = ctx.ricci_measure(y, y)?;
    let dist: f64 = (0..verts.len()).filter(|&v| verts[v]).map(|v| (a.0[v] - b.0[v]).abs()).sum();
    let scale = a.tv_norm().max(b.tv_norm());
    Ok(Measurement::new(a.tv_norm(), b.tv_norm(), if scale > 0.0 { dist / scale } else { dist }, space.h()))
}

/// `TV` of `Ric(X,X)` on the vertices in `mask`, relative to `E_H(X♭)`.
/// On a flat cone with the apex and the boundary masked out this measures
/// how much curvature the discretization places on the flat part.
pub fn ricci_restricted_tv(ctx: &RicciContext, x: &VectorField, mask: &[bool]) -> Result<Measurement> {
    if mask.len() != ctx.space.n_vertices() {
        return Err(CalcError::Mismatch(format!("mask has {} vertices, space has {}", mask.len(), ctx.space.n_vertices())));
    }
    let mu = ctx.ricci_measure(x, x)?;
    let tv: f64 = (0..mask.len()).filter(|&v| mask[v]).map(|v| mu.0[v].abs()).sum();
    let scale = 2.0 * ctx.hodge_energy(x)?;
    Ok(Measurement::new(tv, mu.tv_norm(), if scale > 0.0 { tv / scale } else { tv }, ctx.space.h()))
}

/// `L¹` distance between the smoothed densities of `Ric(X,X)` and `|X|²`,
/// relative to `∫|X|²`: the comparison with an Einstein metric `Ric = g`.
pub fn einstein_gap(ctx: &RicciContext, x: &VectorField, eps: f64) -> Result<Measurement> {
    let space = ctx.space;
    let ric = ctx.dirichlet.smoothed_density(&ctx.ricci_measure(x, x)?, eps)?;
    let sq = ctx.dirichlet.heat_flow(&ctx.sq_norm_density(x), eps)?;
    let dist = ric.zip(&sq, |a, b| (a - b).abs()).integral(space);
    let norm = sq.integral(space);
    Ok(Measurement::new(ric.integral(space), norm, if norm > 0.0 { dist / norm } else { dist }, space.h()).with_detail("smoothing", eps))
}

/// `‖Ric(X,Y)‖_TV` relative to the size of its terms; zero on flat models.
pub fn ricci_flatness(ctx: &RicciContext, x: &VectorField, y: &VectorField) -> Result<Measurement> {
    let tv = ctx.ricci_measure(x, y)?.tv_norm();
    let scale = 2.0 * (ctx.hodge_energy(x)? * ctx.hodge_energy(y)?).sqrt();
    Ok(Measurement::new(tv, 0.0, if scale > 0.0 { tv / scale } else { tv }, ctx.space.h()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{BankConfig, TestFunctionBank};
    use crate::dirichlet::DENSITY_SMOOTHING;

    struct Fixture {
        s: DiscreteSpace,
        d: Dirichlet,
        b: TestFunctionBank,
        c: CovariantOperator,
        cx: CochainAssembly,
    }

    fn fixture(desc: &str) -> Fixture {
        let s = DiscreteSpace::build(desc).unwrap();
        let d = Dirichlet::new(&s).unwrap();
        let b = TestFunctionBank::new(&s, &d, BankConfig { nf: 8, nv: 4, seed: 42, tau: 0.05 }).unwrap();
        let h = HessianOperator::new(&s, &d, &b).unwrap();
        let c = CovariantOperator::new(&s, &d, &b, &h).unwrap();
        let cx = CochainAssembly::new(&s).unwrap();
        Fixture { s, d, b, c, cx }
    }

    #[test]
    fn symmetric_and_zero_field() {
        let f = fixture("flat_torus:n=8");
        let ctx = RicciContext::new(&f.s, &f.d, &f.cx, &f.c);
        let (x, y) = (&f.b.vectors[0], &f.b.vectors[1]);
        assert!(ricci_symmetry(&ctx, x, y).unwrap().gap < 1e-10);
        let z = VectorField::zeros(&f.s);
        assert_eq!(ctx.ricci_measure(&z, &z).unwrap().tv_norm(), 0.0);
        let b = bochner_check(&ctx, x, 0.0, DENSITY_SMOOTHING).unwrap();
        assert!(b.details["total_mass"] < 1e-10);
        assert!(ricci_total_mass(&ctx, x, y).unwrap().gap < 1e-8);
    }

    #[test]
    fn gradient_field_reduces_to_gamma2() {
        let f = fixture("icosphere:subdiv=2");
        let ctx = RicciContext::new(&f.s, &f.d, &f.cx, &f.c);
        let g = &f.b.scalars[5];
        let x = f.d.gradient(g);
        let ric = ctx.ricci_measure(&x, &x).unwrap();
        let hs = f.c.apply(&x).cell_hs_sq(&f.s);
        let want = f.d.gamma2(&f.s, g, g).sub(&cell_density_measure(&f.s, &hs));
        assert!(ric.sub(&want).tv_norm() < 1e-9 * want.tv_norm());
    }

    #[test]
    fn constant_test_functions_reduce_to_total_mass() {
        let f = fixture("flat_torus:n=8");
        let h = HessianOperator::new(&f.s, &f.d, &f.b).unwrap();
        let ctx = RicciContext::new(&f.s, &f.d, &f.cx, &f.c);
        let (x, y) = (&f.b.vectors[2], &f.b.vectors[3]);
        let one = ScalarField::constant(&f.s, 1.0);
        let rep = ricci_representation(&ctx, &h, x, y, &one).unwrap();
        let total = ricci_total_mass(&ctx, x, y).unwrap();
        assert!((rep.details["definition"] - total.rhs).abs() < 1e-9 * total.rhs.abs().max(1.0));
        assert!(rep.gap < 1e-9);
        let three = ScalarField::constant(&f.s, 3.0);
        let t = ricci_tensor_property(&ctx, &three, x, y, DENSITY_SMOOTHING).unwrap();
        assert!(t.details["raw_tv"] < 1e-10);
    }
}
