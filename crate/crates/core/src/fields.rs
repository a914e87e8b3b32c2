//! Pointwise fields and their module algebra.
//!
//! Scalars live on vertices; vectors, covectors, 2-tensors and forms live on
//! cells as coefficients in the cell frame. Cell quantities reach vertices
//! by mass-weighted averaging ([`to_vertices`]) and vertex quantities reach
//! cells by plain averaging ([`to_cells`]); the two maps are adjoint for the
//! vertex and cell mass inner products.

use serde::{Deserialize, Serialize};

use crate::error::{CalcError, Result};
use crate::linalg::Csr;
use crate::space::{DiscreteSpace, Mat2, Vec2};

/// Per-vertex real values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField(pub Vec<f64>);

/// Per-cell real values, typically cell averages or pointwise densities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellScalar(pub Vec<f64>);

/// Per-cell frame coefficients of a vector field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField(pub Vec<Vec2>);

/// Per-cell dual-frame coefficients of a 1-form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneForm(pub Vec<Vec2>);

/// Per-cell frame coefficients `A[a][b]` of a 2-tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor2Field(pub Vec<Mat2>);

/// Per-vertex weights of a signed measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignedMeasure(pub Vec<f64>);

/// Per-cell antisymmetric coefficients of a `k`-form. Degree 0 and 2 use
/// the first slot only; degree 1 uses both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KForm {
    pub degree: usize,
    pub coeffs: Vec<Vec2>,
}

impl ScalarField {
    pub fn constant(space: &DiscreteSpace, c: f64) -> Self {
        ScalarField(vec![c; space.n_vertices()])
    }

    pub fn zeros(space: &DiscreteSpace) -> Self {
        Self::constant(space, 0.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        ScalarField(self.0.iter().zip(&other.0).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|x| s * x)
    }

    pub fn integral(&self, space: &DiscreteSpace) -> f64 {
        space.vertex_mass().iter().zip(&self.0).map(|(m, f)| m * f).sum()
    }

    pub fn inner(&self, space: &DiscreteSpace, other: &Self) -> f64 {
        crate::linalg::wdot(space.vertex_mass(), &self.0, &other.0)
    }

    pub fn lp_norm(&self, space: &DiscreteSpace, p: Exponent) -> f64 {
        lp_norm(&self.0.iter().map(|x| x.abs()).collect::<Vec<_>>(), space.vertex_mass(), p)
    }

    /// Measure with density `self` with respect to the vertex masses.
    pub fn to_measure(&self, space: &DiscreteSpace) -> SignedMeasure {
        SignedMeasure(self.0.iter().zip(space.vertex_mass()).map(|(f, m)| f * m).collect())
    }
}

impl CellScalar {
    pub fn integral(&self, space: &DiscreteSpace) -> f64 {
        space.cell_mass().iter().zip(&self.0).map(|(m, f)| m * f).sum()
    }

    pub fn to_vertices(&self, space: &DiscreteSpace) -> ScalarField {
        ScalarField(to_vertices(space, &self.0))
    }
}

impl VectorField {
    pub fn zeros(space: &DiscreteSpace) -> Self {
        VectorField(vec![[0.0; 2]; space.n_cells()])
    }

    pub fn add(&self, other: &Self) -> Self {
        VectorField(self.0.iter().zip(&other.0).map(|(a, b)| [a[0] + b[0], a[1] + b[1]]).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        VectorField(self.0.iter().zip(&other.0).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect())
    }

    pub fn scale(&self, s: f64) -> Self {
        VectorField(self.0.iter().map(|a| [s * a[0], s * a[1]]).collect())
    }

    /// Multiplies by a per-cell function.
    pub fn scale_cells(&self, f: &[f64]) -> Self {
        VectorField(self.0.iter().zip(f).map(|(a, s)| [s * a[0], s * a[1]]).collect())
    }

    /// Multiplies by a vertex function averaged onto cells.
    pub fn scale_by(&self, space: &DiscreteSpace, f: &ScalarField) -> Self {
        self.scale_cells(&to_cells(space, &f.0))
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|v| [v[0], v[1]]).collect()
    }

    pub fn from_flat(x: &[f64]) -> Self {
        VectorField(x.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
    }

    /// `L²(m)` inner product.
    pub fn inner(&self, space: &DiscreteSpace, other: &Self) -> f64 {
        (0..self.0.len()).map(|c| space.cell_mass()[c] * metric_dot(space.metric(c), &self.0[c], &other.0[c])).sum()
    }

    pub fn lp_norm(&self, space: &DiscreteSpace, p: Exponent) -> f64 {
        lp_norm(&cell_norms(space, self), space.cell_mass(), p)
    }
}

impl Tensor2Field {
    pub fn zeros(space: &DiscreteSpace) -> Self {
        Tensor2Field(vec![[[0.0; 2]; 2]; space.n_cells()])
    }

    pub fn add(&self, other: &Self) -> Self {
        Tensor2Field(self.0.iter().zip(&other.0).map(|(a, b)| mat_lin(1.0, a, 1.0, b)).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        Tensor2Field(self.0.iter().zip(&other.0).map(|(a, b)| mat_lin(1.0, a, -1.0, b)).collect())
    }

    pub fn scale(&self, s: f64) -> Self {
        Tensor2Field(self.0.iter().map(|a| mat_lin(s, a, 0.0, a)).collect())
    }

    pub fn transpose(&self) -> Self {
        Tensor2Field(self.0.iter().map(|a| [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]).collect())
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|a| [a[0][0], a[0][1], a[1][0], a[1][1]]).collect()
    }

    pub fn from_flat(x: &[f64]) -> Self {
        Tensor2Field(x.chunks_exact(4).map(|c| [[c[0], c[1]], [c[2], c[3]]]).collect())
    }

    /// Per-cell squared Hilbert-Schmidt norms.
    pub fn cell_hs_sq(&self, space: &DiscreteSpace) -> Vec<f64> {
        (0..self.0.len()).map(|c| hs_inner_cell(space.metric(c), &self.0[c], &self.0[c])).collect()
    }

    /// `½∫|A|²_HS dm`.
    pub fn energy(&self, space: &DiscreteSpace) -> f64 {
        0.5 * crate::linalg::dot(&self.cell_hs_sq(space), space.cell_mass())
    }

    pub fn lp_norm(&self, space: &DiscreteSpace, p: Exponent) -> f64 {
        let v: Vec<f64> = self.cell_hs_sq(space).iter().map(|x| x.max(0.0).sqrt()).collect();
        lp_norm(&v, space.cell_mass(), p)
    }
}

impl SignedMeasure {
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn tv_norm(&self) -> f64 {
        self.0.iter().map(|w| w.abs()).sum()
    }

    /// Density with respect to the vertex masses.
    pub fn density(&self, space: &DiscreteSpace) -> ScalarField {
        ScalarField(self.0.iter().zip(space.vertex_mass()).map(|(w, m)| w / m).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        SignedMeasure(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        SignedMeasure(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, s: f64) -> Self {
        SignedMeasure(self.0.iter().map(|a| s * a).collect())
    }

    /// `∫ f d self` for a vertex function `f`.
    pub fn integrate(&self, f: &ScalarField) -> f64 {
        crate::linalg::dot(&self.0, &f.0)
    }
}

/// Exponent of an `Lᵖ` norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

impl Exponent {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_infinite() && p > 0.0 {
            Ok(Exponent::Infinity)
        } else if p >= 1.0 {
            Ok(Exponent::Finite(p))
        } else {
            Err(CalcError::InvalidArgument(format!("Lᵖ exponent must lie in [1,∞], got {p}")))
        }
    }
}

/// Weighted `Lᵖ` norm of nonnegative pointwise values.
pub fn lp_norm(values: &[f64], weights: &[f64], p: Exponent) -> f64 {
    match p {
        Exponent::Infinity => values.iter().copied().fold(0.0, f64::max),
        Exponent::Finite(p) => {
            let s: f64 = values.iter().zip(weights).map(|(v, w)| w * v.abs().powf(p)).sum();
            s.powf(1.0 / p)
        }
    }
}

/// Mass-weighted average of cell values onto vertices.
pub fn to_vertices(space: &DiscreteSpace, cell_values: &[f64]) -> Vec<f64> {
    assert_eq!(cell_values.len(), space.n_cells());
    let mut out = vec![0.0; space.n_vertices()];
    for (c, cell) in space.cells().iter().enumerate() {
        let share = space.cell_mass()[c] / (cell.dim + 1) as f64 * cell_values[c];
        for &v in cell.vertices() {
            out[v] += share;
        }
    }
    out.iter_mut().zip(space.vertex_mass()).for_each(|(o, m)| *o /= m);
    out
}

/// Plain average of vertex values over each cell.
pub fn to_cells(space: &DiscreteSpace, vertex_values: &[f64]) -> Vec<f64> {
    assert_eq!(vertex_values.len(), space.n_vertices());
    space
        .cells()
        .iter()
        .map(|cell| cell.vertices().iter().map(|&v| vertex_values[v]).sum::<f64>() / (cell.dim + 1) as f64)
        .collect()
}

/// Matrix of [`to_vertices`], of size vertices × cells.
pub fn to_vertices_matrix(space: &DiscreteSpace) -> Csr {
    let mut t = Vec::new();
    for (c, cell) in space.cells().iter().enumerate() {
        for &v in cell.vertices() {
            t.push((v, c, space.cell_mass()[c] / (cell.dim + 1) as f64 / space.vertex_mass()[v]));
        }
    }
    Csr::from_triplets(space.n_vertices(), space.n_cells(), &t)
}

/// Matrix of [`to_cells`], of size cells × vertices.
pub fn to_cells_matrix(space: &DiscreteSpace) -> Csr {
    let mut t = Vec::new();
    for (c, cell) in space.cells().iter().enumerate() {
        for &v in cell.vertices() {
            t.push((c, v, 1.0 / (cell.dim + 1) as f64));
        }
    }
    Csr::from_triplets(space.n_cells(), space.n_vertices(), &t)
}

/// Matrix of `Y ↦ ⟨X, Y⟩` per cell (orthonormal frames), of size cells × 2·cells.
pub fn cell_dot_matrix(x: &VectorField) -> Csr {
    let t: Vec<(usize, usize, f64)> = x.0.iter().enumerate().flat_map(|(c, u)| [(c, 2 * c, u[0]), (c, 2 * c + 1, u[1])]).collect();
    Csr::from_triplets(x.0.len(), 2 * x.0.len(), &t)
}

pub fn metric_dot(g: &Mat2, x: &Vec2, y: &Vec2) -> f64 {
    x[0] * (g[0][0] * y[0] + g[0][1] * y[1]) + x[1] * (g[1][0] * y[0] + g[1][1] * y[1])
}

fn inverse2(g: &Mat2) -> Mat2 {
    if g[1][1] == 1.0 && g[0][1] == 0.0 && g[1][0] == 0.0 {
        return [[1.0 / g[0][0], 0.0], [0.0, 1.0]];
    }
    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
    [[g[1][1] / det, -g[0][1] / det], [-g[1][0] / det, g[0][0] / det]]
}

fn mat_vec(a: &Mat2, x: &Vec2) -> Vec2 {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn mat_lin(s: f64, a: &Mat2, t: f64, b: &Mat2) -> Mat2 {
    [[s * a[0][0] + t * b[0][0], s * a[0][1] + t * b[0][1]], [s * a[1][0] + t * b[1][0], s * a[1][1] + t * b[1][1]]]
}

/// `A : B = Σ A_ab B_cd G_ac G_bd`.
pub fn hs_inner_cell(g: &Mat2, a: &Mat2, b: &Mat2) -> f64 {
    let gb = mat_mul(g, &mat_mul(b, g));
    let mut s = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            s += a[i][j] * gb[i][j];
        }
    }
    s
}

/// Per-cell `XᵀG_cY`.
pub fn cell_inner(space: &DiscreteSpace, x: &VectorField, y: &VectorField) -> Result<Vec<f64>> {
    same_cells(space, x.0.len())?;
    same_cells(space, y.0.len())?;
    Ok((0..x.0.len()).map(|c| metric_dot(space.metric(c), &x.0[c], &y.0[c])).collect())
}

/// Per-cell pointwise norms `|X|`.
pub fn cell_norms(space: &DiscreteSpace, x: &VectorField) -> Vec<f64> {
    (0..x.0.len()).map(|c| metric_dot(space.metric(c), &x.0[c], &x.0[c]).max(0.0).sqrt()).collect()
}

/// Pointwise scalar product `⟨X,Y⟩` averaged onto vertices.
pub fn pointwise_inner(space: &DiscreteSpace, x: &VectorField, y: &VectorField) -> Result<ScalarField> {
    Ok(ScalarField(to_vertices(space, &cell_inner(space, x, y)?)))
}

pub fn musical_flat(space: &DiscreteSpace, x: &VectorField) -> OneForm {
    OneForm((0..x.0.len()).map(|c| mat_vec(space.metric(c), &x.0[c])).collect())
}

pub fn musical_sharp(space: &DiscreteSpace, w: &OneForm) -> VectorField {
    VectorField(
        (0..w.0.len())
            .map(|c| {
                let g = space.metric(c);
                if *g == crate::space::IDENTITY {
                    w.0[c]
                } else {
                    mat_vec(&inverse2(g), &w.0[c])
                }
            })
            .collect(),
    )
}

/// Per-cell pointwise norms of a 1-form, `√(ωᵀG⁻¹ω)`.
pub fn one_form_norms(space: &DiscreteSpace, w: &OneForm) -> Vec<f64> {
    (0..w.0.len()).map(|c| metric_dot(&inverse2(space.metric(c)), &w.0[c], &w.0[c]).max(0.0).sqrt()).collect()
}

/// Evaluates `ω(Y)` per cell.
pub fn pairing(w: &OneForm, y: &VectorField) -> Vec<f64> {
    w.0.iter().zip(&y.0).map(|(a, b)| a[0] * b[0] + a[1] * b[1]).collect()
}

/// Hilbert-Schmidt scalar product averaged onto vertices.
pub fn tensor_hs_inner(space: &DiscreteSpace, a: &Tensor2Field, b: &Tensor2Field) -> Result<ScalarField> {
    same_cells(space, a.0.len())?;
    same_cells(space, b.0.len())?;
    let vals: Vec<f64> = (0..a.0.len()).map(|c| hs_inner_cell(space.metric(c), &a.0[c], &b.0[c])).collect();
    Ok(ScalarField(to_vertices(space, &vals)))
}

/// `X ⊗ Y`, with coefficients `X_a Y_b`.
pub fn outer(x: &VectorField, y: &VectorField) -> Tensor2Field {
    Tensor2Field(x.0.iter().zip(&y.0).map(|(a, b)| [[a[0] * b[0], a[0] * b[1]], [a[1] * b[0], a[1] * b[1]]]).collect())
}

/// Symmetric and antisymmetric parts.
pub fn sym_asym_split(a: &Tensor2Field) -> (Tensor2Field, Tensor2Field) {
    let t = a.transpose();
    let sym = Tensor2Field(a.0.iter().zip(&t.0).map(|(x, y)| mat_lin(0.5, x, 0.5, y)).collect());
    let asym = Tensor2Field(a.0.iter().zip(&sym.0).map(|(x, s)| mat_lin(1.0, x, -1.0, s)).collect());
    (sym, asym)
}

/// Contraction `∇_Z X` from the tensor `T[a][b] = ⟨∇_{e_a} X, e_b⟩`.
pub fn contract_first(t: &Tensor2Field, z: &VectorField) -> VectorField {
    VectorField(t.0.iter().zip(&z.0).map(|(a, v)| [v[0] * a[0][0] + v[1] * a[1][0], v[0] * a[0][1] + v[1] * a[1][1]]).collect())
}

impl KForm {
    pub fn zero(space: &DiscreteSpace, degree: usize) -> Self {
        KForm { degree, coeffs: vec![[0.0; 2]; space.n_cells()] }
    }

    pub fn from_scalar_cells(values: &[f64]) -> Self {
        KForm { degree: 0, coeffs: values.iter().map(|&v| [v, 0.0]).collect() }
    }

    pub fn from_one_form(w: &OneForm) -> Self {
        KForm { degree: 1, coeffs: w.0.clone() }
    }

    pub fn area_form(values: &[f64]) -> Self {
        KForm { degree: 2, coeffs: values.iter().map(|&v| [v, 0.0]).collect() }
    }

    pub fn as_one_form(&self) -> Result<OneForm> {
        if self.degree != 1 {
            return Err(CalcError::InvalidArgument(format!("expected a 1-form, got degree {}", self.degree)));
        }
        Ok(OneForm(self.coeffs.clone()))
    }

    /// Scalar coefficient for degree 0 or 2.
    pub fn scalar_part(&self) -> Vec<f64> {
        self.coeffs.iter().map(|c| c[0]).collect()
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.degree, other.degree);
        KForm { degree: self.degree, coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| [a[0] + b[0], a[1] + b[1]]).collect() }
    }

    pub fn scale(&self, s: f64) -> Self {
        KForm { degree: self.degree, coeffs: self.coeffs.iter().map(|a| [s * a[0], s * a[1]]).collect() }
    }

    /// Per-cell pointwise norms through the determinant inner product.
    pub fn cell_norms(&self, space: &DiscreteSpace) -> Vec<f64> {
        (0..self.coeffs.len())
            .map(|c| {
                let g = space.metric(c);
                let a = self.coeffs[c];
                match self.degree {
                    0 => a[0].abs(),
                    1 => metric_dot(&inverse2(g), &a, &a).max(0.0).sqrt(),
                    _ => {
                        let gi = inverse2(g);
                        let det = gi[0][0] * gi[1][1] - gi[0][1] * gi[1][0];
                        a[0].abs() * det.sqrt()
                    }
                }
            })
            .collect()
    }
}

/// Wedge product of per-cell forms.
pub fn wedge(space: &DiscreteSpace, w: &KForm, e: &KForm) -> Result<KForm> {
    let degree = w.degree + e.degree;
    if degree > space.max_dim() || degree > 2 {
        return Err(CalcError::InvalidArgument(format!("wedge degree {degree} exceeds the cell dimension")));
    }
    same_cells(space, w.coeffs.len())?;
    same_cells(space, e.coeffs.len())?;
    let coeffs = w
        .coeffs
        .iter()
        .zip(&e.coeffs)
        .enumerate()
        .map(|(c, (a, b))| match (w.degree, e.degree) {
            (0, 0) => [a[0] * b[0], 0.0],
            (0, 1) => [a[0] * b[0], a[0] * b[1]],
            (1, 0) => [b[0] * a[0], b[0] * a[1]],
            (0, 2) => [a[0] * b[0], 0.0],
            (2, 0) => [a[0] * b[0], 0.0],
            (1, 1) if space.cell(c).dim == 2 => [a[0] * b[1] - a[1] * b[0], 0.0],
            _ => [0.0, 0.0],
        })
        .collect();
    Ok(KForm { degree, coeffs })
}

fn same_cells(space: &DiscreteSpace, n: usize) -> Result<()> {
    if n != space.n_cells() {
        return Err(CalcError::Mismatch(format!("field has {n} cells, space has {}", space.n_cells())));
    }
    Ok(())
}

/// JSON document `{space_hash, kind, degree, values}` describing a field.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FieldDocument {
    pub space_hash: String,
    pub kind: String,
    pub degree: usize,
    pub values: Vec<Vec<f64>>,
}

impl FieldDocument {
    pub fn scalar(space: &DiscreteSpace, f: &ScalarField) -> Self {
        FieldDocument { space_hash: space.hash(), kind: "scalar".into(), degree: 0, values: f.0.iter().map(|&v| vec![v]).collect() }
    }

    pub fn vector(space: &DiscreteSpace, x: &VectorField) -> Self {
        FieldDocument { space_hash: space.hash(), kind: "vector".into(), degree: 1, values: x.0.iter().map(|v| v.to_vec()).collect() }
    }

    pub fn tensor(space: &DiscreteSpace, t: &Tensor2Field) -> Self {
        FieldDocument {
            space_hash: space.hash(),
            kind: "tensor2".into(),
            degree: 2,
            values: t.0.iter().map(|a| vec![a[0][0], a[0][1], a[1][0], a[1][1]]).collect(),
        }
    }

    pub fn form(space: &DiscreteSpace, w: &KForm) -> Self {
        let width = if w.degree == 1 { 2 } else { 1 };
        FieldDocument { space_hash: space.hash(), kind: "form".into(), degree: w.degree, values: w.coeffs.iter().map(|c| c[..width].to_vec()).collect() }
    }

    pub fn measure(space: &DiscreteSpace, mu: &SignedMeasure) -> Self {
        FieldDocument { space_hash: space.hash(), kind: "measure".into(), degree: 0, values: mu.0.iter().map(|&v| vec![v]).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn torus() -> DiscreteSpace {
        DiscreteSpace::build("flat_torus:n=4").unwrap()
    }

    fn field_strategy(n: usize) -> impl Strategy<Value = VectorField> {
        prop::collection::vec(prop::array::uniform2(-10.0f64..10.0), n).prop_map(VectorField)
    }

    proptest! {
        #[test]
        fn parallelogram_and_cauchy_schwarz(x in field_strategy(32), y in field_strategy(32)) {
            let s = torus();
            let xy = cell_inner(&s, &x, &y).unwrap();
            let nx = cell_norms(&s, &x);
            let ny = cell_norms(&s, &y);
            let p = cell_norms(&s, &x.add(&y));
            let m = cell_norms(&s, &x.sub(&y));
            for c in 0..32 {
                let lhs = p[c] * p[c] + m[c] * m[c];
                let rhs = 2.0 * nx[c] * nx[c] + 2.0 * ny[c] * ny[c];
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
                prop_assert!(xy[c].abs() <= nx[c] * ny[c] * (1.0 + 1e-12) + 1e-300);
            }
        }

        #[test]
        fn flat_sharp_round_trip_and_isometry(x in field_strategy(32)) {
            let s = torus();
            let w = musical_flat(&s, &x);
            prop_assert_eq!(musical_sharp(&s, &w), x.clone());
            let a = one_form_norms(&s, &w);
            let b = cell_norms(&s, &x);
            for c in 0..32 {
                prop_assert!((a[c] - b[c]).abs() <= 1e-12 * b[c].max(1.0));
            }
        }

        #[test]
        fn sym_asym_pythagoras(x in field_strategy(32), y in field_strategy(32)) {
            let s = torus();
            let a = outer(&x, &y).add(&outer(&y, &x).scale(0.3));
            let (sy, asy) = sym_asym_split(&a);
            let full = a.cell_hs_sq(&s);
            let ps = sy.cell_hs_sq(&s);
            let pa = asy.cell_hs_sq(&s);
            for c in 0..32 {
                prop_assert!((full[c] - ps[c] - pa[c]).abs() <= 1e-12 * full[c].max(1.0));
            }
            prop_assert_eq!(sy.add(&asy).0.len(), 32);
            for (u, v) in sy.add(&asy).0.iter().zip(&a.0) {
                for i in 0..2 { for j in 0..2 { prop_assert!((u[i][j] - v[i][j]).abs() <= 1e-12 * v[i][j].abs().max(1.0)); } }
            }
        }

        #[test]
        fn wedge_graded_commutativity(x in field_strategy(32), y in field_strategy(32)) {
            let s = torus();
            let w = KForm::from_one_form(&musical_flat(&s, &x));
            let e = KForm::from_one_form(&musical_flat(&s, &y));
            let we = wedge(&s, &w, &e).unwrap();
            let ew = wedge(&s, &e, &w).unwrap();
            let ww = wedge(&s, &w, &w).unwrap();
            for c in 0..32 {
                prop_assert!((we.coeffs[c][0] + ew.coeffs[c][0]).abs() <= 1e-12 * we.coeffs[c][0].abs().max(1.0));
                prop_assert_eq!(ww.coeffs[c][0], 0.0);
            }
        }
    }

    #[test]
    fn inner_with_zero_is_zero() {
        let s = torus();
        let x = VectorField(vec![[1.0, 2.0]; 32]);
        let z = VectorField::zeros(&s);
        assert!(pointwise_inner(&s, &x, &z).unwrap().0.iter().all(|&v| v == 0.0));
        assert!(pointwise_inner(&s, &x, &x).unwrap().0.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn flat_under_non_identity_metric() {
        let s = torus().with_cell_metric(0, [[2.0, 0.0], [0.0, 1.0]]).unwrap();
        let mut e1 = VectorField::zeros(&s);
        e1.0[0] = [1.0, 0.0];
        let w = musical_flat(&s, &e1);
        assert_eq!(w.0[0], [2.0, 0.0]);
        assert_eq!(musical_sharp(&s, &w), e1);
    }

    #[test]
    fn hs_of_tensor_product_and_identity() {
        let s = torus();
        let x = VectorField((0..32).map(|c| [c as f64 * 0.1, 1.0 - c as f64 * 0.05]).collect());
        let y = VectorField((0..32).map(|c| [(c as f64).sin(), 0.5]).collect());
        let t = outer(&x, &y);
        let hs = t.cell_hs_sq(&s);
        let nx = cell_norms(&s, &x);
        let ny = cell_norms(&s, &y);
        for c in 0..32 {
            let want = nx[c] * nx[c] * ny[c] * ny[c];
            assert!((hs[c] - want).abs() <= 1e-12 * want.max(1.0));
        }
        let id = Tensor2Field(vec![crate::space::IDENTITY; 32]);
        assert!(id.cell_hs_sq(&s).iter().all(|&v| (v - 2.0).abs() < 1e-15));
        let u = tensor_hs_inner(&s, &t, &id).unwrap();
        let v = tensor_hs_inner(&s, &id, &t).unwrap();
        assert_eq!(u, v);
    }

    #[test]
    fn symmetric_and_antisymmetric_inputs() {
        let s = torus();
        let x = VectorField(vec![[1.0, 2.0]; 32]);
        let y = VectorField(vec![[-0.5, 3.0]; 32]);
        let sym = outer(&x, &x);
        let (a, b) = sym_asym_split(&sym);
        assert_eq!(a, sym);
        assert!(b.cell_hs_sq(&s).iter().all(|&v| v == 0.0));
        let anti = outer(&x, &y).sub(&outer(&y, &x));
        let (a, b) = sym_asym_split(&anti);
        assert!(a.cell_hs_sq(&s).iter().all(|&v| v == 0.0));
        assert_eq!(b, anti);
    }

    #[test]
    fn area_form_has_unit_norm() {
        let s = torus();
        let dx = KForm::from_one_form(&OneForm(vec![[1.0, 0.0]; 32]));
        let dy = KForm::from_one_form(&OneForm(vec![[0.0, 1.0]; 32]));
        let w = wedge(&s, &dx, &dy).unwrap();
        assert!(w.cell_norms(&s).iter().all(|&v| (v - 1.0).abs() < 1e-15));
        assert!(wedge(&s, &w, &dx).is_err());
    }

    #[test]
    fn lp_norms() {
        let s = DiscreteSpace::build("flat_torus:n=8,side=2pi").unwrap();
        let one = ScalarField::constant(&s, 1.0);
        let two_pi = 2.0 * std::f64::consts::PI;
        assert!((one.lp_norm(&s, Exponent::new(2.0).unwrap()) - two_pi).abs() < 1e-12);
        let mut f = ScalarField::zeros(&s);
        f.0[5] = -3.0;
        f.0[7] = 2.0;
        assert_eq!(f.lp_norm(&s, Exponent::Infinity), 3.0);
        assert!(Exponent::new(0.5).is_err());
        // |fX| = |f||X| gives ‖fX‖₂ ≤ ‖f‖∞‖X‖₂.
        let x = VectorField((0..s.n_cells()).map(|c| [(c as f64).cos(), 1.0]).collect());
        let g = ScalarField((0..s.n_vertices()).map(|v| (v as f64 * 0.7).sin()).collect());
        let fx = x.scale_by(&s, &g);
        let p2 = Exponent::Finite(2.0);
        assert!(fx.lp_norm(&s, p2) <= g.lp_norm(&s, Exponent::Infinity) * x.lp_norm(&s, p2) + 1e-12);
    }

    #[test]
    fn transfers_are_adjoint() {
        let s = DiscreteSpace::build("icosphere:subdiv=1").unwrap();
        let cv: Vec<f64> = (0..s.n_cells()).map(|c| (c as f64 * 0.37).sin()).collect();
        let vv: Vec<f64> = (0..s.n_vertices()).map(|v| (v as f64 * 1.3).cos()).collect();
        let lhs = crate::linalg::wdot(s.vertex_mass(), &to_vertices(&s, &cv), &vv);
        let rhs = crate::linalg::wdot(s.cell_mass(), &cv, &to_cells(&s, &vv));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
