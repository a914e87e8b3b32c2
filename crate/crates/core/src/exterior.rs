//! Exterior derivative, codifferential, Hodge Laplacian, harmonic forms,
//! Betti numbers and heat flow on 1-forms.
//!
//! Forms are Whitney cochains: 0-forms live on vertices, 1-forms on edges
//! and 2-forms on triangles, where a 2-cochain stores the density of the
//! form in the (positively oriented) cell frame. `d` is the signed incidence
//! of the complex, so `d∘d = 0` holds exactly. The masses are the lumped
//! vertex mass, the Galerkin mass of the Whitney 1-forms and the cell mass.
//! The codifferential is the exact adjoint `δ = M⁻¹dᵀM`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::covariant::{self, CovariantOperator};
use crate::dirichlet::{component_indicators, heat_steps, Dirichlet};
use crate::error::{CalcError, Result};
use crate::fields::{self, KForm, OneForm, ScalarField, VectorField};
use crate::hessian::HessianOperator;
use crate::linalg::{self, Cholesky, Csr};
use crate::report::{self, Measurement};
use crate::space::DiscreteSpace;

/// Eigenvalues at most this fraction of the largest one count as harmonic.
pub const KERNEL_THRESHOLD: f64 = 1e-8;
/// Required separation between kernel and the rest of the spectrum.
pub const GAP_FACTOR: f64 = 100.0;

/// A cochain of a given degree.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cochain {
    pub degree: usize,
    pub values: Vec<f64>,
}

impl Cochain {
    pub fn new(degree: usize, values: Vec<f64>) -> Self {
        Cochain { degree, values }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.degree, other.degree);
        Cochain::new(self.degree, linalg::add(&self.values, &other.values))
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.degree, other.degree);
        Cochain::new(self.degree, linalg::sub(&self.values, &other.values))
    }

    pub fn scale(&self, s: f64) -> Self {
        Cochain::new(self.degree, linalg::scaled(s, &self.values))
    }
}

/// Orthonormal basis of the harmonic forms of one degree.
#[derive(Clone, Debug, Serialize)]
pub struct HarmonicBasis {
    pub degree: usize,
    /// Mass-orthonormal harmonic cochains.
    pub basis: Vec<Vec<f64>>,
    /// Computed bottom of the spectrum, kernel included.
    pub eigenvalues: Vec<f64>,
    pub lambda_max: f64,
    pub threshold: f64,
    /// First non-kernel eigenvalue over the largest kernel eigenvalue.
    pub gap_ratio: f64,
}

impl HarmonicBasis {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BettiNumbers {
    /// Dimensions of the harmonic spaces.
    pub harmonic: Vec<usize>,
    /// `dim ker d_k − rank d_{k−1}` from singular values of the incidences.
    pub rank_nullity: Vec<usize>,
    pub consistent: bool,
}

/// Splitting `ω = dα + δβ + h`.
#[derive(Clone, Debug, Serialize)]
pub struct HodgeDecomposition {
    pub exact: Vec<f64>,
    pub coexact: Vec<f64>,
    pub harmonic: Vec<f64>,
    pub potential: Vec<f64>,
    pub copotential: Vec<f64>,
    /// `‖ω − dα − δβ − h‖ / ‖ω‖`.
    pub reconstruction_error: f64,
    /// Largest normalized scalar product between two of the parts.
    pub orthogonality: f64,
}

#[derive(Debug)]
pub struct CochainAssembly {
    n: [usize; 3],
    /// Cell index of each triangle.
    triangles: Vec<usize>,
    d0: Csr,
    d1: Csr,
    m0: Vec<f64>,
    m1: Csr,
    m2: Vec<f64>,
    /// Pairing of Whitney 1-forms with per-cell covectors, edges × 2·cells.
    pairing: Csr,
    cell_weights: Vec<f64>,
    m1_factor: Cholesky,
    k1: Csr,
    dd_distance: f64,
    heat_factors: Mutex<HashMap<u64, Arc<Cholesky>>>,
}

fn local_edge(vs: &[usize], i: usize, j: usize) -> (usize, usize) {
    if vs[i] < vs[j] { (i, j) } else { (j, i) }
}

impl CochainAssembly {
    pub fn new(space: &DiscreteSpace) -> Result<Self> {
        if !space.is_orthonormal() {
            return Err(CalcError::InvalidArgument("calculus operators need orthonormal cell frames".into()));
        }
        let (n0, n1) = (space.n_vertices(), space.n_edges());
        let triangles: Vec<usize> = (0..space.n_cells()).filter(|&c| space.cell(c).dim == 2).collect();
        let n2 = triangles.len();

        let mut t0 = Vec::with_capacity(2 * n1);
        for (e, &[a, b]) in space.edges().iter().enumerate() {
            t0.push((e, a, -1.0));
            t0.push((e, b, 1.0));
        }
        let d0 = Csr::from_triplets(n1, n0, &t0);

        let edge = |a: usize, b: usize| -> Result<usize> {
            space.edge_index(a, b).ok_or_else(|| CalcError::MeshFormat(format!("edge ({a},{b}) is missing")))
        };
        let mut t1 = Vec::with_capacity(3 * n2);
        for (t, &c) in triangles.iter().enumerate() {
            let vs = space.cell(c).vertices();
            let area = space.geometry(c).volume;
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                let sign = if vs[i] < vs[j] { 1.0 } else { -1.0 };
                t1.push((t, edge(vs[i], vs[j])?, sign / area));
            }
        }
        let d1 = Csr::from_triplets(n2, n1, &t1);

        let mut tm = Vec::new();
        let mut tb = Vec::new();
        for (c, cell) in space.cells().iter().enumerate() {
            let vs = cell.vertices();
            let n = cell.dim;
            let g = space.geometry(c).grads;
            let m = space.cell_mass()[c];
            let lam = |i: usize, k: usize| m * if i == k { 2.0 } else { 1.0 } / ((n + 1) * (n + 2)) as f64;
            let gg = |i: usize, k: usize| g[i][0] * g[k][0] + g[i][1] * g[k][1];
            let mut locals = Vec::new();
            for i in 0..=n {
                for j in i + 1..=n {
                    let (p, q) = local_edge(vs, i, j);
                    locals.push((edge(vs[p], vs[q])?, p, q));
                }
            }
            for &(e, p, q) in &locals {
                for &(f, r, s) in &locals {
                    let v = lam(p, r) * gg(q, s) - lam(p, s) * gg(q, r) - lam(q, r) * gg(p, s) + lam(q, s) * gg(p, r);
                    tm.push((e, f, v));
                }
                for a in 0..n {
                    tb.push((e, 2 * c + a, m * (g[q][a] - g[p][a]) / (n + 1) as f64));
                }
            }
        }
        let m1 = Csr::from_triplets(n1, n1, &tm);
        let pairing = Csr::from_triplets(n1, 2 * space.n_cells(), &tb);
        let m0 = space.vertex_mass().to_vec();
        let m2: Vec<f64> = triangles.iter().map(|&c| space.cell_mass()[c]).collect();
        let m1_factor = Cholesky::new(&m1)?;
        let inv_m0: Vec<f64> = m0.iter().map(|m| 1.0 / m).collect();
        let m1d0 = m1.matmul(&d0);
        let k1 = d1
            .transpose()
            .scale_cols(&m2)
            .matmul(&d1)
            .add(&m1d0.scale_cols(&inv_m0).matmul(&m1d0.transpose()), 1.0, 1.0);
        let mut cx = CochainAssembly {
            n: [n0, n1, n2],
            triangles,
            d0,
            d1,
            m0,
            m1,
            m2,
            pairing,
            cell_weights: space.cell_mass().iter().flat_map(|&m| [m, m]).collect(),
            m1_factor,
            k1,
            dd_distance: 0.0,
            heat_factors: Mutex::new(HashMap::new()),
        };
        cx.dd_distance = cx.project_d1(space)?;
        Ok(cx)
    }

    /// Replaces `d₁` by its Frobenius-nearest operator with `d₁d₀ = 0`, i.e.
    /// removes from each row its component in `range(d₀)`. Returns the
    /// Frobenius distance moved.
    fn project_d1(&mut self, space: &DiscreteSpace) -> Result<f64> {
        let defect = self.d1.matmul(&self.d0);
        if defect.max_abs() == 0.0 {
            return Ok(0.0);
        }
        let gram = self.d0.transpose().matmul(&self.d0);
        let kernel = component_indicators(space);
        let d1t = self.d1.transpose();
        let mut trips = Vec::new();
        let mut dist2 = 0.0;
        for t in 0..self.n[2] {
            let row: Vec<f64> = (0..self.n[1]).map(|e| d1t.get(e, t)).collect();
            let mut corrected = row.clone();
            if defect.row(t).any(|(_, v)| v != 0.0) {
                let rhs = self.d0.tmul_vec(&row);
                let y = linalg::pcg(|x| gram.mul_vec(x), &rhs, &gram.diag(), &kernel, 1e-14, 10 * self.n[0] + 100)?.x;
                let p = self.d0.mul_vec(&y);
                dist2 += linalg::dot(&p, &p);
                corrected = linalg::sub(&row, &p);
            }
            trips.extend(corrected.iter().enumerate().filter(|(_, v)| v.abs() > 1e-15).map(|(e, &v)| (t, e, v)));
        }
        self.d1 = Csr::from_triplets(self.n[2], self.n[1], &trips);
        Ok(dist2.sqrt())
    }

    /// Number of cochains per degree.
    pub fn dims(&self) -> [usize; 3] {
        self.n
    }

    pub fn d_matrix(&self, k: usize) -> Result<&Csr> {
        match k {
            0 => Ok(&self.d0),
            1 => Ok(&self.d1),
            _ => Err(CalcError::InvalidArgument(format!("no exterior derivative on {k}-forms of a 2-dimensional complex"))),
        }
    }

    pub fn mass_matrix(&self, k: usize) -> Result<Csr> {
        match k {
            0 => Ok(Csr::diagonal(&self.m0)),
            1 => Ok(self.m1.clone()),
            2 => Ok(Csr::diagonal(&self.m2)),
            _ => Err(degree_error(k)),
        }
    }

    /// Frobenius distance between the assembled `d₁` and the nearest
    /// operator annihilating `range(d₀)`.
    pub fn dd_projection_distance(&self) -> f64 {
        self.dd_distance
    }

    pub fn triangles(&self) -> &[usize] {
        &self.triangles
    }

    fn check(&self, w: &Cochain) -> Result<()> {
        if w.degree > 2 {
            return Err(degree_error(w.degree));
        }
        if w.values.len() != self.n[w.degree] {
            return Err(CalcError::Mismatch(format!(
                "{}-cochain has {} values, the complex has {}",
                w.degree,
                w.values.len(),
                self.n[w.degree]
            )));
        }
        Ok(())
    }

    fn apply_mass(&self, k: usize, x: &[f64]) -> Vec<f64> {
        match k {
            0 => x.iter().zip(&self.m0).map(|(a, m)| a * m).collect(),
            1 => self.m1.mul_vec(x),
            _ => x.iter().zip(&self.m2).map(|(a, m)| a * m).collect(),
        }
    }

    fn solve_mass(&self, k: usize, x: &[f64]) -> Vec<f64> {
        match k {
            0 => x.iter().zip(&self.m0).map(|(a, m)| a / m).collect(),
            1 => self.m1_factor.solve(x),
            _ => x.iter().zip(&self.m2).map(|(a, m)| a / m).collect(),
        }
    }

    /// `L²` scalar product of two cochains of the same degree.
    pub fn inner(&self, a: &Cochain, b: &Cochain) -> f64 {
        assert_eq!(a.degree, b.degree);
        linalg::dot(&a.values, &self.apply_mass(a.degree, &b.values))
    }

    pub fn norm(&self, a: &Cochain) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    pub fn exterior_derivative(&self, w: &Cochain) -> Result<Cochain> {
        self.check(w)?;
        Ok(Cochain::new(w.degree + 1, self.d_matrix(w.degree)?.mul_vec(&w.values)))
    }

    /// `δ = M⁻¹dᵀM`; identically zero on 0-forms.
    pub fn codifferential(&self, w: &Cochain) -> Result<Cochain> {
        self.check(w)?;
        if w.degree == 0 {
            return Ok(Cochain::new(0, vec![0.0; self.n[0]]));
        }
        let k = w.degree;
        let y = self.d_matrix(k - 1)?.tmul_vec(&self.apply_mass(k, &w.values));
        Ok(Cochain::new(k - 1, self.solve_mass(k - 1, &y)))
    }

    /// `Δ_H = δd + dδ`.
    pub fn hodge_laplacian(&self, w: &Cochain) -> Result<Cochain> {
        self.check(w)?;
        let mut out = vec![0.0; w.values.len()];
        if w.degree < 2 {
            let dd = self.codifferential(&self.exterior_derivative(w)?)?;
            out = linalg::add(&out, &dd.values);
        }
        if w.degree > 0 {
            let dd = self.exterior_derivative(&self.codifferential(w)?)?;
            out = linalg::add(&out, &dd.values);
        }
        Ok(Cochain::new(w.degree, out))
    }

    /// `Mₖ Δ_H`, the symmetric stiffness of degree `k`.
    fn apply_stiffness(&self, k: usize, x: &[f64]) -> Vec<f64> {
        match k {
            0 => self.d0.tmul_vec(&self.m1.mul_vec(&self.d0.mul_vec(x))),
            1 => self.k1.mul_vec(x),
            _ => {
                let y = self.m1_factor.solve(&self.d1.tmul_vec(&self.apply_mass(2, x)));
                self.apply_mass(2, &self.d1.mul_vec(&y))
            }
        }
    }

    /// `½(‖dω‖² + ‖δω‖²)`.
    pub fn hodge_energy(&self, w: &Cochain) -> Result<f64> {
        let mut e = 0.0;
        if w.degree < 2 {
            let dw = self.exterior_derivative(w)?;
            e += self.inner(&dw, &dw);
        }
        let cw = self.codifferential(w)?;
        e += self.inner(&cw, &cw);
        Ok(0.5 * e)
    }

    /// Cochain of `f₀ df₁`: trapezoidal edge integrals, exact for P1 data.
    pub fn generated_one_form(&self, space: &DiscreteSpace, f0: &ScalarField, f1: &ScalarField) -> Cochain {
        Cochain::new(
            1,
            space.edges().iter().map(|&[a, b]| 0.5 * (f0.0[a] + f0.0[b]) * (f1.0[b] - f1.0[a])).collect(),
        )
    }

    /// `f·ω` for a 1-cochain, using the edge average of `f`.
    pub fn multiply(&self, space: &DiscreteSpace, f: &ScalarField, w: &Cochain) -> Result<Cochain> {
        self.check(w)?;
        let values = match w.degree {
            0 => w.values.iter().zip(&f.0).map(|(a, b)| a * b).collect(),
            1 => w.values.iter().zip(space.edges()).map(|(v, &[a, b])| 0.5 * (f.0[a] + f.0[b]) * v).collect(),
            _ => w.values.iter().zip(&self.triangles).map(|(v, &c)| fields::to_cells(space, &f.0)[c] * v).collect(),
        };
        Ok(Cochain::new(w.degree, values))
    }

    /// Per-cell form represented by a cochain: the cell average of the
    /// Whitney interpolant.
    pub fn to_kform(&self, space: &DiscreteSpace, w: &Cochain) -> Result<KForm> {
        self.check(w)?;
        Ok(match w.degree {
            0 => KForm::from_scalar_cells(&fields::to_cells(space, &w.values)),
            1 => {
                let y = self.pairing.tmul_vec(&w.values);
                let v: Vec<f64> = y.iter().zip(&self.cell_weights).map(|(a, m)| a / m).collect();
                KForm::from_one_form(&OneForm(VectorField::from_flat(&v).0))
            }
            _ => {
                let mut dens = vec![0.0; space.n_cells()];
                for (t, &c) in self.triangles.iter().enumerate() {
                    dens[c] = w.values[t];
                }
                KForm::area_form(&dens)
            }
        })
    }

    /// Cochain of a per-cell form: vertex average for 0-forms, `L²`
    /// projection onto Whitney forms for 1-forms, densities for 2-forms.
    pub fn from_kform(&self, space: &DiscreteSpace, w: &KForm) -> Result<Cochain> {
        if w.coeffs.len() != space.n_cells() {
            return Err(CalcError::Mismatch(format!("form has {} cells, space has {}", w.coeffs.len(), space.n_cells())));
        }
        Ok(match w.degree {
            0 => Cochain::new(0, fields::to_vertices(space, &w.scalar_part())),
            1 => {
                let flat: Vec<f64> = w.coeffs.iter().flat_map(|a| [a[0], a[1]]).collect();
                Cochain::new(1, self.m1_factor.solve(&self.pairing.mul_vec(&flat)))
            }
            2 => Cochain::new(2, self.triangles.iter().map(|&c| w.coeffs[c][0]).collect()),
            k => return Err(degree_error(k)),
        })
    }

    /// `X♭` as a cochain.
    pub fn flat(&self, space: &DiscreteSpace, x: &VectorField) -> Result<Cochain> {
        self.from_kform(space, &KForm::from_one_form(&fields::musical_flat(space, x)))
    }

    pub fn one_form_cells(&self, space: &DiscreteSpace, w: &Cochain) -> Result<VectorField> {
        Ok(VectorField(self.to_kform(space, w)?.coeffs))
    }

    fn lambda_max(&self, k: usize) -> f64 {
        let n = self.n[k];
        let mut x: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + (i as f64 * 0.618_034).fract())).collect();
        let mut lambda = 0.0;
        for _ in 0..60 {
            let y = self.solve_mass(k, &self.apply_stiffness(k, &x));
            let ny = linalg::norm2(&y);
            if ny == 0.0 {
                return 0.0;
            }
            x = linalg::scaled(1.0 / ny, &y);
            lambda = linalg::dot(&x, &self.apply_stiffness(k, &x)) / linalg::dot(&x, &self.apply_mass(k, &x));
        }
        lambda
    }

    /// Harmonic `k`-forms from the bottom of the spectrum of `Δ_H`.
    pub fn harmonic_forms(&self, k: usize) -> Result<HarmonicBasis> {
        if k > 2 {
            return Err(degree_error(k));
        }
        let n = self.n[k];
        if n == 0 {
            return Ok(HarmonicBasis { degree: k, basis: vec![], eigenvalues: vec![], lambda_max: 0.0, threshold: 0.0, gap_ratio: f64::INFINITY });
        }
        let lambda_max = self.lambda_max(k);
        let threshold = KERNEL_THRESHOLD * lambda_max;
        let sigma = (1e-6 * lambda_max).max(f64::MIN_POSITIVE);
        let solver = self.shifted_solver(k, sigma)?;
        let mut p = 6;
        loop {
            let p_eff = p.min(n);
            let spec = linalg::low_spectrum(
                n,
                p_eff,
                |b| solver(b),
                |x| self.apply_stiffness(k, x),
                |x| self.apply_mass(k, x),
                1e-6,
                3000,
            )?;
            let (dim, gap_ratio) = kernel_split(&spec.values, threshold, &format!("{k}-forms"))?;
            if dim < p_eff || p_eff == n {
                // Extra inverse iterations on the kernel block alone; each
                // damps the rest of the spectrum by at least σ/(λ₁+σ).
                let mut basis = spec.vectors[..dim].to_vec();
                for _ in 0..4 {
                    basis = basis.iter().map(|v| solver(&self.apply_mass(k, v))).collect();
                    for i in 0..basis.len() {
                        for j in 0..i {
                            let c = linalg::dot(&basis[i], &self.apply_mass(k, &basis[j]));
                            let bj = basis[j].clone();
                            linalg::axpy(-c, &bj, &mut basis[i]);
                        }
                        let nrm = linalg::dot(&basis[i], &self.apply_mass(k, &basis[i])).sqrt();
                        basis[i] = linalg::scaled(1.0 / nrm, &basis[i]);
                    }
                }
                return Ok(HarmonicBasis {
                    degree: k,
                    basis,
                    eigenvalues: spec.values,
                    lambda_max,
                    threshold,
                    gap_ratio,
                });
            }
            p *= 2;
        }
    }

    fn shifted_solver(&self, k: usize, sigma: f64) -> Result<Box<dyn Fn(&[f64]) -> Vec<f64> + '_>> {
        Ok(match k {
            0 => {
                let s = self.d0.transpose().matmul(&self.m1).matmul(&self.d0);
                let f = Cholesky::new(&s.add(&Csr::diagonal(&self.m0), 1.0, sigma))?;
                Box::new(move |b| f.solve(b))
            }
            1 => {
                let f = Cholesky::new(&self.k1.add(&self.m1, 1.0, sigma))?;
                Box::new(move |b| f.solve(b))
            }
            _ => {
                // (K₂ + σM₂)x = b with K₂ = M₂d₁M₁⁻¹d₁ᵀM₂: y = (σM₁ + d₁ᵀM₂d₁)⁻¹d₁ᵀb,
                // x = (M₂⁻¹b − d₁y)/σ.
                let a = self.d1.transpose().scale_cols(&self.m2).matmul(&self.d1).add(&self.m1, 1.0, sigma);
                let f = Cholesky::new(&a)?;
                Box::new(move |b| {
                    let y = f.solve(&self.d1.tmul_vec(b));
                    let dy = self.d1.mul_vec(&y);
                    b.iter().zip(&self.m2).zip(&dy).map(|((bi, m), d)| (bi / m - d) / sigma).collect()
                })
            }
        })
    }

    /// `(b₀, b₁, b₂)` from harmonic forms.
    pub fn betti_harmonic(&self) -> Result<Vec<usize>> {
        (0..3).map(|k| self.harmonic_forms(k).map(|h| h.dim())).collect()
    }

    /// `(b₀, b₁, b₂)` as `dim ker dₖ − rank dₖ₋₁`, with ranks from the
    /// singular values of the assembled incidences.
    pub fn betti_rank_nullity(&self) -> Result<Vec<usize>> {
        let ker_d0 = gram_kernel_dim(&self.d0.transpose().matmul(&self.d0), "d0")?;
        let rank_d0 = self.n[0] - ker_d0;
        let rank_d1 = if self.n[2] == 0 { 0 } else { self.n[2] - gram_kernel_dim(&self.d1.matmul(&self.d1.transpose()), "d1")? };
        Ok(vec![ker_d0, self.n[1] - rank_d1 - rank_d0, self.n[2] - rank_d1])
    }

    /// `ω = dα + δβ + h` for a 1-cochain.
    pub fn hodge_decomposition(&self, space: &DiscreteSpace, w: &Cochain) -> Result<HodgeDecomposition> {
        self.check(w)?;
        if w.degree != 1 {
            return Err(CalcError::InvalidArgument("the Hodge decomposition is implemented for 1-forms".into()));
        }
        let s = self.d0.transpose().matmul(&self.m1).matmul(&self.d0);
        let rhs = self.d0.tmul_vec(&self.m1.mul_vec(&w.values));
        let alpha = linalg::pcg(|x| s.mul_vec(x), &rhs, &s.diag(), &component_indicators(space), 1e-14, 20 * self.n[0] + 200)?.x;
        let exact = self.d0.mul_vec(&alpha);

        let h1 = self.harmonic_forms(1)?;
        let mut harmonic = vec![0.0; self.n[1]];
        let mw = self.m1.mul_vec(&w.values);
        for h in &h1.basis {
            linalg::axpy(linalg::dot(h, &mw), h, &mut harmonic);
        }

        let (beta, coexact) = if self.n[2] == 0 {
            (vec![], vec![0.0; self.n[1]])
        } else {
            let h2 = self.harmonic_forms(2)?;
            let rhs2 = self.apply_mass(2, &self.d1.mul_vec(&w.values));
            let diag: Vec<f64> = {
                let m1d = self.m1.diag();
                (0..self.n[2])
                    .map(|t| self.d1.row(t).map(|(e, v)| v * v / m1d[e]).sum::<f64>() * self.m2[t] * self.m2[t])
                    .collect()
            };
            let beta = linalg::pcg(|x| self.apply_stiffness(2, x), &rhs2, &diag, &h2.basis, 1e-13, 20 * self.n[2] + 200)?.x;
            let coexact = self.m1_factor.solve(&self.d1.tmul_vec(&self.apply_mass(2, &beta)));
            (beta, coexact)
        };
        let residual = linalg::sub(&linalg::sub(&linalg::sub(&w.values, &exact), &coexact), &harmonic);
        let c = |v: &[f64]| Cochain::new(1, v.to_vec());
        let wn = self.norm(w);
        let reconstruction_error = if wn > 0.0 { self.norm(&c(&residual)) / wn } else { self.norm(&c(&residual)) };
        let parts = [&exact, &coexact, &harmonic];
        let mut orthogonality: f64 = 0.0;
        for i in 0..3 {
            for j in i + 1..3 {
                let scale = (self.norm(&c(parts[i])) * self.norm(&c(parts[j]))).max(f64::MIN_POSITIVE);
                orthogonality = orthogonality.max(self.inner(&c(parts[i]), &c(parts[j])).abs() / scale);
            }
        }
        Ok(HodgeDecomposition { exact, coexact, harmonic, potential: alpha, copotential: beta, reconstruction_error, orthogonality })
    }

    fn heat_factor(&self, dt: f64) -> Result<Arc<Cholesky>> {
        let key = dt.to_bits();
        let mut cache = self.heat_factors.lock().expect("heat cache poisoned");
        if let Some(f) = cache.get(&key) {
            return Ok(f.clone());
        }
        let f = Arc::new(Cholesky::new(&self.m1.add(&self.k1, 1.0, dt))?);
        cache.insert(key, f.clone());
        Ok(f)
    }

    /// `h_{H,t}ω` for a 1-cochain, implicit Euler `(M₁ + Δt K₁)ω' = M₁ω`.
    pub fn hodge_heat_flow(&self, w: &Cochain, t: f64) -> Result<Cochain> {
        self.check(w)?;
        if w.degree != 1 {
            return Err(CalcError::InvalidArgument("the Hodge heat flow acts on 1-forms".into()));
        }
        if t < 0.0 || !t.is_finite() {
            return Err(CalcError::InvalidArgument(format!("heat flow time must be nonnegative, got {t}")));
        }
        let (n, dt) = heat_steps(t);
        let mut x = w.values.clone();
        for _ in 0..n {
            x = self.heat_factor(dt)?.solve(&self.m1.mul_vec(&x));
        }
        Ok(Cochain::new(1, x))
    }
}

fn degree_error(k: usize) -> CalcError {
    CalcError::InvalidArgument(format!("forms of degree {k} do not exist on a 2-dimensional complex"))
}

/// Number of eigenvalues at or below `threshold`, with the gap check.
fn kernel_split(values: &[f64], threshold: f64, what: &str) -> Result<(usize, f64)> {
    if let Some(v) = values.iter().find(|&&v| v > threshold / GAP_FACTOR && v < threshold * GAP_FACTOR) {
        return Err(CalcError::AmbiguousKernel(format!("{what}: eigenvalue {v:e} near threshold {threshold:e}")));
    }
    let dim = values.iter().filter(|&&v| v <= threshold).count();
    let gap_ratio = match (dim, values.get(dim)) {
        (_, None) => f64::INFINITY,
        (0, Some(&next)) => next / threshold,
        (_, Some(&next)) => next / values[dim - 1].abs().max(f64::MIN_POSITIVE),
    };
    if gap_ratio < GAP_FACTOR {
        return Err(CalcError::AmbiguousKernel(format!("{what}: spectral gap ratio {gap_ratio:e} below {GAP_FACTOR}")));
    }
    Ok((dim, gap_ratio))
}

/// Dense problems up to this size use a full eigendecomposition.
const DENSE_LIMIT: usize = 1200;

/// Kernel dimension of a Gram matrix `AᵀA`, i.e. the number of zero
/// singular values of `A` at the relative threshold.
fn gram_kernel_dim(gram: &Csr, what: &str) -> Result<usize> {
    let n = gram.nrows();
    if n == 0 {
        return Ok(0);
    }
    let bound = gram.row_abs_sums().into_iter().fold(0.0, f64::max);
    let threshold = KERNEL_THRESHOLD * bound;
    if n <= DENSE_LIMIT {
        let values = linalg::symmetric_eigenvalues(gram.to_dense());
        return kernel_split(&values, threshold, what).map(|(d, _)| d);
    }
    let sigma = 1e-6 * bound;
    let factor = Cholesky::new(&gram.add(&Csr::identity(n), 1.0, sigma))?;
    let mut p = 6;
    loop {
        let spec = linalg::low_spectrum(n, p, |b| factor.solve(b), |x| gram.mul_vec(x), |x| x.to_vec(), 1e-6, 3000)?;
        let (dim, _) = kernel_split(&spec.values, threshold, what)?;
        if dim < p {
            return Ok(dim);
        }
        p *= 2;
    }
}

/// Betti numbers by both routes.
pub fn betti(space: &DiscreteSpace) -> Result<BettiNumbers> {
    let cx = CochainAssembly::new(space)?;
    betti_of(&cx)
}

pub fn betti_of(cx: &CochainAssembly) -> Result<BettiNumbers> {
    let harmonic = cx.betti_harmonic()?;
    let rank_nullity = cx.betti_rank_nullity()?;
    let consistent = harmonic == rank_nullity;
    Ok(BettiNumbers { harmonic, rank_nullity, consistent })
}

fn cell_relative(space: &DiscreteSpace, lhs: &[f64], rhs: &[f64], per_cell: usize) -> Measurement {
    let w: Vec<f64> = space.cell_mass().iter().flat_map(|&m| std::iter::repeat_n(m, per_cell)).collect();
    let n = |v: &[f64]| v.iter().zip(&w).map(|(a, m)| m * a * a).sum::<f64>().sqrt();
    Measurement::new(n(lhs), n(rhs), report::relative_l2(lhs, rhs, &w), space.h())
}

fn flat_coeffs(w: &KForm) -> Vec<f64> {
    w.coeffs.iter().flat_map(|a| [a[0], a[1]]).collect()
}

/// `d(f₀ df₁) = df₀ ∧ df₁`.
pub fn generator_check(space: &DiscreteSpace, dirichlet: &Dirichlet, cx: &CochainAssembly, f0: &ScalarField, f1: &ScalarField) -> Result<Measurement> {
    let lhs = cx.to_kform(space, &cx.exterior_derivative(&cx.generated_one_form(space, f0, f1))?)?;
    let rhs = fields::wedge(space, &KForm::from_one_form(&dirichlet.differential(f0)), &KForm::from_one_form(&dirichlet.differential(f1)))?;
    Ok(cell_relative(space, &lhs.scalar_part(), &rhs.scalar_part(), 1))
}

/// `δ(f dg) = −⟨∇f,∇g⟩ − fΔg` at vertices.
pub fn codifferential_check(space: &DiscreteSpace, dirichlet: &Dirichlet, cx: &CochainAssembly, f: &ScalarField, g: &ScalarField) -> Result<Measurement> {
    let lhs = cx.codifferential(&cx.generated_one_form(space, f, g))?.values;
    let carre = dirichlet.carre_du_champ(space, f, g);
    let lap = dirichlet.laplacian(g);
    let rhs: Vec<f64> = (0..lhs.len()).map(|v| -carre.0[v] - f.0[v] * lap.0[v]).collect();
    let n = |x: &[f64]| linalg::wdot(space.vertex_mass(), x, x).sqrt();
    Ok(Measurement::new(n(&lhs), n(&rhs), report::relative_l2(&lhs, &rhs, space.vertex_mass()), space.h()))
}

/// `δ(X♭) = −div X`.
pub fn sharp_check(space: &DiscreteSpace, dirichlet: &Dirichlet, cx: &CochainAssembly, x: &VectorField) -> Result<Measurement> {
    let lhs = cx.codifferential(&cx.flat(space, x)?)?.values;
    let rhs = dirichlet.divergence(x).scale(-1.0).0;
    let n = |x: &[f64]| linalg::wdot(space.vertex_mass(), x, x).sqrt();
    Ok(Measurement::new(n(&lhs), n(&rhs), report::relative_l2(&lhs, &rhs, space.vertex_mass()), space.h()))
}

/// A generating form: a function `f₀`, or `f₀ df₁`.
#[derive(Clone, Debug)]
pub enum Generator {
    Function(ScalarField),
    OneForm(ScalarField, ScalarField),
}

/// `d(ω∧ω') = dω∧ω' + (−1)ᵏ ω∧dω'` for a cochain `ω` and a generating form `ω'`.
pub fn ext_leibniz(space: &DiscreteSpace, dirichlet: &Dirichlet, cx: &CochainAssembly, w: &Cochain, generator: &Generator) -> Result<Measurement> {
    cx.check(w)?;
    let k = w.degree;
    let k_prime = match generator {
        Generator::Function(_) => 0,
        Generator::OneForm(..) => 1,
    };
    if k + k_prime >= 2 {
        // The product already has top degree, so both sides vanish.
        return Ok(Measurement::new(0.0, 0.0, 0.0, space.h()));
    }
    let wedge = |a: &KForm, b: &KForm| fields::wedge(space, a, b);
    let sign = if k == 0 { 1.0 } else { -1.0 };
    let (product, dw_prime, w_prime) = match generator {
        Generator::Function(g) => (
            cx.multiply(space, g, w)?,
            KForm::from_one_form(&dirichlet.differential(g)),
            KForm::from_scalar_cells(&fields::to_cells(space, &g.0)),
        ),
        Generator::OneForm(f0, f1) => {
            let gen = cx.generated_one_form(space, f0, f1);
            let product = cx.multiply(space, &ScalarField(w.values.clone()), &gen)?;
            let dgen = wedge(&KForm::from_one_form(&dirichlet.differential(f0)), &KForm::from_one_form(&dirichlet.differential(f1)))?;
            (product, dgen, cx.to_kform(space, &gen)?)
        }
    };
    let lhs = cx.to_kform(space, &cx.exterior_derivative(&product)?)?;
    let wk = cx.to_kform(space, w)?;
    let dwk = cx.to_kform(space, &cx.exterior_derivative(w)?)?;
    let rhs = wedge(&dwk, &w_prime)?.add(&wedge(&wk, &dw_prime)?.scale(sign));
    let per_cell = if lhs.degree == 1 { 2 } else { 1 };
    let (l, r) = if per_cell == 2 { (flat_coeffs(&lhs), flat_coeffs(&rhs)) } else { (lhs.scalar_part(), rhs.scalar_part()) };
    Ok(cell_relative(space, &l, &r, per_cell))
}

/// Weak comparison of a 1-cochain with a per-cell 1-form against test
/// forms `η`: the largest `|⟨lhs,η⟩ − ∫⟨rhs,η⟩| / (‖rhs‖‖η‖)`.
fn weak_one_form_gap(space: &DiscreteSpace, cx: &CochainAssembly, lhs: &Cochain, rhs: &VectorField, tests: &[Cochain]) -> Result<Measurement> {
    let rn = rhs.inner(space, rhs).sqrt();
    let mut worst: f64 = 0.0;
    let mut lmax: f64 = 0.0;
    let mut rmax: f64 = 0.0;
    for eta in tests {
        let eta_cells = cx.one_form_cells(space, eta)?;
        let l = cx.inner(lhs, eta);
        let r = rhs.inner(space, &eta_cells);
        let scale = (rn * cx.norm(eta)).max(f64::MIN_POSITIVE);
        worst = worst.max((l - r).abs() / scale);
        lmax = lmax.max(l.abs());
        rmax = rmax.max(r.abs());
    }
    Ok(Measurement::new(lmax, rmax, worst, space.h()).with_detail("tests", tests.len() as f64))
}

/// Test 1-forms `g_a dg_b` built from a list of functions.
pub fn test_forms(space: &DiscreteSpace, cx: &CochainAssembly, fs: &[ScalarField]) -> Vec<Cochain> {
    let mut out = Vec::new();
    for (a, fa) in fs.iter().enumerate() {
        for (b, fb) in fs.iter().enumerate() {
            if a != b {
                out.push(cx.generated_one_form(space, fa, fb));
            }
        }
    }
    out
}

/// `δ(df₁∧…∧dfₖ)` against its expansion into Laplacian and bracket terms,
/// for `k ∈ {1, 2}`. For `k = 2` the comparison is weak, against `tests`.
pub fn delta_wedge_formula(
    space: &DiscreteSpace,
    dirichlet: &Dirichlet,
    cx: &CochainAssembly,
    cop: &CovariantOperator,
    fs: &[ScalarField],
    tests: &[Cochain],
) -> Result<Measurement> {
    match fs {
        [f] => {
            let lhs = cx.codifferential(&cx.exterior_derivative(&Cochain::new(0, f.0.clone()))?)?.values;
            let rhs = dirichlet.laplacian(f).scale(-1.0).0;
            let n = |x: &[f64]| linalg::wdot(space.vertex_mass(), x, x).sqrt();
            Ok(Measurement::new(n(&lhs), n(&rhs), report::relative_l2(&lhs, &rhs, space.vertex_mass()), space.h()))
        }
        [f1, f2] => {
            let (g1, g2) = (dirichlet.gradient(f1), dirichlet.gradient(f2));
            let w = fields::wedge(space, &KForm::from_one_form(&OneForm(g1.0.clone())), &KForm::from_one_form(&OneForm(g2.0.clone())))?;
            let lhs = cx.codifferential(&cx.from_kform(space, &w)?)?;
            let l1 = fields::to_cells(space, &dirichlet.laplacian(f1).0);
            let l2 = fields::to_cells(space, &dirichlet.laplacian(f2).0);
            let bracket = covariant::lie_bracket(cop, &g1, &g2);
            let rhs = g2.scale_cells(&l1).scale(-1.0).add(&g1.scale_cells(&l2)).sub(&bracket);
            weak_one_form_gap(space, cx, &lhs, &rhs, tests)
        }
        _ => Err(CalcError::InvalidArgument(format!("wedge of {} differentials exceeds the dimension", fs.len()))),
    }
}

/// `Δ_H(f dg) = −f dΔg − Δf dg − 2Hg(∇f,·)`, tested weakly against `tests`.
pub fn hodge_identity_1forms(
    space: &DiscreteSpace,
    dirichlet: &Dirichlet,
    cx: &CochainAssembly,
    hop: &HessianOperator,
    f: &ScalarField,
    g: &ScalarField,
    tests: &[Cochain],
) -> Result<Measurement> {
    let lhs = cx.hodge_laplacian(&cx.generated_one_form(space, f, g))?;
    let fc = fields::to_cells(space, &f.0);
    let lf = fields::to_cells(space, &dirichlet.laplacian(f).0);
    let grad_lap_g = dirichlet.gradient(&dirichlet.laplacian(g));
    let hg = fields::contract_first(&hop.apply(g), &dirichlet.gradient(f));
    let rhs = grad_lap_g.scale_cells(&fc).add(&dirichlet.gradient(g).scale_cells(&lf)).add(&hg.scale(2.0)).scale(-1.0);
    weak_one_form_gap(space, cx, &lhs, &rhs, tests)
}

/// `Δ_H(df) = d(−Δf)`.
pub fn hodge_of_exact(space: &DiscreteSpace, dirichlet: &Dirichlet, cx: &CochainAssembly, f: &ScalarField) -> Result<Measurement> {
    let df = cx.exterior_derivative(&Cochain::new(0, f.0.clone()))?;
    let lhs = cx.hodge_laplacian(&df)?;
    let rhs = cx.exterior_derivative(&Cochain::new(0, dirichlet.laplacian(f).scale(-1.0).0))?;
    let gap = cx.norm(&lhs.sub(&rhs)) / cx.norm(&rhs).max(cx.norm(&lhs)).max(f64::MIN_POSITIVE);
    Ok(Measurement::new(cx.norm(&lhs), cx.norm(&rhs), gap, space.h()))
}

/// `h_{H,t}(df) = d h_t(f)`.
pub fn heat_commutation(space: &DiscreteSpace, dirichlet: &Dirichlet, cx: &CochainAssembly, f: &ScalarField, t: f64) -> Result<Measurement> {
    let lhs = cx.hodge_heat_flow(&cx.exterior_derivative(&Cochain::new(0, f.0.clone()))?, t)?;
    let rhs = cx.exterior_derivative(&Cochain::new(0, dirichlet.heat_flow(f, t)?.0))?;
    let gap = cx.norm(&lhs.sub(&rhs)) / cx.norm(&rhs).max(cx.norm(&lhs)).max(f64::MIN_POSITIVE);
    Ok(Measurement::new(cx.norm(&lhs), cx.norm(&rhs), gap, space.h()).with_dt(heat_steps(t).1))
}

/// `|h_{H,t}ω|² ≤ e^{−2Kt} h_t(|ω|²)` at vertices.
pub fn form_contraction_check(
    space: &DiscreteSpace,
    dirichlet: &Dirichlet,
    cx: &CochainAssembly,
    w: &Cochain,
    t: f64,
    kappa: f64,
) -> Result<Measurement> {
    let sq = |c: &Cochain| -> Result<ScalarField> {
        let v = cx.one_form_cells(space, c)?;
        fields::pointwise_inner(space, &v, &v)
    };
    let lhs = sq(&cx.hodge_heat_flow(w, t)?)?;
    let rhs = dirichlet.heat_flow(&sq(w)?, t)?.scale((-2.0 * kappa * t).exp());
    let scale = linalg::max_abs(&rhs.0).max(linalg::max_abs(&lhs.0));
    let gap = report::max_violation(&lhs.0, &rhs.0, scale);
    Ok(Measurement::new(linalg::max_abs(&lhs.0), linalg::max_abs(&rhs.0), gap, space.h()).with_dt(heat_steps(t).1))
}

/// `E_C(X) ≤ E_H(X♭) − (K/2)‖X‖²`, with `X♭` given as a cochain.
pub fn ec_eh_inequality(
    space: &DiscreteSpace,
    cx: &CochainAssembly,
    cop: &CovariantOperator,
    x: &VectorField,
    x_flat: &Cochain,
    kappa: f64,
) -> Result<Measurement> {
    let ec = covariant::connection_energy(space, &cop.apply(x));
    let rhs = cx.hodge_energy(x_flat)? - 0.5 * kappa * x.inner(space, x);
    let scale = ec.abs().max(rhs.abs());
    let (gap, deviation) = if scale > 0.0 { ((ec - rhs).max(0.0) / scale, (ec - rhs).abs() / scale) } else { (0.0, 0.0) };
    Ok(Measurement::new(ec, rhs, gap, space.h()).with_detail("deviation", deviation))
}

/// `b₁ ≤ n_min` on spaces with nonnegative curvature bound, where `n_min`
/// is the smallest local dimension carrying positive mass.
pub fn betti_bound_rcd0(space: &DiscreteSpace, betti: &BettiNumbers) -> Result<Measurement> {
    if space.kappa() < 0.0 {
        return Err(CalcError::InvalidArgument(format!("the bound needs K >= 0, the space declares K = {}", space.kappa())));
    }
    let n_min = space.local_dimension().iter().filter(|c| c.mass > 0.0).map(|c| c.dim).min().unwrap_or(0);
    let b1 = betti.harmonic.get(1).copied().unwrap_or(0);
    Ok(Measurement::new(b1 as f64, n_min as f64, (b1 as f64 - n_min as f64).max(0.0), space.h()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus(n: usize) -> (DiscreteSpace, Dirichlet, CochainAssembly) {
        let s = DiscreteSpace::flat_torus(n, 2.0 * std::f64::consts::PI).unwrap();
        let d = Dirichlet::new(&s).unwrap();
        let cx = CochainAssembly::new(&s).unwrap();
        (s, d, cx)
    }

    fn chart_fn(s: &DiscreteSpace, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        ScalarField(s.chart().unwrap().iter().map(|p| f(p[0], p[1])).collect())
    }

    #[test]
    fn complex_is_exact_and_adjoint() {
        let (s, d, cx) = torus(6);
        assert_eq!(cx.dd_projection_distance(), 0.0);
        assert_eq!(cx.d_matrix(1).unwrap().matmul(cx.d_matrix(0).unwrap()).max_abs(), 0.0);
        let one = Cochain::new(0, vec![1.0; s.n_vertices()]);
        assert!(linalg::max_abs(&cx.exterior_derivative(&one).unwrap().values) < 1e-14);
        let a = Cochain::new(1, (0..s.n_edges()).map(|e| (e as f64 * 0.37).sin()).collect());
        let b = Cochain::new(0, (0..s.n_vertices()).map(|v| (v as f64 * 0.11).cos()).collect());
        let lhs = cx.inner(&cx.exterior_derivative(&b).unwrap(), &a);
        let rhs = cx.inner(&b, &cx.codifferential(&a).unwrap());
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        let c = Cochain::new(2, (0..cx.dims()[2]).map(|t| (t as f64 * 0.7).cos()).collect());
        let lhs = cx.inner(&cx.exterior_derivative(&a).unwrap(), &c);
        let rhs = cx.inner(&a, &cx.codifferential(&c).unwrap());
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        assert!(linalg::max_abs(&cx.codifferential(&b).unwrap().values) == 0.0);
        assert!(cx.exterior_derivative(&c).is_err());
        // Δ_H on 0-forms is −Δ.
        let lap = cx.hodge_laplacian(&b).unwrap();
        let want = d.laplacian(&ScalarField(b.values.clone())).scale(-1.0);
        assert!(report::relative_l2(&lap.values, &want.0, s.vertex_mass()) < 1e-12);
    }

    #[test]
    fn sine_dy_differential_matches_chart_oracle() {
        // ω = sin x dy: edge integrals by Simpson's rule in the chart, with
        // coordinate differences unwrapped across the seam.
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let (s, _, cx) = torus(n);
            let side = 2.0 * std::f64::consts::PI;
            let chart = s.chart().unwrap();
            let wrap = |d: f64| d - side * (d / side).round();
            let w: Vec<f64> = s
                .edges()
                .iter()
                .map(|&[a, b]| {
                    let (pa, pb) = (chart[a], chart[b]);
                    let (dx, dy) = (wrap(pb[0] - pa[0]), wrap(pb[1] - pa[1]));
                    let x = |t: f64| (pa[0] + t * dx).sin();
                    dy * (x(0.0) + 4.0 * x(0.5) + x(1.0)) / 6.0
                })
                .collect();
            let dw = cx.exterior_derivative(&Cochain::new(1, w)).unwrap();
            let mut num = 0.0;
            let mut den = 0.0;
            for (t, &c) in cx.triangles().iter().enumerate() {
                let cen = s.cell_chart_centroid(c).unwrap();
                let m = s.cell_mass()[c];
                num += m * (dw.values[t] - cen[0].cos()).powi(2);
                den += m * cen[0].cos().powi(2);
            }
            errs.push((num / den).sqrt());
        }
        assert!(errs[2] < 0.02, "{errs:?}");
        assert!(errs[1] < 0.75 * errs[0] && errs[2] < 0.75 * errs[1], "{errs:?}");
    }

    #[test]
    fn generator_rule_and_sharp_are_exact() {
        let (s, d, cx) = torus(8);
        let f = chart_fn(&s, |x, y| (x + 2.0 * y).sin());
        let g = chart_fn(&s, |x, y| x.cos() * y.sin());
        assert!(generator_check(&s, &d, &cx, &f, &g).unwrap().gap < 1e-12);
        let x = d.gradient(&f).scale_by(&s, &g);
        assert!(sharp_check(&s, &d, &cx, &x).unwrap().gap < 1e-10);
        assert!(delta_wedge_formula(&s, &d, &cx, &dummy_cop(&s, &d), &[f.clone()], &[]).unwrap().gap < 1e-12);
        assert!(hodge_of_exact(&s, &d, &cx, &f).unwrap().gap < 1e-10);
        assert!(heat_commutation(&s, &d, &cx, &f, 0.05).unwrap().gap < 1e-10);
        let c = Generator::Function(ScalarField::constant(&s, 3.0));
        let w = cx.generated_one_form(&s, &f, &g);
        assert!(ext_leibniz(&s, &d, &cx, &w, &c).unwrap().gap < 1e-12);
        let w0 = Cochain::new(0, f.0.clone());
        let one = Generator::OneForm(g.clone(), f.clone());
        assert_eq!(ext_leibniz(&s, &d, &cx, &w, &one).unwrap().gap, 0.0);
        let _ = w0;
    }

    fn dummy_cop(s: &DiscreteSpace, d: &Dirichlet) -> CovariantOperator {
        let b = crate::bank::TestFunctionBank::new(s, d, crate::bank::BankConfig { nf: 4, nv: 0, seed: 1, tau: 0.05 }).unwrap();
        let h = HessianOperator::new(s, d, &b).unwrap();
        CovariantOperator::new(s, d, &b, &h).unwrap()
    }

    #[test]
    fn codifferential_of_generated_form_converges() {
        let gaps: Vec<f64> = [8, 16]
            .iter()
            .map(|&n| {
                let (s, d, cx) = torus(n);
                let f = chart_fn(&s, |x, y| (x + y).cos());
                let g = chart_fn(&s, |x, y| x.sin() + (2.0 * y).cos());
                codifferential_check(&s, &d, &cx, &f, &g).unwrap().gap
            })
            .collect();
        assert!(gaps[1] < 0.75 * gaps[0], "{gaps:?}");
    }

    #[test]
    fn torus_and_sphere_betti_numbers() {
        let (_, _, cx) = torus(8);
        let b = betti_of(&cx).unwrap();
        assert_eq!(b.harmonic, vec![1, 2, 1]);
        assert!(b.consistent);
        let s = DiscreteSpace::icosphere(2, 1.0).unwrap();
        let b = betti(&s).unwrap();
        assert_eq!(b.harmonic, vec![1, 0, 1]);
        assert!(b.consistent);
        let two = DiscreteSpace::build("flat_torus:n=5+flat_torus:n=6").unwrap();
        assert_eq!(betti(&two).unwrap().rank_nullity[0], 2);
    }

    #[test]
    fn hodge_decomposition_reconstructs() {
        let (s, _, cx) = torus(8);
        let w = Cochain::new(1, (0..s.n_edges()).map(|e| ((e * 7919) % 101) as f64 / 101.0 - 0.5).collect());
        let h = cx.hodge_decomposition(&s, &w).unwrap();
        assert!(h.reconstruction_error < 1e-8, "{}", h.reconstruction_error);
        assert!(h.orthogonality < 1e-8, "{}", h.orthogonality);
        assert!(h.harmonic.iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn heat_flow_at_zero_is_identity() {
        let (s, _, cx) = torus(5);
        let w = Cochain::new(1, (0..s.n_edges()).map(|e| e as f64).collect());
        assert_eq!(cx.hodge_heat_flow(&w, 0.0).unwrap(), w);
        assert!(cx.hodge_heat_flow(&w, -1.0).is_err());
    }
}
