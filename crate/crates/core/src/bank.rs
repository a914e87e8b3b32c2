//! Seeded, reproducible generating families of test functions and fields.
//!
//! The first members are the ambient coordinate functions; the rest are
//! random polynomials of degree at most two in normalized ambient
//! coordinates. Coefficients depend only on the seed, the member index and
//! the ambient dimension, so the same bank is drawn at every resolution.
//! Every scalar member is smoothed by the heat flow for time `τ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dirichlet::Dirichlet;
use crate::error::{CalcError, Result};
use crate::fields::{self, ScalarField, VectorField};
use crate::space::DiscreteSpace;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BankConfig {
    /// Number of scalar members (at least the ambient dimension).
    pub nf: usize,
    /// Number of vector members.
    pub nv: usize,
    pub seed: u64,
    /// Heat smoothing time.
    pub tau: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig { nf: 20, nv: 10, seed: 42, tau: 0.05 }
    }
}

/// Indices `(g, f)` of the two products `g ∇f` summed into a vector member.
pub type VectorRecipe = [(usize, usize); 2];

#[derive(Clone, Debug)]
pub struct TestFunctionBank {
    pub config: BankConfig,
    pub scalars: Vec<ScalarField>,
    /// How many leading scalar members are coordinate lifts.
    pub n_lifts: usize,
    pub vectors: Vec<VectorField>,
    pub recipes: Vec<VectorRecipe>,
    /// `sup |f|` per scalar member.
    pub sup_norm: Vec<f64>,
    /// `sup |∇f|` per scalar member.
    pub grad_bound: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Random polynomial coefficients of member `k`: linear part then the upper
/// triangle of the quadratic part.
fn coefficients(seed: u64, k: usize, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (k as u64).wrapping_mul(0xD1B5_4A32_D192_ED03));
    let lin = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let quad = (0..dim * (dim + 1) / 2).map(|_| rng.random_range(-1.0..1.0)).collect();
    (lin, quad)
}

/// Raw (unsmoothed) scalar member `k` of a bank drawn with `seed`.
pub fn raw_member(space: &DiscreteSpace, seed: u64, k: usize) -> ScalarField {
    let d = space.ambient_dim();
    let scale = (0..space.n_vertices())
        .flat_map(|v| space.ambient_coords(v).iter().map(|x| x.abs()).collect::<Vec<_>>())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    if k < d {
        return ScalarField((0..space.n_vertices()).map(|v| space.ambient_coords(v)[k]).collect());
    }
    let (lin, quad) = coefficients(seed, k, d);
    ScalarField(
        (0..space.n_vertices())
            .map(|v| {
                let u: Vec<f64> = space.ambient_coords(v).iter().map(|x| x / scale).collect();
                let mut s = 0.0;
                for i in 0..d {
                    s += lin[i] * u[i];
                }
                let mut q = 0;
                for i in 0..d {
                    for j in i..d {
                        s += quad[q] * u[i] * u[j];
                        q += 1;
                    }
                }
                s
            })
            .collect(),
    )
}

impl TestFunctionBank {
    pub fn new(space: &DiscreteSpace, dirichlet: &Dirichlet, config: BankConfig) -> Result<Self> {
        if config.nf == 0 {
            return Err(CalcError::InvalidArgument("a bank needs at least one scalar member".into()));
        }
        if config.tau < 0.0 || !config.tau.is_finite() {
            return Err(CalcError::InvalidArgument(format!("smoothing time must be nonnegative, got {}", config.tau)));
        }
        let mut warnings = Vec::new();
        if config.tau == 0.0 {
            warnings.push("smoothing time is zero: bank members are raw, unsmoothed fields".to_string());
        }
        let n_lifts = space.ambient_dim();
        let total = config.nf.max(n_lifts);
        let mut scalars = Vec::with_capacity(total);
        for k in 0..total {
            let raw = raw_member(space, config.seed, k);
            scalars.push(if config.tau > 0.0 { dirichlet.heat_flow(&raw, config.tau)? } else { raw });
        }
        let sup_norm = scalars.iter().map(|f| crate::linalg::max_abs(&f.0)).collect();
        let grad_bound = scalars
            .iter()
            .map(|f| fields::cell_norms(space, &dirichlet.gradient(f)).into_iter().fold(0.0, f64::max))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5EED_F1E1_D5);
        let mut recipes = Vec::with_capacity(config.nv);
        let mut vectors = Vec::with_capacity(config.nv);
        for _ in 0..config.nv {
            let r: VectorRecipe = [
                (rng.random_range(0..total), rng.random_range(0..total)),
                (rng.random_range(0..total), rng.random_range(0..total)),
            ];
            let mut x = VectorField::zeros(space);
            for &(g, f) in &r {
                x = x.add(&dirichlet.gradient(&scalars[f]).scale_by(space, &scalars[g]));
            }
            recipes.push(r);
            vectors.push(x);
        }
        Ok(TestFunctionBank { config, scalars, n_lifts, vectors, recipes, sup_norm, grad_bound, warnings })
    }

    pub fn len(&self) -> usize {
        self.scalars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scalars.is_empty()
    }

    /// The smoothed coordinate lifts.
    pub fn lifts(&self) -> &[ScalarField] {
        &self.scalars[..self.n_lifts]
    }

    /// Scalar members that are not coordinate lifts.
    pub fn random_members(&self) -> &[ScalarField] {
        &self.scalars[self.n_lifts..]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_is_reproducible() {
        let s = DiscreteSpace::build("flat_torus:n=8").unwrap();
        let d = Dirichlet::new(&s).unwrap();
        let cfg = BankConfig { nf: 8, nv: 3, seed: 7, tau: 0.05 };
        let a = TestFunctionBank::new(&s, &d, cfg).unwrap();
        let b = TestFunctionBank::new(&s, &d, cfg).unwrap();
        assert_eq!(a.scalars, b.scalars);
        assert_eq!(a.vectors, b.vectors);
        let c = TestFunctionBank::new(&s, &d, BankConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.scalars[5], c.scalars[5]);
        assert_eq!(a.n_lifts, 4);
        assert!(a.warnings.is_empty());
        assert!(a.grad_bound.iter().chain(&a.sup_norm).all(|x| x.is_finite()));
    }

    #[test]
    fn zero_smoothing_warns_and_keeps_raw_fields() {
        let s = DiscreteSpace::build("icosphere:subdiv=1").unwrap();
        let d = Dirichlet::new(&s).unwrap();
        let cfg = BankConfig { nf: 5, nv: 1, seed: 1, tau: 0.0 };
        let b = TestFunctionBank::new(&s, &d, cfg).unwrap();
        assert_eq!(b.warnings.len(), 1);
        assert_eq!(b.scalars[4], raw_member(&s, 1, 4));
    }

    #[test]
    fn coefficients_do_not_depend_on_resolution() {
        let a = DiscreteSpace::build("flat_torus:n=8").unwrap();
        let b = DiscreteSpace::build("flat_torus:n=16").unwrap();
        let fa = raw_member(&a, 3, 6);
        let fb = raw_member(&b, 3, 6);
        // Vertex (i,j) of the coarse grid is vertex (2i,2j) of the fine one.
        for j in 0..8 {
            for i in 0..8 {
                assert!((fa.0[j * 8 + i] - fb.0[2 * j * 16 + 2 * i]).abs() < 1e-12);
            }
        }
    }
}
