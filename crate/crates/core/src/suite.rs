//! Batteries of checks over prepared calculi.
//!
//! A [`Calculus`] bundles every assembly built on one space. A [`Runner`]
//! turns measurements into verdicts: identities that hold to roundoff are
//! judged on the coarse model against a fixed tolerance, asymptotic checks
//! through a two-resolution refinement study. The topic functions below are
//! shared by the command-line interface and by [`acceptance_battery`].

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::Serialize;

use crate::bank::{BankConfig, TestFunctionBank};
use crate::covariant::{self, CovariantOperator};
use crate::dirichlet::{Dirichlet, DENSITY_SMOOTHING};
use crate::error::{CalcError, Result};
use crate::exterior::{self, Cochain, CochainAssembly, Generator};
use crate::fields::{self, ScalarField, VectorField};
use crate::hessian::{self, HessianOperator};
use crate::lagrangian::{self, TransportOptions};
use crate::linalg;
use crate::poly::Polynomial;
use crate::report::{self, Measurement, VerdictReport, EXACT, REFINEMENT_RATIO};
use crate::ricci::{self, RicciContext};
use crate::space::DiscreteSpace;

/// Tolerance of identities whose two sides accumulate over many terms.
pub const EXACT_RELATIVE: f64 = 1e-8;
/// Contraction required of checks that converge at second order in `Δt`.
pub const SECOND_ORDER_RATIO: f64 = 0.3;
/// Largest admissible `L¹` deviation from the Einstein relation on the sphere.
pub const EINSTEIN_TOLERANCE: f64 = 0.10;
/// Largest admissible relative excess of the transport value over the
/// assignment oracle.
pub const TRANSPORT_TOLERANCE: f64 = 0.05;
/// Largest admissible shortfall of a dual lower bound.
pub const DUALITY_SHORTFALL: f64 = 0.2;
/// Heat time of the contraction checks.
pub const CONTRACTION_TIME: f64 = 0.1;

/// Every assembly of the calculus on one space.
pub struct Calculus {
    pub space: DiscreteSpace,
    pub dirichlet: Dirichlet,
    pub bank: TestFunctionBank,
    pub hessian: HessianOperator,
    pub covariant: CovariantOperator,
    pub complex: CochainAssembly,
}

impl Calculus {
    pub fn new(space: DiscreteSpace, seed: u64) -> Result<Self> {
        let dirichlet = Dirichlet::new(&space)?;
        let bank = TestFunctionBank::new(&space, &dirichlet, BankConfig { seed, ..BankConfig::default() })?;
        let hessian = HessianOperator::new(&space, &dirichlet, &bank)?;
        let covariant = CovariantOperator::new(&space, &dirichlet, &bank, &hessian)?;
        let complex = CochainAssembly::new(&space)?;
        Ok(Calculus { space, dirichlet, bank, hessian, covariant, complex })
    }

    /// Builds the space from a descriptor, optionally overriding its
    /// curvature bound.
    pub fn build(descriptor: &str, kappa: Option<f64>, seed: u64) -> Result<Self> {
        let mut space = DiscreteSpace::build(descriptor)?;
        if let Some(k) = kappa {
            space = space.with_kappa(k);
        }
        Self::new(space, seed)
    }

    pub fn ricci(&self) -> RicciContext<'_> {
        RicciContext::new(&self.space, &self.dirichlet, &self.complex, &self.covariant)
    }

    pub fn kappa(&self) -> f64 {
        self.space.kappa()
    }

    /// The generated 1-form `Σ g df` of vector member `k`, whose sharp is
    /// the member itself.
    pub fn vector_form(&self, k: usize) -> Cochain {
        let fs = &self.bank.scalars;
        let [(g0, f0), (g1, f1)] = self.bank.recipes[k];
        self.complex
            .generated_one_form(&self.space, &fs[g0], &fs[f0])
            .add(&self.complex.generated_one_form(&self.space, &fs[g1], &fs[f1]))
    }

    fn scalars(&self, n: usize) -> &[ScalarField] {
        &self.bank.scalars[..n.min(self.bank.scalars.len())]
    }

    fn vectors(&self, n: usize) -> &[VectorField] {
        &self.bank.vectors[..n.min(self.bank.vectors.len())]
    }
}

/// The descriptor of the next finer model: doubled grid counts, one more
/// subdivision of the icosphere.
pub fn refined_descriptor(descriptor: &str) -> Result<String> {
    let parts = descriptor.split('+').map(|p| refine_part(p.trim())).collect::<Result<Vec<_>>>()?;
    Ok(parts.join("+"))
}

fn refine_part(part: &str) -> Result<String> {
    let (kind, params) = part.split_once(':').map(|(k, p)| (k.trim(), p.trim())).unwrap_or((part, ""));
    let (key, default, step): (&str, usize, fn(usize) -> usize) = match kind {
        "flat_torus" | "torus" | "weighted_grid" | "interval" => ("n", 16, |n| 2 * n),
        "cone" => ("n", 8, |n| 2 * n),
        "icosphere" | "sphere" => ("subdiv", 3, |s| s + 1),
        _ => return Err(CalcError::Descriptor(format!("'{part}' has no refinement"))),
    };
    let mut found = false;
    let mut pieces = Vec::new();
    for p in params.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match p.split_once('=') {
            Some((k, v)) if k.trim() == key => {
                let n: usize = v.trim().parse().map_err(|_| CalcError::Descriptor(format!("bad value in '{p}'")))?;
                pieces.push(format!("{key}={}", step(n)));
                found = true;
            }
            _ => pieces.push(p.to_string()),
        }
    }
    if !found {
        pieces.insert(0, format!("{key}={}", step(default)));
    }
    Ok(format!("{kind}:{}", pieces.join(",")))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Number of resolutions: 2 for refinement studies, 1 for a single
    /// model with `tol(h) = h`.
    pub refine: u8,
    /// Factor applied to every tolerance.
    pub tol_scale: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: 42, refine: 2, tol_scale: 1.0 }
    }
}

/// Collects verdicts for one coarse model and its optional refinement.
pub struct Runner<'a> {
    pub coarse: &'a Calculus,
    pub fine: Option<&'a Calculus>,
    pub opts: SuiteOptions,
    pub verdicts: Vec<VerdictReport>,
}

impl<'a> Runner<'a> {
    pub fn new(coarse: &'a Calculus, fine: Option<&'a Calculus>, opts: SuiteOptions) -> Self {
        Runner { coarse, fine, opts, verdicts: Vec::new() }
    }

    fn push(&mut self, v: VerdictReport) {
        self.verdicts.push(v.scale_tol(self.opts.tol_scale));
    }

    /// Judges `m` against a fixed tolerance.
    pub fn fixed(&mut self, name: &str, anchor: &str, tol: f64, m: &Measurement) {
        let v = m.verdict(name, anchor, tol, self.opts.seed);
        self.push(v);
    }

    /// Identity evaluated on the coarse model against a fixed tolerance.
    pub fn exact(&mut self, name: &str, anchor: &str, tol: f64, eval: impl Fn(&Calculus) -> Result<Measurement>) -> Result<()> {
        let m = eval(self.coarse)?;
        self.fixed(name, anchor, tol, &m);
        Ok(())
    }

    /// Asymptotic check: a refinement study when a fine model is present,
    /// otherwise `tol(h) = h` on the coarse model.
    pub fn asymptotic(&mut self, name: &str, anchor: &str, ratio: f64, eval: impl Fn(&Calculus) -> Result<Measurement>) -> Result<()> {
        let c = eval(self.coarse)?;
        let v = match self.fine {
            Some(f) => report::refinement_verdict(name, anchor, &c, &eval(f)?, ratio, self.opts.seed),
            None => c.verdict(name, anchor, c.h, self.opts.seed),
        };
        self.push(v);
        Ok(())
    }

    /// Like [`Runner::asymptotic`], skipped when the model does not support it.
    fn asymptotic_if(&mut self, name: &str, anchor: &str, ratio: f64, eval: impl Fn(&Calculus) -> Result<Option<Measurement>>) -> Result<()> {
        let Some(c) = eval(self.coarse)? else { return Ok(()) };
        let fine = match self.fine {
            Some(f) => eval(f)?,
            None => None,
        };
        let v = match fine {
            Some(f) => report::refinement_verdict(name, anchor, &c, &f, ratio, self.opts.seed),
            None => c.verdict(name, anchor, c.h, self.opts.seed),
        };
        self.push(v);
        Ok(())
    }

    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }
}

fn worst(family: Vec<Measurement>) -> Result<Measurement> {
    Measurement::worst(family).ok_or_else(|| CalcError::InvalidArgument("the test-function bank is empty".into()))
}

fn each<T>(items: &[T], f: impl Fn(&T) -> Result<Measurement>) -> Result<Measurement> {
    worst(items.iter().map(f).collect::<Result<Vec<_>>>()?)
}

fn relative(residual: f64, scale: f64) -> f64 {
    if scale > 0.0 { residual / scale } else { residual }
}

/// Integral of `⟨X,Y⟩` with the cell weights of the Dirichlet form.
fn field_inner(c: &Calculus, x: &VectorField, y: &VectorField) -> f64 {
    linalg::wdot(c.dirichlet.cell_weights(), &x.flatten(), &y.flatten())
}

// Operator identities ------------------------------------------------------

/// Adjointness of gradient and divergence, `Δ = div∘∇`, the zero mass of
/// the measure-valued Laplacian, and the total mass of `Γ₂`.
pub fn operator_identities(r: &mut Runner) -> Result<()> {
    r.exact("div-grad-adjoint", "divergence-adjoint-to-gradient", EXACT, |c| {
        let mut ms = Vec::new();
        for g in c.scalars(6) {
            for x in c.vectors(4) {
                let a = linalg::wdot(c.space.vertex_mass(), &g.0, &c.dirichlet.divergence(x).0);
                let b = field_inner(c, &c.dirichlet.gradient(g), x);
                let scale = (2.0 * c.dirichlet.energy(g) * field_inner(c, x, x)).sqrt();
                ms.push(Measurement::new(a, -b, relative((a + b).abs(), scale), c.space.h()));
            }
        }
        worst(ms)
    })?;
    r.exact("laplacian-is-div-grad", "laplacian-divergence-of-gradient", EXACT, |c| {
        each(c.scalars(20), |f| {
            let a = c.dirichlet.laplacian(f);
            let b = c.dirichlet.divergence(&c.dirichlet.gradient(f));
            let err = linalg::max_abs(&linalg::sub(&a.0, &b.0));
            Ok(Measurement::new(linalg::max_abs(&a.0), linalg::max_abs(&b.0), relative(err, linalg::max_abs(&a.0)), c.space.h()))
        })
    })?;
    r.exact("measure-laplacian-mass", "measure-laplacian-total-mass", EXACT, |c| {
        each(c.scalars(20), |f| {
            let mu = c.dirichlet.measure_laplacian(f);
            Ok(Measurement::new(mu.total(), 0.0, relative(mu.total().abs(), mu.tv_norm()), c.space.h()))
        })
    })?;
    r.exact("gamma2-mass-identity", "gamma2-total-mass", EXACT_RELATIVE, |c| {
        each(c.scalars(20), |f| {
            let total = c.dirichlet.gamma2(&c.space, f, f).total();
            let lap = c.dirichlet.laplacian(f);
            let rhs = linalg::wdot(c.space.vertex_mass(), &lap.0, &lap.0);
            Ok(Measurement::new(total, rhs, relative((total - rhs).abs(), rhs), c.space.h()))
        })
    })
}

/// Heat semigroup: conservation of mass and `h_s h_t = h_{s+t}`.
pub fn heat_identities(r: &mut Runner) -> Result<()> {
    r.exact("heat-mass-conservation", "heat-flow-conserves-mass", EXACT, |c| {
        each(c.scalars(6), |f| {
            let before = linalg::dot(c.space.vertex_mass(), &f.0);
            let after = linalg::dot(c.space.vertex_mass(), &c.dirichlet.heat_flow(f, 0.3)?.0);
            let scale = linalg::dot(c.space.vertex_mass(), &f.0.iter().map(|x| x.abs()).collect::<Vec<_>>());
            Ok(Measurement::new(after, before, relative((after - before).abs(), scale), c.space.h()))
        })
    })?;
    r.exact("heat-semigroup", "heat-semigroup-property", EXACT, |c| {
        each(c.scalars(6), |f| {
            let split = c.dirichlet.heat_flow(&c.dirichlet.heat_flow(f, 0.1)?, 0.2)?;
            let whole = c.dirichlet.heat_flow(f, 0.3)?;
            let err = linalg::max_abs(&linalg::sub(&split.0, &whole.0));
            Ok(Measurement::new(linalg::max_abs(&split.0), linalg::max_abs(&whole.0), relative(err, linalg::max_abs(&whole.0)), c.space.h()))
        })
    })
}

/// Pointwise Bochner inequality `|Hf|² ≤ γ₂(f) − K|∇f|²` over 20 bank
/// functions, and the multivariate `Γ₂` chain rule for a product and a square.
pub fn gamma2_checks(r: &mut Runner) -> Result<()> {
    r.asymptotic("bochner-hessian-bound", "hessian-bound-by-gamma2", REFINEMENT_RATIO, |c| {
        each(c.scalars(20), |f| hessian::hs_bound(&c.space, &c.dirichlet, &c.hessian, f, c.kappa(), DENSITY_SMOOTHING))
    })?;
    r.asymptotic("gamma2-chain-rule", "multivariate-gamma2-chain-rule", REFINEMENT_RATIO, |c| {
        let fs = c.scalars(6);
        let product = Polynomial::variable(2, 0).mul(&Polynomial::variable(2, 1));
        let square = Polynomial::monomial(1, 1.0, &[2]);
        let a = c.dirichlet.multivariate_gamma2(&c.space, &product, &fs[4..6])?;
        let b = c.dirichlet.multivariate_gamma2(&c.space, &square, &fs[4..5])?;
        worst(vec![a.gamma_gap, a.grad_gap, b.gamma_gap, b.grad_gap])
    })
}

/// Bakry-Émery contraction of gradients in both forms.
pub fn bakry_emery_checks(r: &mut Runner) -> Result<()> {
    for (k, name) in [(0, "bakry-emery"), (1, "bakry-emery-first-power")] {
        r.asymptotic(name, if k == 0 { "gradient-contraction" } else { "gradient-contraction-first-power" }, REFINEMENT_RATIO, |c| {
            let ms = c
                .scalars(20)
                .iter()
                .map(|f| c.dirichlet.bakry_emery(&c.space, f, CONTRACTION_TIME, c.kappa()).map(|p| if k == 0 { p.0 } else { p.1 }))
                .collect::<Result<Vec<_>>>()?;
            worst(ms)
        })?;
    }
    Ok(())
}

// Hessian ------------------------------------------------------------------

pub fn hessian_identities(r: &mut Runner) -> Result<()> {
    r.exact("hessian-symmetry", "hessian-symmetric", EXACT, |c| {
        each(c.scalars(20), |f| {
            let h = c.hessian.apply(f);
            let asym = h.sub(&h.transpose());
            let (a, b) = (asym.energy(&c.space), h.energy(&c.space));
            Ok(Measurement::new(a, b, relative(a.sqrt(), b.sqrt()), c.space.h()))
        })
    })
}

/// Leibniz rule, chain rule and the gradient of a product.
pub fn hessian_rules(r: &mut Runner) -> Result<()> {
    r.asymptotic("hessian-leibniz", "hessian-leibniz-rule", REFINEMENT_RATIO, |c| {
        let fs = c.scalars(8);
        Ok(worst((4..7).map(|i| hessian::hessian_leibniz(&c.space, &c.dirichlet, &c.hessian, &fs[i], &fs[i + 1])).collect())?)
    })?;
    r.asymptotic("hessian-chain", "hessian-chain-rule", REFINEMENT_RATIO, |c| {
        let phi = Polynomial::monomial(1, 1.0, &[2]).add(&Polynomial::monomial(1, -0.5, &[3]));
        each(&c.scalars(8)[4..], |f| hessian::hessian_chain(&c.space, &c.dirichlet, &c.hessian, f, &phi))
    })?;
    r.asymptotic("gradient-product", "gradient-of-carre-du-champ", REFINEMENT_RATIO, |c| {
        let fs = c.scalars(8);
        Ok(worst((4..7).map(|i| hessian::grad_product_rule(&c.space, &c.dirichlet, &c.hessian, &fs[i], &fs[i + 1])).collect())?)
    })
}

/// Cells left of `x = side/2` in the chart, with a function vanishing there.
fn half_chart(space: &DiscreteSpace) -> Option<(Vec<bool>, Vec<f64>, Vec<f64>)> {
    let chart = space.chart()?;
    let side = chart_period(space)?;
    let k = 2.0 * PI / side;
    let cut = |x: f64| (-(k * x).sin()).max(0.0).powi(2);
    let cells: Vec<[f64; 2]> = (0..space.n_cells()).map(|c| space.cell_chart_centroid(c)).collect::<Option<_>>()?;
    let region = cells.iter().map(|p| p[0] < 0.5 * side).collect();
    let on_cells = cells.iter().map(|p| cut(p[0])).collect();
    let on_vertices = chart.iter().map(|p| cut(p[0])).collect();
    Some((region, on_vertices, on_cells))
}

/// Period of a flat-torus chart: the grid spacing times the grid count.
pub fn chart_period(space: &DiscreteSpace) -> Option<f64> {
    if !is_flat_torus(space) {
        return None;
    }
    let chart = space.chart()?;
    let n = (space.n_vertices() as f64).sqrt().round() as usize;
    Some(chart.get(1)?[0] * n as f64)
}

fn is_flat_torus(space: &DiscreteSpace) -> bool {
    let d = space.descriptor();
    (d.starts_with("flat_torus") || d.starts_with("torus")) && !d.contains('+')
}

/// Locality of the Hessian and of the covariant derivative on a half torus.
pub fn locality_checks(r: &mut Runner) -> Result<()> {
    r.asymptotic_if("hessian-locality", "hessian-locality", REFINEMENT_RATIO, |c| {
        let Some((region, cut, _)) = half_chart(&c.space) else { return Ok(None) };
        let fs = c.scalars(8);
        let f2 = ScalarField(fs[4].0.iter().zip(&cut).zip(&fs[5].0).map(|((a, w), b)| a + w * b).collect());
        hessian::hessian_locality(&c.space, &c.hessian, &fs[4], &f2, &region).map(Some)
    })?;
    r.asymptotic_if("covariant-locality", "covariant-derivative-locality", REFINEMENT_RATIO, |c| {
        let Some((region, _, cut)) = half_chart(&c.space) else { return Ok(None) };
        let xs = c.vectors(2);
        let x2 = xs[0].add(&xs[1].scale_cells(&cut));
        covariant::covariant_locality(&c.space, &c.covariant, &xs[0], &x2, &region).map(Some)
    })
}

/// Dual lower bounds for `2E₂` and `2E_C`: within 20% below the direct
/// energies and never above them.
pub fn duality_checks(r: &mut Runner) -> Result<()> {
    let c = r.coarse;
    let e2: Vec<Measurement> = c.scalars(20).iter().map(|f| hessian::e2_duality(&c.space, &c.dirichlet, &c.hessian, &c.bank, f).measurement).collect();
    let ec: Vec<Measurement> = c.vectors(10).iter().map(|x| covariant::ec_duality(&c.space, &c.dirichlet, &c.covariant, &c.bank, x)).collect();
    for (name, anchor, family) in [("e2-duality", "hessian-energy-duality", e2), ("ec-duality", "connection-energy-duality", ec)] {
        let excess = family.iter().map(|m| m.details.get("excess").copied().unwrap_or(0.0)).fold(0.0, f64::max);
        let size = family.iter().map(|m| m.details.get("family_size").copied().unwrap_or(0.0)).fold(0.0, f64::max);
        let w = worst(family)?;
        r.fixed(&format!("{name}-shortfall"), anchor, DUALITY_SHORTFALL, &w);
        let m = Measurement::new(w.lhs, w.rhs, excess, w.h).with_detail("family_size", size);
        r.fixed(&format!("{name}-excess"), anchor, EXACT_RELATIVE, &m);
    }
    Ok(())
}

// Covariant derivative -----------------------------------------------------

/// Adjointness of the connection Laplacian and the orthogonal splitting of
/// `∇X` into symmetric and antisymmetric parts.
pub fn covariant_identities(r: &mut Runner) -> Result<()> {
    r.exact("connection-laplacian-adjoint", "connection-laplacian-adjoint", EXACT, |c| {
        let xs = c.vectors(6);
        let pairs: Vec<(VectorField, VectorField)> = (0..xs.len()).map(|i| (xs[i].clone(), xs[(i + 1) % xs.len()].clone())).collect();
        Ok(Measurement::new(0.0, 0.0, covariant::laplacian_adjointness(&c.space, &c.covariant, &pairs), c.space.h()))
    })?;
    r.exact("sym-asym-pythagoras", "symmetric-antisymmetric-split", EXACT, |c| {
        each(c.vectors(10), |x| {
            let t = c.covariant.apply(x);
            let (s, a) = fields::sym_asym_split(&t);
            let whole = t.energy(&c.space);
            let parts = s.energy(&c.space) + a.energy(&c.space);
            let cross = fields::tensor_hs_inner(&c.space, &s, &a)?.integral(&c.space);
            Ok(Measurement::new(whole, parts, relative((whole - parts).abs().max(cross.abs()), whole), c.space.h()))
        })
    })
}

/// Leibniz rule, metric compatibility and torsion freeness.
pub fn covariant_rules(r: &mut Runner) -> Result<()> {
    r.asymptotic("covariant-leibniz", "covariant-leibniz-rule", REFINEMENT_RATIO, |c| {
        let fs = c.scalars(8);
        Ok(worst(c.vectors(3).iter().zip(&fs[4..7]).map(|(x, f)| covariant::covariant_leibniz(&c.space, &c.dirichlet, &c.covariant, f, x)).collect())?)
    })?;
    r.asymptotic("metric-compatibility", "metric-compatibility", REFINEMENT_RATIO, |c| {
        let xs = c.vectors(4);
        let ms = (0..3).map(|i| covariant::metric_compatibility(&c.space, &c.dirichlet, &c.covariant, &xs[i], &xs[i + 1], &xs[(i + 2) % 4])).collect::<Result<Vec<_>>>()?;
        worst(ms)
    })?;
    torsion_check(r)
}

fn torsion_check(r: &mut Runner) -> Result<()> {
    r.asymptotic("torsion-free", "torsion-free", REFINEMENT_RATIO, |c| {
        let (fs, xs) = (c.scalars(8), c.vectors(4));
        let ms = (0..3).map(|i| covariant::torsion_free(&c.space, &c.dirichlet, &c.covariant, &fs[4 + i], &xs[i], &xs[i + 1])).collect::<Result<Vec<_>>>()?;
        worst(ms)
    })
}

/// Torsion freeness, `[X,X] = 0`, and the bracket of two gradients.
pub fn bracket_checks(r: &mut Runner) -> Result<()> {
    r.exact("bracket-alternating", "lie-bracket-alternating", EXACT, |c| {
        each(c.vectors(10), |x| {
            let b = covariant::lie_bracket(&c.covariant, x, x);
            let n = field_inner(c, &b, &b).sqrt();
            Ok(Measurement::new(n, 0.0, relative(n, field_inner(c, x, x).sqrt()), c.space.h()))
        })
    })?;
    torsion_check(r)?;
    r.asymptotic("gradient-bracket", "bracket-of-gradients", REFINEMENT_RATIO, |c| {
        let fs = c.scalars(8);
        Ok(worst((4..7).map(|i| covariant::bracket_of_gradients(&c.space, &c.dirichlet, &c.hessian, &c.covariant, &fs[i], &fs[i + 1])).collect())?)
    })
}

/// `|h_{C,t}X|² ≤ h_t(|X|²)`.
pub fn connection_flow_checks(r: &mut Runner) -> Result<()> {
    r.asymptotic("connection-heat-kato", "connection-heat-contraction", REFINEMENT_RATIO, |c| {
        each(c.vectors(10), |x| covariant::kato_check(&c.space, &c.dirichlet, &c.covariant, x, CONTRACTION_TIME))
    })
}

// Differential forms -------------------------------------------------------

/// Adjointness of `d` and `δ` in degrees 0 and 1, and `d∘d = 0`.
pub fn form_identities(r: &mut Runner) -> Result<()> {
    r.exact("codifferential-adjoint", "codifferential-adjoint-to-d", EXACT, |c| {
        let cx = &c.complex;
        let mut ms = Vec::new();
        for (i, f) in c.scalars(6).iter().enumerate() {
            let a = Cochain::new(0, f.0.clone());
            let w = c.vector_form(i % c.bank.vectors.len());
            let lhs = cx.inner(&cx.exterior_derivative(&a)?, &w);
            let rhs = cx.inner(&a, &cx.codifferential(&w)?);
            ms.push(Measurement::new(lhs, rhs, relative((lhs - rhs).abs(), cx.norm(&cx.exterior_derivative(&a)?) * cx.norm(&w)), c.space.h()));
            let dw = cx.exterior_derivative(&w)?;
            let beta = Cochain::new(2, (0..dw.values.len()).map(|t| (0.37 * (t + i) as f64).sin()).collect());
            let lhs = cx.inner(&dw, &beta);
            let rhs = cx.inner(&w, &cx.codifferential(&beta)?);
            ms.push(Measurement::new(lhs, rhs, relative((lhs - rhs).abs(), cx.norm(&dw) * cx.norm(&beta)), c.space.h()));
        }
        worst(ms)
    })?;
    r.exact("dd-zero", "d-squared-vanishes", EXACT, |c| {
        let cx = &c.complex;
        let dd = cx.d_matrix(1)?.matmul(cx.d_matrix(0)?);
        let scale = cx.d_matrix(1)?.max_abs() * cx.d_matrix(0)?.max_abs();
        Ok(Measurement::new(dd.max_abs(), 0.0, relative(dd.max_abs(), scale), c.space.h()).with_detail("projection_distance", cx.dd_projection_distance()))
    })
}

/// Leibniz rules for `d`, the Hodge Laplacian of `f dg`, the codifferential
/// of a wedge of differentials, and `Δ_H df = d(−Δf)`.
pub fn form_rules(r: &mut Runner) -> Result<()> {
    r.asymptotic("exterior-leibniz", "exterior-derivative-leibniz", REFINEMENT_RATIO, |c| {
        let fs = c.scalars(9);
        let a = exterior::ext_leibniz(&c.space, &c.dirichlet, &c.complex, &Cochain::new(0, fs[5].0.clone()), &Generator::OneForm(fs[6].clone(), fs[7].clone()))?;
        let b = exterior::ext_leibniz(&c.space, &c.dirichlet, &c.complex, &c.complex.generated_one_form(&c.space, &fs[5], &fs[8]), &Generator::Function(fs[6].clone()))?;
        worst(vec![a, b])
    })?;
    r.asymptotic("hodge-laplacian-leibniz", "hodge-laplacian-of-f-dg", REFINEMENT_RATIO, |c| {
        let fs = c.scalars(8);
        let tests = exterior::test_forms(&c.space, &c.complex, &fs[..6]);
        exterior::hodge_identity_1forms(&c.space, &c.dirichlet, &c.complex, &c.hessian, &fs[5], &fs[6], &tests)
    })?;
    r.asymptotic("codifferential-of-wedge", "codifferential-of-wedge", REFINEMENT_RATIO, |c| {
        let fs = c.scalars(8);
        let tests = exterior::test_forms(&c.space, &c.complex, &fs[..6]);
        exterior::delta_wedge_formula(&c.space, &c.dirichlet, &c.complex, &c.covariant, &[fs[5].clone(), fs[6].clone()], &tests)
    })?;
    r.asymptotic("hodge-of-exact", "hodge-laplacian-of-df", REFINEMENT_RATIO, |c| {
        each(&c.scalars(8)[4..], |f| exterior::hodge_of_exact(&c.space, &c.dirichlet, &c.complex, f))
    })
}

/// Betti numbers by two routes, the Hodge decomposition and the bound
/// `b₁ ≤ n_min` for nonnegative curvature.
pub fn topology_checks(r: &mut Runner, expected: Option<&[usize]>) -> Result<Vec<usize>> {
    let c = r.coarse;
    let betti = exterior::betti_of(&c.complex)?;
    let b: Vec<usize> = betti.harmonic.clone();
    let disagree = b.iter().zip(&betti.rank_nullity).filter(|(a, b)| a != b).count() + b.len().abs_diff(betti.rank_nullity.len());
    let m = Measurement::new(b.iter().sum::<usize>() as f64, betti.rank_nullity.iter().sum::<usize>() as f64, disagree as f64, c.space.h());
    r.fixed("betti-routes-agree", "harmonic-forms-and-rank-nullity", 0.0, &m);
    if let Some(e) = expected {
        let off = b.iter().zip(e).map(|(a, b)| a.abs_diff(*b)).sum::<usize>() + b.len().abs_diff(e.len());
        let m = Measurement::new(b.iter().sum::<usize>() as f64, e.iter().sum::<usize>() as f64, off as f64, c.space.h());
        r.fixed("betti-numbers", "de-rham-cohomology", 0.0, &m);
    }
    let mut ms = Vec::new();
    for k in 0..c.bank.vectors.len().min(4) {
        let d = c.complex.hodge_decomposition(&c.space, &c.vector_form(k))?;
        ms.push(Measurement::new(0.0, 0.0, d.reconstruction_error, c.space.h()).with_detail("orthogonality", d.orthogonality));
    }
    r.fixed("hodge-decomposition", "hodge-decomposition", EXACT_RELATIVE, &worst(ms)?);
    if c.kappa() >= 0.0 {
        let m = exterior::betti_bound_rcd0(&c.space, &betti)?;
        r.fixed("betti-bound", "first-betti-number-bound", 0.0, &m);
    }
    Ok(b)
}

/// Contraction of the Hodge heat flow on 1-forms and its commutation with `d`.
pub fn form_flow_checks(r: &mut Runner) -> Result<()> {
    r.asymptotic("form-contraction", "hodge-heat-contraction", REFINEMENT_RATIO, |c| {
        let ms = (0..c.bank.vectors.len().min(10))
            .map(|k| exterior::form_contraction_check(&c.space, &c.dirichlet, &c.complex, &c.vector_form(k), CONTRACTION_TIME, c.kappa()))
            .collect::<Result<Vec<_>>>()?;
        worst(ms)
    })?;
    r.asymptotic("hodge-heat-commutation", "hodge-heat-commutes-with-d", REFINEMENT_RATIO, |c| {
        each(&c.scalars(8)[4..], |f| exterior::heat_commutation(&c.space, &c.dirichlet, &c.complex, f, CONTRACTION_TIME))
    })
}

// Ricci curvature ----------------------------------------------------------

/// Bilinearity and symmetry of `Ric`, the zero mass of `𝚫(|X|²/2)`, and
/// the total mass of `Ric(X,X)`.
pub fn ricci_identities(r: &mut Runner) -> Result<()> {
    r.exact("ricci-bilinear", "ricci-bilinear", EXACT, |c| {
        let ctx = c.ricci();
        let xs = c.vectors(3);
        let (a, b) = (0.7, -1.3);
        let lhs = ctx.ricci_measure(&xs[0].scale(a).add(&xs[1].scale(b)), &xs[2])?;
        let rhs = ctx.ricci_measure(&xs[0], &xs[2])?.scale(a).add(&ctx.ricci_measure(&xs[1], &xs[2])?.scale(b));
        let scale = lhs.tv_norm().max(rhs.tv_norm());
        Ok(Measurement::new(lhs.tv_norm(), rhs.tv_norm(), relative(lhs.sub(&rhs).tv_norm(), scale), c.space.h()))
    })?;
    r.exact("ricci-symmetric", "ricci-symmetric", EXACT, |c| {
        let ctx = c.ricci();
        let xs = c.vectors(4);
        worst((0..3).map(|i| ricci::ricci_symmetry(&ctx, &xs[i], &xs[i + 1])).collect::<Result<Vec<_>>>()?)
    })?;
    r.exact("bochner-total-mass", "laplacian-of-square-norm-has-zero-mass", EXACT, |c| {
        let ctx = c.ricci();
        each(c.vectors(10), |x| {
            let m = ricci::bochner_check(&ctx, x, c.kappa(), DENSITY_SMOOTHING)?;
            Ok(Measurement::new(0.0, 0.0, m.details["total_mass"], c.space.h()))
        })
    })?;
    r.exact("ricci-total-mass", "ricci-total-mass", EXACT_RELATIVE, |c| {
        let ctx = c.ricci();
        each(c.vectors(10), |x| ricci::ricci_total_mass(&ctx, x, x))
    })
}

/// Vector Bochner inequality and `Ric(X,X) ≥ K|X|²m` on smoothed densities.
pub fn ricci_bounds(r: &mut Runner) -> Result<()> {
    r.asymptotic("vector-bochner", "vector-bochner-inequality", REFINEMENT_RATIO, |c| {
        let ctx = c.ricci();
        each(c.vectors(10), |x| ricci::bochner_check(&ctx, x, c.kappa(), DENSITY_SMOOTHING))
    })?;
    ricci_lower_bound(r)
}

fn ricci_lower_bound(r: &mut Runner) -> Result<()> {
    r.asymptotic("ricci-lower-bound", "ricci-lower-bound", REFINEMENT_RATIO, |c| {
        let ctx = c.ricci();
        each(c.vectors(10), |x| ricci::ricci_lower_bound(&ctx, x, c.kappa(), DENSITY_SMOOTHING))
    })
}

/// The total-variation bound, the integrated inequality
/// `E_C(X) ≤ E_H(X♭) − (K/2)‖X‖²`, and the representations of `∫f dRic`.
pub fn ricci_estimates(r: &mut Runner) -> Result<()> {
    r.exact("ricci-tv-bound", "ricci-total-variation-bound", EXACT_RELATIVE, |c| {
        let ctx = c.ricci();
        let xs = c.vectors(4);
        worst((0..3).map(|i| ricci::ricci_tv_bound(&ctx, &xs[i], &xs[i + 1], c.kappa())).collect::<Result<Vec<_>>>()?)
    })?;
    connection_hodge_inequality(r)?;
    r.asymptotic("ricci-representations", "ricci-representations", REFINEMENT_RATIO, |c| {
        let ctx = c.ricci();
        let (fs, xs) = (c.scalars(8), c.vectors(4));
        worst((0..3).map(|i| ricci::ricci_representation(&ctx, &c.hessian, &xs[i], &xs[i + 1], &fs[4 + i])).collect::<Result<Vec<_>>>()?)
    })?;
    r.asymptotic("ricci-tensor-property", "ricci-tensor-property", REFINEMENT_RATIO, |c| {
        let ctx = c.ricci();
        let (fs, xs) = (c.scalars(8), c.vectors(4));
        worst((0..3).map(|i| ricci::ricci_tensor_property(&ctx, &fs[4 + i], &xs[i], &xs[i + 1], DENSITY_SMOOTHING)).collect::<Result<Vec<_>>>()?)
    })
}

fn connection_hodge_inequality(r: &mut Runner) -> Result<()> {
    r.asymptotic("connection-hodge-inequality", "connection-energy-below-hodge-energy", REFINEMENT_RATIO, |c| {
        let ctx = c.ricci();
        each(c.vectors(10), |x| exterior::ec_eh_inequality(&c.space, &c.complex, &c.covariant, x, &ctx.flat(x)?, c.kappa()))
    })
}

/// `L¹` distance between `Ric(∇f,∇f)` and `|∇f|²` on the finest model,
/// for a space whose metric is Einstein with constant one.
pub fn einstein_check(r: &mut Runner) -> Result<()> {
    let eval = |c: &Calculus| -> Result<Measurement> {
        let ctx = c.ricci();
        each(c.scalars(10), |f| ricci::einstein_gap(&ctx, &c.dirichlet.gradient(f), DENSITY_SMOOTHING))
    };
    let coarse = eval(r.coarse)?;
    let m = match r.fine {
        Some(f) => eval(f)?.with_detail("coarse_gap", coarse.gap),
        None => coarse,
    };
    r.fixed("einstein-gradients", "ricci-of-gradients-on-round-sphere", EINSTEIN_TOLERANCE, &m);
    Ok(())
}

/// `Ric(X,X) = Ric(Y,Y)` inside a half torus where `X = Y`, with an
/// interior `⌈1/h⌉` vertex rings deep.
pub fn ricci_locality_check(r: &mut Runner) -> Result<()> {
    r.asymptotic_if("ricci-locality", "ricci-locality", REFINEMENT_RATIO, |c| {
        let Some((region, _, cut)) = half_chart(&c.space) else { return Ok(None) };
        let xs = c.vectors(2);
        let y = xs[0].add(&xs[1].scale_cells(&cut));
        let rings = (1.0 / c.space.h()).ceil() as usize;
        ricci::ricci_locality(&c.ricci(), &xs[0], &y, &region, rings).map(Some)
    })
}

// Curves of measures -------------------------------------------------------

/// Heat-flow density `1 + f/(2 sup|f|)` for the first bank function.
fn heat_density(c: &Calculus) -> ScalarField {
    let f = &c.bank.scalars[0];
    let s = linalg::max_abs(&f.0).max(f64::MIN_POSITIVE);
    f.map(|x| 1.0 + 0.5 * x / s)
}

/// Continuity equation along the heat flow, refined in `Δt` on the coarse model.
pub fn continuity_check(r: &mut Runner) -> Result<()> {
    let c = r.coarse;
    let eval = |dt: f64| -> Result<Measurement> {
        let steps = (0.2 / dt).round() as usize;
        let times: Vec<f64> = (0..=steps).map(|k| 0.05 + k as f64 * dt).collect();
        let (curve, track) = lagrangian::heat_flow_curve(&c.space, &c.dirichlet, &heat_density(c), &times)?;
        lagrangian::continuity_residual(&c.space, &c.dirichlet, &curve, &track, c.scalars(6))
    };
    let (a, b) = (eval(0.02)?, eval(0.01)?);
    let v = report::refinement_verdict("heat-continuity", "continuity-equation", &a, &b, REFINEMENT_RATIO, r.opts.seed);
    r.push(v);
    Ok(())
}

/// Second-order differentiation formula along a chart translation of a
/// smooth density: Richardson ratio in `Δt`, and the match with the
/// centered second difference under refinement in `h`.
pub fn second_order_check(r: &mut Runner) -> Result<()> {
    let eval = |c: &Calculus| -> Result<Option<Measurement>> {
        let Some(side) = chart_period(&c.space) else { return Ok(None) };
        let k = 2.0 * PI / side;
        let chart = c.space.chart().expect("torus has a chart");
        let f = ScalarField(chart.iter().map(|p| (k * p[0]).sin() * (k * p[1]).cos()).collect());
        let rho = move |p: [f64; 2]| 1.0 + 0.5 * (k * p[0]).cos() * (k * p[1]).sin();
        let dt = 0.05;
        let times: Vec<f64> = (0..=16).map(|i| i as f64 * dt).collect();
        let (curve, track) = lagrangian::chart_flow_curve(&c.space, rho, [0.7 / k, 0.3 / k], &times)?;
        lagrangian::second_order_formula(&c.space, &c.dirichlet, &c.hessian, &c.covariant, &curve, &track, &f).map(Some)
    };
    let Some(coarse) = eval(r.coarse)? else { return Ok(()) };
    let ratio = coarse.details["richardson_ratio"];
    let m = Measurement::new(coarse.lhs, coarse.rhs, ratio, coarse.h).with_dt(coarse.dt.unwrap_or(0.0));
    r.fixed("second-order-richardson", "second-order-differentiation-in-time", SECOND_ORDER_RATIO, &m);
    r.asymptotic_if("second-order-formula", "second-order-differentiation-formula", REFINEMENT_RATIO, eval)
}

/// Blob endpoints on a flat torus: `(1 − r²/R²)³₊` bumps a quarter period
/// apart, with `R` a third of the period.
pub fn transport_blobs(space: &DiscreteSpace) -> Result<(Vec<f64>, Vec<f64>)> {
    let side = chart_period(space).ok_or_else(|| CalcError::InvalidArgument(format!("{} is not a flat torus", space.descriptor())))?;
    let (l, radius) = (side / 4.0, side / PI);
    let a = lagrangian::chart_bump(space, [0.5 * side - 0.5 * l, 0.5 * side], radius, Some(side))?;
    let b = lagrangian::chart_bump(space, [0.5 * side + 0.5 * l, 0.5 * side], radius, Some(side))?;
    Ok((a, b))
}

/// Dynamic transport between two weight vectors against the assignment
/// oracle; the gap is the relative distance to the oracle value.
pub fn transport_measurement(c: &Calculus, mu0: &[f64], mu1: &[f64], opts: TransportOptions) -> Result<(Measurement, lagrangian::TransportSolution)> {
    let lp = lagrangian::transport_lp(&c.space, mu0, mu1)?;
    let sol = lagrangian::benamou_brenier(&c.space, &c.dirichlet, mu0, mu1, opts)?;
    let gap = relative((sol.value - lp).abs(), lp);
    let m = Measurement::new(sol.value, lp, gap, c.space.h())
        .with_dt(1.0 / opts.steps as f64)
        .with_detail("iterations", sol.iterations as f64)
        .with_detail("optimality_gap", sol.optimality_gap)
        .with_detail("primal_change", sol.primal_change)
        .with_detail("kinetic_energy", sol.track.kinetic_energy);
    Ok((m, sol))
}

/// Dynamic transport between blobs on a flat torus against the assignment
/// oracle.
pub fn transport_check(r: &mut Runner) -> Result<()> {
    let c = r.coarse;
    if chart_period(&c.space).is_none() {
        return Ok(());
    }
    let (a, b) = transport_blobs(&c.space)?;
    let (m, _) = transport_measurement(c, &a, &b, TransportOptions::default())?;
    r.fixed("transport-vs-assignment", "dynamic-transport-formula", TRANSPORT_TOLERANCE, &m);
    Ok(())
}

// Acceptance battery -------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct CriterionReport {
    pub id: usize,
    pub title: String,
    pub verdicts: Vec<VerdictReport>,
}

impl CriterionReport {
    pub fn pass(&self) -> bool {
        !self.verdicts.is_empty() && self.verdicts.iter().all(|v| v.pass)
    }

    /// One verdict summarizing the criterion: the gap is the largest
    /// `gap/tol` over its checks and the tolerance is one.
    pub fn summary(&self, seed: u64) -> VerdictReport {
        let score = |v: &VerdictReport| match (v.tol > 0.0, v.pass) {
            (true, _) => v.gap / v.tol,
            (false, true) => 0.0,
            (false, false) => f64::INFINITY,
        };
        let worst = self.verdicts.iter().map(score).fold(0.0, f64::max);
        let failed = self.verdicts.iter().filter(|v| !v.pass).count();
        let h = self.verdicts.iter().map(|v| v.resolution.h).fold(f64::INFINITY, f64::min);
        let mut details = BTreeMap::new();
        details.insert("checks".to_string(), self.verdicts.len() as f64);
        details.insert("failed".to_string(), failed as f64);
        VerdictReport::new(&format!("criterion-{}", self.id), &self.title, worst, 1.0, worst, 1.0, report::Resolution { h, dt: None, seed })
            .with_details(details)
    }
}

/// Prepared models, built on first use. Requests that resolve to the same
/// space and curvature bound share one model.
pub struct ModelCache {
    seed: u64,
    aliases: BTreeMap<(String, Option<u64>), String>,
    models: BTreeMap<String, Calculus>,
}

impl ModelCache {
    pub fn new(seed: u64) -> Self {
        ModelCache { seed, aliases: BTreeMap::new(), models: BTreeMap::new() }
    }

    fn alias(descriptor: &str, kappa: Option<f64>) -> (String, Option<u64>) {
        (descriptor.to_string(), kappa.map(f64::to_bits))
    }

    pub fn prepare(&mut self, descriptor: &str, kappa: Option<f64>) -> Result<()> {
        let alias = Self::alias(descriptor, kappa);
        if self.aliases.contains_key(&alias) {
            return Ok(());
        }
        let mut space = DiscreteSpace::build(descriptor)?;
        if let Some(k) = kappa {
            space = space.with_kappa(k);
        }
        let key = format!("{}|{}", space.hash(), space.kappa());
        if !self.models.contains_key(&key) {
            self.models.insert(key.clone(), Calculus::new(space, self.seed)?);
        }
        self.aliases.insert(alias, key);
        Ok(())
    }

    /// A model prepared earlier with the same arguments.
    pub fn get(&self, descriptor: &str, kappa: Option<f64>) -> &Calculus {
        &self.models[&self.aliases[&Self::alias(descriptor, kappa)]]
    }
}

pub const CRITERIA: [&str; 7] = [
    "exact linear algebra",
    "curvature on the flat torus",
    "curvature on the round sphere",
    "topology",
    "calculus rules",
    "curves of measures",
    "duality",
];

const TORUS: &str = "flat_torus:n=16";
const SPHERE: &str = "icosphere:subdiv=3";

/// Runs one acceptance criterion. Criteria 1, 2, 5 and 7 use `space` with
/// curvature bound `kappa`; criteria 3, 4 and 6 use their fixed models.
pub fn run_criterion(id: usize, space: &str, kappa: Option<f64>, opts: SuiteOptions, cache: &mut ModelCache) -> Result<CriterionReport> {
    let fine_of = |d: &str| -> Result<Option<String>> { if opts.refine >= 2 { refined_descriptor(d).map(Some) } else { Ok(None) } };
    let mut prepare = |d: &str, k: Option<f64>, refine: bool| -> Result<(String, Option<String>)> {
        cache.prepare(d, k)?;
        let fine = if refine { fine_of(d)? } else { None };
        if let Some(f) = &fine {
            cache.prepare(f, k)?;
        }
        Ok((d.to_string(), fine))
    };
    let (coarse, fine, k) = match id {
        1 | 7 => {
            let (c, _) = prepare(space, kappa, false)?;
            (c, None, kappa)
        }
        2 | 5 => {
            let (c, f) = prepare(space, kappa, true)?;
            (c, f, kappa)
        }
        3 => {
            let (c, f) = prepare(SPHERE, Some(1.0), true)?;
            (c, f, Some(1.0))
        }
        4 => {
            prepare(SPHERE, None, false)?;
            let (c, _) = prepare(TORUS, None, false)?;
            (c, None, None)
        }
        6 => {
            let (c, f) = prepare(TORUS, None, true)?;
            (c, f, None)
        }
        _ => return Err(CalcError::InvalidArgument(format!("no acceptance criterion {id}"))),
    };
    let cache = &*cache;
    let mut r = Runner::new(cache.get(&coarse, k), fine.as_deref().map(|f| cache.get(f, k)), opts);
    match id {
        1 => {
            operator_identities(&mut r)?;
            form_identities(&mut r)?;
            covariant_identities(&mut r)?;
            hessian_identities(&mut r)?;
            ricci_identities(&mut r)?;
        }
        2 => {
            r.asymptotic("bochner-hessian-bound", "hessian-bound-by-gamma2", REFINEMENT_RATIO, |c| {
                each(c.scalars(20), |f| hessian::hs_bound(&c.space, &c.dirichlet, &c.hessian, f, c.kappa(), DENSITY_SMOOTHING))
            })?;
            ricci_bounds(&mut r)?;
            bakry_emery_checks(&mut r)?;
            r.asymptotic("form-contraction", "hodge-heat-contraction", REFINEMENT_RATIO, |c| {
                let ms = (0..c.bank.vectors.len().min(10))
                    .map(|k| exterior::form_contraction_check(&c.space, &c.dirichlet, &c.complex, &c.vector_form(k), CONTRACTION_TIME, c.kappa()))
                    .collect::<Result<Vec<_>>>()?;
                worst(ms)
            })?;
            connection_flow_checks(&mut r)?;
        }
        3 => {
            einstein_check(&mut r)?;
            ricci_lower_bound(&mut r)?;
            connection_hodge_inequality(&mut r)?;
        }
        4 => {
            topology_checks(&mut r, Some(&[1, 2, 1]))?;
            let mut verdicts = std::mem::take(&mut r.verdicts);
            tag(&mut verdicts, "torus");
            let mut s = Runner::new(cache.get(SPHERE, None), None, opts);
            topology_checks(&mut s, Some(&[1, 0, 1]))?;
            tag(&mut s.verdicts, "sphere");
            verdicts.append(&mut s.verdicts);
            r.verdicts = verdicts;
        }
        5 => {
            hessian_rules(&mut r)?;
            covariant_rules(&mut r)?;
            form_rules(&mut r)?;
            locality_checks(&mut r)?;
        }
        6 => {
            continuity_check(&mut r)?;
            transport_check(&mut r)?;
            second_order_check(&mut r)?;
        }
        _ => duality_checks(&mut r)?,
    }
    Ok(CriterionReport { id, title: CRITERIA[id - 1].to_string(), verdicts: r.verdicts })
}

fn tag(verdicts: &mut [VerdictReport], model: &str) {
    for v in verdicts {
        v.name = format!("{}-{model}", v.name);
    }
}

/// All seven acceptance criteria.
pub fn acceptance_battery(space: &str, kappa: Option<f64>, opts: SuiteOptions) -> Result<Vec<CriterionReport>> {
    let mut cache = ModelCache::new(opts.seed);
    (1..=CRITERIA.len()).map(|id| run_criterion(id, space, kappa, opts, &mut cache)).collect()
}

/// Flattened report: each criterion's checks with names prefixed by the
/// criterion id, followed by one summary verdict per criterion.
pub fn battery_verdicts(reports: &[CriterionReport], seed: u64) -> Vec<VerdictReport> {
    let mut out = Vec::new();
    for r in reports {
        for v in &r.verdicts {
            let mut v = v.clone();
            v.name = format!("{}.{}", r.id, v.name);
            out.push(v);
        }
    }
    out.extend(reports.iter().map(|r| r.summary(seed)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refinement_of_descriptors() {
        assert_eq!(refined_descriptor("flat_torus:n=16").unwrap(), "flat_torus:n=32");
        assert_eq!(refined_descriptor("flat_torus:side=3,n=8").unwrap(), "flat_torus:side=3,n=16");
        assert_eq!(refined_descriptor("icosphere").unwrap(), "icosphere:subdiv=4");
        assert_eq!(refined_descriptor("cone:angle=pi,n=8+interval:n=4").unwrap(), "cone:angle=pi,n=16+interval:n=8");
        assert!(refined_descriptor("mesh:a.off").is_err());
    }

    #[test]
    fn exact_identities_on_a_small_torus() {
        let c = Calculus::build("flat_torus:n=8", None, 42).unwrap();
        let mut r = Runner::new(&c, None, SuiteOptions::default());
        operator_identities(&mut r).unwrap();
        form_identities(&mut r).unwrap();
        hessian_identities(&mut r).unwrap();
        for v in &r.verdicts {
            assert!(v.pass, "{} gap {}", v.name, v.gap);
        }
        assert_eq!(r.verdicts.len(), 7);
    }

    #[test]
    fn criterion_summary_reflects_failures() {
        let res = report::Resolution { h: 0.1, dt: None, seed: 1 };
        let ok = VerdictReport::new("a", "", 0.0, 0.0, 0.5, 1.0, res.clone());
        let bad = VerdictReport::new("b", "", 0.0, 0.0, 2.0, 1.0, res);
        let c = CriterionReport { id: 3, title: "t".into(), verdicts: vec![ok.clone()] };
        assert!(c.summary(1).pass);
        assert!((c.summary(1).gap - 0.5).abs() < 1e-15);
        let c = CriterionReport { id: 3, title: "t".into(), verdicts: vec![ok, bad] };
        assert!(!c.summary(1).pass);
        assert_eq!(c.summary(1).name, "criterion-3");
    }
}
