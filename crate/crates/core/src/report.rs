//! Verdict records for identity and inequality checks.
//!
//! A [`Measurement`] is one evaluation of a check at one resolution. It
//! becomes a [`VerdictReport`] either against a fixed tolerance or through a
//! two-resolution refinement study, where the fine gap must not exceed
//! `ratio` times the coarse gap (or a roundoff floor).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CalcError, Result};

/// Default contraction required between two resolutions.
pub const REFINEMENT_RATIO: f64 = 0.75;
/// Gaps below this level count as roundoff in refinement studies.
pub const ROUNDOFF_FLOOR: f64 = 1e-9;
/// Tolerance of operator-level identities.
pub const EXACT: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    pub h: f64,
    pub dt: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerdictReport {
    pub name: String,
    pub paper_anchor: String,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub tol: f64,
    pub pass: bool,
    pub resolution: Resolution,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

/// One evaluation of a check: summaries of both sides and a normalized gap.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub h: f64,
    pub dt: Option<f64>,
    pub details: BTreeMap<String, f64>,
}

impl Measurement {
    pub fn new(lhs: f64, rhs: f64, gap: f64, h: f64) -> Self {
        Measurement { lhs, rhs, gap, h, dt: None, details: BTreeMap::new() }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    /// The member of a family with the largest gap. Each detail is replaced
    /// by its largest value over the family.
    pub fn worst(family: impl IntoIterator<Item = Measurement>) -> Option<Measurement> {
        let mut out: Option<Measurement> = None;
        let mut details = BTreeMap::new();
        for m in family {
            for (k, v) in &m.details {
                let e = details.entry(k.clone()).or_insert(*v);
                *e = f64::max(*e, *v);
            }
            if out.as_ref().is_none_or(|o| m.gap > o.gap || m.gap.is_nan()) {
                out = Some(m);
            }
        }
        out.map(|mut m| {
            m.details = details;
            m
        })
    }

    /// Verdict against a fixed tolerance.
    pub fn verdict(&self, name: &str, anchor: &str, tol: f64, seed: u64) -> VerdictReport {
        VerdictReport::new(name, anchor, self.lhs, self.rhs, self.gap, tol, Resolution { h: self.h, dt: self.dt, seed })
            .with_details(self.details.clone())
    }
}

impl VerdictReport {
    pub fn new(name: &str, anchor: &str, lhs: f64, rhs: f64, gap: f64, tol: f64, resolution: Resolution) -> Self {
        let gap = if gap.is_nan() { f64::INFINITY } else { gap };
        VerdictReport {
            name: name.to_string(),
            paper_anchor: anchor.to_string(),
            lhs,
            rhs,
            gap,
            tol,
            pass: gap <= tol,
            resolution,
            details: BTreeMap::new(),
        }
    }

    pub fn with_details(mut self, details: BTreeMap<String, f64>) -> Self {
        self.details.extend(details);
        self
    }

    /// Scales the tolerance, keeping `pass ⇔ gap ≤ tol`.
    pub fn scale_tol(mut self, s: f64) -> Self {
        self.tol *= s;
        self.pass = self.gap <= self.tol;
        self
    }
}

/// Refinement verdict: the fine gap must be at most `ratio` times the coarse
/// gap, unless both are at roundoff level. Records `tol_constant = gap/h` at
/// the coarse resolution.
///
/// One-sided checks whose two sides agree on the model space carry a
/// `deviation` detail, the two-sided distance between the sides. Their
/// violation can be zero at one resolution and tiny at the next, so for them
/// the tolerance is `C·h` with `C = deviation/h` at the coarse resolution,
/// provided the deviation itself contracts by `ratio`.
pub fn refinement_verdict(
    name: &str,
    anchor: &str,
    coarse: &Measurement,
    fine: &Measurement,
    ratio: f64,
    seed: u64,
) -> VerdictReport {
    let mut tol = (ratio * coarse.gap).max(ROUNDOFF_FLOOR);
    let mut constant = if coarse.h > 0.0 { coarse.gap / coarse.h } else { 0.0 };
    let mut details = fine.details.clone();
    if let (Some(&dc), Some(&df)) = (coarse.details.get("deviation"), fine.details.get("deviation")) {
        if dc > 0.0 {
            details.insert("deviation_ratio".into(), df / dc);
        }
        if df <= (ratio * dc).max(ROUNDOFF_FLOOR) && coarse.h > 0.0 {
            constant = constant.max(dc / coarse.h);
            tol = tol.max(constant * fine.h);
        }
    }
    details.insert("coarse_gap".into(), coarse.gap);
    details.insert("coarse_h".into(), coarse.h);
    details.insert("tol_constant".into(), constant);
    if coarse.gap > 0.0 {
        details.insert("gap_ratio".into(), fine.gap / coarse.gap);
    }
    if let Some(dt) = coarse.dt {
        details.insert("coarse_dt".into(), dt);
    }
    VerdictReport::new(name, anchor, fine.lhs, fine.rhs, fine.gap, tol, Resolution { h: fine.h, dt: fine.dt, seed })
        .with_details(details)
}

#[derive(Serialize, Deserialize)]
struct Bundle {
    verdicts: Vec<VerdictReport>,
}

/// Deterministic JSON with sorted keys.
pub fn reports_to_json(reports: &[VerdictReport]) -> String {
    let value = serde_json::to_value(Bundle { verdicts: reports.to_vec() }).expect("reports serialize");
    serde_json::to_string(&value).expect("json value serializes")
}

pub fn reports_from_json(text: &str) -> Result<Vec<VerdictReport>> {
    let b: Bundle = serde_json::from_str(text).map_err(|e| CalcError::InvalidArgument(format!("bad report JSON: {e}")))?;
    Ok(b.verdicts)
}

pub fn emit_report(reports: &[VerdictReport], path: &Path) -> Result<()> {
    std::fs::write(path, reports_to_json(reports) + "\n")
        .map_err(|source| CalcError::Io { path: path.display().to_string(), source })
}

/// Relative size of the worst violation of `lhs ≤ rhs`, normalized by `scale`.
pub fn max_violation(lhs: &[f64], rhs: &[f64], scale: f64) -> f64 {
    let worst = lhs.iter().zip(rhs).map(|(a, b)| (a - b).max(0.0)).fold(0.0, f64::max);
    if scale > 0.0 { worst / scale } else { worst }
}

/// Relative `L²` distance between two weighted vectors.
pub fn relative_l2(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).zip(w).map(|((x, y), w)| w * (x - y).powi(2)).sum();
    let den: f64 = b.iter().zip(w).map(|(y, w)| w * y * y).sum::<f64>().max(a.iter().zip(w).map(|(x, w)| w * x * x).sum());
    if den > 0.0 { (num / den).sqrt() } else { num.sqrt() }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_bundle() {
        assert_eq!(reports_to_json(&[]), "{\"verdicts\":[]}");
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let r = Measurement::new(1.0, 2.0, 0.5, 0.1).with_detail("z", 3.0).with_detail("a", 1.0).verdict("x", "anchor", 1.0, 42);
        let text = reports_to_json(&[r]);
        let back = reports_from_json(&text).unwrap();
        assert_eq!(reports_to_json(&back), text);
        assert!(text.find("\"gap\"").unwrap() < text.find("\"lhs\"").unwrap());
    }

    #[test]
    fn pass_iff_gap_within_tol() {
        let res = Resolution { h: 0.1, dt: None, seed: 1 };
        assert!(VerdictReport::new("a", "", 0.0, 0.0, 1.0, 1.0, res.clone()).pass);
        assert!(!VerdictReport::new("a", "", 0.0, 0.0, 1.0 + 1e-12, 1.0, res.clone()).pass);
        assert!(!VerdictReport::new("a", "", 0.0, 0.0, f64::NAN, 1.0, res).pass);
    }

    #[test]
    fn refinement_uses_ratio_and_floor() {
        let c = Measurement::new(0.0, 0.0, 0.2, 0.2);
        let f = Measurement::new(0.0, 0.0, 0.1, 0.1);
        let v = refinement_verdict("r", "", &c, &f, 0.75, 42);
        assert!(v.pass);
        assert!((v.details["tol_constant"] - 1.0).abs() < 1e-15);
        let f = Measurement::new(0.0, 0.0, 0.16, 0.1);
        assert!(!refinement_verdict("r", "", &c, &f, 0.75, 42).pass);
        let z = Measurement::new(0.0, 0.0, 0.0, 0.1);
        assert!(refinement_verdict("r", "", &z, &z, 0.75, 42).pass);
    }

    #[test]
    fn one_sided_checks_scale_with_deviation() {
        let c = Measurement::new(0.0, 0.0, 0.0, 0.2).with_detail("deviation", 0.2);
        let f = Measurement::new(0.0, 0.0, 0.05, 0.1).with_detail("deviation", 0.1);
        let v = refinement_verdict("r", "", &c, &f, 0.75, 42);
        assert!(v.pass);
        assert!((v.tol - 0.1).abs() < 1e-15);
        let stuck = Measurement::new(0.0, 0.0, 0.05, 0.1).with_detail("deviation", 0.19);
        assert!(!refinement_verdict("r", "", &c, &stuck, 0.75, 42).pass);
    }

    #[test]
    fn emits_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        emit_report(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().trim(), "{\"verdicts\":[]}");
        assert!(emit_report(&[], &dir.path().join("missing/r.json")).is_err());
    }
}
