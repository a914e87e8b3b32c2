//! The seven acceptance criteria, run once on their prescribed models.
//!
//! Tolerances: operator identities 1e-10 (total-mass identities 1e-8
//! relative); asymptotic checks pass when the gap contracts by 0.75 from
//! the coarse to the fine model; the Einstein comparison 10% in L¹; the
//! transport value within 5% of the assignment oracle; the time-refinement
//! ratio of the second-order formula at most 0.3; dual bounds within 20%
//! below the direct energies and never above them beyond 1e-8.

use weakcalc::report::reports_to_json;
use weakcalc::suite::{acceptance_battery, battery_verdicts, SuiteOptions, CRITERIA};

#[test]
fn acceptance_criteria() {
    let opts = SuiteOptions::default();
    let reports = acceptance_battery("flat_torus:n=16", Some(0.0), opts).expect("battery runs");
    assert_eq!(reports.len(), CRITERIA.len());

    let mut failed = Vec::new();
    for r in &reports {
        let status = if r.pass() { "PASS" } else { "FAIL" };
        let worst = r.summary(opts.seed);
        println!("criterion {} ({}): {status}  checks={} worst gap/tol={:.3e}", r.id, r.title, r.verdicts.len(), worst.gap);
        for v in r.verdicts.iter().filter(|v| !v.pass) {
            println!("    failing {}: gap {:.3e} > tol {:.3e}", v.name, v.gap, v.tol);
        }
        if !r.pass() {
            failed.push(r.id);
        }
    }

    let flat = battery_verdicts(&reports, opts.seed);
    for id in 1..=CRITERIA.len() {
        let name = format!("criterion-{id}");
        assert_eq!(flat.iter().filter(|v| v.name == name).count(), 1, "{name} appears once");
    }
    let json = reports_to_json(&flat);
    assert!(json.starts_with("{\"verdicts\":["));

    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
