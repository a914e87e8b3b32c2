//! `weakcalc`: runs calculus checks on a discrete space and prints a JSON
//! verdict report. Exit status 0 when every verdict passes, 1 when one
//! fails, 2 on a usage error, 3 when a numerical method fails.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use weakcalc::dirichlet::DENSITY_SMOOTHING;
use weakcalc::fields;
use weakcalc::lagrangian::{self, TransportOptions};
use weakcalc::report::{self, VerdictReport};
use weakcalc::suite::{self, Calculus, ModelCache, Runner, SuiteOptions, CONTRACTION_TIME};
use weakcalc::{CalcError, DiscreteSpace, Result, ScalarField};

#[derive(Parser)]
#[command(name = "weakcalc", version, about = "Second-order calculus checks on discrete metric measure spaces")]
struct Cli {
    /// Generator descriptor, e.g. flat_torus:n=16, icosphere:subdiv=3, cone:angle=pi,n=8, mesh:path.off
    #[arg(long, global = true, default_value = "flat_torus:n=16")]
    space: String,
    /// Curvature lower bound K; defaults to the generator's own value.
    #[arg(long, global = true, allow_hyphen_values = true)]
    kappa: Option<f64>,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// 2 compares each asymptotic check with the refined model, 1 uses tol(h) = h.
    #[arg(long, global = true, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    refine: u8,
    /// Factor applied to every tolerance.
    #[arg(long = "tol-scale", global = true, default_value_t = 1.0)]
    tol_scale: f64,
    /// Write per-vertex values to this CSV file.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Write the verdict report to this file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Detail::Verdicts)]
    report: Detail,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Detail {
    /// The command's primary result, or the verdicts.
    Verdicts,
    /// Verdicts together with every computed quantity.
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Summary of the space: sizes, mass, mesh width, local dimensions.
    Space,
    /// Γ₂ identities, the Hessian bound and the Γ₂ chain rule.
    Gamma2,
    /// Heat semigroup identities and the continuity equation along the flow.
    Heat {
        /// Time of the flowed density written with --csv.
        #[arg(long, default_value_t = 0.1)]
        time: f64,
    },
    /// Bakry-Émery gradient contraction.
    BeCheck,
    /// Hessian symmetry, calculus rules, locality and duality.
    Hessian,
    /// Covariant derivative identities, calculus rules, locality and duality.
    Covariant,
    /// Lie bracket and torsion.
    Bracket,
    /// Connection heat flow contraction.
    Cflow,
    /// Betti numbers, Hodge decomposition and the first Betti number bound.
    Betti,
    /// Exterior derivative, codifferential and Hodge Laplacian identities.
    Hodge,
    /// Hodge heat flow contraction and commutation with d.
    Hflow,
    /// Ricci curvature identities, bounds, representations and locality.
    Ricci,
    /// Dynamic optimal transport against the assignment oracle.
    Bb {
        /// Start measure: bump:x,y,R in chart coordinates, or a JSON file
        /// holding an array of vertex weights. Defaults to the torus blobs.
        #[arg(long)]
        mu0: Option<String>,
        #[arg(long)]
        mu1: Option<String>,
        #[arg(long, default_value_t = TransportOptions::default().steps)]
        steps: usize,
        #[arg(long = "max-iter", default_value_t = TransportOptions::default().max_iter)]
        max_iter: usize,
    },
    /// The acceptance battery.
    Suite {
        /// Run a single criterion.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=7))]
        criterion: Option<u8>,
    },
}

/// What a command produced.
#[derive(Default)]
struct Outcome {
    verdicts: Vec<VerdictReport>,
    /// Printed instead of the verdicts unless the full report is requested.
    primary: Option<Map<String, Value>>,
    data: Map<String, Value>,
    columns: Vec<(String, Vec<f64>)>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_solver_failure() { 3 } else { 2 })
        }
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    if !(cli.tol_scale > 0.0) {
        return Err(CalcError::InvalidArgument("--tol-scale must be positive".into()));
    }
    let outcome = run(cli)?;
    if let Some(path) = &cli.out {
        report::emit_report(&outcome.verdicts, path)?;
    }
    if let Some(path) = &cli.csv {
        let space = DiscreteSpace::build(&cli.space)?;
        write_csv(path, &space, &outcome.columns)?;
    }
    let _ = writeln!(std::io::stdout().lock(), "{}", render(&outcome, cli.report));
    Ok(outcome.verdicts.iter().all(|v| v.pass))
}

fn render(o: &Outcome, detail: Detail) -> String {
    let verdicts: Value = serde_json::from_str(&report::reports_to_json(&o.verdicts)).expect("report JSON parses");
    let value = match (detail, &o.primary) {
        (Detail::Verdicts, Some(p)) => Value::Object(p.clone()),
        (Detail::Verdicts, None) => verdicts,
        (Detail::Full, _) => {
            let mut m = o.primary.clone().unwrap_or_default();
            m.insert("verdicts".into(), verdicts["verdicts"].clone());
            if !o.data.is_empty() {
                m.insert("data".into(), Value::Object(o.data.clone()));
            }
            Value::Object(m)
        }
    };
    serde_json::to_string(&value).expect("JSON value serializes")
}

fn write_csv(path: &Path, space: &DiscreteSpace, columns: &[(String, Vec<f64>)]) -> Result<()> {
    let io = |e: csv::Error| CalcError::Io { path: path.display().to_string(), source: e.into() };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    let mut header = vec!["vertex".to_string(), "mass".to_string()];
    header.extend(columns.iter().map(|(n, _)| n.clone()));
    w.write_record(&header).map_err(io)?;
    for v in 0..space.n_vertices() {
        let mut row = vec![v.to_string(), space.vertex_mass()[v].to_string()];
        row.extend(columns.iter().map(|(_, c)| c.get(v).map_or(String::new(), |x| x.to_string())));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CalcError::Io { path: path.display().to_string(), source: e })
}

fn options(cli: &Cli) -> SuiteOptions {
    SuiteOptions { seed: cli.seed, refine: cli.refine, tol_scale: cli.tol_scale }
}

/// The coarse model and, with `--refine 2`, its refinement.
fn models(cli: &Cli) -> Result<(Calculus, Option<Calculus>)> {
    let coarse = Calculus::build(&cli.space, cli.kappa, cli.seed)?;
    let fine = if cli.refine >= 2 { Some(Calculus::build(&suite::refined_descriptor(&cli.space)?, cli.kappa, cli.seed)?) } else { None };
    Ok((coarse, fine))
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Space => {
            let space = DiscreteSpace::build(&cli.space)?;
            let space = match cli.kappa {
                Some(k) => space.with_kappa(k),
                None => space,
            };
            let summary = serde_json::to_value(space.summary()).expect("summary serializes");
            Ok(Outcome { primary: summary.as_object().cloned(), ..Outcome::default() })
        }
        Command::Suite { criterion } => {
            let opts = options(cli);
            let mut cache = ModelCache::new(cli.seed);
            let ids: Vec<usize> = match criterion {
                Some(c) => vec![*c as usize],
                None => (1..=suite::CRITERIA.len()).collect(),
            };
            let reports = ids.iter().map(|&id| suite::run_criterion(id, &cli.space, cli.kappa, opts, &mut cache)).collect::<Result<Vec<_>>>()?;
            Ok(Outcome { verdicts: suite::battery_verdicts(&reports, cli.seed), ..Outcome::default() })
        }
        Command::Bb { mu0, mu1, steps, max_iter } => transport(cli, mu0.as_deref(), mu1.as_deref(), *steps, *max_iter),
        command => {
            let (coarse, fine) = models(cli)?;
            let mut r = Runner::new(&coarse, fine.as_ref(), options(cli));
            let mut out = Outcome::default();
            topic(command, &mut r, &mut out)?;
            out.verdicts = r.verdicts;
            Ok(out)
        }
    }
}

fn vertex_norms(space: &DiscreteSpace, cell_sq: &[f64]) -> Vec<f64> {
    fields::to_vertices(space, &cell_sq.iter().map(|x| x.max(0.0).sqrt()).collect::<Vec<_>>())
}

fn topic(command: &Command, r: &mut Runner, out: &mut Outcome) -> Result<()> {
    let c = r.coarse;
    let (space, d) = (&c.space, &c.dirichlet);
    let f = &c.bank.scalars[4.min(c.bank.scalars.len() - 1)];
    let x = &c.bank.vectors[0];
    match command {
        Command::Gamma2 => {
            suite::operator_identities(r)?;
            suite::gamma2_checks(r)?;
            let g2 = d.gamma2(space, f, f);
            out.columns.push(("gamma2_density".into(), g2.density(space).0));
            out.columns.push(("gamma2_smoothed".into(), d.smoothed_density(&g2, DENSITY_SMOOTHING)?.0));
            out.columns.push(("grad_sq".into(), d.carre_du_champ(space, f, f).0));
        }
        Command::Heat { time } => {
            if !(*time >= 0.0) {
                return Err(CalcError::InvalidArgument("--time must be nonnegative".into()));
            }
            suite::heat_identities(r)?;
            suite::continuity_check(r)?;
            out.columns.push(("initial".into(), f.0.clone()));
            out.columns.push((format!("heat_t{time}"), d.heat_flow(f, *time)?.0));
        }
        Command::BeCheck => {
            suite::bakry_emery_checks(r)?;
            let ft = d.heat_flow(f, CONTRACTION_TIME)?;
            out.columns.push(("grad_sq_of_flow".into(), d.carre_du_champ(space, &ft, &ft).0));
            out.columns.push(("flow_of_grad_sq".into(), d.heat_flow(&d.carre_du_champ(space, f, f), CONTRACTION_TIME)?.0));
        }
        Command::Hessian => {
            suite::hessian_identities(r)?;
            suite::hessian_rules(r)?;
            suite::locality_checks(r)?;
            suite::duality_checks(r)?;
            out.columns.push(("hessian_hs".into(), vertex_norms(space, &c.hessian.apply(f).cell_hs_sq(space))));
        }
        Command::Covariant => {
            suite::covariant_identities(r)?;
            suite::covariant_rules(r)?;
            suite::locality_checks(r)?;
            suite::duality_checks(r)?;
            out.columns.push(("covariant_hs".into(), vertex_norms(space, &c.covariant.apply(x).cell_hs_sq(space))));
        }
        Command::Bracket => {
            suite::bracket_checks(r)?;
            let y = &c.bank.vectors[1.min(c.bank.vectors.len() - 1)];
            let b = weakcalc::covariant::lie_bracket(&c.covariant, x, y);
            out.columns.push(("bracket_norm".into(), fields::pointwise_inner(space, &b, &b)?.0.iter().map(|x| x.max(0.0).sqrt()).collect()));
        }
        Command::Cflow => {
            suite::connection_flow_checks(r)?;
            let sq = |v: &weakcalc::VectorField| fields::pointwise_inner(space, v, v);
            out.columns.push(("sq_norm_of_flow".into(), sq(&c.covariant.heat_flow(x, CONTRACTION_TIME)?)?.0));
            out.columns.push(("flow_of_sq_norm".into(), d.heat_flow(&sq(x)?, CONTRACTION_TIME)?.0));
        }
        Command::Betti => {
            let b = suite::topology_checks(r, None)?;
            let mut p = Map::new();
            p.insert("betti".into(), json!(b));
            out.primary = Some(p);
        }
        Command::Hodge => {
            suite::form_identities(r)?;
            suite::form_rules(r)?;
            let w = c.vector_form(0);
            out.columns.push(("codifferential".into(), c.complex.codifferential(&w)?.values));
        }
        Command::Hflow => {
            suite::form_flow_checks(r)?;
            let w = c.complex.hodge_heat_flow(&c.vector_form(0), CONTRACTION_TIME)?;
            let cells = c.complex.one_form_cells(space, &w)?;
            out.columns.push(("sq_norm_of_flow".into(), fields::pointwise_inner(space, &cells, &cells)?.0));
        }
        Command::Ricci => {
            suite::ricci_identities(r)?;
            suite::ricci_bounds(r)?;
            suite::ricci_estimates(r)?;
            suite::ricci_locality_check(r)?;
            let ctx = c.ricci();
            let mu = ctx.ricci_measure(x, x)?;
            out.columns.push(("ricci_density".into(), mu.density(space).0));
            out.columns.push(("ricci_smoothed".into(), d.smoothed_density(&mu, DENSITY_SMOOTHING)?.0));
            out.columns.push(("sq_norm".into(), fields::pointwise_inner(space, x, x)?.0));
            out.data.insert("ricci_total".into(), json!(mu.total()));
            out.data.insert("hodge_energy".into(), json!(ctx.hodge_energy(x)?));
        }
        Command::Space | Command::Suite { .. } | Command::Bb { .. } => unreachable!("handled before model assembly"),
    }
    Ok(())
}

/// Reads a measure argument: `bump:x,y,R` or a JSON array file.
fn measure_arg(space: &DiscreteSpace, arg: &str) -> Result<Vec<f64>> {
    if let Some(rest) = arg.strip_prefix("bump:") {
        let parts: Vec<f64> = rest
            .split(',')
            .map(|p| weakcalc::space::parse_real(p.trim()).ok_or_else(|| CalcError::InvalidArgument(format!("bad number '{p}' in '{arg}'"))))
            .collect::<Result<_>>()?;
        let [x, y, r] = parts[..] else {
            return Err(CalcError::InvalidArgument(format!("'{arg}' needs three numbers: bump:x,y,R")));
        };
        let period = suite::chart_period(space);
        return lagrangian::chart_bump(space, [x, y], r, period);
    }
    let text = std::fs::read_to_string(arg).map_err(|source| CalcError::Io { path: arg.to_string(), source })?;
    let w: Vec<f64> = serde_json::from_str(&text).map_err(|e| CalcError::InvalidArgument(format!("{arg}: {e}")))?;
    let total: f64 = w.iter().sum();
    if w.iter().any(|x| !(*x >= 0.0)) || !(total > 0.0) {
        return Err(CalcError::InvalidArgument(format!("{arg} does not hold nonnegative weights with positive sum")));
    }
    Ok(w.iter().map(|x| x / total).collect())
}

fn transport(cli: &Cli, mu0: Option<&str>, mu1: Option<&str>, steps: usize, max_iter: usize) -> Result<Outcome> {
    let c = Calculus::build(&cli.space, cli.kappa, cli.seed)?;
    let (a, b) = match (mu0, mu1) {
        (Some(a), Some(b)) => (measure_arg(&c.space, a)?, measure_arg(&c.space, b)?),
        (None, None) => suite::transport_blobs(&c.space)?,
        _ => return Err(CalcError::InvalidArgument("give both --mu0 and --mu1, or neither".into())),
    };
    let opts = TransportOptions { steps, max_iter, ..TransportOptions::default() };
    let (m, sol) = suite::transport_measurement(&c, &a, &b, opts)?;
    let mut r = Runner::new(&c, None, options(cli));
    r.fixed("transport-vs-assignment", "dynamic-transport-formula", suite::TRANSPORT_TOLERANCE, &m);
    let mut out = Outcome { verdicts: r.verdicts, ..Outcome::default() };
    out.data.insert("value".into(), json!(sol.value));
    out.data.insert("oracle".into(), json!(m.rhs));
    out.data.insert("iterations".into(), json!(sol.iterations));
    out.data.insert("converged".into(), json!(sol.converged));
    out.data.insert("nodes".into(), json!(sol.nodes.weights));
    out.data.insert("midpoints".into(), json!(sol.midpoints.weights));
    for (k, w) in sol.nodes.weights.iter().enumerate() {
        let dens = ScalarField(w.iter().zip(c.space.vertex_mass()).map(|(x, m)| x / m).collect());
        out.columns.push((format!("density_t{k}"), dens.0));
    }
    Ok(out)
}
