use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use subelliptic::config::{Format, RunConfig, Setup};
use subelliptic::grid::write_csv;
use subelliptic::mms::run_mms;
use subelliptic::report::write_json;
use subelliptic::scheme::{run_scheme, SchemeReport};
use subelliptic::sobolev::best_constant_report;
use subelliptic::verify::{resolve_suites, run_verify, Fault, VerifyOptions};
use subelliptic::{Error, ProblemSpec};

#[derive(Parser)]
#[command(name = "subelliptic", version, about = "Singular subelliptic p-Laplace lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the monotone scheme and write u_delta with its audit report.
    Solve(Common),
    /// Compute the best Sobolev constant both ways and run the iff sweep.
    BestConstant(Common),
    /// Manufactured-solution convergence study.
    Mms(Common),
    /// Run the invariant suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write every u_n as CSV.
    #[arg(long)]
    snapshots: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated suite names; empty selects none.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

/// Exit statuses: 1 a checked invariant failed, 2 invalid input, 3 runtime failure.
enum Failure {
    Invariant(String),
    Input(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Invalid { .. } | Error::Config(_) | Error::EmptyInterior(_) => Failure::Input(e.to_string()),
            Error::ScheduleExhausted {
                last_gap, threshold, ..
            } => Failure::Invariant(format!("scheme Cauchy test: gap {last_gap:.3e} > {threshold:.3e}")),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

struct Loaded {
    config: RunConfig,
    base: PathBuf,
    out: PathBuf,
}

fn load(c: &Common) -> Result<Loaded, Failure> {
    let (config, base) = RunConfig::load(&c.config)?;
    let out = c
        .out
        .clone()
        .or_else(|| {
            config
                .outputs
                .directory
                .clone()
                .map(|d| if d.is_absolute() { d } else { base.join(d) })
        })
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(Loaded { config, base, out })
}

fn need_problem(setup: &Setup) -> Result<&ProblemSpec, Failure> {
    setup
        .problem
        .as_ref()
        .ok_or_else(|| Failure::Input("problem.source given: this command needs a source".into()))
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn csv_file(path: PathBuf) -> Result<BufWriter<File>, Failure> {
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn scheme_or_report(
    prob: &ProblemSpec,
    setup: &Setup,
    snapshots: bool,
) -> Result<(SchemeReport, Option<Failure>), Failure> {
    let mut opts = setup.scheme.clone();
    opts.keep_iterates = snapshots;
    match run_scheme(prob, &opts, &setup.solver) {
        Ok(r) => Ok((r, None)),
        Err(Error::ScheduleExhausted {
            last_gap,
            threshold,
            report,
        }) => Ok((
            *report,
            Some(Failure::Invariant(format!(
                "scheme Cauchy test: gap {last_gap:.3e} > {threshold:.3e}"
            ))),
        )),
        Err(e) => Err(e.into()),
    }
}

fn write_scheme(l: &Loaded, prob: &ProblemSpec, r: &SchemeReport) -> Result<(), Failure> {
    let outputs = &l.config.outputs;
    if outputs.wants(Format::Json) {
        write_json(&l.out.join("scheme_report.json"), "solve", r)?;
    }
    if outputs.wants(Format::Csv) {
        write_csv(
            prob.grid(),
            &[("u_delta", &r.u_delta)],
            csv_file(l.out.join("u_delta.csv"))?,
        )?;
        r.write_convergence_csv(csv_file(l.out.join("convergence.csv"))?)?;
        for (u, n) in r.iterates.iter().zip(&r.schedule) {
            write_csv(
                prob.grid(),
                &[("u_n", u)],
                csv_file(l.out.join(format!("u_n_{n:06}.csv")))?,
            )?;
        }
    }
    Ok(())
}

fn solve(c: &Common) -> Result<(), Failure> {
    let l = load(c)?;
    let setup = l.config.build(&l.base, c.seed)?;
    let prob = need_problem(&setup)?;
    let snapshots = c.snapshots || l.config.outputs.snapshots;
    let (r, pending) = scheme_or_report(prob, &setup, snapshots)?;
    create_out(&l.out)?;
    write_scheme(&l, prob, &r)?;
    if let Some(f) = pending {
        return Err(f);
    }
    match r.first_failure() {
        Some(check) => Err(Failure::Invariant(check.name.clone())),
        None => Ok(()),
    }
}

fn best_constant(c: &Common) -> Result<(), Failure> {
    let l = load(c)?;
    let setup = l.config.build(&l.base, c.seed)?;
    let prob = need_problem(&setup)?;
    let (r, pending) = scheme_or_report(prob, &setup, false)?;
    let (rep, minimizer) = best_constant_report(prob, &r.u_delta, &setup.best_constant, &setup.solver)?;
    create_out(&l.out)?;
    let outputs = &l.config.outputs;
    if outputs.wants(Format::Json) {
        write_json(&l.out.join("best_constant.json"), "best-constant", &rep)?;
    }
    if outputs.wants(Format::Csv) {
        rep.write_sweep_csv(csv_file(l.out.join("sweep.csv"))?)?;
        let extremal = r.u_delta.scaled(rep.theta);
        write_csv(
            prob.grid(),
            &[
                ("u_delta", &r.u_delta),
                ("extremal", &extremal),
                ("direct_minimizer", &minimizer),
            ],
            csv_file(l.out.join("extremal.csv"))?,
        )?;
    }
    if let Some(f) = pending {
        return Err(f);
    }
    match rep.first_failure() {
        Some(name) => Err(Failure::Invariant(name)),
        None => Ok(()),
    }
}

fn mms(c: &Common) -> Result<(), Failure> {
    let l = load(c)?;
    let (study, solver) = l.config.build_mms(c.seed)?;
    let rep = run_mms(&study, &solver)?;
    create_out(&l.out)?;
    if l.config.outputs.wants(Format::Json) {
        write_json(&l.out.join("mms.json"), "mms", &rep)?;
    }
    if l.config.outputs.wants(Format::Csv) {
        rep.write_csv(csv_file(l.out.join("mms.csv"))?)?;
    }
    if rep.passed {
        Ok(())
    } else {
        let worst = rep
            .rows
            .iter()
            .filter(|r| !r.exact)
            .filter_map(|r| r.observed_order)
            .fold(f64::INFINITY, f64::min);
        Err(Failure::Invariant(format!(
            "observed order >= {} (worst {worst:.3})",
            rep.min_order
        )))
    }
}

fn verify(v: &VerifyArgs) -> Result<(), Failure> {
    let c = &v.common;
    let l = load(c)?;
    let suites = match &v.suite {
        Some(s) => {
            let names: Vec<String> = s
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            resolve_suites(Some(&names))?
        }
        None => resolve_suites(l.config.verify.suites.as_deref())?,
    };
    let fault = match v.inject_fault.as_deref() {
        None => None,
        Some("divergence-sign") => Some(Fault::DivergenceSignFlip),
        Some(other) => return Err(Failure::Input(format!("known fault names: unknown fault {other:?}"))),
    };
    let setup = l.config.build(&l.base, c.seed)?;
    let prob = need_problem(&setup)?;
    let opts = VerifyOptions {
        scheme: setup.scheme.clone(),
        solver: setup.solver.clone(),
        best_constant: setup.best_constant.clone(),
        trials: l.config.verify.trials,
        fault,
    };
    let rep = run_verify(prob, &suites, &opts)?;
    create_out(&l.out)?;
    if l.config.outputs.wants(Format::Json) {
        write_json(&l.out.join("verify.json"), "verify", &rep)?;
    }
    if l.config.outputs.wants(Format::Csv) {
        rep.write_csv(csv_file(l.out.join("verify.csv"))?)?;
    }
    for r in &rep.rows {
        println!(
            "{} {}: {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.suite,
            r.invariant
        );
    }
    match rep.first_failure() {
        Some(r) => Err(Failure::Invariant(format!("{}: {}", r.suite, r.invariant))),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(c) => solve(c),
        Command::BestConstant(c) => best_constant(c),
        Command::Mms(c) => mms(c),
        Command::Verify(v) => verify(v),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant violated: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("invalid input: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("runtime failure: {m}");
            ExitCode::from(3)
        }
    }
}
