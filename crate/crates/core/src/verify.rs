//! Named invariant suites run against one configured problem.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::calculus::{monotone_pairing, pairing_ratio, HorizontalSection};
use crate::error::{Error, Result};
use crate::grid::{inner, l2_norm, GridFunction};
use crate::group::GroupKind;
use crate::scheme::{check_energy_comparison, run_scheme, solve_auxiliary, SchemeOptions, SchemeReport};
use crate::sobolev::{best_constant_report, random_tests, BestConstantOptions};
use crate::variational::{truncate_source, Energy, ProblemSpec, SolverConfig};

pub const SUITES: [&str; 7] = [
    "pairing",
    "duality",
    "gradient",
    "chain",
    "test_bound",
    "best_constant",
    "uniqueness",
];

/// Thresholds of the suites.
pub const DUALITY_TOL: f64 = 1e-12;
pub const GRADIENT_TOL: f64 = 1e-6;
pub const WEAK_RESIDUAL_TOL: f64 = 1e-4;
pub const IDENTITY_TOL: f64 = 1e-6;
pub const TEST_BOUND_TOL: f64 = 1e-6;
pub const UNIQUENESS_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Flip the sign of the discrete divergence.
    DivergenceSignFlip,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyRow {
    pub suite: String,
    pub invariant: String,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<String>,
    pub rows: Vec<VerifyRow>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn first_failure(&self) -> Option<&VerifyRow> {
        self.rows.iter().find(|r| !r.passed)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["suite", "invariant", "value", "threshold", "passed", "detail"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.suite.clone(),
                r.invariant.clone(),
                opt(r.value),
                opt(r.threshold),
                r.passed.to_string(),
                r.detail.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub scheme: SchemeOptions,
    pub solver: SolverConfig,
    pub best_constant: BestConstantOptions,
    pub trials: usize,
    pub fault: Option<Fault>,
}

/// Checks suite names; `None` selects every suite.
pub fn resolve_suites(names: Option<&[String]>) -> Result<Vec<String>> {
    match names {
        None => Ok(SUITES.iter().map(|s| s.to_string()).collect()),
        Some(list) => {
            for name in list {
                if !SUITES.contains(&name.as_str()) {
                    return Err(Error::invalid(
                        "known suite names",
                        format!("unknown suite {name:?}; known: {}", SUITES.join(", ")),
                    ));
                }
            }
            Ok(list.to_vec())
        }
    }
}

struct Ctx<'a> {
    prob: &'a ProblemSpec,
    opts: &'a VerifyOptions,
    scheme: Option<std::result::Result<SchemeReport, String>>,
}

impl Ctx<'_> {
    fn scheme(&mut self) -> std::result::Result<&SchemeReport, String> {
        if self.scheme.is_none() {
            let mut so = self.opts.scheme.clone();
            so.keep_iterates = true;
            let r = match run_scheme(self.prob, &so, &self.opts.solver) {
                Ok(r) => Ok(r),
                Err(Error::ScheduleExhausted { report, .. }) => Ok(*report),
                Err(e) => Err(e.to_string()),
            };
            self.scheme = Some(r);
        }
        self.scheme.as_ref().expect("just set").as_ref().map_err(Clone::clone)
    }
}

fn row(
    suite: &str,
    invariant: impl Into<String>,
    value: Option<f64>,
    threshold: Option<f64>,
    passed: bool,
) -> VerifyRow {
    VerifyRow {
        suite: suite.into(),
        invariant: invariant.into(),
        value,
        threshold,
        passed,
        detail: String::new(),
    }
}

fn upper(suite: &str, invariant: impl Into<String>, value: f64, threshold: f64) -> VerifyRow {
    row(suite, invariant, Some(value), Some(threshold), value <= threshold)
}

fn failure(suite: &str, invariant: &str, detail: String) -> VerifyRow {
    VerifyRow {
        detail,
        ..row(suite, invariant, None, None, false)
    }
}

/// Runs the selected suites; suite failures become rows, never errors.
pub fn run_verify(prob: &ProblemSpec, suites: &[String], opts: &VerifyOptions) -> Result<VerifyReport> {
    let faulty;
    let prob = match opts.fault {
        None => prob,
        Some(Fault::DivergenceSignFlip) => {
            faulty = ProblemSpec::new(
                prob.calc().clone().with_divergence_sign_flip(),
                prob.p(),
                prob.delta(),
                prob.source().clone(),
            )?;
            &faulty
        }
    };
    let mut ctx = Ctx {
        prob,
        opts,
        scheme: None,
    };
    let mut rows = Vec::new();
    for name in suites {
        match name.as_str() {
            "pairing" => rows.extend(pairing_suite(prob, opts)),
            "duality" => rows.extend(duality(prob, opts)),
            "gradient" => rows.extend(gradient(prob, opts)),
            "chain" => rows.extend(chain(&mut ctx)),
            "test_bound" => rows.extend(test_bound(&mut ctx)),
            "best_constant" => rows.extend(best_constant(&mut ctx)),
            "uniqueness" => rows.extend(uniqueness(&mut ctx)),
            other => {
                return Err(Error::invalid("known suite names", format!("unknown suite {other:?}")));
            }
        }
    }
    let passed = rows.iter().all(|r| r.passed);
    Ok(VerifyReport {
        suites: suites.to_vec(),
        rows,
        passed,
    })
}

fn pairing_suite(prob: &ProblemSpec, opts: &VerifyOptions) -> Vec<VerifyRow> {
    let n1 = prob.calc().n_fields();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.solver.seed ^ 0x23);
    let mut rows = Vec::new();
    for p in [1.5, 2.0, 3.0, 4.0] {
        let mut min_pairing = f64::INFINITY;
        let mut c_hat = f64::INFINITY;
        for _ in 0..10_000 {
            let scale_a = rng.gen_range(-3.0f64..3.0).exp();
            let scale_b = rng.gen_range(-3.0f64..3.0).exp();
            let a: Vec<f64> = (0..n1).map(|_| scale_a * rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n1).map(|_| scale_b * rng.gen_range(-1.0..1.0)).collect();
            if a == b {
                continue;
            }
            min_pairing = min_pairing.min(monotone_pairing(&a, &b, p));
            if let Some(r) = pairing_ratio(&a, &b, p) {
                c_hat = c_hat.min(r);
            }
        }
        rows.push(row(
            "pairing",
            format!("pairing > 0 for a != b (p = {p})"),
            Some(min_pairing),
            Some(0.0),
            min_pairing > 0.0,
        ));
        rows.push(row(
            "pairing",
            format!("empirical C(p) > 0 (p = {p})"),
            Some(c_hat),
            Some(0.0),
            c_hat > 0.0,
        ));
    }
    rows
}

fn duality(prob: &ProblemSpec, opts: &VerifyOptions) -> Vec<VerifyRow> {
    let calc = prob.calc();
    let grid = prob.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.solver.seed ^ 0xd0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let u = GridFunction::from_values((0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("finite");
        let v = HorizontalSection::from_values(
            calc.n_fields(),
            (0..calc.n_samples() * calc.n_fields())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        )
        .expect("consistent length");
        let gu = calc.gradient(&u);
        let lhs = calc.section_inner(&gu, &v);
        let rhs = -inner(grid, &u, &calc.divergence(&v));
        let scale = (calc.section_inner(&gu, &gu) * calc.section_inner(&v, &v)).sqrt();
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    vec![upper(
        "duality",
        "<grad u, V> = -<u, div V> (relative)",
        worst,
        DUALITY_TOL,
    )]
}

fn gradient(prob: &ProblemSpec, opts: &VerifyOptions) -> Vec<VerifyRow> {
    let grid = prob.grid();
    let nu = prob.calc().group().hom_dim() as f64;
    let euclidean = prob.calc().group().kind() == GroupKind::Euclidean;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.solver.seed ^ 0x9a);
    let mut rows = Vec::new();
    for p in [1.5, 2.0, 3.0] {
        if !euclidean && p >= nu {
            rows.push(VerifyRow {
                detail: format!("p = {p} is not below nu = {nu}"),
                ..row(
                    "gradient",
                    format!("first variation vs central differences (p = {p})"),
                    None,
                    None,
                    true,
                )
            });
            continue;
        }
        let Ok(pp) = ProblemSpec::new(prob.calc().clone(), p, prob.delta(), prob.source().clone()) else {
            rows.push(failure("gradient", "problem rebuild", format!("p = {p}")));
            continue;
        };
        let energies = [
            ("auxiliary", Energy::auxiliary(prob.source().clone())),
            ("regularized n=4", Energy::regularized(&pp, 4)),
            ("singular", Energy::Singular),
        ];
        for (name, energy) in &energies {
            let positive = matches!(energy, Energy::Singular);
            let mut worst = 0.0f64;
            for _ in 0..opts.trials {
                let (lo, hi) = if positive { (0.5, 1.5) } else { (-1.0, 1.0) };
                let u = GridFunction::from_values((0..grid.len()).map(|_| rng.gen_range(lo..hi)).collect())
                    .expect("finite");
                let phi = GridFunction::from_values((0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .expect("finite");
                let eps = 1e-5;
                let fd = (energy.value(&pp, &u.add_scaled(eps, &phi)) - energy.value(&pp, &u.add_scaled(-eps, &phi)))
                    / (2.0 * eps);
                let g = energy.first_variation(&pp, &u);
                let an = inner(grid, &g, &phi);
                // relative to the Cauchy-Schwarz bound of the pairing
                let scale = l2_norm(grid, &g) * l2_norm(grid, &phi);
                worst = worst.max((fd - an).abs() / scale.max(f64::MIN_POSITIVE));
            }
            rows.push(upper(
                "gradient",
                format!("first variation vs central differences ({name}, p = {p})"),
                worst,
                GRADIENT_TOL,
            ));
        }
    }
    rows
}

fn chain(ctx: &mut Ctx) -> Vec<VerifyRow> {
    let prob = ctx.prob;
    let trials = ctx.opts.trials;
    let seed = ctx.opts.solver.seed;
    let r = match ctx.scheme() {
        Ok(r) => r,
        Err(e) => return vec![failure("chain", "scheme run", e)],
    };
    let mut rows: Vec<VerifyRow> = r
        .checks
        .iter()
        .map(|c| row("chain", c.name.clone(), c.value, Some(c.threshold), c.passed))
        .collect();
    rows.push(row(
        "chain",
        "Cauchy test on the last schedule step",
        r.records.last().and_then(|x| x.cauchy_gap),
        Some(r.cauchy_threshold),
        r.converged,
    ));
    let pairs_ok = r
        .iterates
        .windows(2)
        .zip(&r.schedule)
        .all(|(w, &n)| check_energy_comparison(prob, &w[0], &w[1], n));
    rows.push(row(
        "chain",
        "energy comparison with phi = u_{n+1}",
        None,
        None,
        pairs_ok,
    ));
    if let (Some(last), Some(&n)) = (r.iterates.last(), r.schedule.last()) {
        let tests = random_tests(prob.grid(), trials.min(50), seed ^ 0x91).unwrap_or_default();
        let held = tests
            .iter()
            .filter(|phi| check_energy_comparison(prob, last, phi, n))
            .count();
        rows.push(VerifyRow {
            detail: format!("{held}/{} random phi", tests.len()),
            ..row(
                "chain",
                "energy comparison with random phi",
                None,
                None,
                held == tests.len(),
            )
        });
    }
    let scale = prob.norm(&r.u_delta).powf(prob.p() - 1.0).max(1.0);
    rows.push(upper(
        "chain",
        "weak residual of u_delta on bump tests",
        r.limit.weak_residual / scale,
        WEAK_RESIDUAL_TOL,
    ));
    rows.push(upper(
        "chain",
        "||u_delta||^p = int u_delta^(1-delta) f",
        r.limit.identity_gap.abs() / r.limit.identity_scale,
        IDENTITY_TOL,
    ));
    rows
}

fn test_bound(ctx: &mut Ctx) -> Vec<VerifyRow> {
    let prob = ctx.prob;
    let (trials, seed) = (ctx.opts.trials, ctx.opts.solver.seed);
    let r = match ctx.scheme() {
        Ok(r) => r,
        Err(e) => return vec![failure("test_bound", "scheme run", e)],
    };
    let u = &r.u_delta;
    if u.values()
        .iter()
        .zip(prob.source().values())
        .any(|(&v, &f)| f > 0.0 && v <= 0.0)
    {
        return vec![failure(
            "test_bound",
            "u_delta > 0 on supp f",
            "u_delta vanishes where f > 0".into(),
        )];
    }
    let src = prob
        .source()
        .zip_map(u, |f, v| if f == 0.0 { 0.0 } else { f * v.powf(-prob.delta()) });
    let bound = prob.norm(u).powf(prob.p() - 1.0);
    let tests = random_tests(prob.grid(), trials, seed ^ 0x32).unwrap_or_default();
    let worst = tests
        .iter()
        .map(|psi| inner(prob.grid(), &src, psi).abs() / (bound * prob.norm(psi)))
        .fold(0.0, f64::max);
    vec![upper(
        "test_bound",
        "|<f u^-delta, psi>| <= ||u||^(p-1) ||psi|| (ratio)",
        worst,
        1.0 + TEST_BOUND_TOL,
    )]
}

fn best_constant(ctx: &mut Ctx) -> Vec<VerifyRow> {
    let prob = ctx.prob;
    let (bo, so) = (ctx.opts.best_constant.clone(), ctx.opts.solver.clone());
    let r = match ctx.scheme() {
        Ok(r) => r,
        Err(e) => return vec![failure("best_constant", "scheme run", e)],
    };
    let rep = match best_constant_report(prob, &r.u_delta, &bo, &so) {
        Ok((rep, _)) => rep,
        Err(e) => return vec![failure("best_constant", "best constant computation", e.to_string())],
    };
    let mut rows = vec![upper(
        "best_constant",
        "mu_formula = mu_direct (relative gap)",
        rep.relative_gap,
        rep.gap_tolerance,
    )];
    for s in &rep.sweep {
        rows.push(VerifyRow {
            detail: format!(
                "{}/{} random v hold, extremal holds: {}",
                s.held, s.trials, s.extremal_holds
            ),
            ..row(
                "best_constant",
                format!("iff sweep at S = {} mu", s.multiplier),
                None,
                None,
                s.passed,
            )
        });
    }
    rows.push(row(
        "best_constant",
        "R(U_delta) <= R(v) for random v",
        Some(rep.minimality_margin),
        Some(-1e-6),
        rep.minimality_margin >= -1e-6,
    ));
    let ext_scale = rep.extremal_energy.abs().max(1e-300);
    rows.push(upper(
        "best_constant",
        "||U_delta||^p = ||u_delta||^(p(1-delta-p)/(1-delta))",
        rep.extremal_gap.abs() / ext_scale,
        IDENTITY_TOL,
    ));
    rows
}

fn uniqueness(ctx: &mut Ctx) -> Vec<VerifyRow> {
    let prob = ctx.prob;
    let opts = ctx.opts.clone();
    let first = match ctx.scheme() {
        Ok(r) => r.u_delta.clone(),
        Err(e) => return vec![failure("uniqueness", "scheme run", e)],
    };
    // a second run: another schedule ending at the same n, another start
    let last = *opts.scheme.schedule.last().expect("validated schedule");
    let mut schedule: Vec<u64> = std::iter::successors(Some(1u64), |n| Some(n * 3))
        .take_while(|&n| n < last)
        .collect();
    schedule.push(last);
    let start = match solve_auxiliary(prob, &truncate_source(prob.source(), 1).scaled(3.0), &opts.solver) {
        Ok(s) => s,
        Err(e) => return vec![failure("uniqueness", "second start", e.to_string())],
    };
    let so = SchemeOptions {
        schedule,
        start: Some(start),
        keep_iterates: false,
        ..opts.scheme.clone()
    };
    let second = match run_scheme(prob, &so, &opts.solver) {
        Ok(r) => r.u_delta,
        Err(Error::ScheduleExhausted { report, .. }) => report.u_delta,
        Err(e) => return vec![failure("uniqueness", "second scheme run", e.to_string())],
    };
    vec![upper(
        "uniqueness",
        "two schedules and starts agree on u_delta (max norm)",
        first.max_abs_diff(&second),
        UNIQUENESS_TOL,
    )]
}
