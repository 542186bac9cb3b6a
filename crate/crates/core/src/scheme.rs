//! The monotone regularization scheme: auxiliary start, the approximated
//! problems along an increasing `n` schedule, the limit `u_delta`, and the
//! audit of every inequality the construction promises.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{integrate, l2_norm, DomainShape, Grid, GridFunction};
use crate::variational::{minimize, truncate_source, Energy, ProblemSpec, SolverConfig, StopReason};

/// Relative slack of the pointwise monotonicity check.
pub const MONOTONE_TOL: f64 = 1e-8;
/// Absolute slack of the norm monotonicity check.
pub const NORM_TOL: f64 = 1e-10;
/// Relative sup-norm change allowed over the last two schedule steps.
pub const SUP_TOL: f64 = 1e-3;
/// Relative slack of the energy comparison checks on iterates.
pub const COMPARISON_TOL: f64 = 1e-8;

/// `1, 2, 4, ..., n_max` (with `n_max` appended if it is not a power of 2).
pub fn doubling_schedule(n_max: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut n = 1u64;
    while n < n_max {
        out.push(n);
        n *= 2;
    }
    out.push(n_max.max(1));
    out
}

fn validate_schedule(schedule: &[u64]) -> Result<()> {
    if schedule.is_empty() {
        return Err(Error::invalid("n_schedule nonempty", "the schedule has no entries"));
    }
    if schedule[0] == 0 {
        return Err(Error::invalid("n >= 1", "the schedule starts at 0"));
    }
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("n_schedule increasing", format!("{schedule:?}")));
    }
    Ok(())
}

/// Solves `-div_H(|grad_H u|^{p-2} grad_H u) = g` by minimizing the auxiliary energy.
pub fn solve_auxiliary(prob: &ProblemSpec, g: &GridFunction, cfg: &SolverConfig) -> Result<GridFunction> {
    if g.len() != prob.grid().len() || !g.is_finite() {
        return Err(Error::invalid(
            "finite grid values",
            "g must be a finite grid function on the problem grid",
        ));
    }
    if g.min() < 0.0 {
        return Err(Error::invalid("g >= 0", format!("min g = {}", g.min())));
    }
    if g.max() == 0.0 {
        return Err(Error::invalid(
            "g not identically zero",
            "the auxiliary source vanishes",
        ));
    }
    let energy = Energy::auxiliary(g.clone());
    Ok(minimize(prob, &energy, GridFunction::zeros(prob.grid()), cfg)?.u)
}

/// One approximated solution `u_n` and its solver diagnostics.
#[derive(Clone, Debug)]
pub struct Approximation {
    pub n: u64,
    pub u: GridFunction,
    pub energy: f64,
    /// Grid `L^2` norm of the first variation of `J_n`.
    pub variation_norm: f64,
    /// Max-norm of `p_laplacian(u_n) - f_n/(u_n+ + 1/n)^delta`.
    pub strong_residual: f64,
    pub iterations: usize,
}

/// Minimizes `J_n` from `warm`.
pub fn solve_approximated(
    prob: &ProblemSpec,
    n: u64,
    warm: &GridFunction,
    cfg: &SolverConfig,
) -> Result<Approximation> {
    if n == 0 {
        return Err(Error::invalid("n >= 1", "got n = 0"));
    }
    if warm.len() != prob.grid().len() || warm.min() < 0.0 {
        return Err(Error::invalid(
            "warm start >= 0",
            "the warm start must be a nonnegative grid function",
        ));
    }
    let energy = Energy::regularized(prob, n);
    let m = minimize(prob, &energy, warm.clone(), cfg)?;
    let (_, g) = energy.value_and_variation(prob, &m.u);
    Ok(Approximation {
        n,
        energy: m.energy,
        variation_norm: m.variation_norm,
        strong_residual: g.max_abs(),
        iterations: m.log.entries.len() - 1,
        u: m.u,
    })
}

/// How `u_delta` is taken from the last iterate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitMode {
    /// Minimize the singular energy warm-started from the last `u_n`.
    #[default]
    Polish,
    /// Use the last `u_n` as is.
    LastIterate,
}

#[derive(Clone, Debug)]
pub struct SchemeOptions {
    pub schedule: Vec<u64>,
    pub limit: LimitMode,
    /// Probe subdomain for `c(omega)`; defaults to the concentric half of the domain.
    pub probe: Option<DomainShape>,
    /// Number of bump test functions for the weak residual.
    pub tests: usize,
    /// Overrides the auxiliary start for the first schedule entry.
    pub start: Option<GridFunction>,
    pub keep_iterates: bool,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        Self {
            schedule: doubling_schedule(1024),
            limit: LimitMode::Polish,
            probe: None,
            tests: 20,
            start: None,
            keep_iterates: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct NRecord {
    pub n: u64,
    pub norm: f64,
    pub sup_norm: f64,
    pub min_value: f64,
    pub energy: f64,
    pub variation_norm: f64,
    pub strong_residual: f64,
    pub iterations: usize,
    /// `min(u_n - u_prev)`; absent for the first record.
    pub monotonicity_defect: Option<f64>,
    /// `||u_n - u_prev||`; absent for the first record.
    pub cauchy_gap: Option<f64>,
    pub lower_bound: f64,
    /// `||u_n||^p - int f (u_n+)^{1-delta}`, never positive in exact arithmetic.
    pub energy_bound_excess: f64,
    pub weak_residual: f64,
    /// `||u_n - u_delta||`.
    pub gap_to_limit: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitRecord {
    pub mode: LimitMode,
    pub energy: f64,
    pub norm: f64,
    pub sup_norm: f64,
    pub variation_norm: f64,
    pub iterations: usize,
    pub stop_reason: Option<StopReason>,
    pub lower_bound: f64,
    pub weak_residual: f64,
    /// `||u_delta||^p - int u_delta^{1-delta} f`.
    pub identity_gap: f64,
    pub identity_scale: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    /// Measured quantity; absent when the check is vacuous.
    pub value: Option<f64>,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn upper(name: &str, value: Option<f64>, threshold: f64) -> Self {
        Check {
            name: name.into(),
            passed: value.is_none_or(|v| v <= threshold),
            value,
            threshold,
        }
    }

    fn lower(name: &str, value: Option<f64>, threshold: f64) -> Self {
        Check {
            name: name.into(),
            passed: value.is_none_or(|v| v >= threshold),
            value,
            threshold,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SchemeReport {
    pub schedule: Vec<u64>,
    pub records: Vec<NRecord>,
    pub limit: LimitRecord,
    pub converged: bool,
    pub cauchy_threshold: f64,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub u_delta: GridFunction,
    #[serde(skip)]
    pub iterates: Vec<GridFunction>,
}

impl SchemeReport {
    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn all_passed(&self) -> bool {
        self.first_failure().is_none()
    }

    /// Per-n table as CSV.
    pub fn write_convergence_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record([
            "n",
            "norm",
            "sup_norm",
            "min_value",
            "energy",
            "variation_norm",
            "strong_residual",
            "iterations",
            "monotonicity_defect",
            "cauchy_gap",
            "lower_bound",
            "energy_bound_excess",
            "weak_residual",
            "gap_to_limit",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.n.to_string(),
                r.norm.to_string(),
                r.sup_norm.to_string(),
                r.min_value.to_string(),
                r.energy.to_string(),
                r.variation_norm.to_string(),
                r.strong_residual.to_string(),
                r.iterations.to_string(),
                opt(r.monotonicity_defect),
                opt(r.cauchy_gap),
                r.lower_bound.to_string(),
                r.energy_bound_excess.to_string(),
                r.weak_residual.to_string(),
                r.gap_to_limit.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `min u` over the nodes of `omega`.
pub fn interior_lower_bound(grid: &Grid, u: &GridFunction, omega: &DomainShape) -> Result<f64> {
    let nodes = grid.nodes_in(omega);
    if nodes.is_empty() {
        return Err(Error::invalid(
            "probe subdomain nonempty",
            format!("no grid nodes in {omega:?}"),
        ));
    }
    Ok(nodes.iter().map(|&k| u.values()[k]).fold(f64::INFINITY, f64::min))
}

/// Measure of `{u >= k}`.
pub fn level_set_measure(grid: &Grid, u: &GridFunction, k: f64) -> f64 {
    grid.cell_volume() * u.values().iter().filter(|&&v| v >= k).count() as f64
}

/// The standard probe: concentric half of the domain.
pub fn default_probe(grid: &Grid) -> Result<DomainShape> {
    grid.shape().concentric_half().ok_or_else(|| {
        Error::invalid(
            "probe subdomain given",
            "predicate domains need an explicit probe subdomain",
        )
    })
}

/// Seeded smooth bumps `prod_j (1 - ((x_j - c_j)/r_j)^2)+^2`, cut off outside `omega`.
pub fn bump_tests(grid: &Grid, omega: &DomainShape, count: usize, seed: u64) -> Result<Vec<GridFunction>> {
    let nodes = grid.nodes_in(omega);
    if nodes.is_empty() {
        return Err(Error::invalid(
            "probe subdomain nonempty",
            format!("no grid nodes in {omega:?}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = grid.dim();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let c = grid.node(nodes[rng.gen_range(0..nodes.len())]).to_vec();
        let r: Vec<f64> = (0..dim)
            .map(|j| {
                let h = grid.spacing()[j];
                let span = 0.25 * (grid.hi()[j] - grid.lo()[j]);
                rng.gen_range(2.0 * h..(2.0 * h).max(span) + h)
            })
            .collect();
        out.push(GridFunction::from_fn(grid, |x| {
            if !omega.contains(x) {
                return 0.0;
            }
            (0..dim)
                .map(|j| {
                    let s = (x[j] - c[j]) / r[j];
                    let b = (1.0 - s * s).max(0.0);
                    b * b
                })
                .product()
        }));
    }
    Ok(out)
}

/// `max_phi |<flux(u), grad phi> - <f u^{-delta}, phi>| / ||phi||` over the tests.
pub fn weak_residual(prob: &ProblemSpec, u: &GridFunction, phis: &[GridFunction]) -> Result<f64> {
    let calc = prob.calc();
    let flux = calc.flux(&calc.gradient(u), prob.p());
    let f = prob.source();
    let mut worst = 0.0f64;
    for (i, phi) in phis.iter().enumerate() {
        let supported_ok = phi
            .values()
            .iter()
            .zip(u.values())
            .zip(f.values())
            .all(|((&ph, &uv), &fv)| ph == 0.0 || fv == 0.0 || uv > 0.0);
        if !supported_ok {
            return Err(Error::Precondition(format!(
                "test function {i} is supported where u is not positive"
            )));
        }
        let norm = prob.norm(phi);
        if norm == 0.0 {
            continue;
        }
        let lhs = calc.section_inner(&flux, &calc.gradient(phi));
        let src = f.zip_map(u, |fv, uv| if fv == 0.0 { 0.0 } else { fv * uv.powf(-prob.delta()) });
        let rhs = crate::grid::inner(prob.grid(), &src, phi);
        worst = worst.max((lhs - rhs).abs() / norm);
    }
    Ok(worst)
}

/// `||u_n||^p <= ||phi||^p + p int (u_n - phi) f_n / (u_n+ + 1/n)^delta`, within
/// `COMPARISON_TOL` relative to the largest term.
pub fn check_energy_comparison(prob: &ProblemSpec, u_n: &GridFunction, phi: &GridFunction, n: u64) -> bool {
    let p = prob.p();
    let lhs = prob.dirichlet_energy(u_n);
    let phi_e = prob.dirichlet_energy(phi);
    let f_n = truncate_source(prob.source(), n);
    let inv_n = 1.0 / n as f64;
    let w = GridFunction::from_vec_unchecked(
        (0..u_n.len())
            .map(|k| {
                let un = u_n.values()[k];
                f_n.values()[k] * (un - phi.values()[k]) * (un.max(0.0) + inv_n).powf(-prob.delta())
            })
            .collect(),
    );
    let integral = integrate(prob.grid(), &w);
    let rhs = phi_e + p * integral;
    let scale = lhs.abs().max(phi_e.abs()).max((p * integral).abs()).max(1e-300);
    lhs <= rhs + COMPARISON_TOL * scale
}

/// `int f (u+)^{1-delta}`.
pub fn constraint_integral(prob: &ProblemSpec, u: &GridFunction) -> f64 {
    let e = 1.0 - prob.delta();
    let w = u.zip_map(
        prob.source(),
        |uv, fv| if fv == 0.0 { 0.0 } else { fv * uv.max(0.0).powf(e) },
    );
    integrate(prob.grid(), &w)
}

fn sobolev_gap(prob: &ProblemSpec, a: &GridFunction, b: &GridFunction) -> f64 {
    prob.norm(&a.add_scaled(-1.0, b))
}

/// Runs the schedule with warm starts, takes the limit and audits the iterates.
///
/// The whole schedule is always run; the Cauchy test is applied to its last
/// two entries. Failing it returns [`Error::ScheduleExhausted`] with the report.
pub fn run_scheme(prob: &ProblemSpec, opts: &SchemeOptions, cfg: &SolverConfig) -> Result<SchemeReport> {
    validate_schedule(&opts.schedule)?;
    cfg.validate()?;
    let grid = prob.grid();
    let probe = match &opts.probe {
        Some(p) => p.clone(),
        None => default_probe(grid)?,
    };
    if grid.nodes_in(&probe).is_empty() {
        return Err(Error::invalid(
            "probe subdomain nonempty",
            format!("no grid nodes in {probe:?}"),
        ));
    }
    let tests = bump_tests(grid, &probe, opts.tests, cfg.seed)?;

    let mut current = match &opts.start {
        Some(u0) => {
            if u0.len() != grid.len() || u0.min() < 0.0 {
                return Err(Error::invalid(
                    "warm start >= 0",
                    "the start must be a nonnegative grid function",
                ));
            }
            u0.clone()
        }
        None => solve_auxiliary(prob, &truncate_source(prob.source(), opts.schedule[0]), cfg)?,
    };

    let mut approx = Vec::with_capacity(opts.schedule.len());
    for &n in &opts.schedule {
        let a = solve_approximated(prob, n, &current, cfg)?;
        current = a.u.clone();
        approx.push(a);
    }

    let last = approx.last().expect("schedule is nonempty");
    let (u_delta, limit_energy, limit_norm, limit_iters, limit_reason) = match opts.limit {
        LimitMode::LastIterate => {
            let (e, g) = Energy::Singular.value_and_variation(prob, &last.u);
            (last.u.clone(), e, l2_norm(grid, &g), 0, None)
        }
        LimitMode::Polish => {
            let m = minimize(prob, &Energy::Singular, last.u.clone(), cfg)?;
            let iters = m.log.entries.len() - 1;
            (m.u, m.energy, m.variation_norm, iters, Some(m.reason))
        }
    };

    let mut records = Vec::with_capacity(approx.len());
    for (i, a) in approx.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| &approx[j].u);
        let u = &a.u;
        let weak = if u
            .values()
            .iter()
            .zip(prob.source().values())
            .all(|(&v, &f)| f == 0.0 || v > 0.0)
        {
            weak_residual(prob, u, &tests)?
        } else {
            f64::INFINITY
        };
        records.push(NRecord {
            n: a.n,
            norm: prob.norm(u),
            sup_norm: u.max_abs(),
            min_value: u.min(),
            energy: a.energy,
            variation_norm: a.variation_norm,
            strong_residual: a.strong_residual,
            iterations: a.iterations,
            monotonicity_defect: prev.map(|pu| u.zip_map(pu, |x, y| x - y).min()),
            cauchy_gap: prev.map(|pu| sobolev_gap(prob, u, pu)),
            lower_bound: interior_lower_bound(grid, u, &probe)?,
            energy_bound_excess: prob.dirichlet_energy(u) - constraint_integral(prob, u),
            weak_residual: weak,
            gap_to_limit: sobolev_gap(prob, u, &u_delta),
        });
    }

    let identity_lhs = prob.dirichlet_energy(&u_delta);
    let identity_rhs = constraint_integral(prob, &u_delta);
    let limit_positive = u_delta
        .values()
        .iter()
        .zip(prob.source().values())
        .all(|(&v, &f)| f == 0.0 || v > 0.0);
    let limit = LimitRecord {
        mode: opts.limit,
        energy: limit_energy,
        norm: prob.norm(&u_delta),
        sup_norm: u_delta.max_abs(),
        variation_norm: limit_norm,
        iterations: limit_iters,
        stop_reason: limit_reason,
        lower_bound: interior_lower_bound(grid, &u_delta, &probe)?,
        weak_residual: if limit_positive {
            weak_residual(prob, &u_delta, &tests)?
        } else {
            f64::INFINITY
        },
        identity_gap: identity_lhs - identity_rhs,
        identity_scale: identity_lhs.abs().max(identity_rhs.abs()).max(1.0),
    };

    let checks = audit(&records, &limit, prob.p());
    let (cauchy_gap, cauchy_threshold) = match records.len() {
        0 | 1 => (None, 0.0),
        k => {
            let prev_norm = records[k - 2].norm;
            (records[k - 1].cauchy_gap, cfg.scheme_tol * prev_norm.max(1.0))
        }
    };
    let converged = cauchy_gap.is_none_or(|g| g <= cauchy_threshold);
    let report = SchemeReport {
        schedule: opts.schedule.clone(),
        records,
        limit,
        converged,
        cauchy_threshold,
        checks,
        iterates: if opts.keep_iterates {
            approx.into_iter().map(|a| a.u).collect()
        } else {
            Vec::new()
        },
        u_delta,
    };
    if !converged {
        return Err(Error::ScheduleExhausted {
            last_gap: cauchy_gap.unwrap_or(f64::NAN),
            threshold: cauchy_threshold,
            report: Box::new(report),
        });
    }
    Ok(report)
}

fn audit(records: &[NRecord], limit: &LimitRecord, p: f64) -> Vec<Check> {
    let pairs = || records.windows(2);
    let monotone = pairs()
        .map(|w| w[1].monotonicity_defect.unwrap_or(0.0) / w[1].sup_norm.max(f64::MIN_POSITIVE))
        .reduce(f64::min);
    let norm_drop = pairs().map(|w| w[0].norm - w[1].norm).reduce(f64::max);
    let excess = records
        .iter()
        .map(|r| r.energy_bound_excess / r.norm.powf(p).max(1.0))
        .reduce(f64::max);
    let sup_change = match records {
        [.., a, b] => Some((b.sup_norm - a.sup_norm).abs() / b.sup_norm.max(f64::MIN_POSITIVE)),
        _ => None,
    };
    // the distance to the limit should shrink along the tail of the schedule
    let tail = &records[records.len().saturating_sub(3)..];
    let tail_increase = tail
        .windows(2)
        .map(|w| w[1].gap_to_limit - w[0].gap_to_limit)
        .reduce(f64::max);
    let lower_drop = pairs().map(|w| w[0].lower_bound - w[1].lower_bound).reduce(f64::max);
    vec![
        Check::lower("pointwise monotonicity u_{n+1} >= u_n", monotone, -MONOTONE_TOL),
        Check::upper("norm monotonicity ||u_n|| <= ||u_{n+1}||", norm_drop, NORM_TOL),
        Check::upper(
            "uniform energy bound ||u_n||^p <= int f u_n^(1-delta)",
            excess,
            COMPARISON_TOL,
        ),
        Check::upper("sup-norm stabilization", sup_change, SUP_TOL),
        Check::upper("probe lower bound nondecreasing", lower_drop, MONOTONE_TOL),
        Check::upper("strong convergence proxy", tail_increase, 0.0),
        Check::lower("positivity c(omega) > 0", Some(limit.lower_bound), f64::MIN_POSITIVE),
    ]
}
