//! Discrete energies, their first variations, and a deterministic descent
//! minimizer.
//!
//! First variations are taken in the grid inner product `<u, v> = sum u v dV`,
//! so `E(u + eps phi) = E(u) + eps <G, phi> + o(eps)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calculus::HorizontalCalculus;
use crate::error::{Error, Result};
use crate::grid::{integrate, l2_norm, Grid, GridFunction};
use crate::group::GroupKind;
use crate::par;

/// Problem data for the singular equation on one grid.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    calc: HorizontalCalculus,
    p: f64,
    delta: f64,
    f: GridFunction,
}

impl ProblemSpec {
    /// Validates `0 < delta < 1 < p < nu`, `f >= 0` and `int f > 0`.
    ///
    /// On the Euclidean group `p >= nu` is admitted: that case only serves as
    /// a cross-check, and there the energy space embeds in `L^inf`.
    pub fn new(calc: HorizontalCalculus, p: f64, delta: f64, f: GridFunction) -> Result<Self> {
        let prob = Self::relaxed(calc, p, delta, f)?;
        if !(integrate(prob.grid(), &prob.f) > 0.0) {
            return Err(Error::invalid("f not identically zero", "the source integrates to 0"));
        }
        Ok(prob)
    }

    /// Same checks as [`ProblemSpec::new`] except that `f = 0` is allowed.
    /// Only for degenerate-case checks.
    pub fn relaxed(calc: HorizontalCalculus, p: f64, delta: f64, f: GridFunction) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("delta ∈ (0,1)", format!("got delta = {delta}")));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::invalid("p > 1", format!("got p = {p}")));
        }
        let nu = calc.group().hom_dim();
        if calc.group().kind() != GroupKind::Euclidean && !(p < nu as f64) {
            return Err(Error::invalid(
                "1 < p < nu (Sobolev embedding hypothesis)",
                format!("got p = {p}, nu = {nu}"),
            ));
        }
        if f.len() != calc.grid().len() {
            return Err(Error::invalid("source length", "f does not match the grid"));
        }
        if !f.is_finite() {
            return Err(Error::invalid("finite grid values", "f has non-finite entries"));
        }
        if f.min() < 0.0 {
            return Err(Error::invalid("f >= 0", format!("min f = {}", f.min())));
        }
        Ok(Self { calc, p, delta, f })
    }

    pub fn calc(&self) -> &HorizontalCalculus {
        &self.calc
    }

    pub fn grid(&self) -> &Grid {
        self.calc.grid()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn source(&self) -> &GridFunction {
        &self.f
    }

    /// Copy with another source, revalidated.
    pub fn with_source(&self, f: GridFunction) -> Result<Self> {
        Self::new(self.calc.clone(), self.p, self.delta, f)
    }

    /// `||u||^p`.
    pub fn dirichlet_energy(&self, u: &GridFunction) -> f64 {
        self.calc.dirichlet_energy(u, self.p)
    }

    /// `||u|| = ||grad_H u||_{L^p}`.
    pub fn norm(&self, u: &GridFunction) -> f64 {
        self.dirichlet_energy(u).powf(1.0 / self.p)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Stop when the grid `L^2` norm of the first variation drops below this.
    pub grad_tol: f64,
    /// Stop when the relative energy decrease stays below this for a few steps.
    pub energy_tol: f64,
    pub max_iters: usize,
    pub armijo_c1: f64,
    pub backtrack: f64,
    /// L-BFGS history length; 0 gives plain steepest descent.
    pub memory: usize,
    /// Cauchy threshold of the n-loop: `||u_2n - u_n|| <= scheme_tol max(1, ||u_n||)`.
    pub scheme_tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-9,
            energy_tol: 1e-24,
            max_iters: 100_000,
            armijo_c1: 1e-4,
            backtrack: 0.5,
            memory: 12,
            scheme_tol: 1e-2,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.grad_tol) || !positive(self.energy_tol) || !positive(self.scheme_tol) {
            return Err(Error::invalid(
                "tolerances > 0",
                "grad_tol, energy_tol and scheme_tol must be positive",
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters >= 1", "max_iters is 0"));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) || !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::invalid(
                "armijo parameters in (0,1)",
                "c1 and backtrack must lie in (0,1)",
            ));
        }
        Ok(())
    }
}

/// `H_n(t) = (t+ + 1/n)^{1-delta}/(1-delta) - n^delta t-`, with `t- = max(-t, 0)`.
pub fn barrier_h(t: f64, n: u64, delta: f64) -> f64 {
    let inv_n = 1.0 / n as f64;
    let pos = t.max(0.0);
    let neg = (-t).max(0.0);
    (pos + inv_n).powf(1.0 - delta) / (1.0 - delta) - inv_n.powf(-delta) * neg
}

/// `H_n'(t)`: `(t + 1/n)^{-delta}` for `t >= 0`, `n^delta` for `t < 0`.
pub fn barrier_h_prime(t: f64, n: u64, delta: f64) -> f64 {
    (t.max(0.0) + 1.0 / n as f64).powf(-delta)
}

/// `f_n = min(f, n)`.
pub fn truncate_source(f: &GridFunction, n: u64) -> GridFunction {
    let cap = n as f64;
    f.map(|v| v.min(cap))
}

/// The three energies of the construction.
#[derive(Clone, Debug)]
pub enum Energy {
    /// `I(u) = ||u||^p / p - int g u`.
    Auxiliary { source: GridFunction },
    /// `J_n(u) = ||u||^p / p - int H_n(u) f_n`.
    Regularized { n: u64, truncated: GridFunction },
    /// `J_delta(u) = ||u||^p / p - int (u+)^{1-delta} f / (1 - delta)`.
    Singular,
}

impl Energy {
    pub fn auxiliary(source: GridFunction) -> Self {
        Energy::Auxiliary { source }
    }

    pub fn regularized(prob: &ProblemSpec, n: u64) -> Self {
        Energy::Regularized {
            n,
            truncated: truncate_source(prob.source(), n),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Energy::Auxiliary { .. } => "auxiliary",
            Energy::Regularized { .. } => "regularized",
            Energy::Singular => "singular",
        }
    }

    /// The singular energy is only minimized over `u > 0` where `f > 0`.
    pub fn admissible(&self, prob: &ProblemSpec, u: &GridFunction) -> bool {
        match self {
            Energy::Singular => u
                .values()
                .iter()
                .zip(prob.source().values())
                .all(|(&v, &f)| f == 0.0 || v > 0.0),
            _ => true,
        }
    }

    fn source_integral(&self, prob: &ProblemSpec, u: &GridFunction) -> f64 {
        let v = u.values();
        let sum = match self {
            Energy::Auxiliary { source } => {
                let g = source.values();
                par::sum(v.len(), |k| g[k] * v[k])
            }
            Energy::Regularized { n, truncated } => {
                let f = truncated.values();
                let delta = prob.delta();
                par::sum(v.len(), |k| barrier_h(v[k], *n, delta) * f[k])
            }
            Energy::Singular => {
                let f = prob.source().values();
                let e = 1.0 - prob.delta();
                par::sum(v.len(), |k| v[k].max(0.0).powf(e) * f[k]) / e
            }
        };
        sum * prob.grid().cell_volume()
    }

    /// Derivative of the source term per node.
    fn source_density(&self, prob: &ProblemSpec, u: &GridFunction) -> GridFunction {
        let v = u.values();
        let mut out = vec![0.0; v.len()];
        match self {
            Energy::Auxiliary { source } => out.copy_from_slice(source.values()),
            Energy::Regularized { n, truncated } => {
                let f = truncated.values();
                let delta = prob.delta();
                par::fill(&mut out, |k| f[k] * barrier_h_prime(v[k], *n, delta));
            }
            Energy::Singular => {
                let f = prob.source().values();
                let delta = prob.delta();
                par::fill(&mut out, |k| if v[k] > 0.0 { f[k] * v[k].powf(-delta) } else { 0.0 });
            }
        }
        GridFunction::from_vec_unchecked(out)
    }

    pub fn value(&self, prob: &ProblemSpec, u: &GridFunction) -> f64 {
        prob.dirichlet_energy(u) / prob.p() - self.source_integral(prob, u)
    }

    /// `p_laplacian(u) - source'(u)`.
    pub fn first_variation(&self, prob: &ProblemSpec, u: &GridFunction) -> GridFunction {
        self.value_and_variation(prob, u).1
    }

    pub fn value_and_variation(&self, prob: &ProblemSpec, u: &GridFunction) -> (f64, GridFunction) {
        let calc = prob.calc();
        let p = prob.p();
        let grad = calc.gradient(u);
        let dirichlet = calc.section_energy(&grad, p);
        let flux = calc.flux(&grad, p);
        let div = calc.divergence(&flux);
        let src = self.source_density(prob, u);
        let variation = div.zip_map(&src, |d, s| -d - s);
        (dirichlet / p - self.source_integral(prob, u), variation)
    }
}

pub fn energy_aux(prob: &ProblemSpec, u: &GridFunction, g: &GridFunction) -> f64 {
    Energy::auxiliary(g.clone()).value(prob, u)
}

pub fn energy_jn(prob: &ProblemSpec, u: &GridFunction, n: u64) -> f64 {
    Energy::regularized(prob, n).value(prob, u)
}

pub fn energy_jdelta(prob: &ProblemSpec, u: &GridFunction) -> f64 {
    Energy::Singular.value(prob, u)
}

/// Something the descent loop can minimize. `None` marks an inadmissible
/// point; the line search backs off from it.
pub trait Objective: Sync {
    fn evaluate(&self, u: &GridFunction) -> Option<(f64, GridFunction)>;

    /// `t -> E(u + t d) - E(u)` for the line search. The default differences
    /// two evaluations; implementors should override it with a form that does
    /// not cancel once the change drops below the rounding level of `E`.
    fn line<'a>(&'a self, u: &'a GridFunction, d: &'a GridFunction) -> Box<dyn Fn(f64) -> Option<f64> + 'a> {
        let base = self.evaluate(u).map(|(e, _)| e);
        Box::new(move |t| {
            let trial = u.add_scaled(t, d);
            Some(self.evaluate(&trial)?.0 - base?)
        })
    }
}

/// `(x + y)^e - x^e` for `x > 0`, `x + y >= 0`, without cancellation.
pub(crate) fn pow_change(x: f64, y: f64, e: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    let r = y / x;
    if r <= -1.0 {
        return -x.powf(e);
    }
    x.powf(e) * (e * r.ln_1p()).exp_m1()
}

/// `|a + b|^p - |a|^p` from `|a|^2` and `2 a.b + |b|^2`.
pub(crate) fn norm_pow_change(a2: f64, cross: f64, p: f64) -> f64 {
    if a2 == 0.0 {
        return cross.max(0.0).powf(0.5 * p);
    }
    pow_change(a2, cross, 0.5 * p)
}

/// `H_n(y) - H_n(x)`.
fn barrier_change(x: f64, y: f64, n: u64, delta: f64) -> f64 {
    let inv_n = 1.0 / n as f64;
    let e = 1.0 - delta;
    let slope = inv_n.powf(-delta);
    // piecewise: linear below 0, power above
    let up = |a: f64, b: f64| pow_change(a + inv_n, b - a, e) / e;
    match (x >= 0.0, y >= 0.0) {
        (true, true) => up(x, y),
        (false, false) => slope * (y - x),
        (true, false) => up(x, 0.0) + slope * y,
        (false, true) => -slope * x + up(0.0, y),
    }
}

/// `t -> ||u + t d||^p - ||u||^p` from per-sample dot products.
pub(crate) struct DirichletLine {
    a2: Vec<f64>,
    ab: Vec<f64>,
    b2: Vec<f64>,
    weight: f64,
    p: f64,
}

impl DirichletLine {
    pub(crate) fn new(calc: &HorizontalCalculus, u: &GridFunction, d: &GridFunction, p: f64) -> Self {
        let ga = calc.gradient(u);
        let gb = calc.gradient(d);
        let ns = calc.n_samples();
        let per_sample = |f: &(dyn Fn(&[f64], &[f64]) -> f64 + Sync)| {
            let mut out = vec![0.0; ns];
            par::fill(&mut out, |s| f(ga.sample(s), gb.sample(s)));
            out
        };
        let dotp = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        Self {
            a2: per_sample(&|a, _| dotp(a, a)),
            ab: per_sample(&|a, b| dotp(a, b)),
            b2: per_sample(&|_, b| dotp(b, b)),
            weight: calc.sample_weight(),
            p,
        }
    }

    pub(crate) fn change(&self, t: f64) -> f64 {
        let (a2, ab, b2, p) = (&self.a2, &self.ab, &self.b2, self.p);
        self.weight * par::sum(a2.len(), |s| norm_pow_change(a2[s], t * (2.0 * ab[s] + t * b2[s]), p))
    }
}

impl Energy {
    /// Line function `t -> E(u + t d) - E(u)` evaluated sample by sample.
    pub fn change_along<'a>(
        &'a self,
        prob: &'a ProblemSpec,
        u: &'a GridFunction,
        d: &'a GridFunction,
    ) -> impl Fn(f64) -> Option<f64> + 'a {
        let dl = DirichletLine::new(prob.calc(), u, d, prob.p());
        let p = prob.p();
        let cv = prob.grid().cell_volume();
        move |t: f64| {
            let dirichlet = dl.change(t) / p;
            let uv = u.values();
            let dv = d.values();
            let source = match self {
                Energy::Auxiliary { source } => {
                    let g = source.values();
                    t * par::sum(uv.len(), |k| g[k] * dv[k])
                }
                Energy::Regularized { n, truncated } => {
                    let f = truncated.values();
                    let delta = prob.delta();
                    par::sum(uv.len(), |k| {
                        if f[k] == 0.0 {
                            0.0
                        } else {
                            f[k] * barrier_change(uv[k], uv[k] + t * dv[k], *n, delta)
                        }
                    })
                }
                Energy::Singular => {
                    let f = prob.source().values();
                    let e = 1.0 - prob.delta();
                    let s = par::sum(uv.len(), |k| {
                        if f[k] == 0.0 {
                            return 0.0;
                        }
                        let y = uv[k] + t * dv[k];
                        if !(uv[k] > 0.0 && y > 0.0) {
                            return f64::NAN;
                        }
                        f[k] * pow_change(uv[k], t * dv[k], e) / e
                    });
                    if s.is_nan() {
                        return None;
                    }
                    s
                }
            };
            let change = dirichlet - cv * source;
            change.is_finite().then_some(change)
        }
    }
}

/// An energy bound to its problem.
pub struct EnergyObjective<'a> {
    pub prob: &'a ProblemSpec,
    pub energy: &'a Energy,
}

impl Objective for EnergyObjective<'_> {
    fn evaluate(&self, u: &GridFunction) -> Option<(f64, GridFunction)> {
        if !self.energy.admissible(self.prob, u) {
            return None;
        }
        let (e, g) = self.energy.value_and_variation(self.prob, u);
        e.is_finite().then_some((e, g))
    }

    fn line<'a>(&'a self, u: &'a GridFunction, d: &'a GridFunction) -> Box<dyn Fn(f64) -> Option<f64> + 'a> {
        Box::new(self.energy.change_along(self.prob, u, d))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradTol,
    EnergyStall,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LogEntry {
    pub iter: usize,
    pub energy: f64,
    pub variation_norm: f64,
    pub step: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct IterationLog {
    pub entries: Vec<LogEntry>,
}

impl IterationLog {
    /// Energies never increase along the log.
    pub fn is_nonincreasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].energy <= w[0].energy)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(["iter", "energy", "variation_norm", "step"])?;
        for e in &self.entries {
            w.write_record([
                e.iter.to_string(),
                e.energy.to_string(),
                e.variation_norm.to_string(),
                e.step.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Minimum {
    pub u: GridFunction,
    pub energy: f64,
    pub variation_norm: f64,
    pub reason: StopReason,
    pub log: IterationLog,
}

/// Minimizes `energy` from `u0`.
pub fn minimize(prob: &ProblemSpec, energy: &Energy, u0: GridFunction, cfg: &SolverConfig) -> Result<Minimum> {
    minimize_objective(prob.grid(), &EnergyObjective { prob, energy }, u0, cfg)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    par::sum(a.len(), |k| a[k] * b[k])
}

/// Limited-memory quasi-Newton descent with Armijo backtracking.
///
/// Only first variations are used. Each accepted step satisfies the Armijo
/// condition, so the logged energies are nonincreasing. When the quasi-Newton
/// direction fails the line search the history is dropped and a steepest
/// descent step is tried; if that fails too the energy has stalled at
/// rounding level.
pub fn minimize_objective<O: Objective>(grid: &Grid, obj: &O, u0: GridFunction, cfg: &SolverConfig) -> Result<Minimum> {
    cfg.validate()?;
    let cv = grid.cell_volume();
    let Some((mut e, mut g)) = obj.evaluate(&u0) else {
        return Err(Error::Precondition(
            "initial guess is outside the admissible set".into(),
        ));
    };
    let mut u = u0;
    let mut gnorm = l2_norm(grid, &g);
    let mut log = IterationLog {
        entries: vec![LogEntry {
            iter: 0,
            energy: e,
            variation_norm: gnorm,
            step: 0.0,
        }],
    };
    let mut hist_s: Vec<Vec<f64>> = Vec::new();
    let mut hist_y: Vec<Vec<f64>> = Vec::new();
    let mut stall = 0usize;
    let mut accepted_state: Option<(GridFunction, f64, GridFunction, f64, GridFunction)> = None;

    for iter in 1..=cfg.max_iters {
        if gnorm <= cfg.grad_tol {
            return Ok(Minimum {
                u,
                energy: e,
                variation_norm: gnorm,
                reason: StopReason::GradTol,
                log,
            });
        }
        let mut accepted = None;
        for attempt in 0..2 {
            let use_history = attempt == 0 && !hist_s.is_empty();
            let d = GridFunction::from_vec_unchecked(if use_history {
                two_loop(g.values(), &hist_s, &hist_y)
            } else {
                g.values().iter().map(|v| -v).collect()
            });
            let slope = cv * dot(g.values(), d.values());
            if !(slope < 0.0) {
                continue;
            }
            let mut t = if use_history {
                1.0
            } else {
                // scale the first steepest step to a unit change in the max norm
                (1.0 / d.max_abs()).min(1.0)
            };
            let line = obj.line(&u, &d);
            for _ in 0..80 {
                if let Some(change) = line(t) {
                    if change <= cfg.armijo_c1 * t * slope {
                        accepted = Some((change, t));
                        break;
                    }
                }
                t *= cfg.backtrack;
            }
            drop(line);
            if let Some((change, t)) = accepted {
                let trial = u.add_scaled(t, &d);
                match obj.evaluate(&trial) {
                    Some((_, gt)) => {
                        accepted_state = Some((trial, change, gt, t, d));
                        break;
                    }
                    None => accepted = None,
                }
            }
            hist_s.clear();
            hist_y.clear();
        }
        let Some((u_new, change, g_new, t, d)) = accepted_state.take() else {
            return Ok(Minimum {
                u,
                energy: e,
                variation_norm: gnorm,
                reason: StopReason::EnergyStall,
                log,
            });
        };
        let d = d.into_values();
        let e_new = e + change;
        let s: Vec<f64> = d.iter().map(|v| t * v).collect();
        let y: Vec<f64> = g_new.values().iter().zip(g.values()).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && cfg.memory > 0 {
            if hist_s.len() == cfg.memory {
                hist_s.remove(0);
                hist_y.remove(0);
            }
            hist_s.push(s);
            hist_y.push(y);
        }
        let rel = -change / e_new.abs().max(f64::MIN_POSITIVE);
        stall = if rel < cfg.energy_tol { stall + 1 } else { 0 };
        u = u_new;
        e = e_new;
        g = g_new;
        gnorm = l2_norm(grid, &g);
        log.entries.push(LogEntry {
            iter,
            energy: e,
            variation_norm: gnorm,
            step: t,
        });
        if stall >= 3 {
            return Ok(Minimum {
                u,
                energy: e,
                variation_norm: gnorm,
                reason: StopReason::EnergyStall,
                log,
            });
        }
    }
    if gnorm <= cfg.grad_tol {
        return Ok(Minimum {
            u,
            energy: e,
            variation_norm: gnorm,
            reason: StopReason::GradTol,
            log,
        });
    }
    Err(Error::NotConverged {
        iters: cfg.max_iters,
        last_norm: gnorm,
        log: Box::new(log),
    })
}

/// L-BFGS two-loop recursion; returns the descent direction `-H g`.
fn two_loop(g: &[f64], hist_s: &[Vec<f64>], hist_y: &[Vec<f64>]) -> Vec<f64> {
    let m = hist_s.len();
    let mut q = g.to_vec();
    let mut alpha = vec![0.0; m];
    let rho: Vec<f64> = (0..m).map(|i| 1.0 / dot(&hist_s[i], &hist_y[i])).collect();
    for i in (0..m).rev() {
        alpha[i] = rho[i] * dot(&hist_s[i], &q);
        for (qk, yk) in q.iter_mut().zip(&hist_y[i]) {
            *qk -= alpha[i] * yk;
        }
    }
    let (sl, yl) = (&hist_s[m - 1], &hist_y[m - 1]);
    let gamma = dot(sl, yl) / dot(yl, yl);
    for qk in q.iter_mut() {
        *qk *= gamma;
    }
    for i in 0..m {
        let beta = rho[i] * dot(&hist_y[i], &q);
        for (qk, sk) in q.iter_mut().zip(&hist_s[i]) {
            *qk += (alpha[i] - beta) * sk;
        }
    }
    q.iter().map(|v| -v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::group::GroupSpec;

    fn line_problem(res: usize, p: f64, f: f64) -> ProblemSpec {
        let grid = Grid::boxed(&[0.0], &[1.0], &[res]).unwrap();
        let calc = HorizontalCalculus::new(grid, GroupSpec::euclidean(1).unwrap()).unwrap();
        let src = GridFunction::constant(calc.grid(), f);
        ProblemSpec::new(calc, p, 0.5, src).unwrap()
    }

    #[test]
    fn barrier_examples() {
        assert_eq!(barrier_h(0.0, 1, 0.5), 2.0);
        assert_eq!(barrier_h(3.0, 1, 0.5), 4.0);
        assert_eq!(barrier_h(-2.0, 1, 0.5), 0.0);
        // C^1 gluing at 0: both one-sided slopes are n^delta
        for n in [1u64, 4, 64] {
            let eps = 1e-7;
            let right = (barrier_h(eps, n, 0.5) - barrier_h(0.0, n, 0.5)) / eps;
            let left = (barrier_h(0.0, n, 0.5) - barrier_h(-eps, n, 0.5)) / eps;
            let slope = (n as f64).sqrt();
            assert!((right - slope).abs() < 1e-4 * slope);
            assert!((left - slope).abs() < 1e-6 * slope);
            assert_eq!(barrier_h_prime(0.0, n, 0.5), slope);
            assert_eq!(barrier_h_prime(-1.0, n, 0.5), slope);
        }
    }

    #[test]
    fn truncation() {
        let f = GridFunction::from_values(vec![5.0, 1.0, 0.0]).unwrap();
        assert_eq!(truncate_source(&f, 3).values(), &[3.0, 1.0, 0.0]);
    }

    #[test]
    fn energy_zero_cases() {
        let prob = line_problem(11, 2.0, 1.0);
        let zero = GridFunction::zeros(prob.grid());
        let g = prob.source().clone();
        assert_eq!(energy_aux(&prob, &zero, &g), 0.0);
        assert_eq!(energy_jdelta(&prob, &zero), 0.0);
        // J_1(0) = -2 int f_1 for delta = 1/2
        let j1 = energy_jn(&prob, &zero, 1);
        assert!((j1 + 2.0 * integrate(prob.grid(), prob.source())).abs() < 1e-14);
        // nonpositive v: J_delta = ||v||^p / p
        let neg = GridFunction::from_fn(prob.grid(), |x| -x[0] * (1.0 - x[0]));
        assert!((energy_jdelta(&prob, &neg) - prob.dirichlet_energy(&neg) / 2.0).abs() < 1e-15);
        let none = GridFunction::zeros(prob.grid());
        assert!((energy_aux(&prob, &neg, &none) - prob.dirichlet_energy(&neg) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        let grid = Grid::boxed(&[0.0], &[1.0], &[9]).unwrap();
        let calc = HorizontalCalculus::new(grid, GroupSpec::euclidean(1).unwrap()).unwrap();
        let f = GridFunction::constant(calc.grid(), 1.0);
        let err = ProblemSpec::new(calc.clone(), 2.0, 1.2, f.clone()).unwrap_err();
        assert!(err.to_string().contains("delta ∈ (0,1)"));
        let err = ProblemSpec::new(calc.clone(), 2.0, 0.5, GridFunction::zeros(calc.grid())).unwrap_err();
        assert!(err.to_string().contains("identically zero"));
        let neg = f.map(|v| v - 2.0);
        assert!(ProblemSpec::new(calc.clone(), 2.0, 0.5, neg).is_err());
        assert!(ProblemSpec::new(calc, 1.0, 0.5, f).is_err());

        let hgrid = Grid::boxed(&[-1.0; 3], &[1.0; 3], &[5; 3]).unwrap();
        let hcalc = HorizontalCalculus::new(hgrid, GroupSpec::heisenberg(1).unwrap()).unwrap();
        let hf = GridFunction::constant(hcalc.grid(), 1.0);
        let err = ProblemSpec::new(hcalc, 4.0, 0.5, hf).unwrap_err();
        assert!(err.to_string().contains("Sobolev embedding"));
    }

    #[test]
    fn descent_log_is_monotone_and_reaches_tolerance() {
        let prob = line_problem(33, 3.0, 1.0);
        let energy = Energy::regularized(&prob, 4);
        let cfg = SolverConfig::default();
        let m = minimize(&prob, &energy, GridFunction::zeros(prob.grid()), &cfg).unwrap();
        assert!(m.log.is_nonincreasing());
        assert!(m.variation_norm <= 1e-6, "{:?} {}", m.reason, m.variation_norm);
        let mut buf = Vec::new();
        m.log.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("iter,energy,variation_norm,step\n"));
    }

    #[test]
    fn start_at_minimizer_stops_immediately() {
        let prob = line_problem(17, 2.0, 1.0);
        let energy = Energy::auxiliary(prob.source().clone());
        let cfg = SolverConfig::default();
        let m = minimize(&prob, &energy, GridFunction::zeros(prob.grid()), &cfg).unwrap();
        let again = minimize(&prob, &energy, m.u.clone(), &cfg).unwrap();
        assert!(again.log.entries.len() <= 2);
        assert!(again.energy <= m.energy);
    }

    #[test]
    fn max_iters_exceeded_carries_log() {
        let prob = line_problem(65, 2.0, 1.0);
        let energy = Energy::auxiliary(prob.source().clone());
        let cfg = SolverConfig {
            max_iters: 3,
            grad_tol: 1e-14,
            ..SolverConfig::default()
        };
        match minimize(&prob, &energy, GridFunction::zeros(prob.grid()), &cfg) {
            Err(Error::NotConverged { log, iters, .. }) => {
                assert_eq!(iters, 3);
                assert_eq!(log.entries.len(), 4);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn singular_start_must_be_positive() {
        let prob = line_problem(9, 2.0, 1.0);
        let err = minimize(
            &prob,
            &Energy::Singular,
            GridFunction::zeros(prob.grid()),
            &SolverConfig::default(),
        );
        assert!(matches!(err, Err(Error::Precondition(_))));
    }
}
