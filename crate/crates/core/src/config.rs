//! Run configuration: JSON with unknown keys rejected, validated in full
//! before any computation or file output.

use std::path::{Path, PathBuf};

use evalexpr::{ContextWithMutableVariables, HashMapContext, Value};
use serde::Deserialize;

use crate::calculus::HorizontalCalculus;
use crate::error::{Error, Result};
use crate::grid::{build_grid, read_csv, DomainShape, Grid, GridFunction};
use crate::group::{GroupSpec, Polynomial};
use crate::mms::{MmsStudy, Profile};
use crate::scheme::{doubling_schedule, LimitMode, SchemeOptions};
use crate::sobolev::BestConstantOptions;
use crate::variational::{ProblemSpec, SolverConfig};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub group: GroupConfig,
    pub domain: DomainConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub best_constant: BestConstantConfig,
    #[serde(default)]
    pub mms: Option<MmsConfig>,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GroupConfig {
    Euclidean {
        dim: usize,
    },
    Heisenberg {
        n: usize,
    },
    Custom {
        layer_dims: Vec<usize>,
        fields: Vec<Vec<Polynomial>>,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeConfig {
    /// A box; omitted corners default to the bounding box.
    Box {
        #[serde(default)]
        lo: Option<Vec<f64>>,
        #[serde(default)]
        hi: Option<Vec<f64>>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Resolution {
    Uniform(usize),
    PerAxis(Vec<usize>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub shape: ShapeConfig,
    /// Bounding box corners.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub resolution: Resolution,
    #[serde(default)]
    pub probe: Option<ShapeConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Constant(f64),
    /// Arithmetic expression in `x1, ..., xN` (and `pi`).
    Expression(String),
    /// CSV grid function, relative paths resolved against the config file.
    Csv(PathBuf),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub p: f64,
    pub delta: f64,
    #[serde(default)]
    pub source: Option<SourceConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    pub n_max: Option<u64>,
    pub n_schedule: Option<Vec<u64>>,
    pub limit: LimitMode,
    pub tests: usize,
    pub seed: u64,
    pub grad_tol: f64,
    pub energy_tol: f64,
    pub scheme_tol: f64,
    pub max_iters: usize,
    pub armijo_c1: f64,
    pub backtrack: f64,
    pub memory: usize,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            n_max: None,
            n_schedule: None,
            limit: LimitMode::Polish,
            tests: 20,
            seed: s.seed,
            grad_tol: s.grad_tol,
            energy_tol: s.energy_tol,
            scheme_tol: s.scheme_tol,
            max_iters: s.max_iters,
            armijo_c1: s.armijo_c1,
            backtrack: s.backtrack,
            memory: s.memory,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BestConstantConfig {
    pub extra_starts: usize,
    pub trials: usize,
    pub gap_tolerance: f64,
}

impl Default for BestConstantConfig {
    fn default() -> Self {
        let d = BestConstantOptions::default();
        Self {
            extra_starts: d.extra_starts,
            trials: d.trials,
            gap_tolerance: d.gap_tolerance,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MmsConfig {
    pub profile: Profile,
    pub resolutions: Vec<usize>,
    #[serde(default = "default_min_order")]
    pub min_order: f64,
}

fn default_min_order() -> f64 {
    1.5
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub suites: Option<Vec<String>>,
    pub trials: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            suites: None,
            trials: 100,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsConfig {
    pub directory: Option<PathBuf>,
    pub formats: Vec<Format>,
    pub snapshots: bool,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self {
            directory: None,
            formats: vec![Format::Json, Format::Csv],
            snapshots: false,
        }
    }
}

impl OutputsConfig {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

/// Everything a command needs, validated.
#[derive(Clone, Debug)]
pub struct Setup {
    pub group: GroupSpec,
    pub calc: HorizontalCalculus,
    /// Present when the config names a source.
    pub problem: Option<ProblemSpec>,
    pub scheme: SchemeOptions,
    pub solver: SolverConfig,
    pub best_constant: BestConstantOptions,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config syntax: {e}")))
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((Self::from_json(&text)?, base))
    }

    pub fn build_group(&self) -> Result<GroupSpec> {
        match &self.group {
            GroupConfig::Euclidean { dim } => GroupSpec::euclidean(*dim),
            GroupConfig::Heisenberg { n } => GroupSpec::heisenberg(*n),
            GroupConfig::Custom { layer_dims, fields } => GroupSpec::custom(layer_dims.clone(), fields.clone()),
        }
    }

    fn shape(&self, s: &ShapeConfig, dim: usize) -> Result<DomainShape> {
        let d = &self.domain;
        Ok(match s {
            ShapeConfig::Box { lo, hi } => {
                let lo = lo.clone().unwrap_or_else(|| d.lo.clone());
                let hi = hi.clone().unwrap_or_else(|| d.hi.clone());
                if lo.len() != dim || hi.len() != dim {
                    return Err(Error::invalid(
                        "domain dimension matches group",
                        "box corner length differs from N",
                    ));
                }
                if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
                    return Err(Error::invalid("box lo < hi", format!("lo = {lo:?}, hi = {hi:?}")));
                }
                DomainShape::Box { lo, hi }
            }
            ShapeConfig::Ball { center, radius } => {
                if center.len() != dim {
                    return Err(Error::invalid(
                        "domain dimension matches group",
                        "ball center length differs from N",
                    ));
                }
                if !(*radius > 0.0 && radius.is_finite()) {
                    return Err(Error::invalid("ball radius > 0", format!("got {radius}")));
                }
                DomainShape::Ball {
                    center: center.clone(),
                    radius: *radius,
                }
            }
        })
    }

    fn resolution(&self, dim: usize) -> Result<Vec<usize>> {
        match &self.domain.resolution {
            Resolution::Uniform(r) => Ok(vec![*r; dim]),
            Resolution::PerAxis(v) if v.len() == dim => Ok(v.clone()),
            Resolution::PerAxis(v) => Err(Error::invalid(
                "domain dimension matches group",
                format!("resolution has {} entries, N = {dim}", v.len()),
            )),
        }
    }

    pub fn solver(&self, seed_override: Option<u64>) -> Result<SolverConfig> {
        let s = &self.scheme;
        let cfg = SolverConfig {
            grad_tol: s.grad_tol,
            energy_tol: s.energy_tol,
            max_iters: s.max_iters,
            armijo_c1: s.armijo_c1,
            backtrack: s.backtrack,
            memory: s.memory,
            scheme_tol: s.scheme_tol,
            seed: seed_override.unwrap_or(s.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn schedule(&self) -> Result<Vec<u64>> {
        match (&self.scheme.n_max, &self.scheme.n_schedule) {
            (Some(_), Some(_)) => Err(Error::invalid(
                "one of n_max or n_schedule",
                "the scheme block sets both n_max and n_schedule",
            )),
            (None, Some(s)) => Ok(s.clone()),
            (Some(0), None) => Err(Error::invalid("n >= 1", "n_max is 0")),
            (Some(n), None) => Ok(doubling_schedule(*n)),
            (None, None) => Ok(doubling_schedule(1024)),
        }
    }

    /// Validates every block and assembles the problem.
    pub fn build(&self, base: &Path, seed_override: Option<u64>) -> Result<Setup> {
        let group = self.build_group()?;
        let dim = group.total_dim();
        let (p, delta) = (self.problem.p, self.problem.delta);
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("delta ∈ (0,1)", format!("got delta = {delta}")));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::invalid("p > 1", format!("got p = {p}")));
        }
        if self.domain.lo.len() != dim || self.domain.hi.len() != dim {
            return Err(Error::invalid(
                "domain dimension matches group",
                "bounding box corner length differs from N",
            ));
        }
        let shape = self.shape(&self.domain.shape, dim)?;
        let res = self.resolution(dim)?;
        let grid = build_grid(shape, &self.domain.lo, &self.domain.hi, &res)?;
        let probe = match &self.domain.probe {
            Some(s) => Some(self.shape(s, dim)?),
            None => None,
        };
        let calc = HorizontalCalculus::new(grid, group.clone())?;
        let solver = self.solver(seed_override)?;
        let schedule = self.schedule()?;
        if schedule.is_empty() || schedule[0] == 0 || schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("n_schedule increasing", format!("{schedule:?}")));
        }
        let scheme = SchemeOptions {
            schedule,
            limit: self.scheme.limit,
            probe,
            tests: self.scheme.tests,
            start: None,
            keep_iterates: false,
        };
        if scheme.probe.is_none() {
            crate::scheme::default_probe(calc.grid())?;
        }
        let bc = &self.best_constant;
        if !(bc.gap_tolerance > 0.0) {
            return Err(Error::invalid("gap_tolerance > 0", format!("got {}", bc.gap_tolerance)));
        }
        let problem = match &self.problem.source {
            None => {
                // hypotheses on (p, delta) still apply
                ProblemSpec::relaxed(calc.clone(), p, delta, GridFunction::zeros(calc.grid()))?;
                None
            }
            Some(src) => {
                let f = source_values(src, calc.grid(), base)?;
                Some(ProblemSpec::new(calc.clone(), p, delta, f)?)
            }
        };
        Ok(Setup {
            group,
            calc,
            problem,
            scheme,
            solver,
            best_constant: BestConstantOptions {
                extra_starts: bc.extra_starts,
                trials: bc.trials,
                gap_tolerance: bc.gap_tolerance,
            },
        })
    }

    /// Manufactured-solution study from the `mms` block.
    pub fn build_mms(&self, seed_override: Option<u64>) -> Result<(MmsStudy, SolverConfig)> {
        let Some(m) = &self.mms else {
            return Err(Error::invalid(
                "mms block present",
                "the mms command needs an mms block",
            ));
        };
        let group = self.build_group()?;
        let dim = group.total_dim();
        if !matches!(self.domain.shape, ShapeConfig::Box { lo: None, hi: None }) {
            return Err(Error::invalid(
                "mms domain is the bounding box",
                "manufactured profiles vanish on the bounding box faces only",
            ));
        }
        if self.domain.lo.len() != dim || self.domain.hi.len() != dim {
            return Err(Error::invalid(
                "domain dimension matches group",
                "bounding box corner length differs from N",
            ));
        }
        let (p, delta) = (self.problem.p, self.problem.delta);
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid("delta ∈ (0,1)", format!("got delta = {delta}")));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::invalid("p > 1", format!("got p = {p}")));
        }
        if group.kind() != crate::group::GroupKind::Euclidean && !(p < group.hom_dim() as f64) {
            return Err(Error::invalid(
                "1 < p < nu (Sobolev embedding hypothesis)",
                format!("got p = {p}, nu = {}", group.hom_dim()),
            ));
        }
        if let Some(&r) = m.resolutions.iter().find(|&&r| r < 3) {
            return Err(Error::invalid("res >= 3", format!("got {r} nodes on an axis")));
        }
        let schedule = self.schedule()?;
        let study = MmsStudy {
            group,
            lo: self.domain.lo.clone(),
            hi: self.domain.hi.clone(),
            resolutions: m.resolutions.clone(),
            p,
            delta,
            profile: m.profile,
            min_order: m.min_order,
            scheme: SchemeOptions {
                schedule,
                limit: self.scheme.limit,
                probe: None,
                tests: self.scheme.tests,
                start: None,
                keep_iterates: false,
            },
        };
        study.validate()?;
        Ok((study, self.solver(seed_override)?))
    }
}

/// Evaluates a source spec at the grid nodes.
pub fn source_values(src: &SourceConfig, grid: &Grid, base: &Path) -> Result<GridFunction> {
    match src {
        SourceConfig::Constant(c) => {
            if !c.is_finite() {
                return Err(Error::invalid("finite grid values", "constant source is not finite"));
            }
            Ok(GridFunction::constant(grid, *c))
        }
        SourceConfig::Expression(text) => {
            let tree = evalexpr::build_operator_tree::<evalexpr::DefaultNumericTypes>(text)
                .map_err(|e| Error::invalid("source expression parses", format!("{text:?}: {e}")))?;
            let mut ctx = HashMapContext::new();
            let mut values = Vec::with_capacity(grid.len());
            for k in 0..grid.len() {
                let x = grid.node(k);
                for (j, &v) in x.iter().enumerate() {
                    ctx.set_value(format!("x{}", j + 1), Value::Float(v))
                        .map_err(|e| Error::Config(e.to_string()))?;
                }
                ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI))
                    .map_err(|e| Error::Config(e.to_string()))?;
                let v = tree
                    .eval_number_with_context(&ctx)
                    .map_err(|e| Error::invalid("source expression evaluates", format!("{text:?} at {x:?}: {e}")))?;
                values.push(v);
            }
            GridFunction::from_values(values)
        }
        SourceConfig::Csv(path) => {
            let full = if path.is_absolute() {
                path.clone()
            } else {
                base.join(path)
            };
            let file = std::fs::File::open(&full)
                .map_err(|e| Error::invalid("source csv readable", format!("{}: {e}", full.display())))?;
            read_csv(grid, file)
        }
    }
}
