//! Run configuration and the `generate`, `train`, `eval` and `bound`
//! commands behind the binary.
//!
//! A run config is a `key = value` file (with `#` comments) plus
//! `key=value` overrides. The resolved config is written back into the run
//! directory, so a run can be repeated from its own `config.txt`.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::domains::{
    load_dataset, write_dataset, BatchSampler, Domain, MultiDomainDataset, SamplingMode, StreamKeying, THREADS_ENV,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    default_pairs, evaluate, fmt_float, parse_trace_csv, render_timing_csv, render_trace_csv, EvaluationReport,
};
use crate::models::{load_checkpoint, save_checkpoint, ModelFamily};
use crate::regularizers::{CostMatrix, RegularizerKind, RegularizerSpec, DEFAULT_ENTROPIC_WEIGHT};
use crate::schedules::{
    optimal_shrink_c, regret_bound, resolve_schedule, DistributionStep, ProblemConstants, ScheduleMode, ScheduleSpec,
};
use crate::simplex::SimplexDistribution;
use crate::trainer::{estimate_constants, train, TrainerConfig, TrainerVariant, TrainingTrace};

/// Joint minibatch size split evenly over the domains.
pub const DEFAULT_JOINT_BATCH: usize = 200;
pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Method menu.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Train on domain `k` alone.
    Individual(usize),
    /// Uniform weights, never updated.
    MixtureEven,
    /// Adversarial weights; unregularized or with `l2`/`kl`.
    MixtureOpt,
    /// Adversarial weights with the entropic transport regularizer.
    MixtureOt,
    /// Exact best-response weights.
    OracleP,
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixture_even" => Ok(Method::MixtureEven),
            "mixture_opt" => Ok(Method::MixtureOpt),
            "mixture_ot" => Ok(Method::MixtureOt),
            "oracle_p" => Ok(Method::OracleP),
            other => match other.strip_prefix("individual:") {
                Some(k) => k
                    .parse()
                    .map(Method::Individual)
                    .map_err(|_| Error::Config(format!("bad domain index in '{other}'"))),
                None => Err(Error::Config(format!(
                    "unknown method '{other}' (expected individual:<k>, mixture_even, mixture_opt, mixture_ot or oracle_p)"
                ))),
            },
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Individual(k) => write!(f, "individual:{k}"),
            Method::MixtureEven => write!(f, "mixture_even"),
            Method::MixtureOpt => write!(f, "mixture_opt"),
            Method::MixtureOt => write!(f, "mixture_ot"),
            Method::OracleP => write!(f, "oracle_p"),
        }
    }
}

/// Everything a training run needs. Unset options take method-dependent
/// defaults when the run is resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub method: Method,
    pub model: ModelFamily,
    pub schedule: Option<ScheduleMode>,
    pub horizon: usize,
    /// Joint batch; `m = batch / K` unless `batch_per_domain` is set.
    pub batch: usize,
    pub batch_per_domain: Option<usize>,
    pub eta_w: Option<f64>,
    pub eta_p: Option<f64>,
    pub constants: ProblemConstants,
    pub regularizer: Option<RegularizerKind>,
    pub prior: Option<Vec<f64>>,
    pub nu: f64,
    pub cost: Option<Vec<f64>>,
    pub seed: u64,
    pub log_every: usize,
    pub oracle_refresh: usize,
    pub sampling: SamplingMode,
    pub keying: StreamKeying,
    /// Minibatches used to estimate `σ`, `γ`, `μ` before training; 0 keeps
    /// the configured values.
    pub warmup: usize,
    pub out: Option<PathBuf>,
    pub pairs: Option<Vec<(usize, usize)>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            test_manifest: None,
            method: Method::MixtureOpt,
            model: ModelFamily::Softmax,
            schedule: None,
            horizon: 1000,
            batch: DEFAULT_JOINT_BATCH,
            batch_per_domain: None,
            eta_w: None,
            eta_p: None,
            constants: ProblemConstants {
                lambda: DEFAULT_LAMBDA,
                ..ProblemConstants::default()
            },
            regularizer: None,
            prior: None,
            nu: DEFAULT_ENTROPIC_WEIGHT,
            cost: None,
            seed: 0,
            log_every: 1,
            oracle_refresh: 1,
            sampling: SamplingMode::WithReplacement,
            keying: StreamKeying::PerDomain,
            warmup: 0,
            out: None,
            pairs: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{value}' for '{key}'")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split([',', ' '])
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s))
        .collect()
}

fn join_floats(values: &[f64]) -> String {
    values.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses a config file body. Relative paths are resolved against
    /// `base_dir`.
    pub fn parse(text: &str, base_dir: &Path, source: &Path) -> Result<Self> {
        let mut config = Self::default();
        for (index, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: source.to_path_buf(),
                line: index + 1,
                message: format!("expected key = value, got '{line}'"),
            })?;
            config.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                path: source.to_path_buf(),
                line: index + 1,
                message: e.to_string(),
            })?;
        }
        for path in [&mut config.manifest, &mut config.test_manifest, &mut config.out]
            .into_iter()
            .flatten()
        {
            if path.is_relative() {
                *path = base_dir.join(&*path);
            }
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")), path)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let optional = |value: &str| value.is_empty() || value == "auto" || value == "default";
        match key {
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "test_manifest" => self.test_manifest = (!optional(value)).then(|| PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "method" => self.method = value.parse()?,
            "model" => self.model = value.parse()?,
            "schedule" => self.schedule = if optional(value) { None } else { Some(value.parse()?) },
            "horizon" => self.horizon = parse_value(key, value)?,
            "batch" => self.batch = parse_value(key, value)?,
            "batch_per_domain" => {
                self.batch_per_domain = if optional(value) {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "eta_w" => {
                self.eta_w = if optional(value) {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "eta_p" => {
                self.eta_p = if optional(value) {
                    None
                } else {
                    Some(parse_value(key, value)?)
                }
            }
            "sigma" => self.constants.sigma = parse_value(key, value)?,
            "gamma" => self.constants.gamma = parse_value(key, value)?,
            "mu" => self.constants.mu = parse_value(key, value)?,
            "smoothness" => self.constants.smoothness = parse_value(key, value)?,
            "radius" => self.constants.radius = parse_value(key, value)?,
            "lambda" => self.constants.lambda = parse_value(key, value)?,
            "regularizer" => self.regularizer = if optional(value) { None } else { Some(value.parse()?) },
            "prior" => {
                self.prior = if optional(value) || value == "uniform" {
                    None
                } else {
                    Some(parse_list(key, value)?)
                }
            }
            "nu" => self.nu = parse_value(key, value)?,
            "cost" => {
                self.cost = if optional(value) {
                    None
                } else {
                    Some(parse_list(key, value)?)
                }
            }
            "seed" => self.seed = parse_value(key, value)?,
            "log_every" => self.log_every = parse_value(key, value)?,
            "oracle_refresh" => self.oracle_refresh = parse_value(key, value)?,
            "sampling" => {
                self.sampling = match value {
                    "with_replacement" => SamplingMode::WithReplacement,
                    "without_replacement" => SamplingMode::WithoutReplacement,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown sampling '{other}' (expected with_replacement or without_replacement)"
                        )))
                    }
                }
            }
            "streams" => {
                self.keying = match value {
                    "per_domain" => StreamKeying::PerDomain,
                    "shared" => StreamKeying::Shared,
                    other => {
                        return Err(Error::Config(format!(
                            "unknown stream keying '{other}' (expected per_domain or shared)"
                        )))
                    }
                }
            }
            "warmup" => self.warmup = parse_value(key, value)?,
            "pairs" => {
                self.pairs = if optional(value) {
                    None
                } else {
                    Some(
                        value
                            .split(',')
                            .map(|pair| {
                                let (i, j) = pair
                                    .trim()
                                    .split_once(':')
                                    .ok_or_else(|| Error::Config(format!("pair '{pair}' should read i:j")))?;
                                Ok((parse_value(key, i.trim())?, parse_value(key, j.trim())?))
                            })
                            .collect::<Result<_>>()?,
                    )
                }
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Config file text that parses back to `self`.
    pub fn render(&self) -> String {
        let mut out = String::from("# robust-domains run config\n");
        let mut line = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let float = |x: Option<f64>| x.map(|x| x.to_string()).unwrap_or_else(|| "auto".into());
        if self.manifest.is_some() {
            line("manifest", path(&self.manifest));
        }
        if self.test_manifest.is_some() {
            line("test_manifest", path(&self.test_manifest));
        }
        line("method", self.method.to_string());
        line("model", self.model.to_string());
        line(
            "schedule",
            self.schedule
                .map(|s| s.name().to_string())
                .unwrap_or_else(|| "auto".into()),
        );
        line("horizon", self.horizon.to_string());
        line("batch", self.batch.to_string());
        line(
            "batch_per_domain",
            self.batch_per_domain
                .map(|m| m.to_string())
                .unwrap_or_else(|| "auto".into()),
        );
        line("eta_w", float(self.eta_w));
        line("eta_p", float(self.eta_p));
        let c = &self.constants;
        line("sigma", c.sigma.to_string());
        line("gamma", c.gamma.to_string());
        line("mu", c.mu.to_string());
        line("smoothness", c.smoothness.to_string());
        line("radius", c.radius.to_string());
        line("lambda", c.lambda.to_string());
        line(
            "regularizer",
            self.regularizer
                .map(|r| r.name().to_string())
                .unwrap_or_else(|| "auto".into()),
        );
        line(
            "prior",
            self.prior
                .as_deref()
                .map(join_floats)
                .unwrap_or_else(|| "uniform".into()),
        );
        line("nu", self.nu.to_string());
        line(
            "cost",
            self.cost.as_deref().map(join_floats).unwrap_or_else(|| "auto".into()),
        );
        line("seed", self.seed.to_string());
        line("log_every", self.log_every.to_string());
        line("oracle_refresh", self.oracle_refresh.to_string());
        line(
            "sampling",
            match self.sampling {
                SamplingMode::WithReplacement => "with_replacement",
                SamplingMode::WithoutReplacement => "without_replacement",
            }
            .into(),
        );
        line(
            "streams",
            match self.keying {
                StreamKeying::PerDomain => "per_domain",
                StreamKeying::Shared => "shared",
            }
            .into(),
        );
        line("warmup", self.warmup.to_string());
        if self.out.is_some() {
            line("out", path(&self.out));
        }
        if let Some(pairs) = &self.pairs {
            line(
                "pairs",
                pairs
                    .iter()
                    .map(|(i, j)| format!("{i}:{j}"))
                    .collect::<Vec<_>>()
                    .join(","),
            );
        }
        out
    }

    /// Regularizer kind after method defaults: `ot` for `mixture_ot`,
    /// `none` otherwise.
    pub fn regularizer_kind(&self) -> Result<RegularizerKind> {
        match (self.method, self.regularizer) {
            (Method::MixtureOt, None | Some(RegularizerKind::Ot)) => Ok(RegularizerKind::Ot),
            (Method::MixtureOt, Some(other)) => Err(Error::Config(format!(
                "mixture_ot uses the ot regularizer, not {}",
                other.name()
            ))),
            (Method::MixtureOpt | Method::OracleP, Some(RegularizerKind::Ot)) => Err(Error::Config(format!(
                "use method mixture_ot for the ot regularizer (got {})",
                self.method
            ))),
            (_, kind) => Ok(kind.unwrap_or(RegularizerKind::None)),
        }
    }

    /// Schedule mode after method defaults: `theorem5` for `oracle_p`;
    /// `theorem3` with `l2`; `theorem2` with `kl`, for `mixture_ot` and for
    /// non-convex models; `lemma1` otherwise. Manual when both steps are
    /// given and no schedule is named.
    pub fn schedule_mode(&self, convex: bool) -> Result<ScheduleMode> {
        if let Some(mode) = self.schedule {
            if let ScheduleMode::Manual { .. } = mode {
                return match (self.eta_w, self.eta_p) {
                    (Some(eta_w), Some(eta_p)) => Ok(ScheduleMode::Manual { eta_w, eta_p }),
                    (Some(eta_w), None) if !self.method.moves_p() => Ok(ScheduleMode::Manual { eta_w, eta_p: 1.0 }),
                    _ => Err(Error::Config("schedule manual needs eta_w and eta_p".into())),
                };
            }
            return Ok(mode);
        }
        if let (Some(eta_w), Some(eta_p)) = (self.eta_w, self.eta_p) {
            return Ok(ScheduleMode::Manual { eta_w, eta_p });
        }
        Ok(match (self.method, self.regularizer_kind()?) {
            (Method::OracleP, _) => ScheduleMode::Oracle,
            (Method::MixtureOt, _) | (_, RegularizerKind::Kl | RegularizerKind::Ot) => ScheduleMode::Nonconvex,
            (_, RegularizerKind::L2) => ScheduleMode::Regularized,
            _ if convex => ScheduleMode::Convex,
            _ => ScheduleMode::Nonconvex,
        })
    }
}

impl Method {
    fn moves_p(self) -> bool {
        matches!(self, Method::MixtureOpt | Method::MixtureOt)
    }
}

/// A run with its data, model and trainer config resolved.
#[derive(Debug)]
pub struct ResolvedRun {
    pub config: RunConfig,
    /// Data the trainer sees (a single domain for `individual:k`).
    pub train_data: MultiDomainDataset,
    pub test_data: Option<MultiDomainDataset>,
    pub model: crate::models::ModelSpec,
    pub trainer: TrainerConfig,
    /// Constants used for the schedule, after any warmup estimate.
    pub constants: ProblemConstants,
}

fn build_regularizer(config: &RunConfig, kind: RegularizerKind, k: usize) -> Result<RegularizerSpec> {
    let prior = match &config.prior {
        Some(weights) => {
            if weights.len() != k {
                return Err(Error::Config(format!(
                    "prior has {} entries for {k} domains",
                    weights.len()
                )));
            }
            SimplexDistribution::new(weights.clone())?
        }
        None => SimplexDistribution::uniform(k),
    };
    if kind == RegularizerKind::None {
        return Ok(RegularizerSpec {
            prior,
            ..RegularizerSpec::none(k)
        });
    }
    let cost = match &config.cost {
        Some(entries) => Some(CostMatrix::new(k, entries.clone()).map_err(|e| Error::Config(e.to_string()))?),
        None => None,
    };
    RegularizerSpec::build(kind, config.constants.lambda, prior, cost, config.nu)
}

/// Loads the data and resolves schedule, regularizer and trainer settings.
pub fn resolve_run(config: &RunConfig) -> Result<ResolvedRun> {
    let manifest = config
        .manifest
        .as_ref()
        .ok_or_else(|| Error::Config("no manifest given (set manifest=<path>)".into()))?;
    let full = load_dataset(manifest)?;
    let test_full = config.test_manifest.as_deref().map(load_dataset).transpose()?;
    resolve_with_data(config, full, test_full)
}

/// [`resolve_run`] with the data already loaded.
pub fn resolve_with_data(
    config: &RunConfig,
    full: MultiDomainDataset,
    test_full: Option<MultiDomainDataset>,
) -> Result<ResolvedRun> {
    let k_full = full.num_domains();
    if let Some(test) = &test_full {
        if test.num_domains() != k_full || test.dim() != full.dim() {
            return Err(Error::Config(
                "test manifest does not match the training manifest".into(),
            ));
        }
    }
    let (train_data, test_data) = match config.method {
        Method::Individual(k) => {
            if k >= k_full {
                return Err(Error::Config(format!("individual:{k} needs 0 <= k < {k_full}")));
            }
            (full.subset(k)?, test_full.map(|t| t.subset(k)).transpose()?)
        }
        _ => (full, test_full),
    };
    let model = config.model.spec(train_data.dim(), train_data.num_classes());
    let oracle = model.build()?;
    let k = train_data.num_domains();

    let kind = config.regularizer_kind()?;
    let regularizer = build_regularizer(config, kind, k)?;
    let variant = match config.method {
        Method::Individual(_) | Method::MixtureEven => TrainerVariant::FixedP,
        Method::MixtureOpt if kind == RegularizerKind::None => TrainerVariant::Alg1,
        Method::MixtureOpt | Method::MixtureOt => TrainerVariant::Alg2,
        Method::OracleP => TrainerVariant::OracleP,
    };

    let batch_per_domain = match config.batch_per_domain {
        Some(m) => m,
        None => config.batch / k_full,
    };
    if batch_per_domain == 0 {
        return Err(Error::Config(format!(
            "joint batch {} is smaller than the {k_full} domains",
            config.batch
        )));
    }

    let mut constants = config.constants;
    if config.warmup > 0 {
        let mut sampler = BatchSampler::new(
            &train_data,
            batch_per_domain,
            config.seed,
            config.sampling,
            config.keying,
        )?;
        constants = estimate_constants(
            &train_data,
            oracle.as_ref(),
            &regularizer,
            &mut sampler,
            config.seed,
            &constants,
            config.warmup,
        )?;
    }

    // Fixed-weight methods share the model step of the adversarial run on
    // the full domain set.
    let mode = config.schedule_mode(oracle.is_convex())?;
    let reference = match config.method {
        Method::Individual(_) | Method::MixtureEven => RunConfig {
            method: Method::MixtureOpt,
            regularizer: config.regularizer.filter(|r| *r != RegularizerKind::Ot),
            ..config.clone()
        },
        _ => config.clone(),
    };
    let mode = if config.schedule.is_some() || matches!(mode, ScheduleMode::Manual { .. }) {
        mode
    } else {
        reference.schedule_mode(oracle.is_convex())?
    };
    let mut schedule = resolve_schedule(mode, config.horizon, &constants, k_full)?;
    if let Some(eta_w) = config.eta_w {
        schedule = schedule.with_eta_w(eta_w)?;
    }
    if let Some(eta_p) = config.eta_p {
        if !(eta_p > 0.0 && eta_p.is_finite()) {
            return Err(Error::Config(format!("eta_p must be positive, got {eta_p}")));
        }
        schedule.eta_p = DistributionStep::Constant(eta_p);
    }
    if variant == TrainerVariant::FixedP || variant == TrainerVariant::OracleP {
        schedule.eta_p = DistributionStep::Unused;
    }

    let mut trainer = TrainerConfig::new(variant, schedule, regularizer, batch_per_domain, config.seed);
    trainer.log_every = config.log_every;
    trainer.oracle_refresh = config.oracle_refresh;
    trainer.sampling = config.sampling;
    trainer.keying = config.keying;
    trainer.validate()?;

    if let Some(pairs) = &config.pairs {
        if let Some((i, j)) = pairs.iter().find(|(i, j)| *i >= k || *j >= k) {
            return Err(Error::Config(format!("pair {i}:{j} out of range for {k} domains")));
        }
    }

    Ok(ResolvedRun {
        config: config.clone(),
        train_data,
        test_data,
        model,
        trainer,
        constants,
    })
}

/// Output of a finished training run.
#[derive(Debug)]
pub struct RunOutcome {
    pub dir: Option<PathBuf>,
    pub trace: TrainingTrace,
    pub report: EvaluationReport,
    pub schedule: ScheduleSpec,
}

/// Trains, evaluates the last iterate, and (when `out` is set) writes the
/// run directory: `config.txt`, `trace.csv`, `timing.csv`, `series.csv`,
/// `summary.txt`, `checkpoint.txt` and `metadata.txt`.
pub fn cmd_train(config: &RunConfig) -> Result<RunOutcome> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let run = resolve_run(config)?;
    let oracle = run.model.build()?;
    let trace = train(&run.train_data, oracle.as_ref(), &run.trainer)?;
    let k = run.train_data.num_domains();
    let pairs = run.config.pairs.clone().unwrap_or_else(|| default_pairs(k));
    let report = evaluate(
        &run.train_data,
        run.test_data.as_ref(),
        oracle.as_ref(),
        &trace.last_params,
        &trace.steps,
        &pairs,
        Some(&run.trainer.regularizer),
    )?;

    let dir = config.out.clone();
    if let Some(dir) = &dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(&path, e))
        };
        let mut saved = run.config.clone();
        for path in [&mut saved.manifest, &mut saved.test_manifest, &mut saved.out]
            .into_iter()
            .flatten()
        {
            if let Ok(absolute) = std::path::absolute(&*path) {
                *path = absolute;
            }
        }
        write("config.txt", saved.render())?;
        write("trace.csv", render_trace_csv(&trace.steps, k))?;
        write("timing.csv", render_timing_csv(&trace.steps))?;
        write("series.csv", report.render_series())?;
        let mut summary = format!(
            "method = {}\nvariant = {}\nschedule = {}\n",
            config.method,
            run.trainer.variant.name(),
            run.trainer.schedule
        );
        let _ = writeln!(summary, "final_p = {}", run_p(&trace.last_p));
        let _ = writeln!(summary, "average_p = {}", run_p(&trace.avg_p));
        summary.push_str(&report.render_summary());
        write("summary.txt", summary)?;
        save_checkpoint(&dir.join("checkpoint.txt"), &run.model, &trace.last_params)?;
        let started = started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        write(
            "metadata.txt",
            format!(
                "started_unix = {started}\nwall_seconds = {}\n{THREADS_ENV} = {}\n",
                fmt_float(clock.elapsed().as_secs_f64()),
                std::env::var(THREADS_ENV).unwrap_or_else(|_| "1".into())
            ),
        )?;
    }
    Ok(RunOutcome {
        dir,
        schedule: run.trainer.schedule,
        trace,
        report,
    })
}

fn run_p(p: &SimplexDistribution) -> String {
    p.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(",")
}

/// What to evaluate.
#[derive(Debug, Clone)]
pub enum EvalTarget {
    /// A run directory written by [`cmd_train`].
    Run(PathBuf),
    /// A checkpoint against a dataset.
    Checkpoint {
        manifest: PathBuf,
        checkpoint: PathBuf,
        test_manifest: Option<PathBuf>,
    },
}

/// Recomputes the evaluation report of a trained model.
pub fn cmd_eval(target: &EvalTarget) -> Result<EvaluationReport> {
    match target {
        EvalTarget::Run(dir) => {
            let config = RunConfig::load(&dir.join("config.txt"))?;
            let run = resolve_run(&config)?;
            let (spec, params) = load_checkpoint(&dir.join("checkpoint.txt"))?;
            if spec != run.model {
                return Err(Error::Config("checkpoint model does not match the run config".into()));
            }
            let trace_path = dir.join("trace.csv");
            let trace_text = fs::read_to_string(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
            let steps = parse_trace_csv(&trace_text)?;
            let oracle = spec.build()?;
            let k = run.train_data.num_domains();
            evaluate(
                &run.train_data,
                run.test_data.as_ref(),
                oracle.as_ref(),
                &params,
                &steps,
                &config.pairs.clone().unwrap_or_else(|| default_pairs(k)),
                Some(&run.trainer.regularizer),
            )
        }
        EvalTarget::Checkpoint {
            manifest,
            checkpoint,
            test_manifest,
        } => {
            let data = load_dataset(manifest)?;
            let test = test_manifest.as_deref().map(load_dataset).transpose()?;
            let (spec, params) = load_checkpoint(checkpoint)?;
            let oracle = spec.build()?;
            let k = data.num_domains();
            evaluate(
                &data,
                test.as_ref(),
                oracle.as_ref(),
                &params,
                &[],
                &default_pairs(k),
                None,
            )
        }
    }
}

/// `c*`, `f(c*)` and the unshrunk baseline `f(0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundTable {
    pub shrink_c: f64,
    pub bound_at_c: f64,
    pub baseline: f64,
}

pub fn cmd_bound(mu: f64, lambda: f64, horizon: usize) -> Result<BoundTable> {
    let check = |e: Error| Error::Config(e.to_string());
    let shrink_c = optimal_shrink_c(mu, lambda, horizon).map_err(check)?;
    Ok(BoundTable {
        shrink_c,
        bound_at_c: regret_bound(mu, lambda, horizon, shrink_c).map_err(check)?,
        baseline: regret_bound(mu, lambda, horizon, 0.0).map_err(check)?,
    })
}

impl fmt::Display for BoundTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "c_star = {}", fmt_float(self.shrink_c))?;
        writeln!(f, "bound_at_c_star = {}", fmt_float(self.bound_at_c))?;
        writeln!(f, "baseline = {}", fmt_float(self.baseline))
    }
}

/// Synthetic noisy-domain data: Gaussian blobs shared by every domain, with
/// domain `k` adding `N(0, σ_k²)` noise to each feature.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerateConfig {
    pub num_classes: usize,
    pub dim: usize,
    /// Examples per domain.
    pub size: usize,
    /// Test examples per domain; 0 skips the test split.
    pub test_size: usize,
    pub noise: Vec<f64>,
    /// Standard deviation of the class centers.
    pub center_scale: f64,
    /// Spread of each blob around its center.
    pub cluster_std: f64,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self {
            num_classes: 3,
            dim: 10,
            size: 500,
            test_size: 0,
            noise: vec![0.0, 4.0, 8.0, 12.0],
            center_scale: 3.0,
            cluster_std: 1.0,
            seed: 0,
        }
    }
}

const CENTER_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Name of domain `k` with noise level `sigma`.
pub fn domain_name(k: usize, sigma: f64) -> String {
    format!("d{k}_sigma{sigma}")
}

/// Builds the train split and, when `test_size > 0`, the test split.
pub fn generate_dataset(config: &GenerateConfig) -> Result<(MultiDomainDataset, Option<MultiDomainDataset>)> {
    if config.num_classes < 2 || config.dim == 0 || config.size == 0 {
        return Err(Error::Config(
            "generate needs classes >= 2, dim >= 1 and size >= 1".into(),
        ));
    }
    if config.noise.is_empty() {
        return Err(Error::Config("generate needs at least one noise level".into()));
    }
    if let Some(sigma) = config.noise.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Config(format!("noise level {sigma} must be finite and >= 0")));
    }
    if !(config.center_scale >= 0.0 && config.cluster_std >= 0.0) {
        return Err(Error::Config("center_scale and cluster_std must be >= 0".into()));
    }
    let d = config.dim;
    let mut rng = stream(config.seed, CENTER_STREAM);
    let centers: Vec<f64> = (0..config.num_classes * d)
        .map(|_| config.center_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let split = |size: usize, base_stream: u64| -> Result<MultiDomainDataset> {
        let mut rng = stream(config.seed, base_stream);
        let labels: Vec<usize> = (0..size).map(|i| i % config.num_classes).collect();
        let mut clean = Vec::with_capacity(size * d);
        for &label in &labels {
            for j in 0..d {
                clean.push(centers[label * d + j] + config.cluster_std * rng.sample::<f64, _>(StandardNormal));
            }
        }
        let domains = config
            .noise
            .iter()
            .enumerate()
            .map(|(k, &sigma)| {
                let mut noise = stream(config.seed, base_stream + 16 * (k as u64 + 1));
                let features = clean
                    .iter()
                    .map(|x| x + sigma * noise.sample::<f64, _>(StandardNormal))
                    .collect();
                Domain::new(domain_name(k, sigma), d, features, labels.clone())
            })
            .collect::<Result<Vec<_>>>()?;
        MultiDomainDataset::new(domains, config.num_classes)
    };

    let train = split(config.size, TRAIN_STREAM)?;
    let test = if config.test_size > 0 {
        Some(split(config.test_size, TEST_STREAM)?)
    } else {
        None
    };
    Ok((train, test))
}

/// Writes the generated data under `out` (`manifest.txt` plus per-domain
/// files, and a `test/` directory for the test split). Returns the train
/// manifest path.
pub fn cmd_generate(config: &GenerateConfig, out: &Path) -> Result<PathBuf> {
    let (train, test) = generate_dataset(config)?;
    let manifest = write_dataset(out, &train)?;
    if let Some(test) = test {
        write_dataset(&out.join("test"), &test)?;
    }
    Ok(manifest)
}
