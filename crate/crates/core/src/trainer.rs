//! Minimax training loops.
//!
//! Every iteration samples `m` examples per domain, takes a gradient step on
//! the model with the current weights `p_t`, then moves `p` using the
//! minibatch losses measured at the pre-update model:
//!
//! - [`TrainerVariant::Alg1`]: multiplicative weights, no regularizer.
//! - [`TrainerVariant::Alg2`]: projected ascent on `p·f - (λ/2) D(p || q)`
//!   along `ĥ = f̂ - (λ/2) ∇D`, which for `l2` is `f̂ - λ (p - q)`.
//! - [`TrainerVariant::OracleP`]: every `oracle_refresh` iterations, `p` is
//!   set to the exact maximizer for the full-data losses.
//! - [`TrainerVariant::FixedP`]: `p` never moves (mixtures with fixed
//!   weights, single-domain training).

use std::time::Instant;

use crate::domains::{
    batch_loss_gradients, empirical_loss_vector, BatchSampler, MultiDomainDataset, SamplingMode, StreamKeying,
};
use crate::error::{Error, Result};
use crate::models::{weighted_gradient, LossOracle, ModelParameters};
use crate::regularizers::{reg_gradient, RegularizerKind, RegularizerSpec};
use crate::schedules::{ProblemConstants, ScheduleSpec};
use crate::simplex::{multiplicative_update, project_to_simplex, SimplexDistribution};

/// Losses above this abort training.
pub const DIVERGENCE_LOSS: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainerVariant {
    Alg1,
    Alg2,
    OracleP,
    FixedP,
}

impl TrainerVariant {
    pub fn name(self) -> &'static str {
        match self {
            TrainerVariant::Alg1 => "alg1",
            TrainerVariant::Alg2 => "alg2",
            TrainerVariant::OracleP => "oracle_p",
            TrainerVariant::FixedP => "fixed_p",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub schedule: ScheduleSpec,
    pub regularizer: RegularizerSpec,
    pub batch_per_domain: usize,
    pub horizon: usize,
    pub seed: u64,
    pub variant: TrainerVariant,
    pub log_every: usize,
    pub oracle_refresh: usize,
    pub sampling: SamplingMode,
    pub keying: StreamKeying,
    /// Weights held by [`TrainerVariant::FixedP`]; uniform when absent.
    pub fixed_weights: Option<SimplexDistribution>,
}

impl TrainerConfig {
    /// A config with the defaults used throughout: log every step, refresh
    /// the oracle every step, sample with replacement.
    pub fn new(
        variant: TrainerVariant,
        schedule: ScheduleSpec,
        regularizer: RegularizerSpec,
        batch_per_domain: usize,
        seed: u64,
    ) -> Self {
        Self {
            horizon: schedule.horizon,
            schedule,
            regularizer,
            batch_per_domain,
            seed,
            variant,
            log_every: 1,
            oracle_refresh: 1,
            sampling: SamplingMode::WithReplacement,
            keying: StreamKeying::PerDomain,
            fixed_weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.schedule.horizon != self.horizon {
            return Err(Error::Config(format!(
                "schedule resolved for T={} but the trainer runs T={}",
                self.schedule.horizon, self.horizon
            )));
        }
        if self.batch_per_domain == 0 {
            return Err(Error::Config("minibatch size per domain must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if self.oracle_refresh == 0 {
            return Err(Error::Config("oracle_refresh must be at least 1".into()));
        }
        self.regularizer.validate()?;
        match self.variant {
            TrainerVariant::Alg2 => {
                if self.regularizer.kind == RegularizerKind::None {
                    return Err(Error::Config("alg2 needs a regularizer".into()));
                }
                if self.regularizer.lambda <= 0.0 {
                    return Err(Error::Config("alg2 needs lambda > 0".into()));
                }
            }
            TrainerVariant::OracleP => {
                if self.regularizer.kind == RegularizerKind::Ot {
                    return Err(Error::Config(
                        "oracle_p has no exact maximizer for the ot regularizer".into(),
                    ));
                }
                if self.regularizer.kind != RegularizerKind::None && self.regularizer.lambda <= 0.0 {
                    return Err(Error::Config("oracle_p with a regularizer needs lambda > 0".into()));
                }
            }
            TrainerVariant::Alg1 | TrainerVariant::FixedP => {}
        }
        if matches!(self.variant, TrainerVariant::Alg1 | TrainerVariant::Alg2) && !(self.schedule.eta_p_at(1) > 0.0) {
            return Err(Error::Config(format!(
                "{} needs a distribution step size",
                self.variant.name()
            )));
        }
        Ok(())
    }
}

/// One logged iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub t: usize,
    /// Weights `p_t` used at this iteration.
    pub p: Vec<f64>,
    /// Minibatch losses `f̂^t(W_t)`.
    pub losses: Vec<f64>,
    /// `‖ĝ_t‖`.
    pub grad_norm: f64,
    pub eta_p: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingTrace {
    pub variant: TrainerVariant,
    pub horizon: usize,
    pub log_every: usize,
    pub steps: Vec<TraceStep>,
    /// `W_{T+1}` and `p_{T+1}`.
    pub last_params: ModelParameters,
    pub last_p: SimplexDistribution,
    /// `W̄ = (1/T) Σ_t W_t` and `p̄ = (1/T) Σ_t p_t`.
    pub avg_params: ModelParameters,
    pub avg_p: SimplexDistribution,
}

/// Ascent direction for the penalized objective: `f̂ - (λ/2) ∇D(p || q)`.
///
/// For `l2` this is evaluated as `f̂ - λ (p - q)`.
pub fn ascent_direction(regularizer: &RegularizerSpec, p: &SimplexDistribution, losses: &[f64]) -> Result<Vec<f64>> {
    let lambda = regularizer.lambda;
    match regularizer.kind {
        RegularizerKind::None => Ok(losses.to_vec()),
        RegularizerKind::L2 => Ok(losses
            .iter()
            .zip(p.iter().zip(regularizer.prior.iter()))
            .map(|(f, (pk, qk))| f - lambda * (pk - qk))
            .collect()),
        RegularizerKind::Kl | RegularizerKind::Ot => {
            let grad = reg_gradient(regularizer, p)?;
            Ok(losses.iter().zip(grad).map(|(f, g)| f - 0.5 * lambda * g).collect())
        }
    }
}

/// Exact maximizer of `p·f - (λ/2) D(p || q)` over the simplex.
///
/// Without a regularizer this is the vertex of the largest loss (lowest
/// index on ties); `l2` gives `P_Δ(q + f/λ)`; `kl` gives `p ∝ q exp(2f/λ)`.
pub fn best_response(losses: &[f64], regularizer: &RegularizerSpec) -> Result<SimplexDistribution> {
    let k = losses.len();
    if k != regularizer.num_domains() {
        return Err(Error::InvalidInput(format!(
            "{k} losses for a regularizer over {} domains",
            regularizer.num_domains()
        )));
    }
    let lambda = regularizer.lambda;
    match regularizer.kind {
        RegularizerKind::None => {
            let mut best = 0;
            for (i, f) in losses.iter().enumerate() {
                if *f > losses[best] {
                    best = i;
                }
            }
            Ok(SimplexDistribution::one_hot(k, best))
        }
        RegularizerKind::L2 => {
            if lambda <= 0.0 {
                return Err(Error::InvalidInput("l2 best response needs lambda > 0".into()));
            }
            let shifted: Vec<f64> = regularizer
                .prior
                .iter()
                .zip(losses)
                .map(|(q, f)| q + f / lambda)
                .collect();
            project_to_simplex(&shifted)
        }
        RegularizerKind::Kl => {
            if lambda <= 0.0 {
                return Err(Error::InvalidInput("kl best response needs lambda > 0".into()));
            }
            let exponents: Vec<f64> = losses.iter().map(|f| 2.0 * f / lambda).collect();
            let shift = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            SimplexDistribution::from_unnormalized(
                regularizer
                    .prior
                    .iter()
                    .zip(&exponents)
                    .map(|(q, e)| q * (e - shift).exp())
                    .collect(),
            )
        }
        RegularizerKind::Ot => Err(Error::Unsupported(
            "no closed-form maximizer for the ot regularizer".into(),
        )),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_losses(t: usize, losses: &[f64]) -> Result<()> {
    if let Some((k, f)) = losses
        .iter()
        .enumerate()
        .find(|(_, f)| !f.is_finite() || **f > DIVERGENCE_LOSS)
    {
        return Err(Error::Divergence {
            iteration: t,
            detail: format!("loss of domain {k} is {f:e}"),
        });
    }
    Ok(())
}

/// Runs the loop selected by `config.variant`.
pub fn train(data: &MultiDomainDataset, model: &dyn LossOracle, config: &TrainerConfig) -> Result<TrainingTrace> {
    config.validate()?;
    let k = data.num_domains();
    if config.regularizer.num_domains() != k {
        return Err(Error::Config(format!(
            "regularizer over {} domains, dataset has {k}",
            config.regularizer.num_domains()
        )));
    }

    let mut params = model.init_params(config.seed);
    let mut p = match (&config.variant, &config.fixed_weights) {
        (TrainerVariant::FixedP, Some(weights)) => {
            if weights.len() != k {
                return Err(Error::Config(format!(
                    "fixed weights over {} domains, dataset has {k}",
                    weights.len()
                )));
            }
            weights.clone()
        }
        _ => SimplexDistribution::uniform(k),
    };
    let mut sampler = BatchSampler::new(
        data,
        config.batch_per_domain,
        config.seed,
        config.sampling,
        config.keying,
    )?;

    let horizon = config.horizon;
    let eta_w = config.schedule.eta_w;
    let mut param_sum = vec![0.0; params.len()];
    let mut p_sum = vec![0.0; k];
    let mut steps = Vec::with_capacity(horizon.div_ceil(config.log_every));
    let start = Instant::now();

    for t in 1..=horizon {
        let batch = sampler.sample(data)?;
        let (losses, grads) = batch_loss_gradients(data, &batch, model, &params)?;
        check_losses(t, &losses)?;

        param_sum.iter_mut().zip(&params.values).for_each(|(s, w)| *s += w);
        p_sum.iter_mut().zip(p.iter()).for_each(|(s, w)| *s += w);

        let g = weighted_gradient(&p, &grads)?;
        let eta_p = match config.variant {
            TrainerVariant::Alg1 | TrainerVariant::Alg2 => config.schedule.eta_p_at(t),
            TrainerVariant::OracleP | TrainerVariant::FixedP => 0.0,
        };

        let next_p = match config.variant {
            TrainerVariant::Alg1 => multiplicative_update(&p, &losses, eta_p)?,
            TrainerVariant::Alg2 => {
                let direction = ascent_direction(&config.regularizer, &p, &losses)?;
                let moved: Vec<f64> = p.iter().zip(&direction).map(|(pk, h)| pk + eta_p * h).collect();
                project_to_simplex(&moved)?
            }
            TrainerVariant::OracleP => {
                if (t - 1) % config.oracle_refresh == 0 {
                    let full = empirical_loss_vector(data, model, &params)?;
                    check_losses(t, &full)?;
                    best_response(&full, &config.regularizer)?
                } else {
                    p.clone()
                }
            }
            TrainerVariant::FixedP => p.clone(),
        };

        if (t - 1) % config.log_every == 0 {
            steps.push(TraceStep {
                t,
                p: p.to_vec(),
                losses: losses.to_vec(),
                grad_norm: norm(&g),
                eta_p,
                elapsed_s: start.elapsed().as_secs_f64(),
            });
        }

        params.values.iter_mut().zip(&g).for_each(|(w, gi)| *w -= eta_w * gi);
        if !params.is_finite() {
            return Err(Error::Divergence {
                iteration: t,
                detail: "parameters became non-finite".into(),
            });
        }
        p = next_p;
    }

    let scale = horizon as f64;
    let avg_params = params.with_values(param_sum.into_iter().map(|s| s / scale).collect());
    let avg_p = SimplexDistribution::from_unnormalized(p_sum.into_iter().map(|s| s / scale).collect())?;
    Ok(TrainingTrace {
        variant: config.variant,
        horizon,
        log_every: config.log_every,
        steps,
        last_params: params,
        last_p: p,
        avg_params,
        avg_p,
    })
}

fn expect_variant(config: &TrainerConfig, variant: TrainerVariant) -> Result<()> {
    if config.variant != variant {
        return Err(Error::Config(format!(
            "config selects {}, expected {}",
            config.variant.name(),
            variant.name()
        )));
    }
    Ok(())
}

/// Stochastic minimax with multiplicative weights.
pub fn train_alg1(data: &MultiDomainDataset, model: &dyn LossOracle, config: &TrainerConfig) -> Result<TrainingTrace> {
    expect_variant(config, TrainerVariant::Alg1)?;
    train(data, model, config)
}

/// Regularized stochastic minimax with projected ascent on `p`.
pub fn train_alg2(data: &MultiDomainDataset, model: &dyn LossOracle, config: &TrainerConfig) -> Result<TrainingTrace> {
    expect_variant(config, TrainerVariant::Alg2)?;
    train(data, model, config)
}

/// Model SGD against the exact best-response distribution.
pub fn train_oracle_p(
    data: &MultiDomainDataset,
    model: &dyn LossOracle,
    config: &TrainerConfig,
) -> Result<TrainingTrace> {
    expect_variant(config, TrainerVariant::OracleP)?;
    train(data, model, config)
}

/// Estimates `γ`, `σ` and `μ` from `iterations` minibatches at the initial
/// parameters `model.init_params(seed)` and uniform weights: the largest
/// observed `‖f̂‖₂`, `‖ĝ‖` and `‖ĥ‖₂`. The remaining constants are copied
/// from `base`, as is any estimate that came out zero.
pub fn estimate_constants(
    data: &MultiDomainDataset,
    model: &dyn LossOracle,
    regularizer: &RegularizerSpec,
    sampler: &mut BatchSampler,
    seed: u64,
    base: &ProblemConstants,
    iterations: usize,
) -> Result<ProblemConstants> {
    let params = model.init_params(seed);
    let p = SimplexDistribution::uniform(data.num_domains());
    let mut estimate = ProblemConstants {
        sigma: 0.0,
        gamma: 0.0,
        mu: 0.0,
        ..*base
    };
    for _ in 0..iterations.max(1) {
        let batch = sampler.sample(data)?;
        let (losses, grads) = batch_loss_gradients(data, &batch, model, &params)?;
        let g = weighted_gradient(&p, &grads)?;
        let h = ascent_direction(regularizer, &p, &losses)?;
        estimate.gamma = estimate.gamma.max(norm(&losses));
        estimate.sigma = estimate.sigma.max(norm(&g));
        estimate.mu = estimate.mu.max(norm(&h));
    }
    for (value, fallback) in [
        (&mut estimate.sigma, base.sigma),
        (&mut estimate.gamma, base.gamma),
        (&mut estimate.mu, base.mu),
    ] {
        if !(*value > 0.0) {
            *value = fallback;
        }
    }
    Ok(estimate)
}
