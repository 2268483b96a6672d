//! Step-size schedules and regret-bound evaluators.
//!
//! Each [`ScheduleMode`] resolves to the step sizes its convergence result
//! prescribes:
//!
//! | mode | `η_w` | `η_p^t` |
//! |------|-------|---------|
//! | `lemma1` (convex) | `R / (σ √T)` | `2 √(2 ln K) / (γ √T)` |
//! | `theorem2` (non-convex) | `√(2γ √(2 ln K)) / (σ √L) · T^{-1/3}` | `2 √(2 ln K) / γ · T^{-2/3}` |
//! | `theorem3` (regularized) | `2μ √(ln T) / (σ √(λ L T))` | `1 / (λ t)` |
//! | `theorem4c` (shrunk) | as `theorem3` | `1 / (λ (t + c*))` |
//! | `theorem5` (oracle p) | `√2 / (σ √(L T))` | unused |
//! | `manual` | user value | user value |

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Bounds feeding the theorem schedules. Defaults of one keep the rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    /// Bound on per-domain gradient norms.
    pub sigma: f64,
    /// Bound on the loss-vector norm.
    pub gamma: f64,
    /// Bound on the regularized ascent direction `‖ĥ^t‖₂`.
    pub mu: f64,
    pub smoothness: f64,
    pub radius: f64,
    pub lambda: f64,
}

impl Default for ProblemConstants {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            gamma: 1.0,
            mu: 1.0,
            smoothness: 1.0,
            radius: 1.0,
            lambda: 0.0,
        }
    }
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma", self.sigma),
            ("gamma", self.gamma),
            ("mu", self.mu),
            ("smoothness", self.smoothness),
            ("radius", self.radius),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleMode {
    Convex,
    Nonconvex,
    Regularized,
    RegularizedShrunk,
    Oracle,
    Manual { eta_w: f64, eta_p: f64 },
}

impl ScheduleMode {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleMode::Convex => "lemma1",
            ScheduleMode::Nonconvex => "theorem2",
            ScheduleMode::Regularized => "theorem3",
            ScheduleMode::RegularizedShrunk => "theorem4c",
            ScheduleMode::Oracle => "theorem5",
            ScheduleMode::Manual { .. } => "manual",
        }
    }
}

/// Parses a schedule name. `manual` is parsed with placeholder steps that
/// the caller fills in.
impl FromStr for ScheduleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lemma1" | "convex" => Ok(ScheduleMode::Convex),
            "theorem2" | "nonconvex" => Ok(ScheduleMode::Nonconvex),
            "theorem3" | "regularized" => Ok(ScheduleMode::Regularized),
            "theorem4c" | "regularized_shrunk" => Ok(ScheduleMode::RegularizedShrunk),
            "theorem5" | "oracle" => Ok(ScheduleMode::Oracle),
            "manual" => Ok(ScheduleMode::Manual {
                eta_w: f64::NAN,
                eta_p: f64::NAN,
            }),
            other => Err(Error::Config(format!(
                "unknown schedule '{other}' (expected lemma1, theorem2, theorem3, theorem4c, theorem5 or manual)"
            ))),
        }
    }
}

/// Distribution step as a function of the iteration counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistributionStep {
    Constant(f64),
    /// `1 / (λ (t + shift))`.
    InverseTime {
        lambda: f64,
        shift: f64,
    },
    /// The trainer never takes a distribution step.
    Unused,
}

impl DistributionStep {
    /// Step at the 1-based iteration `t`; zero when unused.
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            DistributionStep::Constant(eta) => eta,
            DistributionStep::InverseTime { lambda, shift } => 1.0 / (lambda * (t as f64 + shift)),
            DistributionStep::Unused => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub horizon: usize,
    pub mode: ScheduleMode,
    pub eta_w: f64,
    pub eta_p: DistributionStep,
    pub shrink_c: f64,
}

impl ScheduleSpec {
    pub fn eta_p_at(&self, t: usize) -> f64 {
        self.eta_p.at(t)
    }

    /// Replaces the model step while keeping the distribution schedule.
    pub fn with_eta_w(mut self, eta_w: f64) -> Result<Self> {
        if !(eta_w > 0.0 && eta_w.is_finite()) {
            return Err(Error::Config(format!("eta_w must be positive, got {eta_w}")));
        }
        self.eta_w = eta_w;
        Ok(self)
    }
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} T={} eta_w={:e} c={}",
            self.mode.name(),
            self.horizon,
            self.eta_w,
            self.shrink_c
        )?;
        match self.eta_p {
            DistributionStep::Constant(eta) => write!(f, " eta_p={eta:e}"),
            DistributionStep::InverseTime { lambda, shift } => {
                write!(f, " eta_p=1/({lambda}(t+{shift}))")
            }
            DistributionStep::Unused => Ok(()),
        }
    }
}

/// Resolves the step sizes of `mode` for horizon `horizon` and `num_domains`
/// domains.
pub fn resolve_schedule(
    mode: ScheduleMode,
    horizon: usize,
    constants: &ProblemConstants,
    num_domains: usize,
) -> Result<ScheduleSpec> {
    constants.validate()?;
    if horizon == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let t = horizon as f64;
    let ProblemConstants {
        sigma,
        gamma,
        mu,
        smoothness,
        radius,
        lambda,
    } = *constants;

    let need_log_k = || -> Result<f64> {
        if num_domains < 2 {
            return Err(Error::Config(format!(
                "schedule {} needs at least 2 domains",
                mode.name()
            )));
        }
        Ok((num_domains as f64).ln())
    };
    let need_lambda = || -> Result<()> {
        if lambda <= 0.0 {
            return Err(Error::Config(format!("schedule {} needs lambda > 0", mode.name())));
        }
        if horizon < 2 {
            return Err(Error::Config(format!(
                "schedule {} needs a horizon of at least 2",
                mode.name()
            )));
        }
        Ok(())
    };
    let regularized_eta_w = || 2.0 * mu * t.ln().sqrt() / (sigma * (lambda * smoothness * t).sqrt());

    let (eta_w, eta_p, shrink_c) = match mode {
        ScheduleMode::Convex => {
            let log_k = need_log_k()?;
            (
                radius / (sigma * t.sqrt()),
                DistributionStep::Constant(2.0 * (2.0 * log_k).sqrt() / (gamma * t.sqrt())),
                0.0,
            )
        }
        ScheduleMode::Nonconvex => {
            let log_k = need_log_k()?;
            let radical = (2.0 * gamma * (2.0 * log_k).sqrt()).sqrt();
            (
                radical / (sigma * smoothness.sqrt()) * t.powf(-1.0 / 3.0),
                DistributionStep::Constant(2.0 * (2.0 * log_k).sqrt() / gamma * t.powf(-2.0 / 3.0)),
                0.0,
            )
        }
        ScheduleMode::Regularized => {
            need_lambda()?;
            (
                regularized_eta_w(),
                DistributionStep::InverseTime { lambda, shift: 0.0 },
                0.0,
            )
        }
        ScheduleMode::RegularizedShrunk => {
            need_lambda()?;
            let c = optimal_shrink_c(mu, lambda, horizon)?;
            (
                regularized_eta_w(),
                DistributionStep::InverseTime { lambda, shift: c },
                c,
            )
        }
        ScheduleMode::Oracle => (
            2f64.sqrt() / (sigma * (smoothness * t).sqrt()),
            DistributionStep::Unused,
            0.0,
        ),
        ScheduleMode::Manual { eta_w, eta_p } => {
            if !(eta_w > 0.0 && eta_w.is_finite()) || !(eta_p > 0.0 && eta_p.is_finite()) {
                return Err(Error::Config(format!(
                    "manual schedule needs positive eta_w and eta_p, got {eta_w} and {eta_p}"
                )));
            }
            (eta_w, DistributionStep::Constant(eta_p), 0.0)
        }
    };

    if !(eta_w > 0.0 && eta_w.is_finite()) {
        return Err(Error::Config(format!(
            "schedule {} resolved to a non-positive model step {eta_w}",
            mode.name()
        )));
    }
    Ok(ScheduleSpec {
        horizon,
        mode,
        eta_w,
        eta_p,
        shrink_c,
    })
}

fn check_bound_inputs(mu: f64, lambda: f64, horizon: usize) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidInput(format!("mu must be positive, got {mu}")));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    if horizon == 0 {
        return Err(Error::InvalidInput("horizon must be at least 1".into()));
    }
    Ok(())
}

/// Shrink constant minimizing [`regret_bound`]:
/// `c* = μ² / (λ² (1 + √(1 + 2μ² / (λ² T))))`.
pub fn optimal_shrink_c(mu: f64, lambda: f64, horizon: usize) -> Result<f64> {
    check_bound_inputs(mu, lambda, horizon)?;
    let ratio = mu * mu / (lambda * lambda);
    Ok(ratio / (1.0 + (1.0 + 2.0 * ratio / horizon as f64).sqrt()))
}

/// Regret bound of the shrunk step,
/// `λc + (μ²/2λ) ln(T/c + 1) + μ²/2λ`; with `c = 0` the unshrunk baseline
/// `(μ²/2λ)(ln T + 1)`.
pub fn regret_bound(mu: f64, lambda: f64, horizon: usize, c: f64) -> Result<f64> {
    check_bound_inputs(mu, lambda, horizon)?;
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!("c must be >= 0, got {c}")));
    }
    let t = horizon as f64;
    let scale = mu * mu / (2.0 * lambda);
    if c == 0.0 {
        Ok(scale * (t.ln() + 1.0))
    } else {
        Ok(lambda * c + scale * (t / c + 1.0).ln() + scale)
    }
}
