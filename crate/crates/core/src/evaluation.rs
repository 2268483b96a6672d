//! Worst-case metrics, regret and duality-gap estimates, and the CSV forms
//! of training traces.

use std::fmt::Write as _;

use crate::domains::{accuracy_vector, batch_loss_gradients, empirical_loss_vector, DomainBatch, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::models::{weighted_gradient, LossOracle, ModelParameters};
use crate::regularizers::{reg_value, RegularizerKind, RegularizerSpec};
use crate::simplex::SimplexDistribution;
use crate::trainer::{best_response, TraceStep};

/// Steps of the inner gradient-descent solve in [`duality_gap`].
pub const GAP_INNER_STEPS: usize = 10_000;
/// Step size of the inner solve.
pub const GAP_INNER_STEP_SIZE: f64 = 0.1;

/// Formats a float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// `p·f - (λ/2) D(p || q)`.
pub fn penalized_objective(regularizer: &RegularizerSpec, p: &SimplexDistribution, losses: &[f64]) -> Result<f64> {
    if losses.len() != p.len() {
        return Err(Error::InvalidInput(format!(
            "{} losses for {} domains",
            losses.len(),
            p.len()
        )));
    }
    let linear: f64 = p.iter().zip(losses).map(|(a, b)| a * b).sum();
    if regularizer.kind == RegularizerKind::None {
        return Ok(linear);
    }
    Ok(linear - 0.5 * regularizer.lambda * reg_value(regularizer, p)?)
}

/// Largest full-data domain loss and smallest full-data domain accuracy.
pub fn worst_case_metrics(
    data: &MultiDomainDataset,
    model: &dyn LossOracle,
    params: &ModelParameters,
) -> Result<(f64, f64)> {
    let losses = empirical_loss_vector(data, model, params)?;
    let accuracy = accuracy_vector(data, model, params)?;
    let worst_accuracy = accuracy.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((losses.max(), worst_accuracy))
}

/// `max_p Σ_t L̂(p, W_t) - Σ_t L̂(p_t, W_t)` over the logged steps, with the
/// minibatch losses recorded in the trace.
///
/// The maximizer of the sum is the best response to the mean loss vector.
/// Exact when every iteration was logged; otherwise the sum runs over the
/// logged iterations only.
pub fn realized_regret(steps: &[TraceStep], regularizer: &RegularizerSpec) -> Result<f64> {
    let first = steps
        .first()
        .ok_or_else(|| Error::InvalidInput("trace has no logged steps".into()))?;
    let k = first.losses.len();
    let mut mean = vec![0.0; k];
    let mut played = 0.0;
    for step in steps {
        if step.losses.len() != k || step.p.len() != k {
            return Err(Error::InvalidInput(format!("step {} has inconsistent widths", step.t)));
        }
        let p = SimplexDistribution::new(step.p.clone())?;
        played += penalized_objective(regularizer, &p, &step.losses)?;
        mean.iter_mut().zip(&step.losses).for_each(|(m, f)| *m += f);
    }
    let n = steps.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let best = best_response(&mean, regularizer)?;
    let best_total = n * penalized_objective(regularizer, &best, &mean)?;
    Ok(best_total - played)
}

/// Duality-gap estimate with the inner-solver budget that produced it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityGapEstimate {
    pub gap: f64,
    /// `max_p L(p, W̄)`, exact.
    pub max_value: f64,
    /// Best `L(p̄, W)` found by the inner solve.
    pub min_value: f64,
    pub inner_steps: usize,
    pub inner_step_size: f64,
}

/// `max_p L(p, W̄) - min_W L(p̄, W)`.
///
/// The maximum is exact. The minimum is the best value seen along
/// [`GAP_INNER_STEPS`] full-batch gradient steps of size
/// [`GAP_INNER_STEP_SIZE`] started from `W̄`, so the estimate is never
/// negative and can only understate the true gap.
pub fn duality_gap(
    data: &MultiDomainDataset,
    model: &dyn LossOracle,
    avg_params: &ModelParameters,
    avg_p: &SimplexDistribution,
    regularizer: &RegularizerSpec,
) -> Result<DualityGapEstimate> {
    duality_gap_with_budget(
        data,
        model,
        avg_params,
        avg_p,
        regularizer,
        GAP_INNER_STEPS,
        GAP_INNER_STEP_SIZE,
    )
}

/// [`duality_gap`] with an explicit inner budget.
pub fn duality_gap_with_budget(
    data: &MultiDomainDataset,
    model: &dyn LossOracle,
    avg_params: &ModelParameters,
    avg_p: &SimplexDistribution,
    regularizer: &RegularizerSpec,
    inner_steps: usize,
    inner_step_size: f64,
) -> Result<DualityGapEstimate> {
    if !model.is_convex() {
        return Err(Error::Unsupported("duality gap needs a convex model".into()));
    }
    if regularizer.kind == RegularizerKind::Ot {
        return Err(Error::Unsupported(
            "duality gap has no exact inner maximum for ot".into(),
        ));
    }
    let losses = empirical_loss_vector(data, model, avg_params)?;
    let p_star = best_response(&losses, regularizer)?;
    let max_value = penalized_objective(regularizer, &p_star, &losses)?;

    // The penalty does not depend on W, so the inner problem minimizes p̄·f(W).
    let offset = penalized_objective(regularizer, avg_p, &vec![0.0; avg_p.len()])?;
    let full = DomainBatch::full(data);
    let objective = |params: &ModelParameters| -> Result<(f64, Vec<f64>)> {
        let (f, grads) = batch_loss_gradients(data, &full, model, params)?;
        let value: f64 = avg_p.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
        Ok((value + offset, weighted_gradient(avg_p, &grads)?))
    };

    let mut params = avg_params.clone();
    let (mut value, mut grad) = objective(&params)?;
    let mut min_value = value;
    for _ in 0..inner_steps {
        params
            .values
            .iter_mut()
            .zip(&grad)
            .for_each(|(w, g)| *w -= inner_step_size * g);
        (value, grad) = objective(&params)?;
        if !value.is_finite() {
            break;
        }
        min_value = min_value.min(value);
    }
    Ok(DualityGapEstimate {
        gap: max_value - min_value,
        max_value,
        min_value,
        inner_steps,
        inner_step_size,
    })
}

/// Per-domain metrics of a trained model plus the trace-derived series.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub names: Vec<String>,
    pub train_loss: Vec<f64>,
    pub train_accuracy: Vec<f64>,
    pub test_loss: Option<Vec<f64>>,
    pub test_accuracy: Option<Vec<f64>>,
    /// `max_k` train loss.
    pub worst_case_loss: f64,
    /// `min_k` train accuracy.
    pub worst_case_accuracy: f64,
    pub test_worst_case_loss: Option<f64>,
    pub test_worst_case_accuracy: Option<f64>,
    pub pairs: Vec<(usize, usize)>,
    /// Logged iteration numbers for the series.
    pub series_t: Vec<usize>,
    /// `f̂_i - f̂_j` per pair, per logged step.
    pub discrepancy: Vec<Vec<f64>>,
    /// `p_i - p_j` per pair, per logged step.
    pub drift: Vec<Vec<f64>>,
    pub realized_regret: Option<f64>,
}

/// Pairs `(0, j)` for `j = 1..K`.
pub fn default_pairs(k: usize) -> Vec<(usize, usize)> {
    (1..k).map(|j| (0, j)).collect()
}

fn worst(values: &[f64], pick: fn(f64, f64) -> f64, start: f64) -> f64 {
    values.iter().copied().fold(start, pick)
}

/// Evaluates `params` on `train` (and `test`, when given) and derives the
/// discrepancy and drift series from `steps`.
pub fn evaluate(
    train: &MultiDomainDataset,
    test: Option<&MultiDomainDataset>,
    model: &dyn LossOracle,
    params: &ModelParameters,
    steps: &[TraceStep],
    pairs: &[(usize, usize)],
    regret_regularizer: Option<&RegularizerSpec>,
) -> Result<EvaluationReport> {
    let k = train.num_domains();
    if let Some(&(i, j)) = pairs.iter().find(|(i, j)| *i >= k || *j >= k) {
        return Err(Error::Config(format!("pair ({i},{j}) out of range for {k} domains")));
    }
    if let Some(test) = test {
        if test.num_domains() != k {
            return Err(Error::InvalidDataset(format!(
                "test set has {} domains, train set has {k}",
                test.num_domains()
            )));
        }
    }
    let train_loss = empirical_loss_vector(train, model, params)?.into_vec();
    let train_accuracy = accuracy_vector(train, model, params)?;
    let (test_loss, test_accuracy) = match test {
        Some(test) => (
            Some(empirical_loss_vector(test, model, params)?.into_vec()),
            Some(accuracy_vector(test, model, params)?),
        ),
        None => (None, None),
    };
    for step in steps {
        if step.losses.len() != k || step.p.len() != k {
            return Err(Error::InvalidInput(format!(
                "trace step {} does not have {k} domains",
                step.t
            )));
        }
    }
    let discrepancy = pairs
        .iter()
        .map(|&(i, j)| steps.iter().map(|s| s.losses[i] - s.losses[j]).collect())
        .collect();
    let drift = pairs
        .iter()
        .map(|&(i, j)| steps.iter().map(|s| s.p[i] - s.p[j]).collect())
        .collect();
    let realized_regret = match regret_regularizer {
        Some(reg) if !steps.is_empty() && reg.kind != RegularizerKind::Ot => Some(realized_regret(steps, reg)?),
        _ => None,
    };
    Ok(EvaluationReport {
        names: train.names().iter().map(|s| s.to_string()).collect(),
        worst_case_loss: worst(&train_loss, f64::max, f64::NEG_INFINITY),
        worst_case_accuracy: worst(&train_accuracy, f64::min, f64::INFINITY),
        test_worst_case_loss: test_loss.as_deref().map(|l| worst(l, f64::max, f64::NEG_INFINITY)),
        test_worst_case_accuracy: test_accuracy.as_deref().map(|a| worst(a, f64::min, f64::INFINITY)),
        train_loss,
        train_accuracy,
        test_loss,
        test_accuracy,
        pairs: pairs.to_vec(),
        series_t: steps.iter().map(|s| s.t).collect(),
        discrepancy,
        drift,
        realized_regret,
    })
}

impl EvaluationReport {
    /// `key = value` summary, one line per field.
    pub fn render_summary(&self) -> String {
        let mut out = String::new();
        let join = |v: &[f64]| v.iter().map(|x| fmt_float(*x)).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "domains = {}", self.names.join(","));
        let _ = writeln!(out, "train_loss = {}", join(&self.train_loss));
        let _ = writeln!(out, "train_accuracy = {}", join(&self.train_accuracy));
        let _ = writeln!(out, "worst_case_loss = {}", fmt_float(self.worst_case_loss));
        let _ = writeln!(out, "worst_case_accuracy = {}", fmt_float(self.worst_case_accuracy));
        if let (Some(loss), Some(acc)) = (&self.test_loss, &self.test_accuracy) {
            let _ = writeln!(out, "test_loss = {}", join(loss));
            let _ = writeln!(out, "test_accuracy = {}", join(acc));
        }
        if let (Some(loss), Some(acc)) = (self.test_worst_case_loss, self.test_worst_case_accuracy) {
            let _ = writeln!(out, "test_worst_case_loss = {}", fmt_float(loss));
            let _ = writeln!(out, "test_worst_case_accuracy = {}", fmt_float(acc));
        }
        if let Some(regret) = self.realized_regret {
            let _ = writeln!(out, "realized_regret = {}", fmt_float(regret));
        }
        out
    }

    /// CSV of the discrepancy and drift series, one row per logged step.
    pub fn render_series(&self) -> String {
        let mut out = String::from("t");
        for (i, j) in &self.pairs {
            let _ = write!(out, ",disc_{i}_{j}");
        }
        for (i, j) in &self.pairs {
            let _ = write!(out, ",drift_{i}_{j}");
        }
        out.push('\n');
        for (row, t) in self.series_t.iter().enumerate() {
            out.push_str(&t.to_string());
            for series in self.discrepancy.iter().chain(&self.drift) {
                out.push(',');
                out.push_str(&fmt_float(series[row]));
            }
            out.push('\n');
        }
        out
    }
}

/// Trace CSV: `t, loss_d0.., p_0.., grad_norm, eta_p`. Wall-clock times go
/// to [`render_timing_csv`] so that this file is reproducible.
pub fn render_trace_csv(steps: &[TraceStep], num_domains: usize) -> String {
    let mut out = String::from("t");
    for k in 0..num_domains {
        let _ = write!(out, ",loss_d{k}");
    }
    for k in 0..num_domains {
        let _ = write!(out, ",p_{k}");
    }
    out.push_str(",grad_norm,eta_p\n");
    for step in steps {
        out.push_str(&step.t.to_string());
        for x in step.losses.iter().chain(&step.p).chain([&step.grad_norm, &step.eta_p]) {
            out.push(',');
            out.push_str(&fmt_float(*x));
        }
        out.push('\n');
    }
    out
}

/// `t, elapsed_s` per logged step.
pub fn render_timing_csv(steps: &[TraceStep]) -> String {
    let mut out = String::from("t,elapsed_s\n");
    for step in steps {
        let _ = writeln!(out, "{},{}", step.t, fmt_float(step.elapsed_s));
    }
    out
}

/// Parses [`render_trace_csv`] output. Elapsed times are set to zero.
pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceStep>> {
    let path = std::path::PathBuf::from("trace.csv");
    let parse_error = |line: usize, message: String| Error::Parse {
        path: path.clone(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| parse_error(1, "empty trace".into()))?;
    let columns: Vec<&str> = header.split(',').collect();
    let k = columns.iter().filter(|c| c.starts_with("loss_d")).count();
    if columns.len() != 2 * k + 3 || columns[0] != "t" || k == 0 {
        return Err(parse_error(1, format!("unexpected header '{header}'")));
    }
    let mut steps = Vec::new();
    for (index, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(parse_error(
                index + 1,
                format!("expected {} fields, got {}", columns.len(), fields.len()),
            ));
        }
        let t = fields[0]
            .parse::<usize>()
            .map_err(|e| parse_error(index + 1, format!("bad iteration '{}': {e}", fields[0])))?;
        let values = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|e| parse_error(index + 1, format!("bad number '{f}': {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        steps.push(TraceStep {
            t,
            losses: values[..k].to_vec(),
            p: values[k..2 * k].to_vec(),
            grad_norm: values[2 * k],
            eta_p: values[2 * k + 1],
            elapsed_s: 0.0,
        });
    }
    Ok(steps)
}
