//! Distances `D(p || q)` between the adversarial distribution and a prior,
//! with their gradients in `p`.
//!
//! Three kinds are supported: squared Euclidean, KL, and entropic optimal
//! transport. The entropic transport value is
//!
//! ```text
//! D_OT(p || q) = min_{P 1 = p, Pᵀ 1 = q}  ⟨P, M⟩ + (1/ν) Σ_ij P_ij ln P_ij
//! ```
//!
//! solved by log-domain Sinkhorn scaling. Its gradient in `p` is the row
//! potential of the dual, defined up to an additive constant; we return it
//! centered to mean zero.

use crate::error::{Error, Result};
use crate::simplex::{kl_divergence, SimplexDistribution};

/// Stopping tolerance on the L1 marginal error.
pub const SINKHORN_TOLERANCE: f64 = 1e-9;
/// Iteration cap for a single solve.
pub const SINKHORN_MAX_ITERATIONS: usize = 10_000;
/// Default entropic weight ν.
pub const DEFAULT_ENTROPIC_WEIGHT: f64 = 10.0;
/// Plain scaling sweeps before Newton steps take over.
const NEWTON_AFTER: usize = 100;
/// Largest Newton move of a potential, in units of `1/ν`.
const NEWTON_TRUST: f64 = 4.0;

/// Diagonal damping of the Newton system, relative to each row mass.
const NEWTON_DAMPING: f64 = 1e-12;

/// Which distance the regularizer uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerKind {
    None,
    L2,
    Kl,
    Ot,
}

impl RegularizerKind {
    pub fn name(self) -> &'static str {
        match self {
            RegularizerKind::None => "none",
            RegularizerKind::L2 => "l2",
            RegularizerKind::Kl => "kl",
            RegularizerKind::Ot => "ot",
        }
    }
}

impl std::str::FromStr for RegularizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RegularizerKind::None),
            "l2" => Ok(RegularizerKind::L2),
            "kl" => Ok(RegularizerKind::Kl),
            "ot" => Ok(RegularizerKind::Ot),
            other => Err(Error::Config(format!(
                "unknown regularizer '{other}' (expected none, l2, kl or ot)"
            ))),
        }
    }
}

/// Dense square cost matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl CostMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if dim == 0 || entries.len() != dim * dim {
            return Err(Error::InvalidInput(format!(
                "cost matrix needs {dim}x{dim} entries, got {}",
                entries.len()
            )));
        }
        if entries.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidInput(
                "cost entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self { dim, entries })
    }

    /// `1 - I`: unit cost for moving mass between distinct domains.
    pub fn zero_one(dim: usize) -> Self {
        let entries = (0..dim * dim)
            .map(|idx| if idx / dim == idx % dim { 0.0 } else { 1.0 })
            .collect();
        Self { dim, entries }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    fn is_symmetric_zero_diagonal(&self) -> bool {
        (0..self.dim).all(|i| self.get(i, i) == 0.0 && (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Choice and parameters of `D(p || q)` in the penalized objective
/// `p·f(W) - (λ/2) D(p || q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    pub lambda: f64,
    pub prior: SimplexDistribution,
    pub cost: CostMatrix,
    pub entropic_weight: f64,
}

impl RegularizerSpec {
    pub fn none(k: usize) -> Self {
        Self {
            kind: RegularizerKind::None,
            lambda: 0.0,
            prior: SimplexDistribution::uniform(k),
            cost: CostMatrix::zero_one(k),
            entropic_weight: DEFAULT_ENTROPIC_WEIGHT,
        }
    }

    pub fn l2(lambda: f64, prior: SimplexDistribution) -> Result<Self> {
        Self::build(RegularizerKind::L2, lambda, prior, None, DEFAULT_ENTROPIC_WEIGHT)
    }

    pub fn kl(lambda: f64, prior: SimplexDistribution) -> Result<Self> {
        Self::build(RegularizerKind::Kl, lambda, prior, None, DEFAULT_ENTROPIC_WEIGHT)
    }

    pub fn ot(lambda: f64, prior: SimplexDistribution, cost: Option<CostMatrix>, entropic_weight: f64) -> Result<Self> {
        Self::build(RegularizerKind::Ot, lambda, prior, cost, entropic_weight)
    }

    /// Generic constructor; `cost` defaults to `1 - I`.
    pub fn build(
        kind: RegularizerKind,
        lambda: f64,
        prior: SimplexDistribution,
        cost: Option<CostMatrix>,
        entropic_weight: f64,
    ) -> Result<Self> {
        let k = prior.len();
        let spec = Self {
            kind,
            lambda,
            cost: cost.unwrap_or_else(|| CostMatrix::zero_one(k)),
            prior,
            entropic_weight,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == RegularizerKind::None {
            return Ok(());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        match self.kind {
            RegularizerKind::Kl => {
                if self.prior.iter().any(|q| *q <= 0.0) {
                    return Err(Error::Config("kl regularizer needs a strictly positive prior".into()));
                }
            }
            RegularizerKind::Ot => {
                if self.cost.dim() != self.prior.len() {
                    return Err(Error::Config(format!(
                        "cost matrix is {0}x{0} but there are {1} domains",
                        self.cost.dim(),
                        self.prior.len()
                    )));
                }
                if !self.cost.is_symmetric_zero_diagonal() {
                    return Err(Error::Config(
                        "ot cost matrix must be symmetric with zero diagonal".into(),
                    ));
                }
                if !(self.entropic_weight > 0.0 && self.entropic_weight.is_finite()) {
                    return Err(Error::Config(format!(
                        "entropic weight must be positive, got {}",
                        self.entropic_weight
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn num_domains(&self) -> usize {
        self.prior.len()
    }

    fn check_dim(&self, p: &SimplexDistribution) -> Result<()> {
        if p.len() != self.prior.len() {
            return Err(Error::InvalidInput(format!(
                "distribution over {} domains, prior over {}",
                p.len(),
                self.prior.len()
            )));
        }
        Ok(())
    }
}

/// Result of an entropic transport solve.
///
/// The potentials satisfy `plan_ij = exp(ν (dual_row_i + dual_col_j - M_ij))`
/// on the support; rows or columns carrying no mass have potential `-∞`.
#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    pub dim: usize,
    /// Row-major `K × K` transport plan.
    pub plan: Vec<f64>,
    pub dual_row: Vec<f64>,
    pub dual_col: Vec<f64>,
    pub iterations: usize,
    /// `max(‖P1 - p‖₁, ‖Pᵀ1 - q‖₁)` at termination.
    pub marginal_error: f64,
    /// `⟨P, M⟩`.
    pub transport_cost: f64,
    /// `⟨P, M⟩ + (1/ν) Σ P ln P`.
    pub entropic_value: f64,
}

impl SinkhornSolution {
    pub fn plan_entry(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.dim + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.chunks(self.dim).map(|row| row.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| (0..self.dim).map(|i| self.plan_entry(i, j)).sum())
            .collect()
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic optimal transport between `p` and `q` by alternating log-domain
/// row and column scaling.
pub fn sinkhorn_solve(p: &[f64], q: &[f64], cost: &CostMatrix, nu: f64) -> Result<SinkhornSolution> {
    let k = cost.dim();
    if p.len() != k || q.len() != k {
        return Err(Error::InvalidInput(format!(
            "marginals of length {} and {} for a {k}x{k} cost",
            p.len(),
            q.len()
        )));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "entropic weight must be positive, got {nu}"
        )));
    }
    if p.iter().chain(q).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidInput("marginals must be finite and non-negative".into()));
    }

    let eps = 1.0 / nu;
    let rows: Vec<usize> = (0..k).filter(|&i| p[i] > 0.0).collect();
    let cols: Vec<usize> = (0..k).filter(|&j| q[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Err(Error::InvalidInput("marginal has no mass".into()));
    }
    let log_p: Vec<f64> = p.iter().map(|x| x.ln()).collect();
    let log_q: Vec<f64> = q.iter().map(|x| x.ln()).collect();

    let mut f = vec![f64::NEG_INFINITY; k];
    let mut g = vec![f64::NEG_INFINITY; k];
    for &j in &cols {
        g[j] = 0.0;
    }

    let log_plan = |f: &[f64], g: &[f64], i: usize, j: usize| (f[i] + g[j] - cost.get(i, j)) / eps;
    let column_update = |f: &[f64], g: &mut [f64]| {
        for &j in &cols {
            let lse = log_sum_exp(rows.iter().map(|&i| (f[i] - cost.get(i, j)) / eps));
            g[j] = eps * (log_q[j] - lse);
        }
    };
    let row_error = |f: &[f64], g: &[f64]| -> f64 {
        rows.iter()
            .map(|&i| (cols.iter().map(|&j| log_plan(f, g, i, j).exp()).sum::<f64>() - p[i]).abs())
            .sum()
    };

    let mut iterations = 0;
    let mut marginal_error = f64::INFINITY;
    while iterations < SINKHORN_MAX_ITERATIONS {
        iterations += 1;
        let polished =
            iterations > NEWTON_AFTER && newton_step(&rows, &cols, p, q, cost, eps, &mut f, &mut g, marginal_error);
        if !polished {
            for &i in &rows {
                let lse = log_sum_exp(cols.iter().map(|&j| (g[j] - cost.get(i, j)) / eps));
                f[i] = eps * (log_p[i] - lse);
            }
            column_update(&f, &mut g);
        }

        let mut col_error = 0.0;
        for &j in &cols {
            let mass: f64 = rows.iter().map(|&i| log_plan(&f, &g, i, j).exp()).sum();
            col_error += (mass - q[j]).abs();
        }
        marginal_error = f64::max(row_error(&f, &g), col_error);
        if marginal_error <= SINKHORN_TOLERANCE {
            break;
        }
    }
    if !(marginal_error <= SINKHORN_TOLERANCE) {
        return Err(Error::SolverFailure {
            iterations,
            marginal_error,
        });
    }

    let mut plan = vec![0.0; k * k];
    let mut transport_cost = 0.0;
    let mut entropic_value = 0.0;
    for &i in &rows {
        for &j in &cols {
            let log_entry = log_plan(&f, &g, i, j);
            let entry = log_entry.exp();
            plan[i * k + j] = entry;
            if entry > 0.0 {
                transport_cost += entry * cost.get(i, j);
                entropic_value += entry * (cost.get(i, j) + eps * log_entry);
            }
        }
    }

    Ok(SinkhornSolution {
        dim: k,
        plan,
        dual_row: f,
        dual_col: g,
        iterations,
        marginal_error,
        transport_cost,
        entropic_value,
    })
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting; `None`
/// when `A` is numerically singular.
fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(scale > 0.0) {
        return None;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs()))?;
        if a[pivot * n + col].abs() <= 1e-14 * scale {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        for row in col + 1..n {
            let factor = a[row * n + col] / a[col * n + col];
            if factor != 0.0 {
                for k in col..n {
                    a[row * n + k] -= factor * a[col * n + k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row * n + k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row * n + row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// One damped Newton step on the row potentials of the semi-dual
/// `Φ(f) = ⟨f, p⟩ + ⟨g(f), q⟩`, where `g(f)` is the exact column update.
/// Its gradient is `p - P1` and its Hessian `-(diag(P1) - P diag(1/q) Pᵀ)/ε`.
/// Scaling alone crawls when the plan is close to diagonal; these steps
/// converge quadratically there. Returns `false` (leaving `f`, `g`
/// untouched) when the step cannot be taken.
#[allow(clippy::too_many_arguments)]
fn newton_step(
    rows: &[usize],
    cols: &[usize],
    p: &[f64],
    q: &[f64],
    cost: &CostMatrix,
    eps: f64,
    f: &mut [f64],
    g: &mut [f64],
    current_error: f64,
) -> bool {
    let n = rows.len();
    if n < 2 {
        return false;
    }
    let column_potentials = |f: &[f64]| -> Vec<f64> {
        let mut g = vec![f64::NEG_INFINITY; q.len()];
        for &j in cols {
            let lse = log_sum_exp(rows.iter().map(|&i| (f[i] - cost.get(i, j)) / eps));
            g[j] = eps * (q[j].ln() - lse);
        }
        g
    };
    let objective = |f: &[f64], g: &[f64]| -> f64 {
        rows.iter().map(|&i| f[i] * p[i]).sum::<f64>() + cols.iter().map(|&j| g[j] * q[j]).sum::<f64>()
    };
    let plan = |f: &[f64], g: &[f64]| -> Vec<f64> {
        rows.iter()
            .flat_map(|&i| cols.iter().map(move |&j| ((f[i] + g[j] - cost.get(i, j)) / eps).exp()))
            .collect()
    };
    let row_mass = |entries: &[f64]| -> Vec<f64> { entries.chunks(cols.len()).map(|r| r.iter().sum()).collect() };

    let entries = plan(f, g);
    let mass = row_mass(&entries);
    let residual: Vec<f64> = rows.iter().zip(&mass).map(|(&i, r)| p[i] - r).collect();

    // `diag(P1) - P diag(1/q) Pᵀ` is the Laplacian of the graph with
    // weights `w_ab = Σ_j P_aj P_bj / q_j` (columns are exact, so
    // `Σ_a P_aj = q_j`); building the diagonal from the weights avoids the
    // cancellation of the direct form. Grounding the first row removes the
    // all-ones null direction.
    let weight = |a: usize, b: usize| -> f64 {
        cols.iter()
            .enumerate()
            .map(|(c, &j)| entries[a * cols.len() + c] * entries[b * cols.len() + c] / q[j])
            .sum()
    };
    let mut laplacian = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..a {
            let w = weight(a, b);
            laplacian[a * n + b] = -w;
            laplacian[b * n + a] = -w;
            laplacian[a * n + a] += w;
            laplacian[b * n + b] += w;
        }
    }
    let m = n - 1;
    let mut hessian = vec![0.0; m * m];
    for a in 1..n {
        for b in 1..n {
            hessian[(a - 1) * m + (b - 1)] = laplacian[a * n + b];
        }
    }
    let rhs: Vec<f64> = residual[1..].iter().map(|r| eps * r).collect();
    // Rows whose mass sits on columns no other row reaches leave the
    // system singular; damping by the row mass turns their step into
    // ascent along the relative residual, which the trust region clips.
    for a in 0..m {
        hessian[a * m + a] += (NEWTON_DAMPING * mass[a + 1]).max(f64::MIN_POSITIVE);
    }
    // Diagonal entries span many orders of magnitude near a diagonal plan;
    // symmetric Jacobi scaling keeps the elimination well conditioned.
    let diag: Vec<f64> = (0..m).map(|a| hessian[a * m + a].sqrt()).collect();
    if diag.iter().any(|d| !(*d > 0.0)) {
        return false;
    }
    for a in 0..m {
        for b in 0..m {
            hessian[a * m + b] /= diag[a] * diag[b];
        }
    }
    let rhs: Vec<f64> = rhs.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let Some(mut step) = solve_dense(hessian, rhs) else {
        return false;
    };
    step.iter_mut().zip(&diag).for_each(|(s, d)| *s /= d);
    // Plan entries change by `exp(Δ/ε)`; far from the solution the raw step
    // overshoots by orders of magnitude, so it is clipped to a trust region.
    let largest = step.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if largest > NEWTON_TRUST * eps {
        let shrink = NEWTON_TRUST * eps / largest;
        step.iter_mut().for_each(|s| *s *= shrink);
    }
    let slope: f64 = residual[1..].iter().zip(&step).map(|(r, s)| r * s).sum();
    if !(slope > 0.0) {
        return false;
    }

    let base = objective(f, g);
    let mut t = 1.0;
    for _ in 0..40 {
        let mut trial = f.to_vec();
        for (a, s) in step.iter().enumerate() {
            trial[rows[a + 1]] += t * s;
        }
        let trial_g = column_potentials(&trial);
        let value = objective(&trial, &trial_g);
        let improved = value >= base + 1e-4 * t * slope;
        let closer = || {
            let mass = row_mass(&plan(&trial, &trial_g));
            let error: f64 = rows.iter().zip(&mass).map(|(&i, r)| (p[i] - r).abs()).sum();
            error < current_error
        };
        if value.is_finite() && (improved || closer()) {
            f.copy_from_slice(&trial);
            g.copy_from_slice(&trial_g);
            return true;
        }
        t *= 0.5;
    }
    false
}

/// `D(p || q)` for the configured kind; zero for `none`.
pub fn reg_value(spec: &RegularizerSpec, p: &SimplexDistribution) -> Result<f64> {
    spec.check_dim(p)?;
    let q = &spec.prior;
    match spec.kind {
        RegularizerKind::None => Ok(0.0),
        RegularizerKind::L2 => Ok(p.iter().zip(q.iter()).map(|(a, b)| (a - b) * (a - b)).sum()),
        RegularizerKind::Kl => kl_divergence(p, q),
        RegularizerKind::Ot => Ok(sinkhorn_solve(p, q, &spec.cost, spec.entropic_weight)?.entropic_value),
    }
}

/// Gradient of `D(p || q)` in `p`.
///
/// `l2` gives `2(p - q)`; `kl` gives `ln(p/q) + 1`, evaluated at
/// `p_k = f64::EPSILON` where `p_k = 0`; `ot` gives the centered row
/// potential of a solve in which zero entries of `p` are raised to
/// `f64::EPSILON`.
pub fn reg_gradient(spec: &RegularizerSpec, p: &SimplexDistribution) -> Result<Vec<f64>> {
    spec.check_dim(p)?;
    let q = &spec.prior;
    match spec.kind {
        RegularizerKind::None => Ok(vec![0.0; p.len()]),
        RegularizerKind::L2 => Ok(p.iter().zip(q.iter()).map(|(a, b)| 2.0 * (a - b)).collect()),
        RegularizerKind::Kl => p
            .iter()
            .zip(q.iter())
            .enumerate()
            .map(|(index, (pk, qk))| {
                if *qk <= 0.0 {
                    return Err(Error::SupportMismatch { index });
                }
                Ok((pk.max(f64::EPSILON) / qk).ln() + 1.0)
            })
            .collect(),
        RegularizerKind::Ot => {
            let floored: Vec<f64> = if p.iter().any(|x| *x < f64::EPSILON) {
                let raised: Vec<f64> = p.iter().map(|x| x.max(f64::EPSILON)).collect();
                let total: f64 = raised.iter().sum();
                raised.into_iter().map(|x| x / total).collect()
            } else {
                p.to_vec()
            };
            let solution = sinkhorn_solve(&floored, q, &spec.cost, spec.entropic_weight)?;
            let mean = solution.dual_row.iter().sum::<f64>() / p.len() as f64;
            Ok(solution.dual_row.iter().map(|a| a - mean).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simplex(v: &[f64]) -> SimplexDistribution {
        SimplexDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn l2_examples() {
        let q = simplex(&[0.5, 0.5]);
        let spec = RegularizerSpec::l2(1.0, q.clone()).unwrap();
        assert_eq!(reg_value(&spec, &q).unwrap(), 0.0);
        assert_eq!(reg_gradient(&spec, &q).unwrap(), vec![0.0, 0.0]);
        let g = reg_gradient(&spec, &simplex(&[0.75, 0.25])).unwrap();
        assert_eq!(g, vec![0.5, -0.5]);

        let spec = RegularizerSpec::l2(1.0, simplex(&[0.0, 1.0])).unwrap();
        assert_eq!(reg_value(&spec, &simplex(&[1.0, 0.0])).unwrap(), 2.0);
    }

    #[test]
    fn kl_rejects_zero_prior() {
        assert!(matches!(
            RegularizerSpec::kl(1.0, simplex(&[1.0, 0.0])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn kl_gradient_off_support_is_finite() {
        let spec = RegularizerSpec::kl(1.0, SimplexDistribution::uniform(2)).unwrap();
        let g = reg_gradient(&spec, &simplex(&[1.0, 0.0])).unwrap();
        assert!((g[0] - (2f64.ln() + 1.0)).abs() < 1e-15);
        assert!(g[1].is_finite() && g[1] < g[0]);
    }

    #[test]
    fn ot_value_with_forced_plan() {
        let vertex = simplex(&[1.0, 0.0]);
        let spec = RegularizerSpec::ot(1.0, vertex.clone(), None, 1e6).unwrap();
        assert!(reg_value(&spec, &vertex).unwrap().abs() <= 1e-6);
    }

    #[test]
    fn sinkhorn_forced_plan() {
        let sol = sinkhorn_solve(&[1.0, 0.0], &[1.0, 0.0], &CostMatrix::zero_one(2), 10.0).unwrap();
        assert_eq!(sol.plan, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(sol.marginal_error <= 1e-9);
    }

    #[test]
    fn sinkhorn_moves_all_mass() {
        let sol = sinkhorn_solve(&[1.0, 0.0], &[0.0, 1.0], &CostMatrix::zero_one(2), 100.0).unwrap();
        assert!((sol.transport_cost - 1.0).abs() <= 0.05);
    }

    #[test]
    fn sinkhorn_uniform_marginals() {
        let u = vec![1.0 / 3.0; 3];
        let sol = sinkhorn_solve(&u, &u, &CostMatrix::zero_one(3), 10.0).unwrap();
        for (r, p) in sol.row_sums().iter().zip(&u) {
            assert!((r - p).abs() <= 1e-9);
        }
        for (c, q) in sol.col_sums().iter().zip(&u) {
            assert!((c - q).abs() <= 1e-9);
        }
    }

    #[test]
    fn sinkhorn_rejects_bad_input() {
        let cost = CostMatrix::zero_one(2);
        assert!(sinkhorn_solve(&[0.5, 0.5], &[0.5, 0.5], &cost, 0.0).is_err());
        assert!(sinkhorn_solve(&[0.5, 0.5, 0.0], &[0.5, 0.5], &cost, 1.0).is_err());
        assert!(sinkhorn_solve(&[0.0, 0.0], &[0.5, 0.5], &cost, 1.0).is_err());
    }

    #[test]
    fn ot_cost_validation() {
        let asym = CostMatrix::new(2, vec![0.0, 1.0, 2.0, 0.0]).unwrap();
        assert!(RegularizerSpec::ot(1.0, SimplexDistribution::uniform(2), Some(asym), 10.0).is_err());
        assert!(CostMatrix::new(2, vec![0.0, -1.0, -1.0, 0.0]).is_err());
        assert!(RegularizerSpec::ot(
            1.0,
            SimplexDistribution::uniform(3),
            Some(CostMatrix::zero_one(2)),
            10.0
        )
        .is_err());
    }

    #[test]
    fn ot_gradient_is_centered() {
        let spec = RegularizerSpec::ot(1.0, SimplexDistribution::uniform(3), None, 10.0).unwrap();
        let g = reg_gradient(&spec, &simplex(&[0.6, 0.3, 0.1])).unwrap();
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        // Mass above the prior costs more.
        assert!(g[0] > g[1] && g[1] > g[2]);
        let g = reg_gradient(&spec, &simplex(&[0.7, 0.3, 0.0])).unwrap();
        assert!(g.iter().all(|x| x.is_finite()));
    }
}
