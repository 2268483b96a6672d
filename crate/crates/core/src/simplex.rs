//! Exact operations on the probability simplex.
//!
//! The adversarial distribution over domains lives on
//! `Δ = { p ∈ R^K : p_k ≥ 0, Σ_k p_k = 1 }`. Two updates move it: the
//! multiplicative (exponentiated-gradient) step used by the unregularized
//! trainer, and the Euclidean projection used after each regularized ascent
//! step. Both are pure functions.

use std::ops::Deref;

use crate::error::{Error, Result};

/// Largest tolerated drift of `Σ p_k` from one before renormalizing.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Drift accepted from user-supplied weights before they are renormalized.
const CONSTRUCTOR_TOLERANCE: f64 = 1e-9;

/// A point on the probability simplex over `K ≥ 1` domains.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexDistribution {
    weights: Vec<f64>,
}

impl SimplexDistribution {
    /// Validates `weights` (finite, non-negative, summing to one within
    /// `1e-9`) and renormalizes any drift larger than [`SUM_TOLERANCE`].
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("simplex needs at least one weight".into()));
        }
        if let Some((k, w)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < 0.0) {
            return Err(Error::InvalidInput(format!(
                "weight {k} = {w} is not a finite non-negative number"
            )));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > CONSTRUCTOR_TOLERANCE {
            return Err(Error::InvalidInput(format!("weights sum to {sum}, expected 1")));
        }
        Ok(Self::renormalized(weights))
    }

    /// Normalizes a non-negative vector with positive mass onto the simplex.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidInput("simplex needs at least one weight".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput("weights must be finite and non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 || !sum.is_finite() {
            return Err(Error::InvalidInput("weights have no mass".into()));
        }
        Ok(Self {
            weights: weights.into_iter().map(|w| w / sum).collect(),
        })
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform distribution over zero domains");
        Self {
            weights: vec![1.0 / k as f64; k],
        }
    }

    pub fn one_hot(k: usize, index: usize) -> Self {
        assert!(index < k, "one-hot index {index} out of range for K = {k}");
        let mut weights = vec![0.0; k];
        weights[index] = 1.0;
        Self { weights }
    }

    fn renormalized(mut weights: Vec<f64>) -> Self {
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            weights.iter_mut().for_each(|w| *w /= sum);
        }
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    /// `max_k |p_k - q_k|`.
    pub fn linf_distance(&self, other: &Self) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `Σ_k |p_k - q_k|`.
    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

impl Deref for SimplexDistribution {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.weights
    }
}

/// Per-domain losses, either full empirical risks `f(W)` or minibatch
/// estimates `f̂^t(W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossVector(Vec<f64>);

impl LossVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `max_k f_k`.
    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Lowest index attaining the maximum.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, v) in self.0.iter().enumerate() {
            if *v > self.0[best] {
                best = k;
            }
        }
        best
    }

    /// `Σ_k p_k f_k`.
    pub fn weighted_by(&self, p: &[f64]) -> f64 {
        self.0.iter().zip(p).map(|(f, w)| f * w).sum()
    }
}

impl Deref for LossVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for LossVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// Euclidean projection onto the simplex via the sorted KKT threshold.
///
/// Sorting is by descending value with ties broken by ascending index, so
/// the result is deterministic. A vector already on the simplex (within
/// [`SUM_TOLERANCE`]) is returned unchanged, which makes the projection
/// exactly idempotent.
pub fn project_to_simplex(v: &[f64]) -> Result<SimplexDistribution> {
    if v.is_empty() {
        return Err(Error::InvalidInput("cannot project an empty vector".into()));
    }
    if let Some((k, x)) = v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("entry {k} = {x} is not finite")));
    }

    let sum: f64 = v.iter().sum();
    if v.iter().all(|x| *x >= 0.0) && (sum - 1.0).abs() <= SUM_TOLERANCE {
        return Ok(SimplexDistribution { weights: v.to_vec() });
    }

    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));

    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (j, &i) in order.iter().enumerate() {
        cumulative += v[i];
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if v[i] - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }

    let weights = v.iter().map(|x| (x - theta).max(0.0)).collect();
    Ok(SimplexDistribution::renormalized(weights))
}

/// Multiplicative-weights step `p'_k ∝ p_k exp(η f_k)`.
///
/// The exponent is shifted by its maximum over the support of `p`, so
/// large losses cannot overflow. Coordinates with `p_k = 0` stay zero.
pub fn multiplicative_update(p: &SimplexDistribution, losses: &[f64], eta_p: f64) -> Result<SimplexDistribution> {
    if losses.len() != p.len() {
        return Err(Error::InvalidInput(format!(
            "{} losses for {} domains",
            losses.len(),
            p.len()
        )));
    }
    if !(eta_p > 0.0 && eta_p.is_finite()) {
        return Err(Error::InvalidInput(format!("step size must be positive, got {eta_p}")));
    }
    if let Some((k, f)) = losses.iter().enumerate().find(|(_, f)| !f.is_finite() || **f < 0.0) {
        return Err(Error::ContractViolation(format!(
            "loss {k} = {f}; multiplicative update needs finite non-negative losses"
        )));
    }

    let shift = p
        .iter()
        .zip(losses)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, f)| eta_p * f)
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(Error::InvalidInput("distribution has no mass".into()));
    }
    if !shift.is_finite() {
        return Err(Error::InvalidInput("step size times loss overflows".into()));
    }

    let scaled: Vec<f64> = p
        .iter()
        .zip(losses)
        .map(|(w, f)| if *w > 0.0 { w * (eta_p * f - shift).exp() } else { 0.0 })
        .collect();
    let normalizer: f64 = scaled.iter().sum();
    Ok(SimplexDistribution::renormalized(
        scaled.into_iter().map(|w| w / normalizer).collect(),
    ))
}

/// `Σ_k p_k ln(p_k / q_k)` with `0 ln 0 = 0`.
pub fn kl_divergence(p: &SimplexDistribution, q: &SimplexDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    let mut total = 0.0;
    for (index, (pk, qk)) in p.iter().zip(q.iter()).enumerate() {
        if *pk > 0.0 {
            if *qk <= 0.0 {
                return Err(Error::SupportMismatch { index });
            }
            total += pk * (pk / qk).ln();
        }
    }
    Ok(total.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn projection_keeps_simplex_points() {
        let p = project_to_simplex(&[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(p.weights(), &[0.2, 0.3, 0.5]);
    }

    #[test]
    fn projection_clips_to_vertex() {
        let p = project_to_simplex(&[1.5, 0.5]).unwrap();
        assert!(close(&p, &[1.0, 0.0], 1e-15));
        let p = project_to_simplex(&[0.5, 0.5, -1.0]).unwrap();
        assert!(close(&p, &[0.5, 0.5, 0.0], 1e-15));
    }

    #[test]
    fn projection_breaks_ties_deterministically() {
        let p = project_to_simplex(&[3.0, 3.0, 3.0]).unwrap();
        assert!(close(&p, &[1.0 / 3.0; 3], 1e-15));
        assert_eq!(p.weights(), project_to_simplex(&[3.0, 3.0, 3.0]).unwrap().weights());
    }

    #[test]
    fn projection_rejects_non_finite() {
        assert!(matches!(
            project_to_simplex(&[1.0, f64::NAN]),
            Err(Error::InvalidInput(_))
        ));
        assert!(project_to_simplex(&[]).is_err());
    }

    #[test]
    fn multiplicative_update_examples() {
        let half = SimplexDistribution::uniform(2);
        let p = multiplicative_update(&half, &[0.0, 0.0], 1.0).unwrap();
        assert_eq!(p.weights(), &[0.5, 0.5]);

        let p = multiplicative_update(&half, &[3f64.ln(), 0.0], 1.0).unwrap();
        assert!(close(&p, &[0.75, 0.25], 1e-15));

        let third = SimplexDistribution::uniform(3);
        for c in [0.0, 0.7, 12.0, 1e4] {
            let p = multiplicative_update(&third, &[c, c, c], 0.3).unwrap();
            assert!(close(&p, &[1.0 / 3.0; 3], 1e-15));
        }
    }

    #[test]
    fn multiplicative_update_keeps_zeros() {
        let p = SimplexDistribution::new(vec![0.0, 0.4, 0.6]).unwrap();
        let next = multiplicative_update(&p, &[100.0, 1.0, 2.0], 5.0).unwrap();
        assert_eq!(next[0], 0.0);
        assert!((next.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn multiplicative_update_survives_huge_losses() {
        let p = SimplexDistribution::uniform(2);
        let next = multiplicative_update(&p, &[1e6, 0.0], 1.0).unwrap();
        assert!(close(&next, &[1.0, 0.0], 1e-15));
    }

    #[test]
    fn multiplicative_update_rejects_negative_loss() {
        let p = SimplexDistribution::uniform(2);
        assert!(matches!(
            multiplicative_update(&p, &[-0.1, 0.0], 1.0),
            Err(Error::ContractViolation(_))
        ));
        assert!(multiplicative_update(&p, &[0.1, 0.0], 0.0).is_err());
    }

    #[test]
    fn kl_examples() {
        let half = SimplexDistribution::uniform(2);
        assert_eq!(kl_divergence(&half, &half).unwrap(), 0.0);

        let vertex = SimplexDistribution::one_hot(2, 0);
        assert!((kl_divergence(&vertex, &half).unwrap() - 2f64.ln()).abs() < 1e-15);

        let p = SimplexDistribution::new(vec![0.25, 0.75]).unwrap();
        let expected = 0.25 * 0.5f64.ln() + 0.75 * 1.5f64.ln();
        assert!((kl_divergence(&p, &half).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn kl_support_mismatch() {
        let p = SimplexDistribution::uniform(2);
        let q = SimplexDistribution::one_hot(2, 1);
        assert!(matches!(
            kl_divergence(&p, &q),
            Err(Error::SupportMismatch { index: 0 })
        ));
    }

    #[test]
    fn constructor_validation() {
        assert!(SimplexDistribution::new(vec![]).is_err());
        assert!(SimplexDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexDistribution::new(vec![-0.1, 1.1]).is_err());
        let p = SimplexDistribution::new(vec![0.5, 0.5 + 1e-10]).unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(SimplexDistribution::from_unnormalized(vec![0.0, 0.0]).is_err());
        let p = SimplexDistribution::from_unnormalized(vec![1.0, 3.0]).unwrap();
        assert_eq!(p.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn loss_vector_argmax_prefers_lowest_index() {
        let f = LossVector::new(vec![1.0, 3.0, 3.0]);
        assert_eq!(f.argmax(), 1);
        assert_eq!(f.max(), 3.0);
    }
}
