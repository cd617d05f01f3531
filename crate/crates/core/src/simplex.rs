//! Strictly positive categorical distributions and context-indexed families of them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|Σp − 1|` for a valid distribution.
pub const SUM_TOL: f64 = 1e-12;

/// A strictly positive probability vector over a finite vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Validates an already normalised vector.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_entries(&probs)?;
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::NotNormalized(sum));
        }
        Ok(Self(probs))
    }

    pub fn uniform(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::LengthTooSmall(len));
        }
        Ok(Self(vec![1.0 / len as f64; len]))
    }

    /// Caller guarantees positivity and normalisation.
    pub(crate) fn from_vec_unchecked(probs: Vec<f64>) -> Self {
        debug_assert!(probs.len() >= 2);
        debug_assert!(probs.iter().all(|&p| p > 0.0 && p.is_finite()));
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn l1_distance(&self, other: &Distribution) -> Result<f64> {
        ensure_same_len(self, other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

impl TryFrom<Vec<f64>> for Distribution {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Distribution::new(probs)
    }
}

impl From<Distribution> for Vec<f64> {
    fn from(d: Distribution) -> Self {
        d.0
    }
}

impl AsRef<[f64]> for Distribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_entries(raw: &[f64]) -> Result<()> {
    if raw.len() < 2 {
        return Err(Error::LengthTooSmall(raw.len()));
    }
    for (index, &value) in raw.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::NonFinite { index, value });
        }
        if value == 0.0 {
            return Err(Error::ZeroEntry { index });
        }
    }
    Ok(())
}

/// Divides a non-negative vector by its sum. Zero entries are rejected, not clamped.
pub fn normalize(raw: &[f64]) -> Result<Distribution> {
    check_entries(raw)?;
    let sum: f64 = raw.iter().sum();
    if !sum.is_finite() {
        return Err(Error::NonFinite {
            index: raw.len(),
            value: sum,
        });
    }
    let probs: Vec<f64> = raw.iter().map(|x| x / sum).collect();
    // entries that underflow after division would break positivity
    if let Some(index) = probs.iter().position(|&p| p == 0.0) {
        return Err(Error::ZeroEntry { index });
    }
    Ok(Distribution(probs))
}

pub(crate) fn ensure_same_len(p: &Distribution, q: &Distribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            found: q.len(),
        });
    }
    Ok(())
}

/// Entrywise `λp + (1−λ)q`.
pub fn convex_combine(lambda: f64, p: &Distribution, q: &Distribution) -> Result<Distribution> {
    ensure_same_len(p, q)?;
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::LambdaOutOfRange(lambda));
    }
    if lambda == 1.0 {
        return Ok(p.clone());
    }
    if lambda == 0.0 {
        return Ok(q.clone());
    }
    // q + λ(p − q) leaves entries where p = q untouched
    let probs =
        p.0.iter()
            .zip(&q.0)
            .map(|(a, b)| b + lambda * (a - b))
            .collect();
    Ok(Distribution::from_vec_unchecked(probs))
}

/// `Σ w_k p_k` for weights that already sum to one. Zero weights contribute nothing.
pub(crate) fn weighted_sum(weights: &[f64], dists: &[&Distribution]) -> Distribution {
    debug_assert_eq!(weights.len(), dists.len());
    let len = dists[0].len();
    let mut out = vec![0.0; len];
    for (w, d) in weights.iter().zip(dists) {
        for (o, p) in out.iter_mut().zip(d.probs()) {
            *o += w * p;
        }
    }
    Distribution::from_vec_unchecked(out)
}

/// Normalises a vector of log-weights with the log-sum-exp shift.
pub(crate) fn softmax_from_logs(logs: &[f64]) -> Result<Distribution> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let unnorm: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    normalize(&unnorm)
}

/// A weighted family of distributions indexed by context; the weights are the
/// data distribution over contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalModel {
    contexts: Vec<(f64, Distribution)>,
}

impl ConditionalModel {
    pub fn new(contexts: Vec<(f64, Distribution)>) -> Result<Self> {
        let Some((_, first)) = contexts.first() else {
            return Err(Error::InvalidContextWeights("no contexts".into()));
        };
        let len = first.len();
        let mut total = 0.0;
        for (w, d) in &contexts {
            if !(w.is_finite() && *w > 0.0) {
                return Err(Error::InvalidContextWeights(format!(
                    "weight {w} is not positive"
                )));
            }
            if d.len() != len {
                return Err(Error::DimensionMismatch {
                    expected: len,
                    found: d.len(),
                });
            }
            total += w;
        }
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidContextWeights(format!(
                "weights sum to {total}"
            )));
        }
        Ok(Self { contexts })
    }

    pub fn single(dist: Distribution) -> Self {
        Self {
            contexts: vec![(1.0, dist)],
        }
    }

    /// Same context weights, new per-context distributions.
    pub fn with_dists(&self, dists: Vec<Distribution>) -> Result<Self> {
        if dists.len() != self.contexts.len() {
            return Err(Error::DimensionMismatch {
                expected: self.contexts.len(),
                found: dists.len(),
            });
        }
        let contexts = self
            .contexts
            .iter()
            .zip(dists)
            .map(|((w, _), d)| (*w, d))
            .collect();
        Self::new(contexts)
    }

    pub fn num_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.contexts[0].1.len()
    }

    pub fn contexts(&self) -> &[(f64, Distribution)] {
        &self.contexts
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.contexts.iter().map(|(w, _)| *w)
    }

    pub fn dists(&self) -> impl Iterator<Item = &Distribution> + '_ {
        self.contexts.iter().map(|(_, d)| d)
    }

    pub fn dist(&self, context: usize) -> &Distribution {
        &self.contexts[context].1
    }

    /// Checks that `other` has the same context count, weights and vocabulary.
    pub fn ensure_compatible(&self, other: &ConditionalModel) -> Result<()> {
        if self.num_contexts() != other.num_contexts() {
            return Err(Error::DimensionMismatch {
                expected: self.num_contexts(),
                found: other.num_contexts(),
            });
        }
        if self.vocab_size() != other.vocab_size() {
            return Err(Error::DimensionMismatch {
                expected: self.vocab_size(),
                found: other.vocab_size(),
            });
        }
        if self
            .weights()
            .zip(other.weights())
            .any(|(a, b)| (a - b).abs() > SUM_TOL)
        {
            return Err(Error::ContextWeightMismatch);
        }
        Ok(())
    }
}
