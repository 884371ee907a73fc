//! Value-level losses over probability distributions.
//!
//! Training code uses the logit-form graph ops
//! ([`Graph::distill_xent`](super::Graph::distill_xent) and
//! [`Graph::bce_logits`](super::Graph::bce_logits)); these functions are the
//! plain formulas for inspection and reporting.

use serde::{Deserialize, Serialize};

use super::graph::softmax_into;
use crate::error::{Error, Result};

/// Probability floor used wherever a log would otherwise diverge.
pub const PROB_FLOOR: f64 = 1e-12;

/// A probability vector: non-negative entries summing to 1 within 1e-6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassDistribution(Vec<f64>);

impl ClassDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let sum: f64 = probs.iter().sum();
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!("not a probability distribution: {probs:?}")));
        }
        Ok(Self(probs))
    }

    pub fn from_logits(logits: &[f64]) -> Self {
        let mut out = vec![0.0; logits.len()];
        softmax_into(logits, &mut out);
        Self(out)
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, k: usize) -> Self {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        Self(v)
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

    /// Index of the largest probability; the first one on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for ClassDistribution {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ClassDistribution> for Vec<f64> {
    fn from(d: ClassDistribution) -> Self {
        d.0
    }
}

/// `-ln pred[gold]`, floored so it never diverges.
pub fn cross_entropy(pred: &ClassDistribution, gold: usize) -> f64 {
    -pred.0[gold].max(PROB_FLOOR).ln()
}

/// `-[t ln p + (1 - t) ln(1 - p)]`, evaluated in logit form.
pub fn binary_cross_entropy(pred: f64, target: f64) -> f64 {
    let p = pred.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    let z = (p / (1.0 - p)).ln();
    z.max(0.0) - z * target + (-z.abs()).exp().ln_1p()
}

/// `sum target * ln(target / pred)` with `0 ln 0 = 0` and `pred` floored.
pub fn kl_divergence(target: &ClassDistribution, pred: &ClassDistribution) -> f64 {
    target
        .0
        .iter()
        .zip(&pred.0)
        .filter(|(t, _)| **t > 0.0)
        .map(|(t, p)| t * (t.ln() - p.max(PROB_FLOOR).ln()))
        .sum()
}
