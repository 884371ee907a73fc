//! Teacher-trusting self-distillation.
//!
//! A teacher is trained with plain cross-entropy and frozen. The student's
//! per-sample classification loss is
//! `a * CE(gold, S) + (1 - a) * KL(T || S)`, where `a` is the teacher's
//! probability of the gold class: samples the teacher agrees with are fit
//! to their label, samples it doubts are fit to the teacher instead.

pub mod bench;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::params::derive_seed;
use crate::neural::{cross_entropy, kl_divergence, ClassDistribution};

pub use bench::{noise_benchmark, NoiseReport, NoiseTask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TytMode {
    /// `a` = teacher probability of the gold class.
    Adaptive,
    /// `a` fixed at 0.5.
    Half,
    /// `a` fixed at 0: pure teacher matching.
    Full,
    /// No student; plain cross-entropy.
    Off,
}

impl TytMode {
    pub const ALL: [TytMode; 4] = [TytMode::Off, TytMode::Adaptive, TytMode::Half, TytMode::Full];

    /// Balancing weight for one sample.
    pub fn weight(self, teacher: &[f64], gold: usize) -> f64 {
        match self {
            TytMode::Adaptive => teacher[gold],
            TytMode::Half => 0.5,
            TytMode::Full => 0.0,
            TytMode::Off => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TytMode::Adaptive => "adaptive",
            TytMode::Half => "half",
            TytMode::Full => "full",
            TytMode::Off => "off",
        }
    }
}

impl fmt::Display for TytMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for TytMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adaptive" | "tyt" => Ok(TytMode::Adaptive),
            "half" => Ok(TytMode::Half),
            "full" => Ok(TytMode::Full),
            "off" | "none" => Ok(TytMode::Off),
            other => Err(Error::Config(format!("unknown distillation mode `{other}`"))),
        }
    }
}

/// One student training sample with its teacher distribution. The weight
/// is always recomputed from the distribution, never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TytSample {
    pub gold: usize,
    pub teacher: ClassDistribution,
}

impl TytSample {
    pub fn weight(&self, mode: TytMode) -> f64 {
        mode.weight(self.teacher.probs(), self.gold)
    }
}

/// Value of the per-sample distillation loss.
pub fn tyt_loss(student: &ClassDistribution, gold: usize, teacher: &ClassDistribution, mode: TytMode) -> f64 {
    let a = mode.weight(teacher.probs(), gold);
    let ce = cross_entropy(student, gold);
    if a >= 1.0 {
        return ce;
    }
    a * ce + (1.0 - a) * kl_divergence(teacher, student)
}

/// Per-sample weights for a batch, in the shape the graph op expects.
pub fn batch_weights(mode: TytMode, teacher: &[Vec<f64>], gold: &[usize]) -> Vec<f64> {
    teacher.iter().zip(gold).map(|(t, &g)| mode.weight(t, g)).collect()
}

/// Trains a teacher, then (unless `mode` is off) a student against it.
///
/// `train_fn(teacher, seed)` trains one model from a fresh initialization;
/// it receives the frozen teacher when training the student. With
/// [`TytMode::Off`] the teacher is returned in both positions.
pub fn distill<M, F>(mode: TytMode, seed: u64, mut train_fn: F) -> Result<(M, M)>
where
    M: Clone,
    F: FnMut(Option<(&M, TytMode)>, u64) -> Result<M>,
{
    let teacher = train_fn(None, derive_seed(seed, "teacher"))?;
    if mode == TytMode::Off {
        return Ok((teacher.clone(), teacher));
    }
    let student = train_fn(Some((&teacher, mode)), derive_seed(seed, "student"))?;
    Ok((teacher, student))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(v: &[f64]) -> ClassDistribution {
        ClassDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn confident_teacher_reduces_to_cross_entropy() {
        let s = d(&[0.6, 0.3, 0.1]);
        let t = ClassDistribution::one_hot(3, 1);
        assert!((tyt_loss(&s, 1, &t, TytMode::Adaptive) - cross_entropy(&s, 1)).abs() < 1e-12);
    }

    #[test]
    fn full_mode_with_matching_teacher_is_zero() {
        let s = d(&[0.6, 0.3, 0.1]);
        assert!(tyt_loss(&s, 2, &s, TytMode::Full).abs() < 1e-9);
    }

    #[test]
    fn adaptive_worked_example() {
        // Oracle: 0.7 * -ln 0.5 + 0.3 * KL([.7,.2,.1] || [.5,.3,.2]) in double
        // precision = 0.7 * 0.6931471805599453 + 0.3 * 0.0851228259572216.
        let v = tyt_loss(&d(&[0.5, 0.3, 0.2]), 0, &d(&[0.7, 0.2, 0.1]), TytMode::Adaptive);
        assert!((v - 0.510_739_874_179_128_2).abs() < 1e-12, "{v}");
    }

    #[test]
    fn mode_weights() {
        let t = [0.2, 0.8];
        assert_eq!(TytMode::Adaptive.weight(&t, 1), 0.8);
        assert_eq!(TytMode::Half.weight(&t, 1), 0.5);
        assert_eq!(TytMode::Full.weight(&t, 1), 0.0);
        assert_eq!(TytMode::Off.weight(&t, 0), 1.0);
        assert_eq!("TYT".parse::<TytMode>().unwrap(), TytMode::Adaptive);
        assert!("sometimes".parse::<TytMode>().is_err());
    }

    #[test]
    fn off_mode_returns_teacher_twice() {
        let mut calls = 0;
        let (t, s) = distill(TytMode::Off, 3, |teacher, seed| {
            calls += 1;
            assert!(teacher.is_none());
            Ok(seed)
        })
        .unwrap();
        assert_eq!((t, calls), (s, 1));
    }

    #[test]
    fn student_gets_frozen_teacher_and_fresh_seed() {
        let (t, s) = distill(TytMode::Half, 3, |teacher, seed| {
            Ok(match teacher {
                None => seed,
                Some((t, mode)) => {
                    assert_eq!(mode, TytMode::Half);
                    assert_ne!(*t, seed);
                    seed
                }
            })
        })
        .unwrap();
        assert_ne!(t, s);
    }

    fn arb_dist(n: usize) -> impl Strategy<Value = ClassDistribution> {
        proptest::collection::vec(-4.0..4.0f64, n).prop_map(|z| ClassDistribution::from_logits(&z))
    }

    proptest! {
        #[test]
        fn weight_is_teacher_gold_probability(t in arb_dist(4), g in 0usize..4) {
            let sample = TytSample { gold: g, teacher: t.clone() };
            prop_assert_eq!(sample.weight(TytMode::Adaptive), t.probs()[g]);
        }

        #[test]
        fn loss_is_lipschitz_in_weight(s in arb_dist(3), t in arb_dist(3), g in 0usize..3, a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let ce = cross_entropy(&s, g);
            let kl = kl_divergence(&t, &s);
            let at = |w: f64| w * ce + (1.0 - w) * kl;
            prop_assert!((at(a) - at(b)).abs() <= (a - b).abs() * (ce + kl) + 1e-12);
        }

        #[test]
        fn unit_weight_equals_cross_entropy(s in arb_dist(5), g in 0usize..5) {
            let t = ClassDistribution::one_hot(5, g);
            prop_assert!((tyt_loss(&s, g, &t, TytMode::Adaptive) - cross_entropy(&s, g)).abs() < 1e-12);
        }

        #[test]
        fn zero_weight_self_teacher_is_zero(s in arb_dist(5), g in 0usize..5) {
            prop_assert!(tyt_loss(&s, g, &s, TytMode::Full).abs() < 1e-9);
        }
    }
}
