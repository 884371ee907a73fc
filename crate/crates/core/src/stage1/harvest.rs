//! Cross-fold harvesting of false candidates for the non-entity class.

use rand::seq::SliceRandom;

use super::{detect_candidates, train_stage1, CandidateSource, SpanCandidate, Stage1Config, Stage1Model};
use crate::data::{Dataset, TaggedSentence};
use crate::error::{Error, Result};
use crate::neural::params::{derive_seed, rng_from_seed};
use crate::neural::EncoderShape;

pub trait CandidateDetector {
    fn detect(&self, sentences: &[TaggedSentence]) -> Result<Vec<SpanCandidate>>;
}

impl CandidateDetector for Stage1Model {
    fn detect(&self, sentences: &[TaggedSentence]) -> Result<Vec<SpanCandidate>> {
        detect_candidates(self, sentences)
    }
}

/// Shuffles `0..n` with a seeded generator and deals it round-robin into
/// `folds` held-out sets, each sorted.
pub fn fold_partition(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::Invalid(format!("{n} sentences cannot fill {folds} folds; a fold would be empty")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(derive_seed(seed, "folds")));
    let mut parts = vec![Vec::new(); folds];
    for (k, i) in order.into_iter().enumerate() {
        parts[k % folds].push(i);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Predicted spans of `sentence` that are not exactly a gold span.
pub fn negatives_against_gold(sentence: &TaggedSentence, predicted: &[SpanCandidate]) -> Vec<SpanCandidate> {
    let gold = sentence.gold_spans();
    predicted
        .iter()
        .filter(|c| c.sentence_id == sentence.id && !gold.iter().any(|g| c.same_range(g.start, g.end)))
        .map(|c| SpanCandidate {
            source: CandidateSource::FoldNegative,
            ..c.clone()
        })
        .collect()
}

/// Trains one detector per fold on the other folds and collects its false
/// candidates on the held-out fold. `train_fold(subset, fold_seed)` builds
/// the detector. Output follows training-set order.
pub fn harvest_with<D, T>(train: &Dataset, folds: usize, seed: u64, mut train_fold: T) -> Result<Vec<SpanCandidate>>
where
    D: CandidateDetector,
    T: FnMut(&Dataset, u64) -> Result<D>,
{
    let parts = fold_partition(train.len(), folds, seed)?;
    let mut per_sentence: Vec<Vec<SpanCandidate>> = vec![Vec::new(); train.len()];
    for (k, held_out) in parts.iter().enumerate() {
        let mut in_fold = vec![false; train.len()];
        for &i in held_out {
            in_fold[i] = true;
        }
        let rest: Vec<TaggedSentence> = train
            .sentences
            .iter()
            .zip(&in_fold)
            .filter(|(_, &f)| !f)
            .map(|(s, _)| s.clone())
            .collect();
        let subset = Dataset {
            name: format!("{}-fold{k}", train.name),
            sentences: rest,
            entity_types: train.entity_types.clone(),
            split: train.split,
        };
        let detector = train_fold(&subset, derive_seed(seed, &format!("fold-{k}")))?;
        let held: Vec<TaggedSentence> = held_out.iter().map(|&i| train.sentences[i].clone()).collect();
        let predicted = detector.detect(&held)?;
        for &i in held_out {
            per_sentence[i] = negatives_against_gold(&train.sentences[i], &predicted);
        }
        log::info!("fold {}/{folds}: {} held-out sentences", k + 1, held_out.len());
    }
    Ok(per_sentence.into_iter().flatten().collect())
}

/// Fold models reuse the final model's hyperparameters and plain
/// cross-entropy.
pub fn harvest_fold_negatives(
    train: &Dataset,
    config: &Stage1Config,
    shape: &EncoderShape,
    folds: usize,
    seed: u64,
) -> Result<Vec<SpanCandidate>> {
    harvest_with(train, folds, seed, |subset, fold_seed| {
        train_stage1(subset, config, shape, fold_seed, None).map(|(m, _)| m)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticSpec};
    use crate::stage1::candidates_from_tags;

    struct Oracle {
        extra: bool,
    }

    impl CandidateDetector for Oracle {
        fn detect(&self, sentences: &[TaggedSentence]) -> Result<Vec<SpanCandidate>> {
            let mut out = Vec::new();
            for s in sentences {
                out.extend(candidates_from_tags(s, &s.tags, CandidateSource::Predicted));
                if self.extra {
                    // The final token is always "." and never gold.
                    out.push(SpanCandidate::new(s, s.len() - 1, s.len(), CandidateSource::Predicted)?);
                }
            }
            Ok(out)
        }
    }

    fn corpus() -> Dataset {
        generate(&SyntheticSpec {
            sentences: 40,
            with_images: false,
            ..SyntheticSpec::default()
        })
        .unwrap()
        .dataset
    }

    #[test]
    fn perfect_detector_yields_no_negatives() {
        let ds = corpus();
        let neg = harvest_with(&ds, 4, 1, |_, _| Ok(Oracle { extra: false })).unwrap();
        assert!(neg.is_empty());
    }

    #[test]
    fn one_extra_span_per_sentence() {
        let ds = corpus();
        let neg = harvest_with(&ds, 4, 1, |_, _| Ok(Oracle { extra: true })).unwrap();
        assert_eq!(neg.len(), ds.len());
        assert!(neg.iter().all(|c| c.source == CandidateSource::FoldNegative));
    }

    #[test]
    fn folds_cover_every_sentence_once() {
        let parts = fold_partition(200, 4, 9).unwrap();
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
        assert!(parts.iter().all(|p| p.len() == 50));
        assert_eq!(parts, fold_partition(200, 4, 9).unwrap());
        assert_ne!(parts, fold_partition(200, 4, 10).unwrap());
    }

    #[test]
    fn fold_models_train_on_the_complement() {
        let ds = corpus();
        let parts = fold_partition(ds.len(), 4, 2).unwrap();
        let mut k = 0;
        harvest_with(&ds, 4, 2, |subset, _| {
            assert_eq!(subset.len(), ds.len() - parts[k].len());
            for &i in &parts[k] {
                assert!(subset.sentence(&ds.sentences[i].id).is_none());
            }
            k += 1;
            Ok(Oracle { extra: false })
        })
        .unwrap();
        assert_eq!(k, 4);
    }

    #[test]
    fn empty_fold_is_an_error() {
        assert!(fold_partition(3, 4, 0).is_err());
        assert!(fold_partition(10, 1, 0).is_err());
    }
}
