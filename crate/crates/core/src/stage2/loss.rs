//! Stage-2 losses evaluated on plain values. Training uses the graph
//! versions in the parent module; these define what they must compute.

use crate::data::{iou, GroundingAnnotation, ObjectDetail};
use crate::error::{Error, Result};
use crate::neural::{binary_cross_entropy, cross_entropy};

use super::RecognitionOutput;

/// Cross-entropy of the class distribution at `gold`.
pub fn recognition_loss(output: &RecognitionOutput, gold: usize) -> f64 {
    cross_entropy(&output.class_dist, gold)
}

/// Per-object target: the best IoU between the object's box and any gold
/// box; all zeros when the entity is ungroundable.
pub fn grounding_targets(gold: &GroundingAnnotation, objects: &[ObjectDetail]) -> Vec<f64> {
    objects
        .iter()
        .map(|o| gold.boxes().iter().map(|g| iou(g, &o.bbox)).fold(0.0, f64::max))
        .collect()
}

/// Sum over objects of the binary cross-entropy between predicted overlap
/// and target.
pub fn grounding_loss(output: &RecognitionOutput, targets: &[f64]) -> Result<f64> {
    if output.overlap_scores.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} overlap scores for {} targets",
            output.overlap_scores.len(),
            targets.len()
        )));
    }
    Ok(output
        .overlap_scores
        .iter()
        .zip(targets)
        .map(|(&p, &t)| binary_cross_entropy(p, t))
        .sum())
}

pub fn combined_loss(cls: f64, grd: f64, lambda: f64) -> f64 {
    cls + lambda * grd
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BoundingBox;
    use crate::neural::ClassDistribution;
    use crate::stage1::{CandidateSource, SpanCandidate};
    use proptest::prelude::*;

    fn output(dist: Vec<f64>, scores: Vec<f64>) -> RecognitionOutput {
        RecognitionOutput {
            candidate: SpanCandidate {
                sentence_id: "s".into(),
                start: 0,
                end: 1,
                source: CandidateSource::Gold,
            },
            class_dist: ClassDistribution::new(dist).unwrap(),
            overlap_scores: scores,
        }
    }

    fn bx(a: f64, b: f64, c: f64, d: f64) -> BoundingBox {
        BoundingBox::new(a, b, c, d).unwrap()
    }

    fn obj(b: BoundingBox) -> ObjectDetail {
        ObjectDetail::new("thing", "", b).unwrap()
    }

    #[test]
    fn recognition_limits() {
        assert_eq!(recognition_loss(&output(vec![0.0, 1.0, 0.0, 0.0, 0.0], vec![]), 1), 0.0);
        let u = recognition_loss(&output(vec![0.2; 5], vec![]), 4);
        assert!((u - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn recognition_from_fixed_logits() {
        // -ln softmax([1.5, -0.5, 0.25])[2] = 1.5 + ln(1 + e^-2 + e^-1.25) - 0.25,
        // evaluated directly in double precision.
        let d = ClassDistribution::from_logits(&[1.5, -0.5, 0.25]);
        let v = recognition_loss(&output(d.probs().to_vec(), vec![]), 2);
        assert!((v - 1.601_951_863_802_801_9).abs() < 1e-12, "{v}");
    }

    #[test]
    fn targets_take_max_over_gold_boxes() {
        let objects = [obj(bx(0.0, 0.0, 10.0, 10.0)), obj(bx(5.0, 5.0, 15.0, 15.0)), obj(bx(50.0, 50.0, 60.0, 60.0))];
        assert_eq!(grounding_targets(&GroundingAnnotation::ungroundable(), &objects), vec![0.0; 3]);
        let gold = GroundingAnnotation::new(vec![bx(0.0, 0.0, 10.0, 10.0), bx(50.0, 50.0, 60.0, 70.0)]);
        let t = grounding_targets(&gold, &objects);
        assert_eq!(t[0], 1.0);
        assert!((t[1] - 25.0 / 175.0).abs() < 1e-12);
        assert!((t[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn brute_force_iou_table() {
        // 3 gold boxes x 4 objects; expected maxima computed by hand from
        // the overlap rectangles.
        let gold = GroundingAnnotation::new(vec![bx(0.0, 0.0, 4.0, 4.0), bx(2.0, 2.0, 6.0, 6.0), bx(10.0, 0.0, 12.0, 2.0)]);
        let objects = [
            obj(bx(0.0, 0.0, 4.0, 4.0)),   // equals gold 0
            obj(bx(2.0, 2.0, 4.0, 4.0)),   // inside both 0 and 1: 4/16
            obj(bx(11.0, 0.0, 13.0, 2.0)), // half of gold 2: 2/6
            obj(bx(20.0, 20.0, 21.0, 21.0)),
        ];
        let t = grounding_targets(&gold, &objects);
        let expected = [1.0, 0.25, 2.0 / 6.0, 0.0];
        for (a, b) in t.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{t:?}");
        }
    }

    #[test]
    fn grounding_loss_values() {
        let o = output(vec![1.0], vec![0.5; 3]);
        assert!((grounding_loss(&o, &[0.5; 3]).unwrap() - 3.0 * 2f64.ln()).abs() < 1e-12);
        let perfect = output(vec![1.0], vec![1.0, 0.0]);
        assert!(grounding_loss(&perfect, &[1.0, 0.0]).unwrap() < 1e-10);
        assert!(grounding_loss(&o, &[0.5; 2]).is_err());
        // -(0.7 ln 0.9 + 0.3 ln 0.1) + -(0.2 ln 0.3 + 0.8 ln 0.7), direct evaluation.
        let fixture = output(vec![1.0], vec![0.9, 0.3]);
        let v = grounding_loss(&fixture, &[0.7, 0.2]).unwrap();
        assert!((v - 1.290_662_404_874_865_4).abs() < 1e-12, "{v}");
    }

    #[test]
    fn combination() {
        assert_eq!(combined_loss(0.3, 123.0, 0.0), 0.3);
        assert!((combined_loss(0.3, 0.2, 1.0) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn moving_a_score_toward_its_target_lowers_the_loss(
            scores in proptest::collection::vec(0.02..0.98f64, 1..6),
            targets in proptest::collection::vec(0.0..1.0f64, 6),
            j in 0usize..6,
            step in 0.05..0.9f64,
        ) {
            let n = scores.len();
            let j = j % n;
            let t = &targets[..n];
            prop_assume!((scores[j] - t[j]).abs() > 1e-3);
            let mut moved = scores.clone();
            moved[j] += step * (t[j] - scores[j]);
            let before = grounding_loss(&output(vec![1.0], scores), t).unwrap();
            let after = grounding_loss(&output(vec![1.0], moved), t).unwrap();
            prop_assert!(after < before);
        }
    }
}
