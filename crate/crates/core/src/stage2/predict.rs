//! Inference: drop non-entities, pick a region per surviving candidate.

use std::path::Path;
use std::thread;

use serde::{Deserialize, Serialize};

use super::{CandidateInput, RecognitionOutput, Stage2Meta, Stage2Model};
use crate::data::{BoundingBox, EntityType};
use crate::error::Result;
use crate::io::{read_jsonl, write_jsonl_atomic};
use crate::knowledge::{build_prompt, RankedObject};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityPrediction {
    pub sentence_id: String,
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    pub region: Option<BoundingBox>,
}

/// Turns one recognition output into a prediction. `objects` are the
/// prompt's included objects, aligned with the overlap scores.
pub fn decide(
    meta: &Stage2Meta,
    output: &RecognitionOutput,
    objects: &[RankedObject],
    threshold: f64,
) -> Option<EntityPrediction> {
    let class = output.class_dist.argmax();
    if class == meta.non_entity_index() {
        return None;
    }
    let best = output
        .overlap_scores
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (j, &s)| match best {
            Some((_, b)) if b >= s => best,
            _ => Some((j, s)),
        });
    let region = match best {
        Some((j, s)) if s >= threshold => Some(objects[j].object.bbox),
        _ => None,
    };
    Some(EntityPrediction {
        sentence_id: output.candidate.sentence_id.clone(),
        start: output.candidate.start,
        end: output.candidate.end,
        entity_type: meta.classes[class].clone(),
        region,
    })
}

/// Recognizes every candidate, in input order, using up to `threads`
/// workers over the frozen model.
pub fn predict(
    model: &Stage2Model,
    inputs: &[CandidateInput<'_>],
    threshold: f64,
    threads: usize,
) -> Result<Vec<EntityPrediction>> {
    let one = |input: &CandidateInput<'_>| -> Result<Option<EntityPrediction>> {
        let prompt = build_prompt(
            input.candidate,
            input.sentence,
            input.bundle,
            &model.meta.vocab,
            model.meta.encoder.max_sequence_length,
        )?;
        let output = model.recognize(&prompt)?;
        Ok(decide(&model.meta, &output, &input.bundle.objects, threshold))
    };
    let chunk = inputs.len().div_ceil(threads.max(1)).max(1);
    let parts: Vec<Result<Vec<Option<EntityPrediction>>>> = thread::scope(|s| {
        let handles: Vec<_> = inputs
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(one).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("prediction worker panicked")).collect()
    });
    let mut out = Vec::new();
    for part in parts {
        out.extend(part?.into_iter().flatten());
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, predictions: &[EntityPrediction]) -> Result<()> {
    write_jsonl_atomic(path, predictions)
}

pub fn read_predictions(path: &Path) -> Result<Vec<EntityPrediction>> {
    read_jsonl(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::vocab::Vocab;
    use crate::data::ObjectDetail;
    use crate::neural::{ClassDistribution, EncoderShape};
    use crate::stage1::{CandidateSource, SpanCandidate};

    fn meta() -> Stage2Meta {
        Stage2Meta::new(&EncoderShape::default(), Vocab::build([]), &[EntityType::new("ORG"), EntityType::new("PER")])
    }

    fn output(dist: Vec<f64>, scores: Vec<f64>) -> RecognitionOutput {
        RecognitionOutput {
            candidate: SpanCandidate {
                sentence_id: "s".into(),
                start: 1,
                end: 3,
                source: CandidateSource::Predicted,
            },
            class_dist: ClassDistribution::new(dist).unwrap(),
            overlap_scores: scores,
        }
    }

    fn objects(n: usize) -> Vec<RankedObject> {
        (0..n)
            .map(|i| RankedObject {
                index: i,
                score: 0.0,
                object: ObjectDetail::new("o", "", BoundingBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0).unwrap()).unwrap(),
            })
            .collect()
    }

    #[test]
    fn non_entity_dropped() {
        assert_eq!(decide(&meta(), &output(vec![0.1, 0.2, 0.7], vec![0.9]), &objects(1), 0.5), None);
    }

    #[test]
    fn region_rule() {
        let m = meta();
        let objs = objects(2);
        let p = decide(&m, &output(vec![0.1, 0.8, 0.1], vec![0.9, 0.2]), &objs, 0.5).unwrap();
        assert_eq!(p.entity_type.as_str(), "PER");
        assert_eq!((p.start, p.end), (1, 3));
        assert_eq!(p.region, Some(objs[0].object.bbox));
        let low = decide(&m, &output(vec![0.8, 0.1, 0.1], vec![0.3, 0.49]), &objs, 0.5).unwrap();
        assert_eq!(low.region, None);
        let exact = decide(&m, &output(vec![0.8, 0.1, 0.1], vec![0.2, 0.5]), &objs, 0.5).unwrap();
        assert_eq!(exact.region, Some(objs[1].object.bbox));
        let none = decide(&m, &output(vec![0.8, 0.1, 0.1], vec![]), &[], 0.0).unwrap();
        assert_eq!(none.region, None);
    }

    #[test]
    fn jsonl_shape() {
        let p = EntityPrediction {
            sentence_id: "t1".into(),
            start: 0,
            end: 2,
            entity_type: EntityType::new("PER"),
            region: Some(BoundingBox::new(1.0, 2.0, 3.0, 4.0).unwrap()),
        };
        let line = serde_json::to_string(&p).unwrap();
        assert_eq!(line, r#"{"sentence_id":"t1","start":0,"end":2,"type":"PER","region":[1.0,2.0,3.0,4.0]}"#);
        let none: EntityPrediction =
            serde_json::from_str(r#"{"sentence_id":"t1","start":0,"end":2,"type":"PER","region":null}"#).unwrap();
        assert_eq!(none.region, None);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        write_predictions(&path, std::slice::from_ref(&p)).unwrap();
        assert_eq!(read_predictions(&path).unwrap(), vec![p]);
    }
}
