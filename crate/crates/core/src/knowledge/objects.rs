//! Ordering of detected objects by relevance to a candidate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::ObjectDetail;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedObject {
    /// Position in the sentence's object list.
    pub index: usize,
    pub score: f64,
    pub object: ObjectDetail,
}

fn word_set(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token-level Jaccard overlap, case-folded, splitting on anything that is
/// not alphanumeric.
pub fn lexical_score(a: &str, b: &str) -> f64 {
    let (x, y) = (word_set(a), word_set(b));
    let union = x.union(&y).count();
    if union == 0 {
        return 0.0;
    }
    x.intersection(&y).count() as f64 / union as f64
}

/// Provided similarity for `surface` when present, otherwise the lexical
/// overlap with `class_name region_caption`.
pub fn object_score(surface: &str, object: &ObjectDetail) -> f64 {
    if let Some(s) = object.similarity.as_ref().and_then(|m| m.get(surface)) {
        return *s;
    }
    lexical_score(surface, &format!("{} {}", object.class_name, object.region_caption))
}

/// Descending by score, ties kept in input order, at most `max_objects`.
pub fn rank_objects(surface: &str, objects: &[ObjectDetail], max_objects: usize) -> Vec<RankedObject> {
    let mut ranked: Vec<RankedObject> = objects
        .iter()
        .enumerate()
        .map(|(index, o)| RankedObject {
            index,
            score: object_score(surface, o),
            object: o.clone(),
        })
        .collect();
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    ranked.truncate(max_objects);
    ranked
}
