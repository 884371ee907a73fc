//! Span candidates and their JSONL hand-off format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{decode_bio, BioTag, Dataset, TaggedSentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Gold,
    Predicted,
    FoldNegative,
}

/// A token range `[start, end)` proposed as an entity. Carries no type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanCandidate {
    pub sentence_id: String,
    pub start: usize,
    pub end: usize,
    pub source: CandidateSource,
}

impl SpanCandidate {
    pub fn new(sentence: &TaggedSentence, start: usize, end: usize, source: CandidateSource) -> Result<Self> {
        let c = Self {
            sentence_id: sentence.id.clone(),
            start,
            end,
            source,
        };
        c.check(sentence)?;
        Ok(c)
    }

    pub fn check(&self, sentence: &TaggedSentence) -> Result<()> {
        if self.sentence_id != sentence.id {
            return Err(Error::Invalid(format!(
                "candidate for `{}` checked against sentence `{}`",
                self.sentence_id, sentence.id
            )));
        }
        if self.start >= self.end || self.end > sentence.len() {
            return Err(Error::InvalidSpan {
                start: self.start,
                end: self.end,
                len: sentence.len(),
            });
        }
        Ok(())
    }

    pub fn surface(&self, sentence: &TaggedSentence) -> String {
        sentence.surface(self.start, self.end)
    }

    pub fn same_range(&self, start: usize, end: usize) -> bool {
        self.start == start && self.end == end
    }
}

/// One candidate per span of the (repaired) tag sequence.
pub fn candidates_from_tags(sentence: &TaggedSentence, tags: &[BioTag], source: CandidateSource) -> Vec<SpanCandidate> {
    decode_bio(tags, true)
        .expect("repair decoding accepts any sequence")
        .into_iter()
        .map(|r| SpanCandidate {
            sentence_id: sentence.id.clone(),
            start: r.start,
            end: r.end,
            source,
        })
        .collect()
}

pub fn gold_candidates(dataset: &Dataset) -> Vec<SpanCandidate> {
    dataset
        .sentences
        .iter()
        .flat_map(|s| candidates_from_tags(s, &s.tags, CandidateSource::Gold))
        .collect()
}

pub fn write_candidates(path: &Path, candidates: &[SpanCandidate]) -> Result<()> {
    crate::io::write_jsonl_atomic(path, candidates)
}

/// Reads a candidate file and checks every entry against `dataset`.
pub fn read_candidates(path: &Path, dataset: &Dataset) -> Result<Vec<SpanCandidate>> {
    let candidates: Vec<SpanCandidate> = crate::io::read_jsonl(path)?;
    let index = dataset.index();
    for (i, c) in candidates.iter().enumerate() {
        let sentence = index
            .get(c.sentence_id.as_str())
            .map(|&k| &dataset.sentences[k])
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("unknown sentence `{}`", c.sentence_id),
            })?;
        c.check(sentence).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
    }
    Ok(candidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EntityType, Split};

    fn sentence() -> TaggedSentence {
        let tokens = ["EU", "rejects", "German", "call"].map(String::from).to_vec();
        let tags = ["B-ORG", "O", "B-MISC", "O"].iter().map(|t| t.parse().unwrap()).collect();
        TaggedSentence::new("s0", tokens, tags, false).unwrap()
    }

    #[test]
    fn all_outside_gives_nothing() {
        let s = sentence();
        assert!(candidates_from_tags(&s, &vec![BioTag::O; 4], CandidateSource::Predicted).is_empty());
    }

    #[test]
    fn stray_inside_tags_are_repaired() {
        let s = sentence();
        let per = EntityType::new("PER");
        let tags = vec![BioTag::I(per.clone()), BioTag::I(per), BioTag::O, BioTag::O];
        let c = candidates_from_tags(&s, &tags, CandidateSource::Predicted);
        assert_eq!(c.len(), 1);
        assert!(c[0].same_range(0, 2));
    }

    #[test]
    fn jsonl_schema() {
        let s = sentence();
        let c = SpanCandidate::new(&s, 2, 3, CandidateSource::FoldNegative).unwrap();
        assert_eq!(
            serde_json::to_string(&c).unwrap(),
            r#"{"sentence_id":"s0","start":2,"end":3,"source":"fold_negative"}"#
        );
        assert!(SpanCandidate::new(&s, 3, 5, CandidateSource::Gold).is_err());
    }

    #[test]
    fn file_round_trip_validates() {
        let ds = Dataset::new("d", vec![sentence()], Split::Train);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        let gold = gold_candidates(&ds);
        write_candidates(&p, &gold).unwrap();
        assert_eq!(read_candidates(&p, &ds).unwrap(), gold);
        std::fs::write(&p, r#"{"sentence_id":"nope","start":0,"end":1,"source":"gold"}"#).unwrap();
        assert!(read_candidates(&p, &ds).unwrap_err().to_string().contains("nope"));
    }
}
