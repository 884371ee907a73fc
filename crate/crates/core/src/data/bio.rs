//! BIO tags, span decoding/encoding, and the stage-1 tag inventory.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EntityType, Span};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagKind {
    B,
    I,
    O,
}

/// A BIO tag. `O` carries no type; `B` and `I` always do.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BioTag {
    O,
    B(EntityType),
    I(EntityType),
}

impl BioTag {
    pub fn kind(&self) -> TagKind {
        match self {
            BioTag::O => TagKind::O,
            BioTag::B(_) => TagKind::B,
            BioTag::I(_) => TagKind::I,
        }
    }

    pub fn entity_type(&self) -> Option<&EntityType> {
        match self {
            BioTag::O => None,
            BioTag::B(t) | BioTag::I(t) => Some(t),
        }
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::O => f.write_str("O"),
            BioTag::B(t) => write!(f, "B-{t}"),
            BioTag::I(t) => write!(f, "I-{t}"),
        }
    }
}

impl FromStr for BioTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(BioTag::O);
        }
        let bad = || Error::Invalid(format!("malformed BIO tag `{s}`"));
        let (prefix, ty) = s.split_once('-').ok_or_else(bad)?;
        if ty.is_empty() || ty.chars().any(char::is_whitespace) {
            return Err(bad());
        }
        match prefix {
            "B" => Ok(BioTag::B(EntityType::new(ty))),
            "I" => Ok(BioTag::I(EntityType::new(ty))),
            _ => Err(bad()),
        }
    }
}

impl Serialize for BioTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BioTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A typed `[start, end)` range without surface text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabeledRange {
    pub start: usize,
    pub end: usize,
    pub entity_type: EntityType,
}

impl LabeledRange {
    pub fn new(start: usize, end: usize, entity_type: EntityType) -> Self {
        Self {
            start,
            end,
            entity_type,
        }
    }
}

impl From<&Span> for LabeledRange {
    fn from(s: &Span) -> Self {
        LabeledRange::new(s.start, s.end, s.entity_type.clone())
    }
}

/// Decodes maximal spans. A span opens at `B` and runs through following
/// `I` tags of the same type. With `repair`, a stray `I-X` (after `O` or
/// after a different type) opens a new span; without it, that is an error.
pub fn decode_bio(tags: &[BioTag], repair: bool) -> Result<Vec<LabeledRange>> {
    let mut out = Vec::new();
    let mut open: Option<(usize, &EntityType)> = None;
    for (i, tag) in tags.iter().enumerate() {
        match tag {
            BioTag::O => {
                if let Some((start, ty)) = open.take() {
                    out.push(LabeledRange::new(start, i, ty.clone()));
                }
            }
            BioTag::B(ty) => {
                if let Some((start, prev)) = open.take() {
                    out.push(LabeledRange::new(start, i, prev.clone()));
                }
                open = Some((i, ty));
            }
            BioTag::I(ty) => match open {
                Some((_, prev)) if prev == ty => {}
                _ => {
                    if !repair {
                        let message = match open {
                            None => format!("I-{ty} does not continue an entity"),
                            Some((_, prev)) => format!("I-{ty} follows an entity of type {prev}"),
                        };
                        return Err(Error::IllFormedBio { position: i, message });
                    }
                    if let Some((start, prev)) = open.take() {
                        out.push(LabeledRange::new(start, i, prev.clone()));
                    }
                    open = Some((i, ty));
                }
            },
        }
    }
    if let Some((start, ty)) = open {
        out.push(LabeledRange::new(start, tags.len(), ty.clone()));
    }
    Ok(out)
}

/// Writes spans back to IOB2 tags. Spans may come in any order but must not
/// overlap and must lie within `[0, length)`.
pub fn encode_bio(spans: &[LabeledRange], length: usize) -> Result<Vec<BioTag>> {
    let mut sorted: Vec<&LabeledRange> = spans.iter().collect();
    sorted.sort_by_key(|s| (s.start, s.end));
    for w in sorted.windows(2) {
        if w[1].start < w[0].end {
            return Err(Error::OverlappingSpans {
                first_start: w[0].start,
                first_end: w[0].end,
                second_start: w[1].start,
                second_end: w[1].end,
            });
        }
    }
    let mut tags = vec![BioTag::O; length];
    for s in sorted {
        if s.start >= s.end || s.end > length {
            return Err(Error::InvalidSpan {
                start: s.start,
                end: s.end,
                len: length,
            });
        }
        tags[s.start] = BioTag::B(s.entity_type.clone());
        for t in &mut tags[s.start + 1..s.end] {
            *t = BioTag::I(s.entity_type.clone());
        }
    }
    Ok(tags)
}

/// Repaired decode with surfaces attached.
pub fn spans_from_tags(tokens: &[String], tags: &[BioTag]) -> Vec<Span> {
    decode_bio(tags, true)
        .expect("repair mode never fails")
        .into_iter()
        .map(|r| Span {
            surface: super::surface(tokens, r.start, r.end),
            start: r.start,
            end: r.end,
            entity_type: r.entity_type,
        })
        .collect()
}

/// The full `O, B-T1, I-T1, B-T2, ...` inventory used by the stage-1 tagger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagSet {
    types: Vec<EntityType>,
}

impl TagSet {
    pub fn new(types: &[EntityType]) -> Self {
        let mut types = types.to_vec();
        types.sort();
        types.dedup();
        Self { types }
    }

    pub fn len(&self) -> usize {
        1 + 2 * self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn types(&self) -> &[EntityType] {
        &self.types
    }

    pub fn index_of(&self, tag: &BioTag) -> Result<usize> {
        let type_index = |t: &EntityType| {
            self.types
                .binary_search(t)
                .map_err(|_| Error::UnknownEntityType(t.to_string()))
        };
        Ok(match tag {
            BioTag::O => 0,
            BioTag::B(t) => 1 + 2 * type_index(t)?,
            BioTag::I(t) => 2 + 2 * type_index(t)?,
        })
    }

    pub fn tag(&self, index: usize) -> BioTag {
        if index == 0 {
            return BioTag::O;
        }
        let ty = self.types[(index - 1) / 2].clone();
        if (index - 1).is_multiple_of(2) {
            BioTag::B(ty)
        } else {
            BioTag::I(ty)
        }
    }
}
