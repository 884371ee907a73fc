//! Domain types, corpus readers and the BIO tag algebra.

pub mod bio;
pub mod conll;
pub mod geometry;
pub mod jsonl;
pub mod synthetic;
pub mod vocab;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use bio::{decode_bio, encode_bio, BioTag, LabeledRange, TagKind, TagSet};
pub use geometry::{iou, BoundingBox};

use crate::error::{Error, Result};

/// Name of the reserved class absorbing false candidates.
pub const NON_ENTITY: &str = "NON_ENTITY";

/// An entity category such as `PER` or `LOC`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityType(String);

impl EntityType {
    pub fn new(name: impl Into<String>) -> Self {
        EntityType(name.into())
    }

    pub fn non_entity() -> Self {
        EntityType(NON_ENTITY.to_string())
    }

    pub fn is_non_entity(&self) -> bool {
        self.0 == NON_ENTITY
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A typed token range `[start, end)` with its surface text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub entity_type: EntityType,
    pub surface: String,
}

impl Span {
    /// Builds a span over `tokens`, checking the index invariants.
    pub fn new(tokens: &[String], start: usize, end: usize, entity_type: EntityType) -> Result<Self> {
        if start >= end || end > tokens.len() {
            return Err(Error::InvalidSpan {
                start,
                end,
                len: tokens.len(),
            });
        }
        Ok(Span {
            start,
            end,
            entity_type,
            surface: surface(tokens, start, end),
        })
    }
}

/// Tokens in `[start, end)` joined by single spaces.
pub fn surface(tokens: &[String], start: usize, end: usize) -> String {
    tokens[start..end].join(" ")
}

/// Gold grounding of one entity. `groundable` is false exactly when `boxes`
/// is empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundingAnnotation {
    boxes: Vec<BoundingBox>,
}

impl GroundingAnnotation {
    pub fn new(boxes: Vec<BoundingBox>) -> Self {
        Self { boxes }
    }

    pub fn ungroundable() -> Self {
        Self { boxes: Vec::new() }
    }

    pub fn boxes(&self) -> &[BoundingBox] {
        &self.boxes
    }

    pub fn groundable(&self) -> bool {
        !self.boxes.is_empty()
    }
}

/// Detector output for one image region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDetail {
    #[serde(rename = "class")]
    pub class_name: String,
    #[serde(rename = "caption")]
    pub region_caption: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// Precomputed text-region similarity keyed by candidate surface.
    #[serde(rename = "sim", default)]
    pub similarity: Option<BTreeMap<String, f64>>,
}

impl ObjectDetail {
    pub fn new(class_name: impl Into<String>, region_caption: impl Into<String>, bbox: BoundingBox) -> Result<Self> {
        let class_name = class_name.into();
        if class_name.is_empty() {
            return Err(Error::Invalid("object class name must be non-empty".into()));
        }
        Ok(Self {
            class_name,
            region_caption: region_caption.into(),
            bbox,
            similarity: None,
        })
    }

    /// Text used inside prompts: `class: caption`.
    pub fn detail_text(&self) -> String {
        format!("{}: {}", self.class_name, self.region_caption)
    }
}

/// One pre-tokenized sentence with gold tags and optional image metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedSentence {
    pub id: String,
    pub tokens: Vec<String>,
    pub tags: Vec<BioTag>,
    pub image_caption: Option<String>,
    pub objects: Vec<ObjectDetail>,
    /// Keyed by the index of the gold span in `gold_spans()` order.
    pub grounding: BTreeMap<usize, GroundingAnnotation>,
}

impl TaggedSentence {
    /// A text-only sentence. Tags must be well-formed unless `repair` is set,
    /// in which case they are normalized through a decode/encode round trip.
    pub fn new(id: impl Into<String>, tokens: Vec<String>, tags: Vec<BioTag>, repair: bool) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(Error::Invalid(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        let tags = if repair {
            let spans = decode_bio(&tags, true)?;
            encode_bio(&spans, tags.len())?
        } else {
            decode_bio(&tags, false)?;
            tags
        };
        Ok(Self {
            id: id.into(),
            tokens,
            tags,
            image_caption: None,
            objects: Vec::new(),
            grounding: BTreeMap::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn surface(&self, start: usize, end: usize) -> String {
        surface(&self.tokens, start, end)
    }

    /// Gold spans decoded from the tags, sorted by start.
    pub fn gold_spans(&self) -> Vec<Span> {
        bio::spans_from_tags(&self.tokens, &self.tags)
    }

    /// Grounding of the gold span at `index`; absent annotations read as
    /// ungroundable.
    pub fn grounding_for(&self, index: usize) -> GroundingAnnotation {
        self.grounding.get(&index).cloned().unwrap_or_default()
    }

    pub fn has_image(&self) -> bool {
        self.image_caption.is_some() || !self.objects.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub sentences: Vec<TaggedSentence>,
    /// Sorted; never contains `NON_ENTITY`.
    pub entity_types: Vec<EntityType>,
    pub split: Split,
}

impl Dataset {
    /// Builds a dataset, inferring the entity type set from the tags.
    pub fn new(name: impl Into<String>, sentences: Vec<TaggedSentence>, split: Split) -> Self {
        let mut types: Vec<EntityType> = sentences
            .iter()
            .flat_map(|s| s.tags.iter().filter_map(|t| t.entity_type().cloned()))
            .collect();
        types.sort();
        types.dedup();
        Self {
            name: name.into(),
            sentences,
            entity_types: types,
            split,
        }
    }

    /// Replaces the inferred type set with a configured one, checking that
    /// every tag is covered.
    pub fn with_entity_types(mut self, types: &[EntityType]) -> Result<Self> {
        if types.iter().any(|t| t.is_non_entity()) {
            return Err(Error::Config(format!("{NON_ENTITY} is reserved")));
        }
        for t in &self.entity_types {
            if !types.contains(t) {
                return Err(Error::UnknownEntityType(t.to_string()));
            }
        }
        let mut types = types.to_vec();
        types.sort();
        types.dedup();
        self.entity_types = types;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn sentence(&self, id: &str) -> Option<&TaggedSentence> {
        self.sentences.iter().find(|s| s.id == id)
    }

    /// Map from sentence id to its position.
    pub fn index(&self) -> std::collections::HashMap<&str, usize> {
        self.sentences
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }

    pub fn gold_span_count(&self) -> usize {
        self.sentences.iter().map(|s| s.gold_spans().len()).sum()
    }
}
