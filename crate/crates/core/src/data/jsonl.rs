//! Multimodal JSONL corpus format, one sentence per line:
//!
//! ```text
//! {"id": str, "tokens": [str], "tags": [str], "caption": str|null,
//!  "objects": [{"class": str, "caption": str, "box": [x1,y1,x2,y2],
//!               "sim": {surface: float}|null}],
//!  "grounding": {span_index: [[x1,y1,x2,y2], ...]|null}}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BioTag, BoundingBox, Dataset, GroundingAnnotation, ObjectDetail, Split, TaggedSentence};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawObject {
    pub class: String,
    #[serde(default)]
    pub caption: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(default)]
    pub sim: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRecord {
    pub id: String,
    pub tokens: Vec<String>,
    pub tags: Vec<BioTag>,
    #[serde(default)]
    pub caption: Option<String>,
    #[serde(default)]
    pub objects: Vec<RawObject>,
    #[serde(default)]
    pub grounding: BTreeMap<String, Option<Vec<BoundingBox>>>,
}

impl RawRecord {
    pub fn from_sentence(s: &TaggedSentence) -> Self {
        let objects = s
            .objects
            .iter()
            .map(|o| RawObject {
                class: o.class_name.clone(),
                caption: o.region_caption.clone(),
                bbox: o.bbox,
                sim: o.similarity.clone(),
            })
            .collect();
        let grounding = s
            .grounding
            .iter()
            .map(|(k, g)| {
                let boxes = if g.groundable() { Some(g.boxes().to_vec()) } else { None };
                (k.to_string(), boxes)
            })
            .collect();
        RawRecord {
            id: s.id.clone(),
            tokens: s.tokens.clone(),
            tags: s.tags.clone(),
            caption: s.image_caption.clone(),
            objects,
            grounding,
        }
    }

    fn into_sentence(self, repair: bool) -> std::result::Result<TaggedSentence, (String, String)> {
        let mut sentence =
            TaggedSentence::new(self.id, self.tokens, self.tags, repair).map_err(|e| ("tags".to_string(), e.to_string()))?;
        sentence.image_caption = self.caption;
        for (i, o) in self.objects.into_iter().enumerate() {
            let field = format!("objects[{i}].class");
            let mut detail = ObjectDetail::new(o.class, o.caption, o.bbox).map_err(|e| (field, e.to_string()))?;
            if let Some(sim) = &o.sim {
                if let Some((k, v)) = sim.iter().find(|(_, v)| !(-1.0..=1.0).contains(*v)) {
                    return Err((format!("objects[{i}].sim.{k}"), format!("similarity {v} outside [-1, 1]")));
                }
            }
            detail.similarity = o.sim;
            sentence.objects.push(detail);
        }
        let n_spans = sentence.gold_spans().len();
        for (key, boxes) in self.grounding {
            let field = format!("grounding.{key}");
            let index: usize = key
                .parse()
                .map_err(|_| (field.clone(), format!("key `{key}` is not a span index")))?;
            if index >= n_spans {
                return Err((field, format!("span index {index} but sentence has {n_spans} gold spans")));
            }
            let annotation = match boxes {
                Some(b) if !b.is_empty() => GroundingAnnotation::new(b),
                _ => GroundingAnnotation::ungroundable(),
            };
            sentence.grounding.insert(index, annotation);
        }
        Ok(sentence)
    }
}

pub fn read_multimodal_jsonl(path: &Path) -> Result<Dataset> {
    read_multimodal_jsonl_with(path, false)
}

pub fn read_multimodal_jsonl_with(path: &Path, repair: bool) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "jsonl".into());
    let split = if stem.contains("test") {
        Split::Test
    } else if stem.contains("dev") {
        Split::Dev
    } else {
        Split::Train
    };
    let sentences = parse_lines(&text, path, repair)?;
    Ok(Dataset::new(stem, sentences, split))
}

pub(crate) fn parse_lines(text: &str, path: &Path, repair: bool) -> Result<Vec<TaggedSentence>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |field: String, message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("field `{field}`: {message}"),
        };
        let de = &mut serde_json::Deserializer::from_str(line);
        let raw: RawRecord = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            parse_err(field, e.into_inner().to_string())
        })?;
        let sentence = raw.into_sentence(repair).map_err(|(f, m)| parse_err(f, m))?;
        out.push(sentence);
    }
    Ok(out)
}

pub fn write_multimodal_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for s in &dataset.sentences {
        serde_json::to_writer(&mut buf, &RawRecord::from_sentence(s))?;
        buf.push(b'\n');
    }
    crate::io::write_atomic(path, &buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<TaggedSentence>> {
        parse_lines(text, Path::new("mem.jsonl"), false)
    }

    const LINE: &str = r#"{"id":"s1","tokens":["Kroger","opens","in","Ohio"],"tags":["B-ORG","O","O","B-LOC"],"caption":"a store front","objects":[{"class":"logo","caption":"a red kroger sign","box":[0,0,10,10],"sim":{"Kroger":0.9}},{"class":"car","caption":"a parked car","box":[20,20,40,30],"sim":null}],"grounding":{"0":[[0,0,10,10]],"1":null}}"#;

    #[test]
    fn maps_schema_fields() {
        let s = &parse(LINE).unwrap()[0];
        assert_eq!(s.objects.len(), 2);
        assert_eq!(s.objects[0].detail_text(), "logo: a red kroger sign");
        assert_eq!(s.objects[0].similarity.as_ref().unwrap()["Kroger"], 0.9);
        assert!(s.grounding_for(0).groundable());
        assert!(!s.grounding_for(1).groundable());
        assert_eq!(s.image_caption.as_deref(), Some("a store front"));
    }

    #[test]
    fn image_fields_are_optional() {
        let s = &parse(r#"{"id":"t","tokens":["a"],"tags":["O"]}"#).unwrap()[0];
        assert!(s.objects.is_empty() && s.image_caption.is_none() && !s.has_image());
    }

    #[test]
    fn errors_name_line_and_field() {
        let text = format!("{LINE}\n{}", r#"{"id":"t","tokens":["a"],"tags":[3]}"#);
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("tags"), "{err}");

        let bad_box = LINE.replace("[20,20,40,30]", "[40,20,20,30]");
        let err = parse(&bad_box).unwrap_err().to_string();
        assert!(err.contains("objects[1].box") || err.contains("objects.1.box"), "{err}");

        let bad_key = LINE.replace(r#""1":null"#, r#""5":null"#);
        let err = parse(&bad_key).unwrap_err().to_string();
        assert!(err.contains("grounding.5"), "{err}");
    }

    #[test]
    fn round_trips_through_writer() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let ds = Dataset::new("train", parse(LINE).unwrap(), Split::Train);
        write_multimodal_jsonl(&ds, &path).unwrap();
        let back = read_multimodal_jsonl(&path).unwrap();
        assert_eq!(back.sentences, ds.sentences);
    }
}
