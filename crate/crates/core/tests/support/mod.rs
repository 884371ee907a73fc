#![allow(dead_code)]

use std::path::{Path, PathBuf};

use scanner::data::vocab::Vocab;
use scanner::data::{encode_bio, BoundingBox, Dataset, EntityType, GroundingAnnotation, LabeledRange, ObjectDetail, Split, TaggedSentence};
use scanner::knowledge::{build_prompt, rank_objects, KnowledgeBundle, PromptSequence, WikiSnippet};
use scanner::stage1::{CandidateSource, SpanCandidate};
use scanner::stage2::EntityPrediction;
use serde::Deserialize;

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

// ---------------------------------------------------------------------------
// Prompt goldens

pub struct PromptFixture {
    pub name: &'static str,
    pub candidate: (usize, usize),
    pub wiki: &'static str,
    pub caption: Option<&'static str>,
    /// Indices into `golden_objects()`.
    pub objects: &'static [usize],
    pub max_len: usize,
    pub expected_objs: usize,
}

pub const PROMPT_FIXTURES: &[PromptFixture] = &[
    PromptFixture {
        name: "three_objects",
        candidate: (0, 2),
        wiki: "Mira Tolk is a Norwegian singer.",
        caption: Some("a singer on a stage"),
        objects: &[0, 1, 2],
        max_len: 64,
        expected_objs: 3,
    },
    PromptFixture {
        name: "empty_wiki_one_object",
        candidate: (0, 2),
        wiki: "",
        caption: Some("a singer on a stage"),
        objects: &[1],
        max_len: 64,
        expected_objs: 1,
    },
    PromptFixture {
        name: "empty_caption_no_objects",
        candidate: (0, 2),
        wiki: "Mira Tolk is a Norwegian singer.",
        caption: None,
        objects: &[],
        max_len: 64,
        expected_objs: 0,
    },
    PromptFixture {
        name: "bare_head",
        candidate: (4, 5),
        wiki: "",
        caption: Some("   "),
        objects: &[],
        max_len: 64,
        expected_objs: 0,
    },
    PromptFixture {
        name: "truncated_mid_object",
        candidate: (0, 2),
        wiki: "Mira Tolk is a Norwegian singer.",
        caption: Some("a singer on a stage"),
        objects: &[0, 1, 2],
        max_len: 35,
        expected_objs: 2,
    },
    PromptFixture {
        name: "truncated_to_head",
        candidate: (0, 2),
        wiki: "Mira Tolk is a Norwegian singer.",
        caption: Some("a singer on a stage"),
        objects: &[0, 1, 2],
        max_len: 16,
        expected_objs: 0,
    },
];

pub fn golden_sentence() -> TaggedSentence {
    let tokens: Vec<String> = "Mira Tolk sings in Oslo tonight".split(' ').map(String::from).collect();
    let tags = ["B-PER", "I-PER", "O", "O", "B-LOC", "O"].iter().map(|t| t.parse().unwrap()).collect();
    let mut s = TaggedSentence::new("golden", tokens, tags, false).unwrap();
    s.objects = golden_objects();
    s
}

/// Listed in an order that ranking must change.
pub fn golden_objects() -> Vec<ObjectDetail> {
    let b = BoundingBox::new(1.0, 1.0, 5.0, 5.0).unwrap();
    vec![
        ObjectDetail::new("dog", "a small dog", b).unwrap(),
        ObjectDetail::new("woman", "tolk smiling", b).unwrap(),
        ObjectDetail::new("person", "mira tolk on stage", b).unwrap(),
    ]
}

pub fn golden_path(name: &str) -> PathBuf {
    crate_dir().join("tests/golden").join(format!("{name}.txt"))
}

pub fn build_fixture(f: &PromptFixture) -> PromptSequence {
    let sentence = golden_sentence();
    let candidate = SpanCandidate::new(&sentence, f.candidate.0, f.candidate.1, CandidateSource::Gold).unwrap();
    let all = golden_objects();
    let chosen: Vec<ObjectDetail> = f.objects.iter().map(|&i| all[i].clone()).collect();
    let bundle = KnowledgeBundle {
        candidate: candidate.clone(),
        wiki: WikiSnippet {
            text: f.wiki.to_string(),
            ..WikiSnippet::miss(&candidate.surface(&sentence))
        },
        caption: f.caption.map(String::from),
        objects: rank_objects(&candidate.surface(&sentence), &chosen, 18),
    };
    let vocab = Vocab::build(sentence.tokens.iter().map(String::as_str));
    build_prompt(&candidate, &sentence, &bundle, &vocab, f.max_len).unwrap()
}

// ---------------------------------------------------------------------------
// Metric oracle fixtures

#[derive(Deserialize)]
pub struct OracleSentence {
    pub id: String,
    pub words: Vec<String>,
    pub image: bool,
    pub gold: Vec<(usize, usize, String, Vec<[f64; 4]>)>,
}

pub type OraclePred = (String, usize, usize, String, Option<[f64; 4]>);

#[derive(Deserialize)]
pub struct OracleCase {
    pub sentences: Vec<OracleSentence>,
    pub pred: Vec<OraclePred>,
    pub expected: [usize; 3],
}

#[derive(Deserialize)]
pub struct SeenUnseenCase {
    pub train: Vec<OracleSentence>,
    pub test: Vec<OracleSentence>,
    pub pred: Vec<OraclePred>,
    pub seen: [usize; 3],
    pub unseen: [usize; 3],
}

#[derive(Deserialize)]
pub struct MetricCases {
    pub ner: Vec<OracleCase>,
    pub gmner: Vec<OracleCase>,
    pub seen_unseen: SeenUnseenCase,
}

pub fn load_metric_cases() -> MetricCases {
    scanner::io::read_json(&crate_dir().join("tests/fixtures/metric_cases.json")).unwrap()
}

fn to_box(b: &[f64; 4]) -> BoundingBox {
    BoundingBox::new(b[0], b[1], b[2], b[3]).unwrap()
}

pub fn oracle_dataset(sentences: &[OracleSentence], split: Split) -> Dataset {
    let out = sentences
        .iter()
        .map(|o| {
            let ranges: Vec<LabeledRange> =
                o.gold.iter().map(|(s, e, t, _)| LabeledRange::new(*s, *e, EntityType::new(t.as_str()))).collect();
            let tags = encode_bio(&ranges, o.words.len()).unwrap();
            let mut s = TaggedSentence::new(o.id.as_str(), o.words.clone(), tags, false).unwrap();
            if o.image {
                s.image_caption = Some("image".into());
            }
            // Adjacent same-type gold spans stay distinct through B tags, so
            // gold order matches the fixture's sorted order.
            let mut order: Vec<usize> = (0..o.gold.len()).collect();
            order.sort_by_key(|&i| o.gold[i].0);
            for (k, &i) in order.iter().enumerate() {
                let boxes = &o.gold[i].3;
                if !boxes.is_empty() {
                    s.grounding.insert(k, GroundingAnnotation::new(boxes.iter().map(to_box).collect()));
                }
            }
            s
        })
        .collect();
    Dataset::new("oracle", out, split)
}

pub fn oracle_predictions(pred: &[OraclePred]) -> Vec<EntityPrediction> {
    pred.iter()
        .map(|(id, s, e, t, r)| EntityPrediction {
            sentence_id: id.clone(),
            start: *s,
            end: *e,
            entity_type: EntityType::new(t.as_str()),
            region: r.as_ref().map(to_box),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Reference BIO chunker, written over plain strings in the style of the
// classic conlleval script: a chunk ends before a tag that starts a new one.

fn split_tag(tag: &str) -> (char, &str) {
    match tag.split_once('-') {
        Some((p, t)) => (p.chars().next().unwrap(), t),
        None => ('O', ""),
    }
}

fn chunk_ends(prev: (char, &str), cur: (char, &str)) -> bool {
    match (prev.0, cur.0) {
        ('O', _) => false,
        (_, 'O') | (_, 'B') => true,
        (_, 'I') => prev.1 != cur.1,
        _ => false,
    }
}

fn chunk_starts(prev: (char, &str), cur: (char, &str)) -> bool {
    match cur.0 {
        'B' => true,
        'I' => prev.0 == 'O' || prev.1 != cur.1,
        _ => false,
    }
}

pub fn reference_chunks(tags: &[String]) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    let mut prev = ('O', "");
    let mut start = 0;
    for (i, tag) in tags.iter().enumerate() {
        let cur = split_tag(tag);
        if chunk_ends(prev, cur) {
            out.push((start, i, prev.1.to_string()));
        }
        if chunk_starts(prev, cur) {
            start = i;
        }
        prev = cur;
    }
    if prev.0 != 'O' {
        out.push((start, tags.len(), prev.1.to_string()));
    }
    out
}

pub fn read_text(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
