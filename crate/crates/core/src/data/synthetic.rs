//! A generated corpus with fully predictable structure, used to check that
//! the pipeline can fit data it should be able to fit.
//!
//! Every entity type owns a disjoint pool of capitalized name tokens and a
//! set of trigger words that always precede its mentions. Types listed as
//! groundable get an object whose box is the gold region and whose caption
//! contains the entity surface; distractor objects sit in a disjoint part
//! of the image. Other types are ungroundable.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    encode_bio, BoundingBox, Dataset, EntityType, GroundingAnnotation, LabeledRange, ObjectDetail, Split,
    TaggedSentence,
};
use crate::error::{Error, Result};
use crate::neural::params::{derive_seed, rng_from_seed, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub sentences: usize,
    pub entity_types: Vec<EntityType>,
    pub groundable_types: Vec<EntityType>,
    /// Name tokens per type.
    pub names_per_type: usize,
    pub triggers_per_type: usize,
    pub filler_words: usize,
    /// Fraction of entity surfaces given a snapshot summary.
    pub wiki_coverage: f64,
    pub with_images: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// 200 sentences, four types, roughly 300 distinct words.
    fn default() -> Self {
        Self {
            sentences: 200,
            entity_types: ["LOC", "MISC", "ORG", "PER"].into_iter().map(EntityType::new).collect(),
            groundable_types: ["ORG", "PER"].into_iter().map(EntityType::new).collect(),
            names_per_type: 24,
            triggers_per_type: 5,
            filler_words: 183,
            wiki_coverage: 0.8,
            with_images: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub dataset: Dataset,
    /// Surface -> summary, in the snapshot file layout.
    pub wiki_snapshot: BTreeMap<String, String>,
}

impl SyntheticCorpus {
    /// Distinct tokens across all sentences.
    pub fn vocabulary_size(&self) -> usize {
        self.dataset
            .sentences
            .iter()
            .flat_map(|s| s.tokens.iter())
            .collect::<BTreeSet<_>>()
            .len()
    }
}

const IMAGE_W: f64 = 640.0;
const IMAGE_H: f64 = 480.0;

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "r", "l", "s", "k"];

fn pseudo_word(rng: &mut SeededRng, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
        w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
    }
    w
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Draws `n` words not yet in `used`.
fn fresh_words(rng: &mut SeededRng, used: &mut BTreeSet<String>, n: usize, syllables: usize, caps: bool) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let raw = pseudo_word(rng, syllables);
        let w = if caps { capitalize(&raw) } else { raw };
        if used.insert(w.to_lowercase()) {
            out.push(w);
        }
    }
    out
}

fn object_class(ty: &EntityType) -> String {
    match ty.as_str() {
        "PER" => "person".into(),
        "ORG" => "logo".into(),
        other => format!("{}_thing", other.to_lowercase()),
    }
}

const DISTRACTOR_CLASSES: [&str; 5] = ["tree", "car", "sky", "table", "dog"];

struct Lexicon {
    names: Vec<Vec<String>>,
    triggers: Vec<Vec<String>>,
    fillers: Vec<String>,
    kinds: Vec<String>,
}

fn lexicon(spec: &SyntheticSpec, rng: &mut SeededRng) -> Lexicon {
    let mut used = BTreeSet::new();
    let k = spec.entity_types.len();
    let names = (0..k)
        .map(|_| fresh_words(rng, &mut used, spec.names_per_type, 2, true))
        .collect();
    let triggers = (0..k)
        .map(|_| fresh_words(rng, &mut used, spec.triggers_per_type, 2, false))
        .collect();
    let fillers = fresh_words(rng, &mut used, spec.filler_words, 1, false);
    let kinds = fresh_words(rng, &mut used, k, 3, false);
    Lexicon {
        names,
        triggers,
        fillers,
        kinds,
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    if spec.entity_types.is_empty() || spec.names_per_type < 2 || spec.triggers_per_type == 0 || spec.filler_words < 4 {
        return Err(Error::Config("synthetic spec too small to build a corpus".into()));
    }
    if let Some(t) = spec.groundable_types.iter().find(|t| !spec.entity_types.contains(t)) {
        return Err(Error::UnknownEntityType(t.to_string()));
    }
    let mut lex_rng = rng_from_seed(derive_seed(spec.seed, "synthetic-lexicon"));
    let lex = lexicon(spec, &mut lex_rng);
    let mut rng = rng_from_seed(derive_seed(spec.seed, "synthetic-sentences"));
    let mut sentences = Vec::with_capacity(spec.sentences);
    let mut surfaces = BTreeSet::new();

    for n in 0..spec.sentences {
        let mut tokens: Vec<String> = Vec::new();
        let mut ranges = Vec::new();
        let filler = |rng: &mut SeededRng| lex.fillers[rng.random_range(0..lex.fillers.len())].clone();
        for _ in 0..rng.random_range(1..=2) {
            tokens.push(filler(&mut rng));
        }
        let mut order: Vec<usize> = (0..spec.entity_types.len()).collect();
        order.shuffle(&mut rng);
        let count = rng.random_range(1..=3.min(order.len()));
        let mut mentions = Vec::new();
        for &t in &order[..count] {
            let trig = &lex.triggers[t];
            tokens.push(trig[rng.random_range(0..trig.len())].clone());
            let start = tokens.len();
            let pool = &lex.names[t];
            let width = rng.random_range(1..=2);
            for _ in 0..width {
                tokens.push(pool[rng.random_range(0..pool.len())].clone());
            }
            ranges.push(LabeledRange::new(start, tokens.len(), spec.entity_types[t].clone()));
            mentions.push((t, tokens[start..].join(" ")));
            for _ in 0..rng.random_range(0..=2) {
                tokens.push(filler(&mut rng));
            }
        }
        tokens.push(".".into());
        let tags = encode_bio(&ranges, tokens.len())?;
        let mut sentence = TaggedSentence::new(format!("syn-{n}"), tokens, tags, false)?;

        if spec.with_images {
            let caption: Vec<String> = (0..rng.random_range(3..=5)).map(|_| filler(&mut rng)).collect();
            sentence.image_caption = Some(caption.join(" "));
            let mut objects = Vec::new();
            let mut lane = 0.0;
            for (i, (t, surface)) in mentions.iter().enumerate() {
                let ty = &spec.entity_types[*t];
                if !spec.groundable_types.contains(ty) {
                    continue;
                }
                // Gold regions stack down the left half, one lane each.
                let x1 = rng.random_range(0.0..60.0);
                let y1 = lane + rng.random_range(0.0..20.0);
                let bbox = BoundingBox::new(x1, y1, x1 + rng.random_range(120.0..240.0), y1 + rng.random_range(60.0..100.0))?;
                lane += IMAGE_H / 3.0;
                let cap = format!("a photo of {surface}");
                objects.push(ObjectDetail::new(object_class(ty), cap, bbox)?);
                sentence.grounding.insert(i, GroundingAnnotation::new(vec![bbox]));
            }
            let total = rng.random_range(objects.len().max(2)..=4.max(objects.len()));
            while objects.len() < total {
                let x1 = rng.random_range(IMAGE_W / 2.0 + 20.0..IMAGE_W - 100.0);
                let y1 = rng.random_range(0.0..IMAGE_H - 100.0);
                let bbox = BoundingBox::new(x1, y1, x1 + rng.random_range(40.0..90.0), y1 + rng.random_range(40.0..90.0))?;
                let class = DISTRACTOR_CLASSES[rng.random_range(0..DISTRACTOR_CLASSES.len())];
                let cap = format!("{} {}", filler(&mut rng), filler(&mut rng));
                objects.push(ObjectDetail::new(class, cap, bbox)?);
            }
            objects.shuffle(&mut rng);
            sentence.objects = objects;
            for (i, (t, _)) in mentions.iter().enumerate() {
                if !spec.groundable_types.contains(&spec.entity_types[*t]) {
                    sentence.grounding.insert(i, GroundingAnnotation::ungroundable());
                }
            }
        }
        for (t, s) in mentions {
            surfaces.insert((s, t));
        }
        sentences.push(sentence);
    }

    let mut wiki_rng = rng_from_seed(derive_seed(spec.seed, "synthetic-wiki"));
    let mut wiki_snapshot = BTreeMap::new();
    for (surface, t) in surfaces {
        if wiki_rng.random_bool(spec.wiki_coverage) {
            let f1 = &lex.fillers[wiki_rng.random_range(0..lex.fillers.len())];
            let f2 = &lex.fillers[wiki_rng.random_range(0..lex.fillers.len())];
            wiki_snapshot.insert(surface.clone(), format!("{surface} is a {} {f1} {f2} .", lex.kinds[t]));
        }
    }
    let dataset = Dataset::new("synthetic", sentences, Split::Train).with_entity_types(&spec.entity_types)?;
    Ok(SyntheticCorpus { dataset, wiki_snapshot })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::iou;

    #[test]
    fn default_corpus_shape() {
        let c = generate(&SyntheticSpec::default()).unwrap();
        assert_eq!(c.dataset.len(), 200);
        assert_eq!(c.dataset.entity_types.len(), 4);
        let v = c.vocabulary_size();
        assert!((280..=320).contains(&v), "vocabulary {v}");
        assert!(!c.wiki_snapshot.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&SyntheticSpec::default()).unwrap();
        let b = generate(&SyntheticSpec::default()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.wiki_snapshot, b.wiki_snapshot);
    }

    #[test]
    fn groundable_mentions_have_an_exact_object() {
        let spec = SyntheticSpec::default();
        let c = generate(&spec).unwrap();
        for s in &c.dataset.sentences {
            assert!(s.objects.len() <= 4);
            for (i, span) in s.gold_spans().iter().enumerate() {
                let g = s.grounding_for(i);
                assert_eq!(g.groundable(), spec.groundable_types.contains(&span.entity_type));
                for gold in g.boxes() {
                    let best = s.objects.iter().map(|o| iou(gold, &o.bbox)).fold(0.0, f64::max);
                    assert_eq!(best, 1.0);
                    let others = s.objects.iter().filter(|o| iou(gold, &o.bbox) > 0.0).count();
                    assert_eq!(others, 1, "distractor overlaps gold in {}", s.id);
                }
            }
        }
    }
}
