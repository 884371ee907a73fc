//! Entity-level precision, recall and F1, with optional region checking.

pub mod report;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::data::{iou, Dataset, EntityType, Span};
use crate::error::{Error, Result};
use crate::stage2::EntityPrediction;

pub use report::{evaluation_report, EvalReport};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counts {
    pub true_positive: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl Counts {
    pub fn precision(&self) -> f64 {
        ratio(self.true_positive, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positive, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn scores(&self) -> Scores {
        Scores {
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
            counts: *self,
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: Counts,
    pub per_type: BTreeMap<EntityType, Scores>,
}

impl EvalResult {
    fn from_counts(counts: Counts, per_type: BTreeMap<EntityType, Counts>) -> Self {
        Self {
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            counts,
            per_type: per_type.into_iter().map(|(t, c)| (t, c.scores())).collect(),
        }
    }

    pub fn scores(&self) -> Scores {
        self.counts.scores()
    }
}

/// Which conditions make a prediction correct.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalTask {
    /// Span and type.
    Ner,
    /// Span, type and region.
    Gmner { iou_threshold: f64 },
}

impl EvalTask {
    pub fn gmner() -> Self {
        EvalTask::Gmner {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EvalTask::Ner => "ner",
            EvalTask::Gmner { .. } => "gmner",
        }
    }
}

struct GoldEntity {
    /// Position among its sentence's gold spans.
    index: usize,
    span: Span,
}

/// Gold entities plus, per prediction, the gold entity it was matched to.
struct Matching {
    gold: Vec<GoldEntity>,
    hits: Vec<Option<usize>>,
    pred_sentence: Vec<usize>,
}

fn match_predictions(task: EvalTask, pred: &[EntityPrediction], gold: &Dataset) -> Result<Matching> {
    let sentences = gold.index();
    let mut entities = Vec::new();
    let mut by_key: HashMap<(usize, usize, usize, &EntityType), usize> = HashMap::new();
    let spans: Vec<Vec<Span>> = gold.sentences.iter().map(|s| s.gold_spans()).collect();
    for (si, list) in spans.iter().enumerate() {
        for (index, span) in list.iter().enumerate() {
            entities.push(GoldEntity {
                index,
                span: span.clone(),
            });
            by_key.insert((si, span.start, span.end, &span.entity_type), entities.len() - 1);
        }
    }
    let mut consumed = vec![false; entities.len()];
    let mut hits = Vec::with_capacity(pred.len());
    let mut pred_sentence = Vec::with_capacity(pred.len());
    let mut warned = false;
    for p in pred {
        let &si = sentences
            .get(p.sentence_id.as_str())
            .ok_or_else(|| Error::Invalid(format!("prediction for unknown sentence {}", p.sentence_id)))?;
        let sentence = &gold.sentences[si];
        if p.start >= p.end || p.end > sentence.len() {
            return Err(Error::InvalidSpan {
                start: p.start,
                end: p.end,
                len: sentence.len(),
            });
        }
        pred_sentence.push(si);
        let hit = by_key
            .get(&(si, p.start, p.end, &p.entity_type))
            .copied()
            .filter(|&g| !consumed[g])
            .filter(|&g| match task {
                EvalTask::Ner => true,
                EvalTask::Gmner { iou_threshold } => {
                    if p.region.is_some() && !sentence.has_image() {
                        if !warned {
                            log::warn!("region predicted for {} which has no image metadata", p.sentence_id);
                            warned = true;
                        }
                        return false;
                    }
                    let annotation = sentence.grounding_for(entities[g].index);
                    match (&p.region, annotation.groundable()) {
                        (None, false) => true,
                        (Some(b), true) => annotation.boxes().iter().any(|gb| iou(gb, b) > iou_threshold),
                        _ => false,
                    }
                }
            });
        if let Some(g) = hit {
            consumed[g] = true;
        }
        hits.push(hit);
    }
    Ok(Matching {
        gold: entities,
        hits,
        pred_sentence,
    })
}

fn aggregate(
    pred: &[EntityPrediction],
    m: &Matching,
    keep_pred: impl Fn(usize) -> bool,
    keep_gold: impl Fn(usize) -> bool,
    types: &[EntityType],
) -> EvalResult {
    let mut total = Counts::default();
    let mut per_type: BTreeMap<EntityType, Counts> = types.iter().map(|t| (t.clone(), Counts::default())).collect();
    for (i, p) in pred.iter().enumerate().filter(|(i, _)| keep_pred(*i)) {
        total.predicted += 1;
        let c = per_type.entry(p.entity_type.clone()).or_default();
        c.predicted += 1;
        if m.hits[i].is_some() {
            total.true_positive += 1;
            c.true_positive += 1;
        }
    }
    for (_, g) in m.gold.iter().enumerate().filter(|(j, _)| keep_gold(*j)) {
        total.gold += 1;
        per_type.entry(g.span.entity_type.clone()).or_default().gold += 1;
    }
    EvalResult::from_counts(total, per_type)
}

pub fn evaluate(task: EvalTask, pred: &[EntityPrediction], gold: &Dataset) -> Result<EvalResult> {
    let m = match_predictions(task, pred, gold)?;
    Ok(aggregate(pred, &m, |_| true, |_| true, &gold.entity_types))
}

/// Exact span and type match, each gold entity consumed at most once.
pub fn evaluate_ner(pred: &[EntityPrediction], gold: &Dataset) -> Result<EvalResult> {
    evaluate(EvalTask::Ner, pred, gold)
}

/// Span, type and region must all be right. An ungroundable entity needs
/// a `None` region; a groundable one needs IoU strictly above the
/// threshold with one of its boxes.
pub fn evaluate_gmner(pred: &[EntityPrediction], gold: &Dataset, iou_threshold: f64) -> Result<EvalResult> {
    evaluate(EvalTask::Gmner { iou_threshold }, pred, gold)
}

/// Whitespace runs collapse to one space; case is kept.
pub fn normalize_surface(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Surfaces of every gold entity in `train`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeenSplit {
    pub seen_surfaces: BTreeSet<String>,
}

impl SeenSplit {
    pub fn from_train(train: &Dataset) -> Self {
        Self {
            seen_surfaces: train
                .sentences
                .iter()
                .flat_map(|s| s.gold_spans().into_iter().map(|sp| normalize_surface(&sp.surface)))
                .collect(),
        }
    }

    pub fn is_seen(&self, surface: &str) -> bool {
        self.seen_surfaces.contains(&normalize_surface(surface))
    }
}

/// Splits the evaluation by whether each entity's surface occurs in the
/// training gold. Matched predictions follow their gold entity; the rest
/// go by their own surface.
pub fn seen_unseen_for(
    task: EvalTask,
    pred: &[EntityPrediction],
    gold_test: &Dataset,
    train: &Dataset,
) -> Result<(EvalResult, EvalResult)> {
    let split = SeenSplit::from_train(train);
    let m = match_predictions(task, pred, gold_test)?;
    let gold_seen: Vec<bool> = m.gold.iter().map(|g| split.is_seen(&g.span.surface)).collect();
    let pred_seen: Vec<bool> = pred
        .iter()
        .enumerate()
        .map(|(i, p)| match m.hits[i] {
            Some(g) => gold_seen[g],
            None => split.is_seen(&gold_test.sentences[m.pred_sentence[i]].surface(p.start, p.end)),
        })
        .collect();
    let types = &gold_test.entity_types;
    let seen = aggregate(pred, &m, |i| pred_seen[i], |j| gold_seen[j], types);
    let unseen = aggregate(pred, &m, |i| !pred_seen[i], |j| !gold_seen[j], types);
    Ok((seen, unseen))
}

pub fn seen_unseen_report(pred: &[EntityPrediction], gold_test: &Dataset, train: &Dataset) -> Result<(EvalResult, EvalResult)> {
    seen_unseen_for(EvalTask::Ner, pred, gold_test, train)
}
