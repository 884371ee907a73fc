//! Finite-difference checks of every trained head on a tiny encoder.

use std::time::Instant;

use serde::Serialize;

use crate::data::{BoundingBox, Dataset, GroundingAnnotation, ObjectDetail, Split, TaggedSentence};
use crate::error::Result;
use crate::knowledge::{rank_objects, KnowledgeBundle, WikiSnippet};
use crate::neural::{gradient_check, EncoderShape, GradCheckReport, Graph, XentTargets};
use crate::runner::{candidate_inputs, stage2_examples, stage2_meta};
use crate::stage1::{stage1_meta, CandidateSource, SpanCandidate, Stage1Model};
use crate::stage2::{batch_loss, Stage2Example, Stage2Model};
use crate::tyt::{batch_weights, TytMode};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct HeadCheck {
    pub head: String,
    pub seconds: f64,
    #[serde(flatten)]
    pub report: GradCheckReport,
}

/// Two layers, width 8, no dropout.
pub fn tiny_shape() -> EncoderShape {
    EncoderShape {
        embed_dim: 8,
        num_layers: 2,
        num_heads: 2,
        ffn_dim: 16,
        max_sequence_length: 48,
        dropout_rate: 0.0,
    }
}

fn bx(a: f64, b: f64, c: f64, d: f64) -> BoundingBox {
    BoundingBox::new(a, b, c, d).expect("valid box")
}

/// Two sentences: one with an image, two objects and one ungroundable
/// entity, one text-only.
pub fn tiny_dataset() -> Result<Dataset> {
    let words = |w: &[&str]| w.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let tags = |t: &[&str]| t.iter().map(|s| s.parse()).collect::<Result<Vec<_>>>();
    let mut a = TaggedSentence::new(
        "g1",
        words(&["Mira", "Tolk", "visits", "Oslo"]),
        tags(&["B-PER", "I-PER", "O", "B-LOC"])?,
        false,
    )?;
    a.image_caption = Some("a woman at a harbor".into());
    a.objects = vec![
        ObjectDetail::new("person", "mira tolk smiling", bx(10.0, 10.0, 50.0, 90.0))?,
        ObjectDetail::new("boat", "small boat", bx(40.0, 60.0, 90.0, 95.0))?,
    ];
    a.grounding.insert(0, GroundingAnnotation::new(vec![bx(12.0, 8.0, 48.0, 92.0)]));
    a.grounding.insert(1, GroundingAnnotation::ungroundable());
    let b = TaggedSentence::new("g2", words(&["Acme", "hires"]), tags(&["B-ORG", "O"])?, false)?;
    Ok(Dataset::new("gradcheck", vec![a, b], Split::Train))
}

/// A fresh stage-2 model over three candidates of the first sentence, the
/// labelled examples, and class distributions from a second random model.
pub fn tiny_stage2(train: &Dataset) -> Result<(Stage2Model, Vec<Stage2Example>, Vec<Vec<f64>>)> {
    let s = &train.sentences[0];
    let candidates = [
        SpanCandidate::new(s, 0, 2, CandidateSource::Gold)?,
        SpanCandidate::new(s, 3, 4, CandidateSource::Gold)?,
        SpanCandidate::new(s, 2, 3, CandidateSource::FoldNegative)?,
    ];
    let bundles: Vec<KnowledgeBundle> = candidates
        .iter()
        .map(|c| KnowledgeBundle {
            candidate: c.clone(),
            wiki: WikiSnippet {
                text: "a Norwegian writer".into(),
                ..WikiSnippet::miss("x")
            },
            caption: s.image_caption.clone(),
            objects: rank_objects(&c.surface(s), &s.objects, 18),
        })
        .collect();
    let inputs = candidate_inputs(train, &bundles)?;
    let meta = stage2_meta(&inputs, &train.entity_types, &tiny_shape());
    let examples = stage2_examples(&meta, &inputs)?;
    let teacher = Stage2Model::init(meta.clone(), 99)?;
    let dists = examples
        .iter()
        .map(|e| teacher.recognize(&e.prompt).map(|o| o.class_dist.probs().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((Stage2Model::init(meta, 5)?, examples, dists))
}

fn timed(head: &str, f: impl FnOnce() -> Result<GradCheckReport>) -> Result<HeadCheck> {
    let t = Instant::now();
    let report = f()?;
    Ok(HeadCheck {
        head: head.to_string(),
        seconds: t.elapsed().as_secs_f64(),
        report,
    })
}

/// Runs the five checks: BIO tagging, mask classification, grounding,
/// the combined loss with weight 1, and adaptive distillation.
pub fn gradient_suite() -> Result<Vec<HeadCheck>> {
    let train = tiny_dataset()?;
    let s1 = Stage1Model::init(stage1_meta(&train, &tiny_shape()), 3)?;
    let tag_set = s1.tag_set();
    let gold_tags: Vec<usize> = train
        .sentences
        .iter()
        .flat_map(|s| s.tags.iter().map(|t| tag_set.index_of(t)))
        .collect::<Result<_>>()?;
    let (s2, examples, teacher) = tiny_stage2(&train)?;
    let batch: Vec<&Stage2Example> = examples.iter().collect();
    let gold_cls: Vec<usize> = examples.iter().map(|e| e.gold_class).collect();
    let targets: Vec<f64> = examples
        .iter()
        .flat_map(|e| e.grounding_targets.clone().unwrap_or_default())
        .collect();
    let prompts: Vec<_> = examples.iter().map(|e| &e.prompt).collect();

    let mut out = Vec::new();
    out.push(timed("bio_tagging", || {
        gradient_check(
            &s1.params,
            |g: &mut Graph, p| {
                let parts = train
                    .sentences
                    .iter()
                    .map(|s| s1.tag_logits(g, p, s, None))
                    .collect::<Result<Vec<_>>>()?;
                let logits = g.concat_rows(&parts)?;
                g.distill_xent(logits, &XentTargets::hard(&gold_tags))
            },
            STEP,
            TOLERANCE,
        )
    })?);
    out.push(timed("mask_classification", || {
        gradient_check(
            &s2.params,
            |g: &mut Graph, p| {
                let heads = s2.heads(g, p, &prompts, None)?;
                g.distill_xent(heads.class_logits, &XentTargets::hard(&gold_cls))
            },
            STEP,
            TOLERANCE,
        )
    })?);
    out.push(timed("grounding", || {
        gradient_check(
            &s2.params,
            |g: &mut Graph, p| {
                let heads = s2.heads(g, p, &prompts, None)?;
                let overlap = heads.overlap_logits.expect("fixture prompts carry objects");
                g.bce_logits(overlap, &targets, 1.0 / prompts.len() as f64)
            },
            STEP,
            TOLERANCE,
        )
    })?);
    out.push(timed("combined_lambda_1", || {
        gradient_check(
            &s2.params,
            |g: &mut Graph, p| batch_loss(&s2, g, p, &batch, 1.0, &None, None),
            STEP,
            TOLERANCE,
        )
    })?);
    let weights = batch_weights(TytMode::Adaptive, &teacher, &gold_cls);
    let distill_targets = Some((teacher.clone(), weights));
    out.push(timed("tyt_adaptive", || {
        gradient_check(
            &s2.params,
            |g: &mut Graph, p| batch_loss(&s2, g, p, &batch, 0.0, &distill_targets, None),
            STEP,
            TOLERANCE,
        )
    })?);
    Ok(out)
}
