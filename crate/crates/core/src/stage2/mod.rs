//! Entity recognition over knowledge prompts: a classifier on the mask
//! token and an overlap regressor on every object token.

pub mod loss;
pub mod predict;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::vocab::Vocab;
use crate::data::{EntityType, TaggedSentence};
use crate::error::{Error, Result};
use crate::knowledge::{build_prompt, prompt_text, KnowledgeBundle, PromptSequence};
use crate::neural::graph::{sigmoid, softmax_into};
use crate::neural::params::{derive_seed, rng_from_seed};
use crate::neural::{
    forward_encoder, init_encoder, linear, load_checkpoint, optimizer_step, save_checkpoint, ClassDistribution,
    EncoderConfig, EncoderShape, Graph, ParameterStore, SeededRng, Var, XentTargets,
};
use crate::stage1::{CandidateSource, SpanCandidate, TrainLog};
use crate::tyt::{batch_weights, TytMode};

pub use loss::{combined_loss, grounding_loss, grounding_targets, recognition_loss};
pub use predict::{decide, predict, read_predictions, write_predictions, EntityPrediction};

pub const ENCODER_PREFIX: &str = "encoder.";
pub const CLASS_HEAD: &str = "head.cls";
pub const GROUND_HEAD: &str = "head.ground";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage2Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Weight of the grounding loss.
    pub lambda_grounding: f64,
    /// Minimum overlap score for a region to be predicted.
    pub grounding_threshold: f64,
}

impl Stage2Config {
    fn paper(epochs: usize, batch_size: usize, lr: f64, weight_decay: f64, lambda: f64) -> Self {
        Self {
            epochs,
            batch_size,
            lr,
            weight_decay,
            lambda_grounding: lambda,
            grounding_threshold: 0.5,
        }
    }

    pub fn conll2003() -> Self {
        Self::paper(20, 8, 3e-6, 0.01, 0.0)
    }

    pub fn twitter2015() -> Self {
        Self::paper(5, 8, 1e-5, 0.01, 0.0)
    }

    pub fn twitter2017() -> Self {
        Self::paper(7, 8, 5e-6, 0.01, 0.0)
    }

    pub fn twitter_gmner() -> Self {
        Self::paper(5, 8, 5e-6, 2.0, 1.0)
    }

    /// Fits a randomly initialized encoder on the synthetic corpus.
    pub fn desk() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            lr: 2e-3,
            weight_decay: 0.01,
            lambda_grounding: 1.0,
            grounding_threshold: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("stage2 epochs and batch_size must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("stage2 lr must be > 0 and weight_decay >= 0".into()));
        }
        if !self.lambda_grounding.is_finite() || self.lambda_grounding < 0.0 {
            return Err(Error::Config("lambda_grounding must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.grounding_threshold) {
            return Err(Error::Config("grounding_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Meta {
    pub encoder: EncoderConfig,
    pub vocab: Vocab,
    /// Entity types in order, then `NON_ENTITY` last.
    pub classes: Vec<EntityType>,
}

impl Stage2Meta {
    pub fn new(shape: &EncoderShape, vocab: Vocab, entity_types: &[EntityType]) -> Self {
        let mut classes: Vec<EntityType> = entity_types.iter().filter(|t| !t.is_non_entity()).cloned().collect();
        classes.push(EntityType::non_entity());
        Self {
            encoder: EncoderConfig::from_shape(shape, vocab.len()),
            vocab,
            classes,
        }
    }

    pub fn non_entity_index(&self) -> usize {
        self.classes.len() - 1
    }

    pub fn class_index(&self, ty: &EntityType) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == ty)
            .ok_or_else(|| Error::UnknownEntityType(ty.to_string()))
    }
}

/// A candidate with its evidence and its sentence, ready for prompting.
#[derive(Debug, Clone, Copy)]
pub struct CandidateInput<'a> {
    pub candidate: &'a SpanCandidate,
    pub sentence: &'a TaggedSentence,
    pub bundle: &'a KnowledgeBundle,
}

/// Vocabulary over every word of the training prompts.
pub fn prompt_vocab(inputs: &[CandidateInput<'_>]) -> Vocab {
    let texts: Vec<String> = inputs
        .iter()
        .map(|i| prompt_text(i.candidate, i.sentence, i.bundle))
        .collect();
    Vocab::build(texts.iter().flat_map(|t| t.split_whitespace()))
}

/// One labeled training row.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Example {
    pub prompt: PromptSequence,
    pub gold_class: usize,
    /// Overlap targets for the prompt's objects; `None` when the sentence
    /// has entities but no grounding annotation.
    pub grounding_targets: Option<Vec<f64>>,
}

/// Gold candidates take their gold type and grounding; fold negatives are
/// `NON_ENTITY` with all-zero targets.
pub fn label_example(meta: &Stage2Meta, input: &CandidateInput<'_>) -> Result<Stage2Example> {
    let prompt = build_prompt(
        input.candidate,
        input.sentence,
        input.bundle,
        &meta.vocab,
        meta.encoder.max_sequence_length,
    )?;
    let spans = input.sentence.gold_spans();
    let gold = spans
        .iter()
        .position(|s| input.candidate.same_range(s.start, s.end));
    let gold_class = match (input.candidate.source, gold) {
        (CandidateSource::FoldNegative, _) | (_, None) => meta.non_entity_index(),
        (_, Some(i)) => meta.class_index(&spans[i].entity_type)?,
    };
    let grounding_targets = if input.sentence.grounding.is_empty() && !spans.is_empty() {
        None
    } else {
        let included: Vec<_> = input.bundle.objects[..prompt.obj_positions.len()]
            .iter()
            .map(|r| r.object.clone())
            .collect();
        let annotation = match gold {
            Some(i) if gold_class != meta.non_entity_index() => input.sentence.grounding_for(i),
            _ => Default::default(),
        };
        Some(grounding_targets(&annotation, &included))
    };
    Ok(Stage2Example {
        prompt,
        gold_class,
        grounding_targets,
    })
}

/// Class distribution and overlap scores for one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct RecognitionOutput {
    pub candidate: SpanCandidate,
    pub class_dist: ClassDistribution,
    /// Aligned with the prompt's object positions.
    pub overlap_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Model {
    pub meta: Stage2Meta,
    pub params: ParameterStore,
}

/// Graph outputs for a batch of prompts.
pub struct BatchHeads {
    /// `[batch, classes]`
    pub class_logits: Var,
    /// `[total objects, 1]`, absent when no prompt has objects.
    pub overlap_logits: Option<Var>,
}

impl Stage2Model {
    pub fn init(meta: Stage2Meta, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(derive_seed(seed, "stage2-init"));
        let mut params = ParameterStore::new();
        init_encoder(&mut params, ENCODER_PREFIX, &meta.encoder, &mut rng)?;
        let d = meta.encoder.embed_dim;
        params.init_linear(&mut rng, CLASS_HEAD, d, meta.classes.len())?;
        params.init_linear(&mut rng, GROUND_HEAD, d, 1)?;
        Ok(Self { meta, params })
    }

    pub fn heads(
        &self,
        g: &mut Graph,
        params: &ParameterStore,
        prompts: &[&PromptSequence],
        mut dropout: Option<&mut SeededRng>,
    ) -> Result<BatchHeads> {
        let mut masks = Vec::with_capacity(prompts.len());
        let mut objs = Vec::new();
        for p in prompts {
            let h = forward_encoder(g, params, ENCODER_PREFIX, &self.meta.encoder, &p.token_ids, dropout.as_deref_mut())?;
            masks.push(g.select_rows(h, &[p.mask_position])?);
            if !p.obj_positions.is_empty() {
                objs.push(g.select_rows(h, &p.obj_positions)?);
            }
        }
        let m = if masks.len() == 1 { masks[0] } else { g.concat_rows(&masks)? };
        let class_logits = linear(g, params, CLASS_HEAD, m)?;
        let overlap_logits = match objs.len() {
            0 => None,
            1 => Some(linear(g, params, GROUND_HEAD, objs[0])?),
            _ => {
                let o = g.concat_rows(&objs)?;
                Some(linear(g, params, GROUND_HEAD, o)?)
            }
        };
        Ok(BatchHeads {
            class_logits,
            overlap_logits,
        })
    }

    pub fn recognize(&self, prompt: &PromptSequence) -> Result<RecognitionOutput> {
        let mut g = Graph::new();
        let heads = self.heads(&mut g, &self.params, &[prompt], None)?;
        let logits = g.value(heads.class_logits);
        let mut probs = vec![0.0; logits.cols()];
        softmax_into(logits.row(0), &mut probs);
        let overlap_scores = heads
            .overlap_logits
            .map(|v| g.value(v).data().iter().map(|&z| sigmoid(z)).collect())
            .unwrap_or_default();
        Ok(RecognitionOutput {
            candidate: prompt.candidate.clone(),
            class_dist: ClassDistribution::new(probs)?,
            overlap_scores,
        })
    }

    pub fn save(&self, stem: &Path, seed: u64) -> Result<()> {
        let config = serde_json::json!({ "kind": "stage2", "meta": self.meta });
        save_checkpoint(stem, &self.params, &config, seed)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (params, manifest) = load_checkpoint(stem)?;
        if manifest.config.get("kind").and_then(|k| k.as_str()) != Some("stage2") {
            return Err(Error::Checkpoint(format!("{} is not a stage-2 checkpoint", stem.display())));
        }
        let meta: Stage2Meta = serde_json::from_value(manifest.config["meta"].clone())?;
        Ok(Self { meta, params })
    }
}

/// Teacher distributions for a batch; `None` for plain training.
pub type BatchTeacher = Option<(Vec<Vec<f64>>, Vec<f64>)>;

/// Scalar training loss for one batch: the (possibly distilled) class term
/// plus `lambda` times the grounding term averaged over prompts.
pub fn batch_loss(
    model: &Stage2Model,
    g: &mut Graph,
    params: &ParameterStore,
    batch: &[&Stage2Example],
    lambda: f64,
    teacher: &BatchTeacher,
    dropout: Option<&mut SeededRng>,
) -> Result<Var> {
    let prompts: Vec<&PromptSequence> = batch.iter().map(|e| &e.prompt).collect();
    let heads = model.heads(g, params, &prompts, dropout)?;
    let gold: Vec<usize> = batch.iter().map(|e| e.gold_class).collect();
    let targets = XentTargets {
        gold: &gold,
        teacher: teacher.as_ref().map(|(t, _)| t.as_slice()),
        weights: teacher.as_ref().map(|(_, w)| w.as_slice()),
    };
    let cls = g.distill_xent(heads.class_logits, &targets)?;
    let Some(overlap) = heads.overlap_logits else {
        return Ok(cls);
    };
    let mut flat = Vec::new();
    for e in batch {
        match &e.grounding_targets {
            Some(t) => flat.extend_from_slice(t),
            None if lambda == 0.0 => return Ok(cls),
            None => return Err(Error::Invalid("grounding targets missing for a weighted grounding loss".into())),
        }
    }
    let grd = g.bce_logits(overlap, &flat, 1.0 / batch.len() as f64)?;
    let weighted = g.scale(grd, lambda);
    g.add(cls, weighted)
}

pub fn train_stage2(
    examples: &[Stage2Example],
    meta: Stage2Meta,
    config: &Stage2Config,
    seed: u64,
    teacher: Option<(&Stage2Model, TytMode)>,
) -> Result<(Stage2Model, TrainLog)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Invalid("stage2 training set is empty".into()));
    }
    if config.lambda_grounding > 0.0 && examples.iter().any(|e| e.grounding_targets.is_none()) {
        return Err(Error::Invalid(
            "lambda_grounding > 0 but some training candidates have no grounding targets".into(),
        ));
    }
    let meta = match teacher {
        Some((t, _)) => t.meta.clone(),
        None => meta,
    };
    let teacher = teacher.filter(|(_, m)| *m != TytMode::Off);
    let mut model = Stage2Model::init(meta, seed)?;
    let mut rng = rng_from_seed(derive_seed(seed, "stage2-train"));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Stage2Example> = idx.iter().map(|&i| &examples[i]).collect();
            let batch_teacher: BatchTeacher = match teacher {
                Some((t, mode)) => {
                    let dists = batch
                        .iter()
                        .map(|e| t.recognize(&e.prompt).map(|o| o.class_dist.probs().to_vec()))
                        .collect::<Result<Vec<_>>>()?;
                    let gold: Vec<usize> = batch.iter().map(|e| e.gold_class).collect();
                    let w = batch_weights(mode, &dists, &gold);
                    Some((dists, w))
                }
                None => None,
            };
            let mut g = Graph::new();
            let loss = batch_loss(
                &model,
                &mut g,
                &model.params,
                &batch,
                config.lambda_grounding,
                &batch_teacher,
                Some(&mut rng),
            )?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(format!("stage2 epoch {} batch loss {value}", epoch + 1)));
            }
            let grads = g.backward(loss)?;
            optimizer_step(&mut model.params, &grads, config.lr, config.weight_decay)?;
            loss_sum += value * batch.len() as f64;
        }
        let mean = loss_sum / examples.len() as f64;
        log::info!("stage2 epoch {}/{}: loss {mean:.6}", epoch + 1, config.epochs);
        log.epoch_losses.push(mean);
    }
    Ok((model, log))
}
