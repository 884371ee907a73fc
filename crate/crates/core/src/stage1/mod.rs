//! Span candidate detection: a BIO tagger over encoder token states.

pub mod awp;
pub mod candidates;
pub mod harvest;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::vocab::Vocab;
use crate::data::{BioTag, Dataset, EntityType, TagSet, TaggedSentence};
use crate::error::{Error, Result};
use crate::neural::graph::softmax_into;
use crate::neural::params::{derive_seed, rng_from_seed};
use crate::neural::{
    forward_encoder, init_encoder, linear, load_checkpoint, optimizer_step, save_checkpoint, EncoderConfig, EncoderShape,
    Gradients, Graph, ParameterStore, SeededRng, Var, XentTargets,
};
use crate::tyt::{batch_weights, TytMode};

pub use awp::{awp_step, AwpOutcome};
pub use candidates::{
    candidates_from_tags, gold_candidates, read_candidates, write_candidates, CandidateSource, SpanCandidate,
};
pub use harvest::{fold_partition, harvest_fold_negatives, harvest_with, negatives_against_gold, CandidateDetector};

pub const ENCODER_PREFIX: &str = "encoder.";
pub const TAG_HEAD: &str = "head.tag";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage1Config {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub awp_enabled: bool,
    pub awp_start_fraction: f64,
    pub awp_rho: f64,
}

impl Stage1Config {
    fn paper(epochs: usize, batch_size: usize, lr: f64, weight_decay: f64) -> Self {
        Self {
            epochs,
            batch_size,
            lr,
            weight_decay,
            awp_enabled: true,
            awp_start_fraction: 0.5,
            awp_rho: 0.01,
        }
    }

    pub fn conll2003() -> Self {
        Self::paper(5, 8, 5e-6, 1.0)
    }

    pub fn twitter2015() -> Self {
        Self::paper(10, 4, 1e-5, 2.0)
    }

    pub fn twitter2017() -> Self {
        Self::paper(10, 8, 1e-5, 2.0)
    }

    pub fn twitter_gmner() -> Self {
        Self::paper(10, 8, 1e-5, 2.0)
    }

    /// Settings that fit a freshly initialized small encoder on the
    /// synthetic corpus in seconds. The rates above assume a pretrained
    /// encoder and barely move a random one.
    pub fn desk() -> Self {
        Self {
            epochs: 20,
            batch_size: 8,
            lr: 3e-3,
            weight_decay: 0.01,
            awp_enabled: true,
            awp_start_fraction: 0.5,
            awp_rho: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("stage1 epochs and batch_size must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("stage1 lr must be > 0 and weight_decay >= 0".into()));
        }
        if self.awp_enabled && !(self.awp_start_fraction > 0.0 && self.awp_start_fraction < 1.0) {
            return Err(Error::Config(format!(
                "awp_start_fraction {} must lie strictly between 0 and 1",
                self.awp_start_fraction
            )));
        }
        if self.awp_rho < 0.0 {
            return Err(Error::Config("awp_rho must be >= 0".into()));
        }
        Ok(())
    }

    /// First epoch (0-based) that uses perturbed gradients.
    pub fn awp_start_epoch(&self) -> Option<usize> {
        self.awp_enabled
            .then(|| ((self.epochs as f64) * self.awp_start_fraction).floor() as usize)
    }
}

/// Everything needed to rebuild the tagger besides its weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage1Meta {
    pub encoder: EncoderConfig,
    pub vocab: Vocab,
    pub entity_types: Vec<EntityType>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Model {
    pub meta: Stage1Meta,
    pub params: ParameterStore,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean token loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub awp_batches: usize,
    pub awp_fallbacks: usize,
}

impl Stage1Model {
    pub fn init(meta: Stage1Meta, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(derive_seed(seed, "stage1-init"));
        let mut params = ParameterStore::new();
        init_encoder(&mut params, ENCODER_PREFIX, &meta.encoder, &mut rng)?;
        let n_tags = TagSet::new(&meta.entity_types).len();
        params.init_linear(&mut rng, TAG_HEAD, meta.encoder.embed_dim, n_tags)?;
        Ok(Self { meta, params })
    }

    pub fn tag_set(&self) -> TagSet {
        TagSet::new(&self.meta.entity_types)
    }

    /// `[len, num_tags]` logits for one sentence.
    pub fn tag_logits(
        &self,
        g: &mut Graph,
        params: &ParameterStore,
        sentence: &TaggedSentence,
        dropout: Option<&mut SeededRng>,
    ) -> Result<Var> {
        let ids = self.meta.vocab.encode(&sentence.tokens);
        let h = forward_encoder(g, params, ENCODER_PREFIX, &self.meta.encoder, &ids, dropout)?;
        linear(g, params, TAG_HEAD, h)
    }

    /// Per-token tag distributions, dropout off.
    pub fn tag_distributions(&self, sentence: &TaggedSentence) -> Result<Vec<Vec<f64>>> {
        let mut g = Graph::new();
        let logits = self.tag_logits(&mut g, &self.params, sentence, None)?;
        let v = g.value(logits);
        Ok((0..v.rows())
            .map(|r| {
                let mut p = vec![0.0; v.cols()];
                softmax_into(v.row(r), &mut p);
                p
            })
            .collect())
    }

    /// Argmax tag per token. Sequences may be ill-formed.
    pub fn predict_tags(&self, sentence: &TaggedSentence) -> Result<Vec<BioTag>> {
        let tags = self.tag_set();
        let mut g = Graph::new();
        let logits = self.tag_logits(&mut g, &self.params, sentence, None)?;
        let v = g.value(logits);
        Ok((0..v.rows())
            .map(|r| {
                let row = v.row(r);
                let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
                tags.tag(best)
            })
            .collect())
    }

    pub fn save(&self, stem: &Path, seed: u64) -> Result<()> {
        let config = serde_json::json!({ "kind": "stage1", "meta": self.meta });
        save_checkpoint(stem, &self.params, &config, seed)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (params, manifest) = load_checkpoint(stem)?;
        if manifest.config.get("kind").and_then(|k| k.as_str()) != Some("stage1") {
            return Err(Error::Checkpoint(format!("{} is not a stage-1 checkpoint", stem.display())));
        }
        let meta: Stage1Meta = serde_json::from_value(manifest.config["meta"].clone())?;
        Ok(Self { meta, params })
    }
}

/// Argmax, repaired decode, one untyped candidate per span.
pub fn detect_candidates(model: &Stage1Model, sentences: &[TaggedSentence]) -> Result<Vec<SpanCandidate>> {
    let mut out = Vec::new();
    for s in sentences {
        let tags = model.predict_tags(s)?;
        out.extend(candidates_from_tags(s, &tags, CandidateSource::Predicted));
    }
    Ok(out)
}

/// Fraction of tokens whose argmax tag equals the gold tag.
pub fn tag_accuracy(model: &Stage1Model, sentences: &[TaggedSentence]) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for s in sentences {
        let pred = model.predict_tags(s)?;
        hit += pred.iter().zip(&s.tags).filter(|(a, b)| a == b).count();
        total += s.len();
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Builds the vocabulary and tag inventory from the training split.
pub fn stage1_meta(train: &Dataset, shape: &EncoderShape) -> Stage1Meta {
    let vocab = Vocab::build(train.sentences.iter().flat_map(|s| s.tokens.iter().map(String::as_str)));
    Stage1Meta {
        encoder: EncoderConfig::from_shape(shape, vocab.len()),
        vocab,
        entity_types: train.entity_types.clone(),
    }
}

/// Trains the tagger with mean token cross-entropy, or with the
/// distillation blend when a frozen teacher is given.
pub fn train_stage1(
    train: &Dataset,
    config: &Stage1Config,
    shape: &EncoderShape,
    seed: u64,
    teacher: Option<(&Stage1Model, TytMode)>,
) -> Result<(Stage1Model, TrainLog)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("stage1 training set is empty".into()));
    }
    let meta = match teacher {
        Some((t, _)) => t.meta.clone(),
        None => stage1_meta(train, shape),
    };
    let mut model = Stage1Model::init(meta, seed)?;
    let tag_set = model.tag_set();
    let gold_ids: Vec<Vec<usize>> = train
        .sentences
        .iter()
        .map(|s| s.tags.iter().map(|t| tag_set.index_of(t)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let teacher = teacher.filter(|(_, m)| *m != TytMode::Off);

    let mut rng = rng_from_seed(derive_seed(seed, "stage1-train"));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let awp_from = config.awp_start_epoch();
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let use_awp = awp_from.is_some_and(|e| epoch >= e) && config.awp_rho > 0.0;
        let (mut loss_sum, mut token_sum) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let gold: Vec<usize> = batch.iter().flat_map(|&i| gold_ids[i].iter().copied()).collect();
            let (teacher_dists, weights) = match teacher {
                Some((t, mode)) => {
                    let mut dists = Vec::with_capacity(gold.len());
                    for &i in batch {
                        dists.extend(t.tag_distributions(&train.sentences[i])?);
                    }
                    let w = batch_weights(mode, &dists, &gold);
                    (Some(dists), Some(w))
                }
                None => (None, None),
            };
            let dropout_seed: u64 = rng.random();
            let m = &model;
            let batch_loss = |params: &ParameterStore| -> Result<(f64, Gradients)> {
                let mut drng = rng_from_seed(dropout_seed);
                let mut g = Graph::new();
                let mut parts = Vec::with_capacity(batch.len());
                for &i in batch {
                    parts.push(m.tag_logits(&mut g, params, &train.sentences[i], Some(&mut drng))?);
                }
                let logits = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts)? };
                let targets = XentTargets {
                    gold: &gold,
                    teacher: teacher_dists.as_deref(),
                    weights: weights.as_deref(),
                };
                let loss = g.distill_xent(logits, &targets)?;
                let value = g.value(loss).item();
                Ok((value, g.backward(loss)?))
            };
            let mut params = model.params.clone();
            let (value, grads) = if use_awp {
                let out = awp_step(&mut params, config.awp_rho, batch_loss)?;
                log.awp_batches += 1;
                log.awp_fallbacks += usize::from(out.fell_back);
                (out.loss, out.gradients)
            } else {
                batch_loss(&params)?
            };
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(format!("stage1 epoch {} batch loss {value}", epoch + 1)));
            }
            optimizer_step(&mut params, &grads, config.lr, config.weight_decay)?;
            model.params = params;
            loss_sum += value * gold.len() as f64;
            token_sum += gold.len();
        }
        let mean = loss_sum / token_sum.max(1) as f64;
        log::info!("stage1 epoch {}/{}: loss {mean:.6}", epoch + 1, config.epochs);
        log.epoch_losses.push(mean);
    }
    Ok((model, log))
}
