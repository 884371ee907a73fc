//! The two stages wired together in memory. The CLI commands run the same
//! steps one at a time through files.

use crate::data::{Dataset, EntityType};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalResult, EvalTask};
use crate::knowledge::{gather_knowledge, KnowledgeBundle, WikiClient};
use crate::neural::params::derive_seed;
use crate::neural::EncoderShape;
use crate::stage1::{
    detect_candidates, gold_candidates, harvest_fold_negatives, train_stage1, SpanCandidate, Stage1Config, Stage1Model,
    TrainLog,
};
use crate::stage2::{
    label_example, predict, prompt_vocab, train_stage2, CandidateInput, EntityPrediction, Stage2Config, Stage2Example,
    Stage2Meta, Stage2Model,
};
use crate::tyt::{distill, TytMode};

/// One knowledge bundle per candidate, in candidate order.
pub fn gather_all(
    dataset: &Dataset,
    candidates: &[SpanCandidate],
    client: &WikiClient,
    max_objects: usize,
) -> Result<Vec<KnowledgeBundle>> {
    let index = dataset.index();
    candidates
        .iter()
        .map(|c| {
            let &i = index
                .get(c.sentence_id.as_str())
                .ok_or_else(|| Error::Invalid(format!("candidate for unknown sentence {}", c.sentence_id)))?;
            gather_knowledge(c, &dataset.sentences[i], client, max_objects)
        })
        .collect()
}

/// Pairs each bundle with its sentence.
pub fn candidate_inputs<'a>(dataset: &'a Dataset, bundles: &'a [KnowledgeBundle]) -> Result<Vec<CandidateInput<'a>>> {
    let index = dataset.index();
    bundles
        .iter()
        .map(|b| {
            let &i = index
                .get(b.candidate.sentence_id.as_str())
                .ok_or_else(|| Error::Invalid(format!("knowledge for unknown sentence {}", b.candidate.sentence_id)))?;
            Ok(CandidateInput {
                candidate: &b.candidate,
                sentence: &dataset.sentences[i],
                bundle: b,
            })
        })
        .collect()
}

pub fn stage2_meta(inputs: &[CandidateInput<'_>], entity_types: &[EntityType], shape: &EncoderShape) -> Stage2Meta {
    Stage2Meta::new(shape, prompt_vocab(inputs), entity_types)
}

pub fn stage2_examples(meta: &Stage2Meta, inputs: &[CandidateInput<'_>]) -> Result<Vec<Stage2Example>> {
    inputs.iter().map(|i| label_example(meta, i)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub task: EvalTask,
    pub encoder: EncoderShape,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub folds: usize,
    pub max_objects: usize,
    pub tyt: TytMode,
    /// Distill stage 2 as well as stage 1.
    pub distill_stage2: bool,
    pub threads: usize,
}

pub struct PipelineOutput {
    pub stage1: Stage1Model,
    pub stage1_log: TrainLog,
    pub stage2: Stage2Model,
    pub stage2_log: TrainLog,
    pub train_candidates: Vec<SpanCandidate>,
    pub predictions: Vec<EntityPrediction>,
    pub result: EvalResult,
}

/// Trains both stages on `train` and evaluates on `test`.
pub fn run_pipeline(
    train: &Dataset,
    test: &Dataset,
    client: &WikiClient,
    settings: &PipelineSettings,
    seed: u64,
) -> Result<PipelineOutput> {
    let (_, (stage1, stage1_log)) = distill(settings.tyt, derive_seed(seed, "stage1"), |teacher, s| {
        train_stage1(train, &settings.stage1, &settings.encoder, s, teacher.map(|((m, _), mode)| (m, mode)))
    })?;
    let negatives = harvest_fold_negatives(
        train,
        &settings.stage1,
        &settings.encoder,
        settings.folds,
        derive_seed(seed, "harvest"),
    )?;
    let mut train_candidates = gold_candidates(train);
    train_candidates.extend(negatives);
    let bundles = gather_all(train, &train_candidates, client, settings.max_objects)?;
    let inputs = candidate_inputs(train, &bundles)?;
    let meta = stage2_meta(&inputs, &train.entity_types, &settings.encoder);
    let examples = stage2_examples(&meta, &inputs)?;
    let mode2 = if settings.distill_stage2 { settings.tyt } else { TytMode::Off };
    let (_, (stage2, stage2_log)) = distill(mode2, derive_seed(seed, "stage2"), |teacher, s| {
        train_stage2(&examples, meta.clone(), &settings.stage2, s, teacher.map(|((m, _), mode)| (m, mode)))
    })?;
    let test_candidates = detect_candidates(&stage1, &test.sentences)?;
    let test_bundles = gather_all(test, &test_candidates, client, settings.max_objects)?;
    let test_inputs = candidate_inputs(test, &test_bundles)?;
    let predictions = predict(&stage2, &test_inputs, settings.stage2.grounding_threshold, settings.threads)?;
    let result = evaluate(settings.task, &predictions, test)?;
    Ok(PipelineOutput {
        stage1,
        stage1_log,
        stage2,
        stage2_log,
        train_candidates,
        predictions,
        result,
    })
}
