//! The pipeline as separate commands that communicate through files in
//! the output directory:
//!
//! ```text
//! <output_dir>/data/{train.jsonl, wiki.json}        synthetic corpus only
//! <output_dir>/cache/                              wiki cache by default
//! <output_dir>/seed-<n>/stage1/model.{json,bin}    train-stage1
//! <output_dir>/seed-<n>/harvest/candidates.jsonl   harvest
//! <output_dir>/seed-<n>/knowledge/train.jsonl      fetch-knowledge
//! <output_dir>/seed-<n>/stage2/model.{json,bin}    train-stage2
//! <output_dir>/seed-<n>/distill/{stage1,stage2}/   distill
//! <output_dir>/seed-<n>/predict/predictions.jsonl  predict
//! <output_dir>/seed-<n>/evaluate/report.json       evaluate
//! <output_dir>/summary.json                        evaluate, across seeds
//! <output_dir>/noise/                              noise-bench
//! <output_dir>/grad_check/report.json              grad-check
//! ```
//!
//! Every step directory also gets a `run.json` manifest.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{DataSource, RunConfig};
use super::pipeline::{candidate_inputs, gather_all, stage2_examples, stage2_meta};
use crate::data::conll::read_conll;
use crate::data::jsonl::{read_multimodal_jsonl, write_multimodal_jsonl};
use crate::data::synthetic::{generate, SyntheticSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluation_report, EvalReport};
use crate::gradsuite::gradient_suite;
use crate::io::{read_json, read_jsonl, sha256_file, write_atomic, write_json_atomic, write_jsonl_atomic};
use crate::knowledge::wiki::CACHE_DIR_ENV;
use crate::knowledge::{KnowledgeBundle, WikiClient, WikiClientConfig, WikiSource};
use crate::neural::checkpoint::manifest_path;
use crate::neural::params::derive_seed;
use crate::stage1::{
    detect_candidates, gold_candidates, harvest_fold_negatives, read_candidates, tag_accuracy, train_stage1,
    write_candidates, Stage1Model,
};
use crate::stage2::{predict, read_predictions, train_stage2, write_predictions, Stage2Model};
use crate::tyt::bench::mean_std;
use crate::tyt::{noise_benchmark, NoiseReport, TytMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    TrainStage1,
    Harvest,
    FetchKnowledge,
    TrainStage2,
    Distill,
    Predict,
    Evaluate,
    NoiseBench,
    GradCheck,
    /// Every pipeline step from train-stage1 to evaluate.
    Run,
}

impl Command {
    pub const PIPELINE: [Command; 7] = [
        Command::TrainStage1,
        Command::Harvest,
        Command::FetchKnowledge,
        Command::TrainStage2,
        Command::Distill,
        Command::Predict,
        Command::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::TrainStage1 => "train-stage1",
            Command::Harvest => "harvest",
            Command::FetchKnowledge => "fetch-knowledge",
            Command::TrainStage2 => "train-stage2",
            Command::Distill => "distill",
            Command::Predict => "predict",
            Command::Evaluate => "evaluate",
            Command::NoiseBench => "noise-bench",
            Command::GradCheck => "grad-check",
            Command::Run => "run",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Command::TrainStage1,
            Command::Harvest,
            Command::FetchKnowledge,
            Command::TrainStage2,
            Command::Distill,
            Command::Predict,
            Command::Evaluate,
            Command::NoiseBench,
            Command::GradCheck,
            Command::Run,
        ]
        .into_iter()
        .find(|c| c.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown command `{s}`")))
    }
}

/// Written next to every artifact. No timestamps, so identical runs give
/// identical manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    /// Path to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub summary: Value,
}

/// What a command did. `passed` is false when a check the command runs
/// failed; artifacts are still written.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExecOptions {
    /// For noise-bench: fail unless the distillation orderings hold.
    pub check: bool,
}

struct Loaded {
    train: Dataset,
    test: Dataset,
    inputs: BTreeMap<String, String>,
    snapshot: Option<PathBuf>,
}

pub struct Workspace {
    pub config: RunConfig,
    config_hash: String,
}

fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().into_owned()
}

fn require(path: &Path, producer: Command) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer: producer.name().to_string(),
        })
    }
}

fn require_model(stem: &Path, producer: Command) -> Result<()> {
    require(&manifest_path(stem), producer)
}

fn read_dataset(path: &Path, merge_dev: bool) -> Result<Dataset> {
    if path.extension().is_some_and(|e| e == "jsonl") {
        read_multimodal_jsonl(path)
    } else {
        read_conll(path, merge_dev)
    }
}

impl Workspace {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let config_hash = config.content_hash()?;
        Ok(Self { config, config_hash })
    }

    pub fn root(&self) -> &Path {
        &self.config.output_dir
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root().join(format!("seed-{seed}"))
    }

    pub fn stage1_model(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("stage1/model")
    }

    pub fn candidates_path(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("harvest/candidates.jsonl")
    }

    pub fn knowledge_path(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("knowledge/train.jsonl")
    }

    pub fn stage2_model(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("stage2/model")
    }

    pub fn student_model(&self, seed: u64, stage: u8) -> PathBuf {
        self.seed_dir(seed).join(format!("distill/stage{stage}/model"))
    }

    pub fn predictions_path(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("predict/predictions.jsonl")
    }

    pub fn report_path(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("evaluate/report.json")
    }

    fn manifest(
        &self,
        command: Command,
        seed: Option<u64>,
        dir: &Path,
        inputs: BTreeMap<String, String>,
        outputs: &[PathBuf],
        summary: Value,
    ) -> Result<()> {
        let mut hashed = BTreeMap::new();
        for p in outputs {
            hashed.insert(rel(self.root(), p), sha256_file(p)?);
        }
        let m = RunManifest {
            command: command.name().to_string(),
            seed,
            config_hash: self.config_hash.clone(),
            inputs,
            outputs: hashed,
            summary,
        };
        write_json_atomic(&dir.join("run.json"), &m)
    }

    fn hash_inputs(&self, paths: &[&Path]) -> Result<BTreeMap<String, String>> {
        paths
            .iter()
            .map(|p| Ok((rel(self.root(), p), sha256_file(p)?)))
            .collect()
    }

    fn model_inputs(&self, stems: &[&Path]) -> Result<BTreeMap<String, String>> {
        let files: Vec<PathBuf> = stems.iter().map(|s| manifest_path(s)).collect();
        self.hash_inputs(&files.iter().map(PathBuf::as_path).collect::<Vec<_>>())
    }

    fn load_data(&self) -> Result<Loaded> {
        match &self.config.data {
            DataSource::Files(f) => {
                let train = read_dataset(&f.train, f.merge_dev)?;
                let test = read_dataset(&f.test, false)?;
                let mut inputs = BTreeMap::new();
                inputs.insert(f.train.to_string_lossy().into_owned(), sha256_file(&f.train)?);
                inputs.insert(f.test.to_string_lossy().into_owned(), sha256_file(&f.test)?);
                Ok(Loaded {
                    train,
                    test,
                    inputs,
                    snapshot: self.config.knowledge.snapshot.clone(),
                })
            }
            DataSource::Synthetic(s) => {
                let corpus = generate(&SyntheticSpec {
                    sentences: s.sentences,
                    seed: s.seed,
                    with_images: s.with_images,
                    ..SyntheticSpec::default()
                })?;
                let dir = self.root().join("data");
                let train_path = dir.join("train.jsonl");
                let wiki_path = dir.join("wiki.json");
                write_multimodal_jsonl(&corpus.dataset, &train_path)?;
                write_json_atomic(&wiki_path, &corpus.wiki_snapshot)?;
                let inputs = self.hash_inputs(&[&train_path, &wiki_path])?;
                Ok(Loaded {
                    test: corpus.dataset.clone(),
                    train: corpus.dataset,
                    inputs,
                    snapshot: Some(self.config.knowledge.snapshot.clone().unwrap_or(wiki_path)),
                })
            }
        }
    }

    fn wiki_client(&self, snapshot: Option<PathBuf>) -> Result<WikiClient> {
        let k = &self.config.knowledge;
        let cache_dir = std::env::var_os(CACHE_DIR_ENV)
            .map(PathBuf::from)
            .or_else(|| k.cache_dir.clone())
            .unwrap_or_else(|| self.root().join("cache"));
        WikiClient::new(WikiClientConfig {
            cache_dir: Some(cache_dir),
            snapshot,
            online: k.online,
            endpoint: k.endpoint.clone(),
            max_wiki_chars: k.max_wiki_chars,
            timeout_secs: k.timeout_secs,
        })
    }

    pub fn execute(&self, command: Command, opts: ExecOptions) -> Result<Outcome> {
        let mut out = Outcome {
            lines: Vec::new(),
            passed: true,
        };
        match command {
            Command::NoiseBench => return self.noise_bench(opts),
            Command::GradCheck => return self.grad_check(),
            Command::Run => {
                for c in Command::PIPELINE {
                    let o = self.execute(c, opts)?;
                    out.lines.extend(o.lines);
                    out.passed &= o.passed;
                }
                return Ok(out);
            }
            _ => {}
        }
        let data = self.load_data()?;
        let mut reports = Vec::new();
        for &seed in &self.config.seeds {
            let line = match command {
                Command::TrainStage1 => self.train_stage1(&data, seed)?,
                Command::Harvest => self.harvest(&data, seed)?,
                Command::FetchKnowledge => self.fetch_knowledge(&data, seed)?,
                Command::TrainStage2 => self.train_stage2(&data, seed)?,
                Command::Distill => self.distill(&data, seed)?,
                Command::Predict => self.predict(&data, seed)?,
                Command::Evaluate => {
                    let (line, report) = self.evaluate(&data, seed)?;
                    reports.push((seed, report));
                    line
                }
                Command::NoiseBench | Command::GradCheck | Command::Run => unreachable!(),
            };
            log::info!("{command} seed {seed}: {line}");
            out.lines.push(format!("[seed {seed}] {command}: {line}"));
        }
        if command == Command::Evaluate {
            out.lines.push(self.summarize(&reports)?);
        }
        Ok(out)
    }

    fn train_stage1(&self, data: &Loaded, seed: u64) -> Result<String> {
        let c = &self.config;
        let s = derive_seed(derive_seed(seed, "stage1"), "teacher");
        let (model, log) = train_stage1(&data.train, &c.stage1, &c.encoder, s, None)?;
        let stem = self.stage1_model(seed);
        model.save(&stem, s)?;
        let acc = tag_accuracy(&model, &data.train.sentences)?;
        let dir = stem.parent().expect("has parent").to_path_buf();
        let report = dir.join("report.json");
        write_json_atomic(&report, &json!({ "train_log": log, "train_tag_accuracy": acc, "config": c.stage1 }))?;
        let outputs = [manifest_path(&stem), stem.with_extension("bin"), report];
        let summary = json!({ "epochs": c.stage1.epochs, "batch_size": c.stage1.batch_size, "lr": c.stage1.lr, "weight_decay": c.stage1.weight_decay, "train_tag_accuracy": acc });
        self.manifest(Command::TrainStage1, Some(seed), &dir, data.inputs.clone(), &outputs, summary)?;
        Ok(format!("train tag accuracy {acc:.4}"))
    }

    fn harvest(&self, data: &Loaded, seed: u64) -> Result<String> {
        let c = &self.config;
        let negatives =
            harvest_fold_negatives(&data.train, &c.stage1, &c.encoder, c.harvest_folds, derive_seed(seed, "harvest"))?;
        let mut candidates = gold_candidates(&data.train);
        let gold = candidates.len();
        candidates.extend(negatives);
        let path = self.candidates_path(seed);
        write_candidates(&path, &candidates)?;
        let summary = json!({ "gold": gold, "fold_negatives": candidates.len() - gold, "folds": c.harvest_folds });
        let dir = path.parent().expect("has parent");
        self.manifest(Command::Harvest, Some(seed), dir, data.inputs.clone(), std::slice::from_ref(&path), summary)?;
        Ok(format!("{gold} gold and {} fold-negative candidates", candidates.len() - gold))
    }

    fn fetch_knowledge(&self, data: &Loaded, seed: u64) -> Result<String> {
        let cand_path = self.candidates_path(seed);
        require(&cand_path, Command::Harvest)?;
        let candidates = read_candidates(&cand_path, &data.train)?;
        let client = self.wiki_client(data.snapshot.clone())?;
        let bundles = gather_all(&data.train, &candidates, &client, self.config.knowledge.max_objects)?;
        let path = self.knowledge_path(seed);
        write_jsonl_atomic(&path, &bundles)?;
        let mut sources: BTreeMap<&str, usize> = BTreeMap::new();
        for b in &bundles {
            let key = match b.wiki.source {
                WikiSource::Live => "live",
                WikiSource::Cache => "cache",
                WikiSource::Snapshot => "snapshot",
                WikiSource::Miss => "miss",
            };
            *sources.entry(key).or_default() += 1;
        }
        let mut inputs = data.inputs.clone();
        inputs.extend(self.hash_inputs(&[&cand_path])?);
        let dir = path.parent().expect("has parent");
        let summary = json!({ "bundles": bundles.len(), "wiki_sources": sources });
        self.manifest(Command::FetchKnowledge, Some(seed), dir, inputs, std::slice::from_ref(&path), summary)?;
        Ok(format!("{} knowledge bundles, wiki sources {sources:?}", bundles.len()))
    }

    fn read_bundles(&self, data: &Loaded, seed: u64) -> Result<Vec<KnowledgeBundle>> {
        let path = self.knowledge_path(seed);
        require(&path, Command::FetchKnowledge)?;
        let bundles: Vec<KnowledgeBundle> = read_jsonl(&path)?;
        let index = data.train.index();
        for b in &bundles {
            let s = index
                .get(b.candidate.sentence_id.as_str())
                .ok_or_else(|| Error::Invalid(format!("{}: unknown sentence {}", path.display(), b.candidate.sentence_id)))?;
            b.candidate.check(&data.train.sentences[*s])?;
        }
        Ok(bundles)
    }

    fn train_stage2(&self, data: &Loaded, seed: u64) -> Result<String> {
        let c = &self.config;
        let bundles = self.read_bundles(data, seed)?;
        let inputs = candidate_inputs(&data.train, &bundles)?;
        let meta = stage2_meta(&inputs, &data.train.entity_types, &c.encoder);
        let examples = stage2_examples(&meta, &inputs)?;
        let s = derive_seed(derive_seed(seed, "stage2"), "teacher");
        let (model, log) = train_stage2(&examples, meta, &c.stage2, s, None)?;
        let stem = self.stage2_model(seed);
        model.save(&stem, s)?;
        let dir = stem.parent().expect("has parent").to_path_buf();
        let report = dir.join("report.json");
        write_json_atomic(&report, &json!({ "train_log": log, "examples": examples.len(), "config": c.stage2 }))?;
        let mut ins = data.inputs.clone();
        ins.extend(self.hash_inputs(&[&self.knowledge_path(seed)])?);
        let outputs = [manifest_path(&stem), stem.with_extension("bin"), report];
        let summary = json!({ "examples": examples.len(), "final_loss": log.epoch_losses.last() });
        self.manifest(Command::TrainStage2, Some(seed), &dir, ins, &outputs, summary)?;
        Ok(format!("{} examples, final loss {:.4}", examples.len(), log.epoch_losses.last().copied().unwrap_or(f64::NAN)))
    }

    fn distill(&self, data: &Loaded, seed: u64) -> Result<String> {
        let c = &self.config;
        let dir = self.seed_dir(seed).join("distill");
        if c.tyt == TytMode::Off {
            self.manifest(Command::Distill, Some(seed), &dir, BTreeMap::new(), &[], json!({ "mode": "off" }))?;
            return Ok("mode off; the teachers are used as they are".into());
        }
        let t1_stem = self.stage1_model(seed);
        require_model(&t1_stem, Command::TrainStage1)?;
        let teacher1 = Stage1Model::load(&t1_stem)?;
        let s1 = derive_seed(derive_seed(seed, "stage1"), "student");
        let (student1, log1) = train_stage1(&data.train, &c.stage1, &c.encoder, s1, Some((&teacher1, c.tyt)))?;
        let stem1 = self.student_model(seed, 1);
        student1.save(&stem1, s1)?;
        let mut outputs = vec![manifest_path(&stem1), stem1.with_extension("bin")];
        let mut inputs = data.inputs.clone();
        inputs.extend(self.model_inputs(&[&t1_stem])?);
        let mut summary = json!({ "mode": c.tyt, "stage1_final_loss": log1.epoch_losses.last() });
        let mut line = format!("stage-1 student ({})", c.tyt);
        if c.task.distills_stage2() {
            let t2_stem = self.stage2_model(seed);
            require_model(&t2_stem, Command::TrainStage2)?;
            let teacher2 = Stage2Model::load(&t2_stem)?;
            let bundles = self.read_bundles(data, seed)?;
            let ins = candidate_inputs(&data.train, &bundles)?;
            let examples = stage2_examples(&teacher2.meta, &ins)?;
            let s2 = derive_seed(derive_seed(seed, "stage2"), "student");
            let (student2, log2) = train_stage2(&examples, teacher2.meta.clone(), &c.stage2, s2, Some((&teacher2, c.tyt)))?;
            let stem2 = self.student_model(seed, 2);
            student2.save(&stem2, s2)?;
            outputs.extend([manifest_path(&stem2), stem2.with_extension("bin")]);
            inputs.extend(self.model_inputs(&[&t2_stem])?);
            inputs.extend(self.hash_inputs(&[&self.knowledge_path(seed)])?);
            summary["stage2_final_loss"] = json!(log2.epoch_losses.last());
            line.push_str(" and stage-2 student");
        }
        self.manifest(Command::Distill, Some(seed), &dir, inputs, &outputs, summary)?;
        Ok(line)
    }

    /// The students when distillation is on, otherwise the teachers.
    fn final_models(&self, seed: u64) -> Result<(PathBuf, PathBuf)> {
        let c = &self.config;
        let distilled = c.tyt != TytMode::Off;
        let s1 = if distilled {
            self.student_model(seed, 1)
        } else {
            self.stage1_model(seed)
        };
        let s2 = if distilled && c.task.distills_stage2() {
            self.student_model(seed, 2)
        } else {
            self.stage2_model(seed)
        };
        let producer = |stem: &Path, fallback: Command| {
            if stem.starts_with(self.seed_dir(seed).join("distill")) {
                Command::Distill
            } else {
                fallback
            }
        };
        require_model(&s1, producer(&s1, Command::TrainStage1))?;
        require_model(&s2, producer(&s2, Command::TrainStage2))?;
        Ok((s1, s2))
    }

    fn predict(&self, data: &Loaded, seed: u64) -> Result<String> {
        let c = &self.config;
        let (s1, s2) = self.final_models(seed)?;
        let stage1 = Stage1Model::load(&s1)?;
        let stage2 = Stage2Model::load(&s2)?;
        let candidates = detect_candidates(&stage1, &data.test.sentences)?;
        let client = self.wiki_client(data.snapshot.clone())?;
        let bundles = gather_all(&data.test, &candidates, &client, c.knowledge.max_objects)?;
        let inputs = candidate_inputs(&data.test, &bundles)?;
        let predictions = predict(&stage2, &inputs, c.stage2.grounding_threshold, c.threads)?;
        let dir = self.seed_dir(seed).join("predict");
        let cand_path = dir.join("candidates.jsonl");
        let knowledge_path = dir.join("knowledge.jsonl");
        let pred_path = self.predictions_path(seed);
        write_candidates(&cand_path, &candidates)?;
        write_jsonl_atomic(&knowledge_path, &bundles)?;
        write_predictions(&pred_path, &predictions)?;
        let mut ins = data.inputs.clone();
        ins.extend(self.model_inputs(&[&s1, &s2])?);
        let summary = json!({ "candidates": candidates.len(), "predictions": predictions.len() });
        self.manifest(Command::Predict, Some(seed), &dir, ins, &[cand_path, knowledge_path, pred_path], summary)?;
        Ok(format!("{} candidates, {} entities predicted", candidates.len(), predictions.len()))
    }

    fn evaluate(&self, data: &Loaded, seed: u64) -> Result<(String, EvalReport)> {
        let pred_path = self.predictions_path(seed);
        require(&pred_path, Command::Predict)?;
        let predictions = read_predictions(&pred_path)?;
        let report = evaluation_report(self.config.task.eval_task(), &predictions, &data.test, Some(&data.train))?;
        let path = self.report_path(seed);
        let dir = path.parent().expect("has parent").to_path_buf();
        let table_path = dir.join("report.txt");
        write_json_atomic(&path, &report)?;
        let table = report.table();
        write_atomic(&table_path, table.as_bytes())?;
        let mut ins = data.inputs.clone();
        ins.extend(self.hash_inputs(&[&pred_path])?);
        let summary = json!({ "f1": report.overall.f1 });
        self.manifest(Command::Evaluate, Some(seed), &dir, ins, &[path, table_path], summary)?;
        Ok((format!("{} F1 {:.4}\n{table}", report.task, report.overall.f1), report))
    }

    fn summarize(&self, reports: &[(u64, EvalReport)]) -> Result<String> {
        let pick = |f: fn(&EvalReport) -> f64| -> (f64, f64) {
            let xs: Vec<f64> = reports.iter().map(|(_, r)| f(r)).collect();
            mean_std(&xs)
        };
        let (p, p_sd) = pick(|r| r.overall.precision);
        let (r, r_sd) = pick(|r| r.overall.recall);
        let (f, f_sd) = pick(|r| r.overall.f1);
        let per_seed: Vec<Value> = reports
            .iter()
            .map(|(s, r)| json!({ "seed": s, "precision": r.overall.precision, "recall": r.overall.recall, "f1": r.overall.f1 }))
            .collect();
        let summary = json!({
            "task": self.config.task,
            "seeds": per_seed,
            "mean": { "precision": p, "recall": r, "f1": f },
            "std": { "precision": p_sd, "recall": r_sd, "f1": f_sd },
        });
        write_json_atomic(&self.root().join("summary.json"), &summary)?;
        Ok(format!(
            "{} seeds: precision {:.4} ± {:.4}, recall {:.4} ± {:.4}, F1 {:.4} ± {:.4}",
            reports.len(),
            p,
            p_sd,
            r,
            r_sd,
            f,
            f_sd
        ))
    }

    fn noise_bench(&self, opts: ExecOptions) -> Result<Outcome> {
        let n = &self.config.noise;
        let report = noise_benchmark(&n.task, &n.rates, &TytMode::ALL, &n.seeds)?;
        let dir = self.root().join("noise");
        let rows = dir.join("rows.csv");
        let summary_csv = dir.join("summary.csv");
        let json_path = dir.join("report.json");
        report.write_csv(&rows)?;
        report.write_summary_csv(&summary_csv)?;
        let checks = noise_checks(&report);
        write_json_atomic(&json_path, &json!({ "report": report, "checks": checks }))?;
        self.manifest(
            Command::NoiseBench,
            None,
            &dir,
            BTreeMap::new(),
            &[rows, summary_csv, json_path],
            json!(checks),
        )?;
        let mut lines = vec![format!("{:>6} {:>9} {:>8} {:>8}", "noise", "mode", "mean", "std")];
        for s in &report.summary {
            lines.push(format!("{:>6.2} {:>9} {:>8.4} {:>8.4}", s.noise_rate, s.mode, s.mean, s.std));
        }
        for (name, ok) in &checks {
            lines.push(format!("{name}: {}", if *ok { "holds" } else { "FAILS" }));
        }
        let passed = !opts.check || checks.values().all(|&ok| ok);
        Ok(Outcome { lines, passed })
    }

    fn grad_check(&self) -> Result<Outcome> {
        let checks = gradient_suite()?;
        let dir = self.root().join("grad_check");
        let path = dir.join("report.json");
        write_json_atomic(&path, &checks)?;
        let passed = checks.iter().all(|c| c.report.passed);
        self.manifest(Command::GradCheck, None, &dir, BTreeMap::new(), &[path], json!({ "passed": passed }))?;
        let lines = checks
            .iter()
            .map(|c| {
                format!(
                    "{:<20} max relative error {:.3e} over {} entries ({:.2}s) {}",
                    c.head,
                    c.report.max_relative_error,
                    c.report.entries_checked,
                    c.seconds,
                    if c.report.passed { "ok" } else { "FAILED" }
                )
            })
            .collect();
        Ok(Outcome { lines, passed })
    }
}

/// Orderings the benchmark is expected to show, keyed by a short name.
/// A check whose noise rate was not run is left out.
pub fn noise_checks(report: &NoiseReport) -> BTreeMap<String, bool> {
    let mut out = BTreeMap::new();
    let at = |rate: f64, mode| report.mean(rate, mode);
    if let (Some(a), Some(off), Some(half), Some(full)) = (
        at(0.2, TytMode::Adaptive),
        at(0.2, TytMode::Off),
        at(0.2, TytMode::Half),
        at(0.2, TytMode::Full),
    ) {
        out.insert("adaptive_ge_off_at_0.2".into(), a >= off);
        out.insert("adaptive_ge_half_at_0.2".into(), a >= half);
        out.insert("adaptive_ge_full_at_0.2".into(), a >= full);
    }
    let clean: Vec<f64> = TytMode::ALL.iter().filter_map(|&m| at(0.0, m)).collect();
    if clean.len() == TytMode::ALL.len() {
        let spread = clean.iter().cloned().fold(f64::MIN, f64::max) - clean.iter().cloned().fold(f64::MAX, f64::min);
        out.insert("modes_within_1pt_at_0.0".into(), spread <= 0.01);
    }
    out
}

/// Reads a manifest written by a command.
pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    read_json(&dir.join("run.json"))
}
