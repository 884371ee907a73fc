mod support;

use std::path::Path;
use std::process::{Command, Output};

use scanner::data::jsonl::read_multimodal_jsonl;
use scanner::data::Dataset;
use scanner::eval::EvalReport;
use scanner::io::read_json;
use scanner::runner::{read_manifest, DataSource, FileData, RunConfig, Workspace};
use scanner::stage2::{write_predictions, EntityPrediction};
use support::crate_dir;

fn scanner(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scanner")).args(args).output().unwrap()
}

fn tiny_config(base: &str, train: &Path, out: &Path) -> RunConfig {
    let mut c = RunConfig::preset(base).unwrap();
    c.data = DataSource::Files(FileData {
        train: train.to_path_buf(),
        test: train.to_path_buf(),
        merge_dev: false,
    });
    c.encoder.embed_dim = 16;
    c.encoder.num_layers = 1;
    c.encoder.num_heads = 2;
    c.encoder.ffn_dim = 32;
    c.stage1.epochs = 2;
    c.stage2.epochs = 1;
    c.harvest_folds = 2;
    c.seeds = vec![1];
    c.output_dir = out.to_path_buf();
    c
}

fn write_config(c: &RunConfig, dir: &Path) -> String {
    let path = dir.join("config.json");
    scanner::io::write_json_atomic(&path, c).unwrap();
    path.to_string_lossy().into_owned()
}

fn gold_predictions(d: &Dataset) -> Vec<EntityPrediction> {
    d.sentences
        .iter()
        .flat_map(|s| {
            s.gold_spans().into_iter().enumerate().map(move |(k, g)| EntityPrediction {
                sentence_id: s.id.clone(),
                start: g.start,
                end: g.end,
                entity_type: g.entity_type,
                region: s.grounding_for(k).boxes().first().copied(),
            })
        })
        .collect()
}

#[test]
fn conll_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = tiny_config("conll2003", &crate_dir().join("tests/fixtures/tiny.conll"), &out);
    let path = write_config(&config, dir.path());
    let o = scanner(&["run", "-c", &path]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: EvalReport = read_json(&out.join("seed-1/evaluate/report.json")).unwrap();
    assert_eq!(report.overall.counts.gold, 17);
    for step in ["stage1", "harvest", "knowledge", "stage2", "predict", "evaluate"] {
        let m = read_manifest(&out.join("seed-1").join(step)).unwrap();
        assert_eq!(m.seed, Some(1));
    }
    assert!(out.join("summary.json").exists());
}

#[test]
fn evaluate_scores_gold_predictions_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let data = crate_dir().join("tests/fixtures/tiny.jsonl");
    let config = tiny_config("desk", &data, &out);
    let workspace = Workspace::new(config.clone()).unwrap();
    let gold = read_multimodal_jsonl(&data).unwrap();
    write_predictions(&workspace.predictions_path(1), &gold_predictions(&gold)).unwrap();
    let o = scanner(&["evaluate", "-c", &write_config(&config, dir.path())]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: EvalReport = read_json(&workspace.report_path(1)).unwrap();
    assert_eq!(report.task, "gmner");
    assert_eq!(report.overall.f1, 1.0);
    assert_eq!(report.overall.counts.gold, gold.gold_span_count());
}

#[test]
fn missing_upstream_artifact_names_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = scanner(&["evaluate", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("run `predict` first"), "{err}");
}

#[test]
fn show_config_reflects_presets_and_overrides() {
    let o = scanner(&["show-config", "-c", "twitter2017", "--set", "stage1.epochs=3", "--seeds", "4,5"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["stage1"]["epochs"], 3);
    assert_eq!(v["stage2"]["epochs"], 7);
    assert_eq!(v["stage2"]["lr"], 5e-6);
    assert_eq!(v["knowledge"]["max_objects"], 15);
    assert_eq!(v["seeds"], serde_json::json!([4, 5]));
}

#[test]
fn unknown_preset_is_an_error() {
    let o = scanner(&["show-config", "-c", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}
