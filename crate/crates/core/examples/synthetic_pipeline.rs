//! Both stages in memory on the generated desk corpus, scored on the
//! training split. Takes a few minutes on one core with the default epochs.
//!
//! cargo run --example synthetic_pipeline [epochs]

use scanner::data::synthetic::{generate, SyntheticSpec};
use scanner::eval::{evaluate_ner, EvalTask};
use scanner::knowledge::{WikiClient, WikiClientConfig};
use scanner::runner::{run_pipeline, PipelineSettings, RunConfig};

fn main() -> scanner::Result<()> {
    let mut config = RunConfig::preset("desk")?;
    if let Some(e) = std::env::args().nth(1) {
        let epochs: usize = e.parse().map_err(|_| scanner::Error::Config(format!("bad epoch count `{e}`")))?;
        config.stage1.epochs = epochs;
        config.stage2.epochs = epochs;
    }
    let corpus = generate(&SyntheticSpec {
        sentences: 200,
        seed: 7,
        with_images: true,
        ..Default::default()
    })?;
    let dir = tempfile::tempdir().map_err(|e| scanner::Error::io(std::env::temp_dir(), e))?;
    let snapshot = dir.path().join("wiki.json");
    scanner::io::write_json_atomic(&snapshot, &corpus.wiki_snapshot)?;
    let client = WikiClient::new(WikiClientConfig {
        snapshot: Some(snapshot),
        cache_dir: None,
        ..Default::default()
    })?;
    let settings = PipelineSettings {
        task: EvalTask::gmner(),
        encoder: config.encoder.clone(),
        stage1: config.stage1.clone(),
        stage2: config.stage2.clone(),
        folds: config.harvest_folds,
        max_objects: config.knowledge.max_objects,
        tyt: config.tyt,
        distill_stage2: true,
        threads: config.threads,
    };
    let train = &corpus.dataset;
    let out = run_pipeline(train, train, &client, &settings, 1)?;
    println!(
        "{} training candidates, {} predictions",
        out.train_candidates.len(),
        out.predictions.len()
    );
    println!("span F1  {:.4}", evaluate_ner(&out.predictions, train)?.f1);
    println!("GMNER F1 {:.4}", out.result.f1);
    Ok(())
}
