//! Stage 1 on a small CoNLL file: train the tagger, detect candidates, and
//! harvest cross-fold false positives as non-entity examples.
//!
//! cargo run --example span_detection [path/to/train.conll]

use std::path::PathBuf;

use scanner::data::conll::read_conll;
use scanner::neural::EncoderShape;
use scanner::stage1::{detect_candidates, harvest_fold_negatives, tag_accuracy, train_stage1, Stage1Config};

fn main() -> scanner::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny.conll"));
    let train = read_conll(&path, false)?;
    println!("{} sentences, {} gold spans", train.len(), train.gold_span_count());
    let shape = EncoderShape {
        embed_dim: 32,
        ffn_dim: 64,
        ..EncoderShape::default()
    };
    let config = Stage1Config {
        epochs: 30,
        ..Stage1Config::desk()
    };
    let (model, log) = train_stage1(&train, &config, &shape, 1, None)?;
    if let (Some(first), Some(last)) = (log.epoch_losses.first(), log.epoch_losses.last()) {
        println!("loss {first:.4} -> {last:.4} over {} epochs", log.epoch_losses.len());
    }
    println!("tag accuracy {:.4}", tag_accuracy(&model, &train.sentences)?);
    for c in detect_candidates(&model, &train.sentences)?.iter().take(8) {
        let s = train.sentence(&c.sentence_id).expect("candidate sentence");
        println!("  {} [{}, {}) {}", c.sentence_id, c.start, c.end, c.surface(s));
    }
    let negatives = harvest_fold_negatives(&train, &config, &shape, 4, 2)?;
    println!("{} fold negatives", negatives.len());
    Ok(())
}
