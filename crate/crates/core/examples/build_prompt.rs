//! Knowledge gathering and prompt assembly for one candidate.
//!
//! cargo run --example build_prompt

use std::collections::BTreeMap;

use scanner::data::vocab::Vocab;
use scanner::data::{BoundingBox, ObjectDetail, TaggedSentence};
use scanner::knowledge::{build_prompt, gather_knowledge, WikiClient, WikiClientConfig};
use scanner::stage1::{CandidateSource, SpanCandidate};

fn main() -> scanner::Result<()> {
    let tokens: Vec<String> = "Mira Tolk sings in Oslo tonight".split(' ').map(String::from).collect();
    let tags = ["B-PER", "I-PER", "O", "O", "B-LOC", "O"]
        .iter()
        .map(|t| t.parse())
        .collect::<scanner::Result<Vec<_>>>()?;
    let mut sentence = TaggedSentence::new("demo", tokens, tags, false)?;
    sentence.image_caption = Some("a singer on a stage".into());
    sentence.objects = vec![
        ObjectDetail::new("dog", "a small dog", BoundingBox::new(300.0, 200.0, 380.0, 260.0)?)?,
        ObjectDetail::new("person", "mira tolk with a microphone", BoundingBox::new(40.0, 20.0, 180.0, 300.0)?)?,
    ];

    let dir = tempfile::tempdir().map_err(|e| scanner::Error::io(std::env::temp_dir(), e))?;
    let snapshot = dir.path().join("wiki.json");
    let entries = BTreeMap::from([("Mira Tolk", "Mira Tolk is a Norwegian singer and songwriter.")]);
    scanner::io::write_json_atomic(&snapshot, &entries)?;
    let client = WikiClient::new(WikiClientConfig {
        snapshot: Some(snapshot),
        cache_dir: None,
        ..Default::default()
    })?;

    let candidate = SpanCandidate::new(&sentence, 0, 2, CandidateSource::Gold)?;
    let bundle = gather_knowledge(&candidate, &sentence, &client, 18)?;
    for r in &bundle.objects {
        println!("object {} score {:.3}: {}", r.index, r.score, r.object.detail_text());
    }
    let vocab = Vocab::build(sentence.tokens.iter().map(String::as_str));
    for max_len in [64, 30] {
        let p = build_prompt(&candidate, &sentence, &bundle, &vocab, max_len)?;
        println!("\nmax length {max_len}: {}", p.text());
        println!("mask at {}, object tokens at {:?}", p.mask_position, p.obj_positions);
    }
    Ok(())
}
