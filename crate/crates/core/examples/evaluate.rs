//! Entity and entity-type-region scoring, with the seen/unseen split.
//!
//! cargo run --example evaluate

use scanner::data::{BoundingBox, Dataset, EntityType, GroundingAnnotation, Split, TaggedSentence};
use scanner::eval::{evaluation_report, EvalTask};
use scanner::stage2::EntityPrediction;

fn sentence(id: &str, text: &str, tags: &[&str]) -> scanner::Result<TaggedSentence> {
    let tags = tags.iter().map(|t| t.parse()).collect::<scanner::Result<Vec<_>>>()?;
    TaggedSentence::new(id, text.split(' ').map(String::from).collect(), tags, false)
}

fn pred(id: &str, start: usize, end: usize, ty: &str, region: Option<BoundingBox>) -> EntityPrediction {
    EntityPrediction {
        sentence_id: id.into(),
        start,
        end,
        entity_type: EntityType::new(ty),
        region,
    }
}

fn main() -> scanner::Result<()> {
    let train = Dataset::new("train", vec![sentence("tr", "Acme hires Jon", &["B-ORG", "O", "B-PER"])?], Split::Train);
    let mut a = sentence("a", "Jon visits Oslo", &["B-PER", "O", "B-LOC"])?;
    a.image_caption = Some("a man at a harbor".into());
    a.grounding.insert(0, GroundingAnnotation::new(vec![BoundingBox::new(10.0, 10.0, 60.0, 90.0)?]));
    let b = sentence("b", "Nordbank sues Acme", &["B-ORG", "O", "B-ORG"])?;
    let test = Dataset::new("test", vec![a, b], Split::Test);

    let predictions = vec![
        pred("a", 0, 1, "PER", Some(BoundingBox::new(12.0, 8.0, 58.0, 92.0)?)),
        pred("a", 2, 3, "LOC", Some(BoundingBox::new(100.0, 0.0, 150.0, 40.0)?)),
        pred("b", 0, 1, "ORG", None),
        pred("b", 2, 3, "PER", None),
    ];
    for task in [EvalTask::Ner, EvalTask::gmner()] {
        let report = evaluation_report(task, &predictions, &test, Some(&train))?;
        println!("{}", report.table());
    }
    Ok(())
}
