mod support;

use proptest::prelude::*;
use scanner::data::{decode_bio, encode_bio, BioTag, EntityType, LabeledRange};
use support::reference_chunks;

const TYPES: [&str; 3] = ["PER", "LOC", "ORG"];

fn tag_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("O".to_string()),
        (0..3usize).prop_map(|t| format!("B-{}", TYPES[t])),
        (0..3usize).prop_map(|t| format!("I-{}", TYPES[t])),
    ]
}

/// Non-overlapping spans built from alternating gaps and lengths.
fn spans_strategy() -> impl Strategy<Value = (Vec<LabeledRange>, usize)> {
    prop::collection::vec((0..3usize, 1..4usize, 0..3usize), 0..8).prop_map(|parts| {
        let mut at = 0;
        let spans = parts
            .into_iter()
            .map(|(gap, len, t)| {
                let s = LabeledRange::new(at + gap, at + gap + len, EntityType::new(TYPES[t]));
                at = s.end;
                s
            })
            .collect();
        (spans, at + 2)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn encode_then_decode_is_identity((spans, len) in spans_strategy()) {
        let tags = encode_bio(&spans, len).unwrap();
        prop_assert_eq!(decode_bio(&tags, false).unwrap(), spans);
    }

    #[test]
    fn repair_matches_reference(tags in prop::collection::vec(tag_strategy(), 0..16)) {
        let parsed: Vec<BioTag> = tags.iter().map(|t| t.parse().unwrap()).collect();
        let ours: Vec<(usize, usize, String)> = decode_bio(&parsed, true)
            .unwrap()
            .into_iter()
            .map(|r| (r.start, r.end, r.entity_type.as_str().to_string()))
            .collect();
        prop_assert_eq!(ours, reference_chunks(&tags));
    }
}
