mod support;

use scanner::data::{iou, BoundingBox, Split};
use scanner::eval::{evaluate_gmner, evaluate_ner, seen_unseen_for, EvalTask, DEFAULT_IOU_THRESHOLD};
use support::{load_metric_cases, oracle_dataset, oracle_predictions};

fn counts(r: &scanner::eval::EvalResult) -> [usize; 3] {
    [r.counts.true_positive, r.counts.predicted, r.counts.gold]
}

#[test]
fn ner_counts_match_brute_force() {
    let cases = load_metric_cases();
    assert_eq!(cases.ner.len(), 1000);
    for (i, c) in cases.ner.iter().enumerate() {
        let gold = oracle_dataset(&c.sentences, Split::Test);
        let r = evaluate_ner(&oracle_predictions(&c.pred), &gold).unwrap();
        assert_eq!(counts(&r), c.expected, "ner case {i}");
    }
}

#[test]
fn gmner_counts_match_brute_force() {
    let cases = load_metric_cases();
    assert_eq!(cases.gmner.len(), 1000);
    for (i, c) in cases.gmner.iter().enumerate() {
        let gold = oracle_dataset(&c.sentences, Split::Test);
        let r = evaluate_gmner(&oracle_predictions(&c.pred), &gold, DEFAULT_IOU_THRESHOLD).unwrap();
        assert_eq!(counts(&r), c.expected, "gmner case {i}");
    }
}

#[test]
fn seen_unseen_partition_matches_reference() {
    let c = load_metric_cases().seen_unseen;
    let train = oracle_dataset(&c.train, Split::Train);
    let test = oracle_dataset(&c.test, Split::Test);
    let (seen, unseen) = seen_unseen_for(EvalTask::Ner, &oracle_predictions(&c.pred), &test, &train).unwrap();
    assert_eq!(counts(&seen), c.seen);
    assert_eq!(counts(&unseen), c.unseen);
}

#[test]
fn iou_unit_cases() {
    let b = |x1, y1, x2, y2| BoundingBox::new(x1, y1, x2, y2).unwrap();
    assert_eq!(iou(&b(0.0, 0.0, 2.0, 2.0), &b(0.0, 0.0, 2.0, 2.0)), 1.0);
    assert_eq!(iou(&b(0.0, 0.0, 1.0, 1.0), &b(2.0, 2.0, 3.0, 3.0)), 0.0);
    assert!((iou(&b(0.0, 0.0, 2.0, 2.0), &b(1.0, 1.0, 3.0, 3.0)) - 1.0 / 7.0).abs() < 1e-12);
}
