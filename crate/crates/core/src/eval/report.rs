use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, seen_unseen_for, EvalTask, Scores};
use crate::data::{Dataset, EntityType};
use crate::error::Result;
use crate::stage2::EntityPrediction;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub overall: Scores,
    pub per_type: BTreeMap<EntityType, Scores>,
    /// Absent when no training split was given.
    pub seen: Option<Scores>,
    pub unseen: Option<Scores>,
}

pub fn evaluation_report(
    task: EvalTask,
    pred: &[EntityPrediction],
    gold: &Dataset,
    train: Option<&Dataset>,
) -> Result<EvalReport> {
    let result = evaluate(task, pred, gold)?;
    let (seen, unseen) = match train {
        Some(t) => {
            let (s, u) = seen_unseen_for(task, pred, gold, t)?;
            (Some(s.scores()), Some(u.scores()))
        }
        None => (None, None),
    };
    Ok(EvalReport {
        task: task.as_str().to_string(),
        overall: result.scores(),
        per_type: result.per_type,
        seen,
        unseen,
    })
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>9} {:>9} {:>6} {:>6} {:>6}",
            self.task, "precision", "recall", "f1", "tp", "pred", "gold"
        );
        let mut row = |name: &str, s: &Scores| {
            let _ = writeln!(
                out,
                "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>6} {:>6} {:>6}",
                name, s.precision, s.recall, s.f1, s.counts.true_positive, s.counts.predicted, s.counts.gold
            );
        };
        row("overall", &self.overall);
        for (t, s) in &self.per_type {
            row(t.as_str(), s);
        }
        if let (Some(seen), Some(unseen)) = (&self.seen, &self.unseen) {
            row("seen", seen);
            row("unseen", unseen);
        }
        out
    }
}
