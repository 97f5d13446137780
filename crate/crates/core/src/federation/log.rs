use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Metrics;

/// Outcome of one federated round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub participating: Vec<String>,
    pub excluded: Vec<String>,
    /// True when every client was excluded and no aggregation happened.
    pub skipped: bool,
    /// `n_k`-weighted mean of the participants' final local losses.
    pub aggregate_loss: Option<f64>,
    pub eval: Option<Metrics>,
    /// Wall-clock duration including modeled network delay, in ms.
    pub duration_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub rounds: Vec<RoundRecord>,
}

impl RoundLog {
    /// Appends a round; round indices must strictly increase.
    pub fn push(&mut self, record: RoundRecord) -> Result<()> {
        if let Some(last) = self.rounds.last() {
            if record.round <= last.round {
                return Err(Error::config(format!("round {} logged after round {}", record.round, last.round)));
            }
        }
        self.rounds.push(record);
        Ok(())
    }

    pub fn completed_rounds(&self) -> usize {
        self.rounds.iter().filter(|r| !r.skipped).count()
    }

    pub fn exclusion_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.rounds {
            for id in &r.excluded {
                *counts.entry(id.clone()).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn total_duration_ms(&self) -> f64 {
        self.rounds.iter().map(|r| r.duration_ms).sum()
    }

    /// The log with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> RoundLog {
        let mut out = self.clone();
        for r in &mut out.rounds {
            r.duration_ms = 0.0;
        }
        out
    }

    pub fn last_eval(&self) -> Option<&Metrics> {
        self.rounds.iter().rev().find_map(|r| r.eval.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(round: u32, excluded: &[&str]) -> RoundRecord {
        RoundRecord {
            round,
            participating: vec!["a".into()],
            excluded: excluded.iter().map(|s| String::from(*s)).collect(),
            skipped: false,
            aggregate_loss: Some(0.5),
            eval: None,
            duration_ms: 3.0,
        }
    }

    #[test]
    fn rounds_must_increase() {
        let mut log = RoundLog::default();
        log.push(rec(0, &[])).unwrap();
        log.push(rec(1, &["b"])).unwrap();
        assert!(log.push(rec(1, &[])).is_err());
        log.push(rec(2, &["b"])).unwrap();
        assert_eq!(log.exclusion_counts()["b"], 2);
        assert_eq!(log.without_timing().total_duration_ms(), 0.0);
    }
}
