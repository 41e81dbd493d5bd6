//! Aggregation of repeated stochastic runs.
//!
//! Binary self-consistency: an item survives when at least `ceil(R/2)` of
//! the `R` runs emitted it. Alignment links additionally need their mean
//! confidence to exceed `tau_c`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::AlignmentLink;

/// Means within this distance of the threshold count as equal to it, so
/// `[0.9, 0.9, 0.9]` does not pass `tau_c = 0.9` through rounding noise.
pub const CONFIDENCE_EPSILON: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("a tally needs at least one run")]
    NoRuns,
    #[error("tally for {runs} runs already has {runs} recorded")]
    TooManyRuns { runs: u32 },
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("threshold {0} outside [0, 1]")]
    Threshold(f64),
}

/// Votes (and optional confidences) per item across `R` runs.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteTally<K: Ord> {
    runs: u32,
    recorded: u32,
    votes: BTreeMap<K, u32>,
    confidences: BTreeMap<K, Vec<f64>>,
}

impl<K: Ord + Clone> VoteTally<K> {
    pub fn new(runs: u32) -> Result<Self, ConsensusError> {
        if runs == 0 {
            return Err(ConsensusError::NoRuns);
        }
        Ok(Self {
            runs,
            recorded: 0,
            votes: BTreeMap::new(),
            confidences: BTreeMap::new(),
        })
    }

    pub fn runs(&self) -> u32 {
        self.runs
    }

    pub fn recorded_runs(&self) -> u32 {
        self.recorded
    }

    fn next_run(&mut self) -> Result<(), ConsensusError> {
        if self.recorded == self.runs {
            return Err(ConsensusError::TooManyRuns { runs: self.runs });
        }
        self.recorded += 1;
        Ok(())
    }

    /// Records one run's emitted items; repeats within a run count once.
    pub fn record_run<I: IntoIterator<Item = K>>(&mut self, items: I) -> Result<(), ConsensusError> {
        self.next_run()?;
        let unique: BTreeSet<K> = items.into_iter().collect();
        for item in unique {
            *self.votes.entry(item).or_insert(0) += 1;
        }
        Ok(())
    }

    /// Records one run's items with confidences; the first occurrence of a
    /// repeated item wins.
    pub fn record_run_with_confidence<I>(&mut self, items: I) -> Result<(), ConsensusError>
    where
        I: IntoIterator<Item = (K, f64)>,
    {
        let mut unique: BTreeMap<K, f64> = BTreeMap::new();
        for (item, conf) in items {
            if !(0.0..=1.0).contains(&conf) {
                return Err(ConsensusError::Confidence(conf));
            }
            unique.entry(item).or_insert(conf);
        }
        self.next_run()?;
        for (item, conf) in unique {
            *self.votes.entry(item.clone()).or_insert(0) += 1;
            self.confidences.entry(item).or_default().push(conf);
        }
        Ok(())
    }

    pub fn votes(&self, item: &K) -> u32 {
        self.votes.get(item).copied().unwrap_or(0)
    }

    pub fn confidences(&self, item: &K) -> &[f64] {
        self.confidences.get(item).map_or(&[], Vec::as_slice)
    }

    /// Every item emitted by at least one run, ascending.
    pub fn items(&self) -> impl Iterator<Item = (&K, u32)> {
        self.votes.iter().map(|(k, v)| (k, *v))
    }
}

/// Minimum votes out of `runs`: `ceil(runs / 2)`.
pub fn quorum(runs: u32) -> u32 {
    runs.div_ceil(2)
}

/// Items with at least `ceil(R/2)` votes.
pub fn majority_vote<K: Ord + Clone>(tally: &VoteTally<K>) -> BTreeSet<K> {
    let need = quorum(tally.runs);
    tally
        .items()
        .filter(|(_, v)| *v >= need)
        .map(|(k, _)| k.clone())
        .collect()
}

/// Denominator of a link's mean confidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfidenceDenominator {
    /// Average over the runs that emitted the link.
    #[default]
    EmittingRuns,
    /// Average over all `R` runs; absent runs contribute zero.
    AllRuns,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkDecision {
    /// The candidate link; `confidence` holds the mean.
    pub link: AlignmentLink,
    pub votes: u32,
    pub retained: bool,
}

/// Dual filter with the default (emitting-runs) confidence mean.
pub fn aggregate_links(
    tally: &VoteTally<(u32, u32)>,
    tau_c: f64,
) -> Result<Vec<LinkDecision>, ConsensusError> {
    aggregate_links_with(tally, tau_c, ConfidenceDenominator::default())
}

/// Decides every candidate link: retained iff votes >= ceil(R/2) and the
/// mean confidence strictly exceeds `tau_c`.
pub fn aggregate_links_with(
    tally: &VoteTally<(u32, u32)>,
    tau_c: f64,
    denominator: ConfidenceDenominator,
) -> Result<Vec<LinkDecision>, ConsensusError> {
    if !(0.0..=1.0).contains(&tau_c) {
        return Err(ConsensusError::Threshold(tau_c));
    }
    let need = quorum(tally.runs);
    Ok(tally
        .items()
        .map(|(&(answer_id, note_id), votes)| {
            let confs = tally.confidences(&(answer_id, note_id));
            let n = match denominator {
                ConfidenceDenominator::EmittingRuns => confs.len(),
                ConfidenceDenominator::AllRuns => tally.runs as usize,
            };
            let mean = if n == 0 {
                0.0
            } else {
                confs.iter().sum::<f64>() / n as f64
            };
            LinkDecision {
                link: AlignmentLink::new(answer_id, note_id, mean),
                votes,
                retained: votes >= need && mean - tau_c > CONFIDENCE_EPSILON,
            }
        })
        .collect())
}
