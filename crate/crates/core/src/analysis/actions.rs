//! Action-type breakdowns, scores by graph difficulty and trial-wise
//! comparison against a reference agent.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::environment::{EpisodeTrace, Outcome};

use super::AnalysisError;

/// Deposit values in bucket order.
pub const DEPOSIT_VALUES: [i32; 4] = [-3, -1, 1, 15];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrialActionCounts {
    /// Zero-based trial index.
    pub trial: u32,
    pub improved: u64,
    pub worsened: u64,
    pub no_effect: u64,
    /// Deposits of value -3, -1, +1 and +15.
    pub deposits: [u64; 4],
    pub noop: u64,
    pub invalid: u64,
}

impl TrialActionCounts {
    pub fn applies(&self) -> u64 {
        self.improved + self.worsened + self.no_effect
    }

    pub fn total(&self) -> u64 {
        self.applies() + self.deposits.iter().sum::<u64>() + self.noop + self.invalid
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTypeHistogram {
    pub episodes: usize,
    pub trials: Vec<TrialActionCounts>,
}

impl ActionTypeHistogram {
    /// Long format: `trial kind count`, trials numbered from 1.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("trial\tkind\tcount\n");
        for t in &self.trials {
            let n = t.trial + 1;
            for (kind, c) in [("improved", t.improved), ("worsened", t.worsened), ("no_effect", t.no_effect)] {
                s.push_str(&format!("{n}\t{kind}\t{c}\n"));
            }
            for (v, c) in DEPOSIT_VALUES.iter().zip(t.deposits) {
                s.push_str(&format!("{n}\tdeposit_{v:+}\t{c}\n"));
            }
            s.push_str(&format!("{n}\tnoop\t{}\n{n}\tinvalid\t{}\n", t.noop, t.invalid));
        }
        s
    }
}

/// Classifies every step by trial. Applies are graded by the change in the
/// acted stone's value. `trial_filter` keeps only the listed zero-based
/// trial indices.
pub fn action_type_histogram(traces: &[EpisodeTrace], trial_filter: Option<&[u32]>) -> ActionTypeHistogram {
    let n_trials = traces.iter().map(|t| t.header.env.trials_per_episode).max().unwrap_or(0);
    let mut trials: Vec<TrialActionCounts> =
        (0..n_trials).map(|trial| TrialActionCounts { trial, ..Default::default() }).collect();
    for tr in traces {
        for s in &tr.steps {
            if trial_filter.is_some_and(|f| !f.contains(&s.trial)) {
                continue;
            }
            let c = &mut trials[s.trial as usize];
            match s.outcome {
                Outcome::NoOp => c.noop += 1,
                Outcome::Invalid { .. } => c.invalid += 1,
                Outcome::Applied { reward_before, reward_after, .. } => match reward_after.cmp(&reward_before) {
                    std::cmp::Ordering::Greater => c.improved += 1,
                    std::cmp::Ordering::Less => c.worsened += 1,
                    std::cmp::Ordering::Equal => c.no_effect += 1,
                },
                Outcome::Deposited { value, .. } => {
                    let b = DEPOSIT_VALUES.iter().position(|&v| v == value).expect("stone values are -3, -1, 1 or 15");
                    c.deposits[b] += 1;
                }
            }
        }
    }
    if let Some(f) = trial_filter {
        trials.retain(|t| f.contains(&t.trial));
    }
    ActionTypeHistogram { episodes: traces.len(), trials }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupScore {
    pub n: usize,
    pub mean: f64,
    /// Absent for single-episode groups.
    pub sem: Option<f64>,
}

impl GroupScore {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = if n == 0 { 0.0 } else { xs.iter().sum::<f64>() / n as f64 };
        let sem = (n >= 2).then(|| {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        GroupScore { n, mean, sem }
    }
}

/// Mean episode score per number of missing edges.
pub fn score_by_missing_edges(traces: &[EpisodeTrace]) -> BTreeMap<usize, GroupScore> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for t in traces {
        groups.entry(t.header.missing_edges).or_default().push(t.summary.score as f64);
    }
    groups.into_iter().map(|(m, xs)| (m, GroupScore::of(&xs))).collect()
}

pub fn score_by_missing_edges_tsv(table: &BTreeMap<usize, GroupScore>) -> String {
    let mut s = String::from("missing_edges\tn\tmean\tsem\n");
    for (m, g) in table {
        let sem = g.sem.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{m}\t{}\t{}\t{sem}\n", g.n, g.mean));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialComparison {
    pub episodes: usize,
    /// Per trial, percentage of episodes in which the reference's cumulative
    /// score through that trial is strictly higher.
    pub percent_reference_higher: Vec<f64>,
}

impl TrialComparison {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("trial\tpercent_reference_higher\n");
        for (i, p) in self.percent_reference_higher.iter().enumerate() {
            s.push_str(&format!("{}\t{p}\n", i + 1));
        }
        s
    }
}

/// Pairs episodes by seed and compares cumulative scores trial by trial.
/// Both sets must hold exactly the same seeds, each once.
pub fn io_comparison_by_trial(
    agent: &[EpisodeTrace],
    reference: &[EpisodeTrace],
) -> Result<TrialComparison, AnalysisError> {
    let index = |set: &[EpisodeTrace]| -> Result<HashMap<u64, usize>, AnalysisError> {
        let mut m = HashMap::new();
        for (i, t) in set.iter().enumerate() {
            if m.insert(t.header.seed, i).is_some() {
                return Err(AnalysisError::DuplicateSeed(t.header.seed));
            }
        }
        Ok(m)
    };
    let a = index(agent)?;
    let r = index(reference)?;
    if let Some(&seed) = a.keys().find(|s| !r.contains_key(s)).or_else(|| r.keys().find(|s| !a.contains_key(s))) {
        return Err(AnalysisError::Unpaired(seed));
    }
    let n_trials = agent.first().map_or(0, |t| t.summary.trial_totals.len());
    let mut higher = vec![0usize; n_trials];
    for t in agent {
        let other = &reference[r[&t.header.seed]];
        let ca = t.cumulative_by_trial();
        let cr = other.cumulative_by_trial();
        if ca.len() != n_trials || cr.len() != n_trials {
            return Err(AnalysisError::TrialCountMismatch(t.header.seed));
        }
        for (k, h) in higher.iter_mut().enumerate() {
            *h += (cr[k] > ca[k]) as usize;
        }
    }
    let n = agent.len();
    let percent_reference_higher =
        higher.iter().map(|&h| if n == 0 { 0.0 } else { 100.0 * h as f64 / n as f64 }).collect();
    Ok(TrialComparison { episodes: n, percent_reference_higher })
}
