//! Violation counters for the four abstract-principle tests.
//!
//! Each counter is computed as a per-step flag that only looks at earlier
//! steps of the same episode, so counting a prefix of a trace gives the
//! prefix of the counts. Only valid applies can be flagged.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::chemistry::{LatentVertex, NullCause, PerceptState, PotionColor, N_HUES};
use crate::environment::{EpisodeTrace, Outcome};
use crate::training::ScoreStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ViolationCounts {
    pub consistency: u32,
    pub parallelism: u32,
    pub missing_edges: u32,
    pub potion_pairs: u32,
}

impl ViolationCounts {
    pub fn total(&self) -> u32 {
        self.consistency + self.parallelism + self.missing_edges + self.potion_pairs
    }

    fn add(&mut self, f: StepFlags) {
        self.consistency += f.consistency as u32;
        self.parallelism += f.parallelism as u32;
        self.missing_edges += f.missing_edges as u32;
        self.potion_pairs += f.potion_pairs as u32;
    }

    pub fn as_array(&self) -> [u32; 4] {
        [self.consistency, self.parallelism, self.missing_edges, self.potion_pairs]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepFlags {
    pub consistency: bool,
    pub parallelism: bool,
    pub missing_edges: bool,
    pub potion_pairs: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViolationOptions {
    /// Count every parallelism offence instead of only the first per
    /// (hue, stone percept).
    pub permissive_parallelism: bool,
}

impl Default for ViolationOptions {
    fn default() -> Self {
        ViolationOptions { permissive_parallelism: false }
    }
}

/// Per-step violation flags for one episode.
///
/// * Consistency: `h` applied to a stone whose percept already showed `h`
///   null at an axis endpoint earlier in the episode.
/// * Parallelism: after `h` was first seen to move dimension `d` to value
///   `b`, `h` applied for the first time to a stone percept with `d == b`.
/// * Missing edges: `h` applied to a stone at latent vertex `v` after `h`
///   was null at `v` because of a missing edge.
/// * Potion pairs: a hue never applied before, whose opposite was seen to
///   move `d` to `b`, applied to a stone with `d == -b` and null there.
///
/// Nulls caused by a missing edge only arm the missing-edge test.
pub fn violation_flags(trace: &EpisodeTrace, opts: ViolationOptions) -> Vec<StepFlags> {
    let mut endpoint_nulls: HashSet<(PotionColor, PerceptState)> = HashSet::new();
    let mut edge_nulls: HashSet<(PotionColor, LatentVertex)> = HashSet::new();
    let mut effect: [Option<(usize, i8)>; N_HUES] = [None; N_HUES];
    let mut applied = [false; N_HUES];
    let mut parallel_seen: HashSet<(PotionColor, PerceptState)> = HashSet::new();
    let mut out = Vec::with_capacity(trace.steps.len());
    for step in &trace.steps {
        let Outcome::Applied { hue, latent_before, percept_before, percept_after, null_cause, .. } = step.outcome else {
            out.push(StepFlags::default());
            continue;
        };
        let mut f = StepFlags { consistency: endpoint_nulls.contains(&(hue, percept_before)), ..StepFlags::default() };
        if let Some((d, b)) = effect[hue.index()] {
            if percept_before.feature(d) == b {
                let first = parallel_seen.insert((hue, percept_before));
                f.parallelism = first || opts.permissive_parallelism;
            }
        }
        f.missing_edges = edge_nulls.contains(&(hue, latent_before));
        if !applied[hue.index()] && null_cause == NullCause::AtEndpoint {
            if let Some((d, b)) = effect[hue.opposite().index()] {
                f.potion_pairs = percept_before.feature(d) == -b;
            }
        }
        // update evidence with this step
        applied[hue.index()] = true;
        match null_cause {
            NullCause::AtEndpoint => {
                endpoint_nulls.insert((hue, percept_before));
            }
            NullCause::MissingEdge => {
                edge_nulls.insert((hue, latent_before));
            }
            NullCause::None => {
                if effect[hue.index()].is_none() {
                    let d = (0..3).find(|&d| percept_before.feature(d) != percept_after.feature(d)).expect("non-null moves one dimension");
                    effect[hue.index()] = Some((d, percept_after.feature(d)));
                }
            }
        }
        out.push(f);
    }
    out
}

pub fn count_violations(trace: &EpisodeTrace, opts: ViolationOptions) -> ViolationCounts {
    let mut c = ViolationCounts::default();
    for f in violation_flags(trace, opts) {
        c.add(f);
    }
    c
}

pub fn count_consistency(trace: &EpisodeTrace) -> u32 {
    count_violations(trace, ViolationOptions::default()).consistency
}

pub fn count_parallelism(trace: &EpisodeTrace) -> u32 {
    count_violations(trace, ViolationOptions::default()).parallelism
}

pub fn count_missing_edges(trace: &EpisodeTrace) -> u32 {
    count_violations(trace, ViolationOptions::default()).missing_edges
}

pub fn count_potion_pairs(trace: &EpisodeTrace) -> u32 {
    count_violations(trace, ViolationOptions::default()).potion_pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub agent: String,
    pub per_episode: Vec<ViolationCounts>,
    pub consistency: ScoreStats,
    pub parallelism: ScoreStats,
    pub missing_edges: ScoreStats,
    pub potion_pairs: ScoreStats,
}

impl ViolationReport {
    pub fn build(traces: &[EpisodeTrace], opts: ViolationOptions) -> Self {
        let per_episode: Vec<ViolationCounts> = traces.iter().map(|t| count_violations(t, opts)).collect();
        let stat = |i: usize| ScoreStats::of(&per_episode.iter().map(|c| c.as_array()[i] as f64).collect::<Vec<_>>());
        let mut agents: Vec<&str> = traces.iter().map(|t| t.header.agent.id.as_str()).collect();
        agents.dedup();
        ViolationReport {
            agent: agents.join(","),
            consistency: stat(0),
            parallelism: stat(1),
            missing_edges: stat(2),
            potion_pairs: stat(3),
            per_episode,
        }
    }

    pub fn totals(&self) -> ViolationCounts {
        let mut t = ViolationCounts::default();
        for c in &self.per_episode {
            t.consistency += c.consistency;
            t.parallelism += c.parallelism;
            t.missing_edges += c.missing_edges;
            t.potion_pairs += c.potion_pairs;
        }
        t
    }

    /// Tab-separated table: one row per test with mean and SEM.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("agent\ttest\tmean\tsem\tn\n");
        for (name, st) in [
            ("consistency", &self.consistency),
            ("parallelism", &self.parallelism),
            ("missing_edges", &self.missing_edges),
            ("potion_pairs", &self.potion_pairs),
        ] {
            s.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", self.agent, name, st.mean, st.sem, st.n));
        }
        s
    }
}

/// Counts of first observed effect per hue, in perceptual terms; handy for
/// inspecting what a trace revealed.
pub fn observed_effects(trace: &EpisodeTrace) -> HashMap<PotionColor, (usize, i8)> {
    let mut out = HashMap::new();
    for step in &trace.steps {
        if let Outcome::Applied { hue, percept_before, percept_after, null_cause: NullCause::None, .. } = step.outcome {
            out.entry(hue).or_insert_with(|| {
                let d = (0..3).find(|&d| percept_before.feature(d) != percept_after.feature(d)).expect("moved");
                (d, percept_after.feature(d))
            });
        }
    }
    out
}
