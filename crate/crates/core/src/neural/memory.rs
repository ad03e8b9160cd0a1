use std::collections::VecDeque;

use crate::environment::{EncodingMode, Outcome, StepRecord, STONE_FEATURES};

use super::tensor::Real;

pub const MEMORY_CAPACITY: usize = 150;

/// Width of a memory entry in the modified encoding: stone before (5),
/// hue one-hot (6), reward (1), stone after (5).
pub const MODIFIED_ENTRY_WIDTH: usize = 2 * STONE_FEATURES + crate::chemistry::N_HUES + 1;

/// FIFO buffer of transition records, cleared between episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicMemory {
    entries: VecDeque<Vec<Real>>,
    capacity: usize,
    width: usize,
}

impl EpisodicMemory {
    pub fn new(width: usize) -> Self {
        EpisodicMemory::with_capacity(width, MEMORY_CAPACITY)
    }

    pub fn with_capacity(width: usize, capacity: usize) -> Self {
        EpisodicMemory { entries: VecDeque::with_capacity(capacity), capacity, width }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Appends an entry, evicting the oldest one when full.
    pub fn push(&mut self, entry: Vec<Real>) {
        assert_eq!(entry.len(), self.width, "memory entry width");
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(entry);
    }

    pub fn entries(&self) -> impl Iterator<Item = &[Real]> {
        self.entries.iter().map(Vec::as_slice)
    }

    pub fn get(&self, i: usize) -> Option<&[Real]> {
        self.entries.get(i).map(Vec::as_slice)
    }
}

/// Entry width for a memory encoding, given observation and action sizes.
pub fn entry_width(mode: EncodingMode, obs_dim: usize, n_actions: usize) -> usize {
    match mode {
        EncodingMode::Modified => MODIFIED_ENTRY_WIDTH,
        EncodingMode::Canonical => 2 * obs_dim + n_actions + 1,
    }
}

/// The memory entry for a step, or `None` unless it was a valid apply.
///
/// Modified entries hold the acted stone's features before and after, the
/// hue and the step reward including shaping. Canonical entries hold the
/// whole observation before, the action one-hot, the reward and the whole
/// observation after.
pub fn memory_entry(
    record: &StepRecord,
    post_observation: &[f64],
    mode: EncodingMode,
    n_actions: usize,
) -> Option<Vec<Real>> {
    let Outcome::Applied { stone, hue, .. } = record.outcome else { return None };
    let reward = record.total_reward() as Real;
    let pre = &record.observation;
    Some(match mode {
        EncodingMode::Modified => {
            let span = stone * STONE_FEATURES..(stone + 1) * STONE_FEATURES;
            let mut e: Vec<Real> = pre[span.clone()].iter().map(|&v| v as Real).collect();
            let mut onehot = vec![0.0; crate::chemistry::N_HUES];
            onehot[hue.index()] = 1.0;
            e.extend(onehot);
            e.push(reward);
            e.extend(post_observation[span].iter().map(|&v| v as Real));
            e
        }
        EncodingMode::Canonical => {
            let mut e: Vec<Real> = pre.iter().map(|&v| v as Real).collect();
            let mut onehot = vec![0.0; n_actions];
            if record.action_index < n_actions {
                onehot[record.action_index] = 1.0;
            }
            e.extend(onehot);
            e.push(reward);
            e.extend(post_observation.iter().map(|&v| v as Real));
            e
        }
    })
}
