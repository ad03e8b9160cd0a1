//! Observation and action encodings.
//!
//! Modified observation (21 dims): for each stone `[color, size, shape,
//! reward / 15, deposited]`, then the remaining count of each hue / 12.
//!
//! Canonical observation (99 dims): the same 5 dims per stone, then for each
//! of the 12 potion slots a 6-dim hue one-hot followed by an availability
//! bit. A consumed slot is all zeros.
//!
//! Modified actions (22): `0 = NoOp`, `1 + 6 * stone + hue = Apply`,
//! `19 + stone = Deposit`. Canonical actions (40): `0 = NoOp`,
//! `1 + 12 * stone + slot = ApplySlot`, `37 + stone = Deposit`.

use serde::{Deserialize, Serialize};

use super::{Action, EnvError};
use crate::chemistry::{reward_of, Chemistry, LatentVertex, PotionColor, N_HUES};

pub const N_STONES: usize = 3;
pub const N_POTIONS: usize = 12;
pub const STONE_FEATURES: usize = 5;
pub const MODIFIED_OBS_DIM: usize = N_STONES * STONE_FEATURES + N_HUES;
pub const CANONICAL_OBS_DIM: usize = N_STONES * STONE_FEATURES + N_POTIONS * (N_HUES + 1);
pub const MODIFIED_ACTIONS: usize = 1 + N_STONES * N_HUES + N_STONES;
pub const CANONICAL_ACTIONS: usize = 1 + N_STONES * N_POTIONS + N_STONES;
pub const REWARD_SCALE: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingMode {
    #[default]
    Modified,
    Canonical,
}

impl EncodingMode {
    pub fn obs_dim(self) -> usize {
        match self {
            EncodingMode::Modified => MODIFIED_OBS_DIM,
            EncodingMode::Canonical => CANONICAL_OBS_DIM,
        }
    }

    pub fn n_actions(self) -> usize {
        match self {
            EncodingMode::Modified => MODIFIED_ACTIONS,
            EncodingMode::Canonical => CANONICAL_ACTIONS,
        }
    }
}

/// Per-stream encoding choice for the agent's input, output and memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub input: EncodingMode,
    pub output: EncodingMode,
    pub memory: EncodingMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoneSnapshot {
    pub latent: LatentVertex,
    pub deposited: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PotionSlot {
    pub hue: PotionColor,
    pub used: bool,
}

/// Ground-truth state from which an observation is computed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub stones: Vec<StoneSnapshot>,
    pub potions: Vec<PotionSlot>,
}

impl StateSnapshot {
    pub fn potion_counts(&self) -> [u8; N_HUES] {
        let mut c = [0u8; N_HUES];
        for s in self.potions.iter().filter(|s| !s.used) {
            c[s.hue.index()] += 1;
        }
        c
    }
}

/// The 5-dim block describing one stone.
pub fn stone_features(chem: &Chemistry, stone: &StoneSnapshot) -> [f64; STONE_FEATURES] {
    let p = chem.latent_to_percept(stone.latent).features();
    [
        p[0] as f64,
        p[1] as f64,
        p[2] as f64,
        reward_of(stone.latent) as f64 / REWARD_SCALE,
        if stone.deposited { 1.0 } else { 0.0 },
    ]
}

pub fn encode_observation(mode: EncodingMode, chem: &Chemistry, state: &StateSnapshot) -> Vec<f64> {
    let mut out = Vec::with_capacity(mode.obs_dim());
    for s in &state.stones {
        out.extend_from_slice(&stone_features(chem, s));
    }
    match mode {
        EncodingMode::Modified => {
            let counts = state.potion_counts();
            out.extend(counts.iter().map(|&c| c as f64 / N_POTIONS as f64));
        }
        EncodingMode::Canonical => {
            for slot in &state.potions {
                let mut block = [0.0; N_HUES + 1];
                if !slot.used {
                    block[slot.hue.index()] = 1.0;
                    block[N_HUES] = 1.0;
                }
                out.extend_from_slice(&block);
            }
        }
    }
    out
}

pub fn action_index(a: &Action, mode: EncodingMode) -> Result<usize, EnvError> {
    let stone_ok = |s: usize| if s < N_STONES { Ok(()) } else { Err(EnvError::BadStone(s)) };
    match (a, mode) {
        (Action::NoOp, _) => Ok(0),
        (Action::Apply { stone, hue }, EncodingMode::Modified) => {
            stone_ok(*stone)?;
            Ok(1 + N_HUES * stone + hue.index())
        }
        (Action::ApplySlot { stone, slot }, EncodingMode::Canonical) => {
            stone_ok(*stone)?;
            if *slot >= N_POTIONS {
                return Err(EnvError::BadSlot(*slot));
            }
            Ok(1 + N_POTIONS * stone + slot)
        }
        (Action::Deposit { stone }, m) => {
            stone_ok(*stone)?;
            Ok(m.n_actions() - N_STONES + stone)
        }
        (a, m) => Err(EnvError::ActionMismatch { action: format!("{a:?}"), mode: m }),
    }
}

pub fn index_action(i: usize, mode: EncodingMode) -> Result<Action, EnvError> {
    let n = mode.n_actions();
    if i >= n {
        return Err(EnvError::ActionOutOfRange { index: i, n });
    }
    let per_stone = match mode {
        EncodingMode::Modified => N_HUES,
        EncodingMode::Canonical => N_POTIONS,
    };
    Ok(if i == 0 {
        Action::NoOp
    } else if i >= n - N_STONES {
        Action::Deposit { stone: i - (n - N_STONES) }
    } else {
        let k = i - 1;
        let stone = k / per_stone;
        match mode {
            EncodingMode::Modified => Action::Apply {
                stone,
                hue: PotionColor::from_index(k % per_stone).expect("hue index < 6"),
            },
            EncodingMode::Canonical => Action::ApplySlot { stone, slot: k % per_stone },
        }
    })
}
