//! Episode and trial dynamics, reward shaping and trace records.

mod encoding;
pub mod runner;

pub use encoding::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemistry::{
    reward_of, sample_chemistry, Chemistry, ChemistryError, ChemistryRecord, GenConfig,
    LatentVertex, NullCause, PerceptState, PotionColor, N_HUES,
};

/// Penalty for a valid action that leaves the stone unchanged.
pub const NULL_PENALTY: f64 = -0.2;
/// Penalty for an unavailable hue/slot or an already deposited stone.
pub const INVALID_PENALTY: f64 = -1.0;
/// Extra penalty for applying the hue last applied to the same stone.
pub const REPEAT_PENALTY: f64 = -1.0;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("episode already finished")]
    Finished,
    #[error("action index {index} out of range (mode has {n} actions)")]
    ActionOutOfRange { index: usize, n: usize },
    #[error("action {action} not expressible in {mode:?} output encoding")]
    ActionMismatch { action: String, mode: EncodingMode },
    #[error("stone index {0} out of range")]
    BadStone(usize),
    #[error("potion slot {0} out of range")]
    BadSlot(usize),
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error(transparent)]
    Chemistry(#[from] ChemistryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub trials_per_episode: u32,
    pub steps_per_trial: u32,
    pub n_stones: usize,
    pub n_potions: usize,
    pub encoding: EncodingConfig,
    pub shaping: bool,
    pub gen: GenConfig,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            trials_per_episode: 10,
            steps_per_trial: 15,
            n_stones: N_STONES,
            n_potions: N_POTIONS,
            encoding: EncodingConfig::default(),
            shaping: true,
            gen: GenConfig::default(),
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_stones != N_STONES {
            return Err(EnvError::Config(format!("n_stones must be {N_STONES}")));
        }
        if self.n_potions != N_POTIONS {
            return Err(EnvError::Config(format!("n_potions must be {N_POTIONS}")));
        }
        if self.trials_per_episode == 0 || self.steps_per_trial == 0 {
            return Err(EnvError::Config("trials and steps per trial must be positive".into()));
        }
        self.gen.missing_edge_probs()?;
        Ok(())
    }

    pub fn steps_per_episode(&self) -> usize {
        (self.trials_per_episode * self.steps_per_trial) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    NoOp,
    Apply { stone: usize, hue: PotionColor },
    ApplySlot { stone: usize, slot: usize },
    Deposit { stone: usize },
}

impl Action {
    pub fn stone(&self) -> Option<usize> {
        match *self {
            Action::NoOp => None,
            Action::Apply { stone, .. } | Action::ApplySlot { stone, .. } | Action::Deposit { stone } => {
                Some(stone)
            }
        }
    }
}

/// A stone as the agent sees it plus its latent vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoneState {
    pub vertex: LatentVertex,
    pub percept: PerceptState,
    pub reward: i32,
    pub deposited: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    HueUnavailable,
    SlotUsed,
    StoneDeposited,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    NoOp,
    Applied {
        stone: usize,
        hue: PotionColor,
        slot: usize,
        latent_before: LatentVertex,
        latent_after: LatentVertex,
        percept_before: PerceptState,
        percept_after: PerceptState,
        reward_before: i32,
        reward_after: i32,
        null_cause: NullCause,
        repeated_hue: bool,
    },
    Deposited {
        stone: usize,
        latent: LatentVertex,
        percept: PerceptState,
        value: i32,
    },
    Invalid {
        stone: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hue: Option<PotionColor>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        slot: Option<usize>,
        reason: InvalidReason,
    },
}

impl Outcome {
    pub fn is_null_apply(&self) -> bool {
        matches!(self, Outcome::Applied { null_cause, .. } if *null_cause != NullCause::None)
    }
}

/// One environment step. `observation` and `state` describe the situation
/// the agent acted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub trial: u32,
    pub step: u32,
    pub observation: Vec<f64>,
    pub state: StateSnapshot,
    pub action: Action,
    pub action_index: usize,
    pub env_reward: i32,
    pub shaping_reward: f64,
    pub outcome: Outcome,
}

impl StepRecord {
    pub fn total_reward(&self) -> f64 {
        self.env_reward as f64 + self.shaping_reward
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AgentInfo {
    pub id: String,
    #[serde(default = "default_true")]
    pub memory_enabled: bool,
    #[serde(default)]
    pub record_activations: bool,
}

fn default_true() -> bool {
    true
}

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format_version: u32,
    pub seed: u64,
    pub env: EnvConfig,
    pub chemistry: ChemistryRecord,
    pub missing_edges: usize,
    pub agent: AgentInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub trial_totals: Vec<i32>,
    pub score: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub summary: TraceSummary,
}

impl EpisodeTrace {
    pub fn chemistry(&self) -> Chemistry {
        Chemistry::from_record(&self.header.chemistry).expect("trace header holds a valid chemistry")
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }

    /// Cumulative env reward at the end of each trial.
    pub fn cumulative_by_trial(&self) -> Vec<i32> {
        let mut acc = 0;
        self.summary
            .trial_totals
            .iter()
            .map(|t| {
                acc += t;
                acc
            })
            .collect()
    }

    /// The same episode cut after the first `n` steps.
    pub fn truncated(&self, n: usize) -> EpisodeTrace {
        let steps: Vec<StepRecord> = self.steps.iter().take(n).cloned().collect();
        let n_trials = self.header.env.trials_per_episode as usize;
        let mut trial_totals = vec![0; n_trials];
        for s in &steps {
            trial_totals[s.trial as usize] += s.env_reward;
        }
        let score = trial_totals.iter().sum();
        EpisodeTrace {
            header: self.header.clone(),
            steps,
            summary: TraceSummary { trial_totals, score },
        }
    }
}

/// What a baseline policy may look at: no latent information.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvView {
    pub trial: u32,
    pub step: u32,
    pub steps_per_trial: u32,
    pub trials_per_episode: u32,
    pub stones: Vec<StoneView>,
    pub potions: Vec<PotionSlot>,
    pub counts: [u8; N_HUES],
}

impl EnvView {
    pub fn steps_left(&self) -> u32 {
        self.steps_per_trial - self.step
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoneView {
    pub percept: PerceptState,
    pub reward: i32,
    pub deposited: bool,
}

#[derive(Debug, Clone, Copy)]
struct Stone {
    vertex: LatentVertex,
    deposited: bool,
}

/// A single Symbolic Alchemy episode.
#[derive(Debug, Clone)]
pub struct Environment {
    cfg: EnvConfig,
    seed: u64,
    chem: Chemistry,
    rng: ChaCha8Rng,
    trial: u32,
    step: u32,
    stones: [Stone; N_STONES],
    potions: [PotionSlot; N_POTIONS],
    last_hue: [Option<PotionColor>; N_STONES],
    finished: bool,
    trial_totals: Vec<i32>,
    post_action_observation: Vec<f64>,
}

impl Environment {
    /// Samples the chemistry and first trial for `seed`.
    pub fn new(cfg: &EnvConfig, seed: u64) -> Result<Self, EnvError> {
        cfg.validate()?;
        let chem = sample_chemistry(seed, &cfg.gen)?;
        Ok(Self::with_chemistry(cfg, seed, chem))
    }

    /// Uses a given chemistry; stones and potions still come from `seed`.
    pub fn with_chemistry(cfg: &EnvConfig, seed: u64, chem: Chemistry) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut env = Environment {
            cfg: cfg.clone(),
            seed,
            chem,
            rng,
            trial: 0,
            step: 0,
            stones: [Stone { vertex: LatentVertex::from_id(0), deposited: false }; N_STONES],
            potions: [PotionSlot { hue: PotionColor::Red, used: false }; N_POTIONS],
            last_hue: [None; N_STONES],
            finished: false,
            trial_totals: vec![0; cfg.trials_per_episode as usize],
            post_action_observation: Vec::new(),
        };
        env.sample_trial();
        env
    }

    /// Replaces the current trial's stones and potions (for constructed scenarios).
    pub fn set_trial_state(&mut self, stones: &[LatentVertex], hues: &[PotionColor]) {
        assert_eq!(stones.len(), N_STONES);
        assert_eq!(hues.len(), N_POTIONS);
        for (s, v) in self.stones.iter_mut().zip(stones) {
            *s = Stone { vertex: *v, deposited: false };
        }
        for (p, h) in self.potions.iter_mut().zip(hues) {
            *p = PotionSlot { hue: *h, used: false };
        }
        self.last_hue = [None; N_STONES];
    }

    fn sample_trial(&mut self) {
        for s in self.stones.iter_mut() {
            *s = Stone { vertex: LatentVertex::from_id(self.rng.gen_range(0..8)), deposited: false };
        }
        for p in self.potions.iter_mut() {
            *p = PotionSlot {
                hue: PotionColor::from_index(self.rng.gen_range(0..N_HUES)).expect("hue < 6"),
                used: false,
            };
        }
        self.last_hue = [None; N_STONES];
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn chemistry(&self) -> &Chemistry {
        &self.chem
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn trial(&self) -> u32 {
        self.trial
    }

    pub fn step_in_trial(&self) -> u32 {
        self.step
    }

    pub fn trial_totals(&self) -> &[i32] {
        &self.trial_totals
    }

    pub fn score(&self) -> i32 {
        self.trial_totals.iter().sum()
    }

    pub fn stone(&self, i: usize) -> StoneState {
        let s = self.stones[i];
        StoneState {
            vertex: s.vertex,
            percept: self.chem.latent_to_percept(s.vertex),
            reward: reward_of(s.vertex),
            deposited: s.deposited,
        }
    }

    pub fn potion_counts(&self) -> [u8; N_HUES] {
        let mut c = [0u8; N_HUES];
        for p in self.potions.iter().filter(|p| !p.used) {
            c[p.hue.index()] += 1;
        }
        c
    }

    pub fn snapshot(&self) -> StateSnapshot {
        StateSnapshot {
            stones: self
                .stones
                .iter()
                .map(|s| StoneSnapshot { latent: s.vertex, deposited: s.deposited })
                .collect(),
            potions: self.potions.to_vec(),
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        encode_observation(self.cfg.encoding.input, &self.chem, &self.snapshot())
    }

    /// Observation of the state right after the last action, before any
    /// trial rollover resampled the stones.
    pub fn post_action_observation(&self) -> &[f64] {
        &self.post_action_observation
    }

    pub fn view(&self) -> EnvView {
        EnvView {
            trial: self.trial,
            step: self.step,
            steps_per_trial: self.cfg.steps_per_trial,
            trials_per_episode: self.cfg.trials_per_episode,
            stones: (0..N_STONES)
                .map(|i| {
                    let s = self.stone(i);
                    StoneView { percept: s.percept, reward: s.reward, deposited: s.deposited }
                })
                .collect(),
            potions: self.potions.to_vec(),
            counts: self.potion_counts(),
        }
    }

    pub fn header(&self, agent: AgentInfo) -> TraceHeader {
        TraceHeader {
            format_version: TRACE_FORMAT_VERSION,
            seed: self.seed,
            env: self.cfg.clone(),
            chemistry: self.chem.record(),
            missing_edges: self.chem.edges.n_missing(),
            agent,
        }
    }

    pub fn step_index(&mut self, index: usize) -> Result<StepRecord, EnvError> {
        let a = index_action(index, self.cfg.encoding.output)?;
        self.step(a)
    }

    pub fn step(&mut self, action: Action) -> Result<StepRecord, EnvError> {
        if self.finished {
            return Err(EnvError::Finished);
        }
        let action_index = action_index(&action, self.cfg.encoding.output)?;
        let observation = self.observation();
        let state = self.snapshot();
        let (env_reward, shaping, outcome) = self.transition(action);
        let shaping_reward = if self.cfg.shaping { shaping } else { 0.0 };
        self.trial_totals[self.trial as usize] += env_reward;
        self.post_action_observation = self.observation();
        let record = StepRecord {
            trial: self.trial,
            step: self.step,
            observation,
            state,
            action,
            action_index,
            env_reward,
            shaping_reward,
            outcome,
        };
        self.step += 1;
        if self.step == self.cfg.steps_per_trial {
            self.step = 0;
            self.trial += 1;
            if self.trial == self.cfg.trials_per_episode {
                self.finished = true;
            } else {
                self.sample_trial();
            }
        }
        Ok(record)
    }

    fn transition(&mut self, action: Action) -> (i32, f64, Outcome) {
        match action {
            Action::NoOp => (0, 0.0, Outcome::NoOp),
            Action::Deposit { stone } => {
                if self.stones[stone].deposited {
                    let o = Outcome::Invalid { stone, hue: None, slot: None, reason: InvalidReason::StoneDeposited };
                    return (0, INVALID_PENALTY, o);
                }
                let s = self.stone(stone);
                self.stones[stone].deposited = true;
                self.last_hue[stone] = None;
                let o = Outcome::Deposited { stone, latent: s.vertex, percept: s.percept, value: s.reward };
                (s.reward, 0.0, o)
            }
            Action::Apply { stone, hue } => {
                if self.stones[stone].deposited {
                    let o = Outcome::Invalid { stone, hue: Some(hue), slot: None, reason: InvalidReason::StoneDeposited };
                    return (0, INVALID_PENALTY, o);
                }
                let free: Vec<usize> =
                    (0..N_POTIONS).filter(|&i| !self.potions[i].used && self.potions[i].hue == hue).collect();
                if free.is_empty() {
                    let o = Outcome::Invalid { stone, hue: Some(hue), slot: None, reason: InvalidReason::HueUnavailable };
                    return (0, INVALID_PENALTY, o);
                }
                let slot = free[self.rng.gen_range(0..free.len())];
                self.apply_slot(stone, slot)
            }
            Action::ApplySlot { stone, slot } => {
                if self.stones[stone].deposited {
                    let o = Outcome::Invalid {
                        stone,
                        hue: Some(self.potions[slot].hue),
                        slot: Some(slot),
                        reason: InvalidReason::StoneDeposited,
                    };
                    return (0, INVALID_PENALTY, o);
                }
                if self.potions[slot].used {
                    let o = Outcome::Invalid {
                        stone,
                        hue: Some(self.potions[slot].hue),
                        slot: Some(slot),
                        reason: InvalidReason::SlotUsed,
                    };
                    return (0, INVALID_PENALTY, o);
                }
                self.apply_slot(stone, slot)
            }
        }
    }

    fn apply_slot(&mut self, stone: usize, slot: usize) -> (i32, f64, Outcome) {
        let hue = self.potions[slot].hue;
        self.potions[slot].used = true;
        let before = self.stones[stone].vertex;
        let out = self.chem.apply_potion_latent(before, hue);
        self.stones[stone].vertex = out.new_vertex;
        let repeated = self.last_hue[stone] == Some(hue);
        self.last_hue[stone] = Some(hue);
        let mut shaping = 0.0;
        if out.is_null() {
            shaping += NULL_PENALTY;
        }
        if repeated {
            shaping += REPEAT_PENALTY;
        }
        let o = Outcome::Applied {
            stone,
            hue,
            slot,
            latent_before: before,
            latent_after: out.new_vertex,
            percept_before: self.chem.latent_to_percept(before),
            percept_after: self.chem.latent_to_percept(out.new_vertex),
            reward_before: reward_of(before),
            reward_after: reward_of(out.new_vertex),
            null_cause: out.null_cause,
            repeated_hue: repeated,
        };
        (0, shaping, o)
    }
}

/// Starts an episode and returns the environment with its first observation.
pub fn reset_episode(cfg: &EnvConfig, seed: u64) -> Result<(Environment, Vec<f64>), EnvError> {
    let env = Environment::new(cfg, seed)?;
    let obs = env.observation();
    Ok((env, obs))
}

/// Re-runs `(seed, actions)` through a fresh environment.
pub fn replay(header: &TraceHeader, actions: &[Action]) -> Result<Vec<StepRecord>, EnvError> {
    let chem = Chemistry::from_record(&header.chemistry)?;
    let mut env = Environment::with_chemistry(&header.env, header.seed, chem);
    actions.iter().map(|a| env.step(*a)).collect()
}

/// Recomputes each record's observation from its recorded ground-truth state.
pub fn observations_consistent(trace: &EpisodeTrace) -> bool {
    let chem = trace.chemistry();
    let mode = trace.header.env.encoding.input;
    trace.steps.iter().all(|s| encode_observation(mode, &chem, &s.state) == s.observation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemistry::{EdgeSet, PerceptMap, PotionMap};

    fn simple_env() -> Environment {
        let chem = Chemistry::new(PotionMap::new(0, 0b111), EdgeSet::FULL, PerceptMap::IDENTITY);
        let cfg = EnvConfig { trials_per_episode: 2, ..EnvConfig::default() };
        Environment::with_chemistry(&cfg, 3, chem)
    }

    fn v(c: [i8; 3]) -> LatentVertex {
        LatentVertex::from_coords(c)
    }

    #[test]
    fn reset_is_deterministic_and_sized() {
        let cfg = EnvConfig::default();
        let (_, a) = reset_episode(&cfg, 11).unwrap();
        let (_, b) = reset_episode(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 21);
        let counts: f64 = a[15..].iter().sum();
        assert!((counts - 1.0).abs() < 1e-12);
        let cfg = EnvConfig {
            encoding: EncodingConfig { input: EncodingMode::Canonical, ..Default::default() },
            ..EnvConfig::default()
        };
        assert_eq!(reset_episode(&cfg, 11).unwrap().1.len(), 99);
    }

    #[test]
    fn unavailable_hue_is_invalid() {
        let mut env = simple_env();
        env.set_trial_state(&[v([-1, -1, -1]); 3], &[PotionColor::Green; 12]);
        let before = env.snapshot();
        let r = env.step(Action::Apply { stone: 0, hue: PotionColor::Red }).unwrap();
        assert_eq!(r.shaping_reward, -1.0);
        assert_eq!(r.env_reward, 0);
        assert!(matches!(r.outcome, Outcome::Invalid { reason: InvalidReason::HueUnavailable, .. }));
        assert_eq!(env.snapshot(), before);
    }

    #[test]
    fn repeated_hue_compounds_null_penalty() {
        let mut env = simple_env();
        let mut hues = [PotionColor::Red; 12];
        hues[0] = PotionColor::Green;
        env.set_trial_state(&[v([-1, -1, -1]); 3], &hues);
        let r1 = env.step(Action::Apply { stone: 0, hue: PotionColor::Red }).unwrap();
        assert_eq!(r1.shaping_reward, 0.0);
        let r2 = env.step(Action::Apply { stone: 0, hue: PotionColor::Red }).unwrap();
        assert!((r2.shaping_reward - (-1.2)).abs() < 1e-12);
        assert!(r2.outcome.is_null_apply());
        // another stone resets nothing for stone 0, but has its own history
        let r3 = env.step(Action::Apply { stone: 1, hue: PotionColor::Green }).unwrap();
        assert!((r3.shaping_reward - (-0.2)).abs() < 1e-12);
    }

    #[test]
    fn deposit_collects_reward_once() {
        let mut env = simple_env();
        env.set_trial_state(&[v([1, 1, 1]), v([-1, -1, -1]), v([1, -1, -1])], &[PotionColor::Red; 12]);
        let r = env.step(Action::Deposit { stone: 0 }).unwrap();
        assert_eq!(r.env_reward, 15);
        assert!(env.stone(0).deposited);
        let again = env.step(Action::Deposit { stone: 0 }).unwrap();
        assert_eq!(again.env_reward, 0);
        assert_eq!(again.shaping_reward, -1.0);
        let on_deposited = env.step(Action::Apply { stone: 0, hue: PotionColor::Red }).unwrap();
        assert_eq!(on_deposited.shaping_reward, -1.0);
        assert_eq!(env.potion_counts()[0], 12);
        let obs = env.observation();
        assert_eq!(&obs[0..5], &[1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(env.score(), 15);
    }

    #[test]
    fn shaping_off_zeroes_penalties() {
        let chem = Chemistry::new(PotionMap::new(0, 0b111), EdgeSet::FULL, PerceptMap::IDENTITY);
        let cfg = EnvConfig { shaping: false, ..EnvConfig::default() };
        let mut env = Environment::with_chemistry(&cfg, 1, chem);
        env.set_trial_state(&[v([1, 1, 1]); 3], &[PotionColor::Red; 12]);
        let r = env.step(Action::Apply { stone: 0, hue: PotionColor::Red }).unwrap();
        assert_eq!(r.shaping_reward, 0.0);
        assert!(r.outcome.is_null_apply());
    }

    #[test]
    fn null_transition_consumes_potion() {
        let mut env = simple_env();
        env.set_trial_state(&[v([1, 1, 1]); 3], &[PotionColor::Red; 12]);
        env.step(Action::Apply { stone: 0, hue: PotionColor::Red }).unwrap();
        assert_eq!(env.potion_counts()[0], 11);
    }

    #[test]
    fn episode_rolls_over_and_finishes() {
        let mut env = simple_env();
        let first_chem = *env.chemistry();
        for i in 0..30 {
            let r = env.step(Action::NoOp).unwrap();
            assert_eq!(r.trial as usize, i / 15);
            assert_eq!(r.step as usize, i % 15);
        }
        assert!(env.is_finished());
        assert_eq!(*env.chemistry(), first_chem);
        assert!(matches!(env.step(Action::NoOp), Err(EnvError::Finished)));
    }

    #[test]
    fn canonical_slot_actions() {
        let chem = Chemistry::new(PotionMap::new(0, 0b111), EdgeSet::FULL, PerceptMap::IDENTITY);
        let cfg = EnvConfig {
            encoding: EncodingConfig { input: EncodingMode::Canonical, output: EncodingMode::Canonical, memory: EncodingMode::Canonical },
            ..EnvConfig::default()
        };
        let mut env = Environment::with_chemistry(&cfg, 1, chem);
        env.set_trial_state(&[v([-1, -1, -1]); 3], &[PotionColor::Red; 12]);
        let r = env.step(Action::ApplySlot { stone: 0, slot: 4 }).unwrap();
        assert_eq!(r.action_index, 5);
        let again = env.step(Action::ApplySlot { stone: 1, slot: 4 }).unwrap();
        assert!(matches!(again.outcome, Outcome::Invalid { reason: InvalidReason::SlotUsed, .. }));
        let obs = env.observation();
        let slot4 = 15 + 4 * 7;
        assert!(obs[slot4..slot4 + 7].iter().all(|&x| x == 0.0));
        assert!(env.step(Action::Apply { stone: 0, hue: PotionColor::Red }).is_err());
    }
}
