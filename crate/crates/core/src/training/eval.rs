//! The trained network as a policy, and score statistics.

use std::collections::BTreeMap;
use std::ops::Deref;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::runner::{run_episodes, EpisodeRun, Policy, RunOptions, UnitActivations};
use crate::environment::{
    index_action, Action, AgentInfo, EncodingConfig, EnvConfig, EnvError, EnvView, StepRecord, REWARD_SCALE,
};
use crate::neural::{memory_entry, sample_action, AgentState, Epn, Real, SampleMode, ShapeError};

use super::config::EvalConfig;

/// Per-episode seeds of an evaluation set.
pub fn eval_seeds(base: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    (0..n).map(|_| rand::Rng::gen(&mut rng)).collect()
}

/// Agent input for the previous reward.
pub fn reward_input(record: &StepRecord) -> Real {
    (record.total_reward() / REWARD_SCALE) as Real
}

/// The network as a policy; `N` is any handle to it (`&Epn`, `Arc<Epn>`).
#[derive(Debug, Clone)]
pub struct EpnPolicy<N> {
    net: N,
    encoding: EncodingConfig,
    state: AgentState,
    mode: SampleMode,
    memory_enabled: bool,
    record: bool,
    seed: u64,
    rng: ChaCha8Rng,
    last: Option<UnitActivations>,
    id: String,
}

impl<N: Deref<Target = Epn>> EpnPolicy<N> {
    pub fn new(net: N, encoding: EncodingConfig, cfg: &EvalConfig) -> Self {
        let state = net.initial_state();
        EpnPolicy {
            net,
            encoding,
            state,
            mode: cfg.mode,
            memory_enabled: cfg.memory_enabled,
            record: cfg.record_activations,
            seed: cfg.seed,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            last: None,
            id: "a2c_epn".into(),
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn state(&self) -> &AgentState {
        &self.state
    }
}

impl<N: Deref<Target = Epn>> Policy for EpnPolicy<N> {
    fn info(&self) -> AgentInfo {
        AgentInfo { id: self.id.clone(), memory_enabled: self.memory_enabled, record_activations: self.record }
    }

    fn begin_episode(&mut self, _cfg: &EnvConfig, seed: u64) {
        self.state.reset();
        self.rng = ChaCha8Rng::seed_from_u64(self.seed ^ seed.rotate_left(32));
        self.last = None;
    }

    fn act(&mut self, _view: &EnvView, observation: &[f64]) -> Action {
        let obs: Vec<Real> = observation.iter().map(|&v| v as Real).collect();
        let out = self.net.step(&mut self.state, &obs, self.record).expect("observation matches network input");
        self.last = out.trace.map(|t| t.activations());
        let i = sample_action(&out.logits, None, &mut self.rng, self.mode);
        index_action(i, self.encoding.output).expect("logit count matches action space")
    }

    fn observe(&mut self, record: &StepRecord, post_observation: &[f64]) {
        if self.memory_enabled {
            if let Some(e) = memory_entry(record, post_observation, self.encoding.memory, self.net.dims.n_actions) {
                self.state.memory.push(e);
            }
        }
        self.state.prev_action = Some(record.action_index);
        self.state.prev_reward = reward_input(record);
    }

    fn last_activations(&self) -> Option<UnitActivations> {
        self.last.clone()
    }
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; 0 for fewer than 2 values.
    pub sem: f64,
}

impl ScoreStats {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return ScoreStats { n, mean: 0.0, sem: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sem = if n < 2 {
            0.0
        } else {
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        ScoreStats { n, mean, sem }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: ScoreStats,
    pub by_missing_edges: BTreeMap<usize, ScoreStats>,
    pub scores: Vec<i32>,
}

impl EvalReport {
    pub fn from_runs(runs: &[EpisodeRun]) -> Self {
        let scores: Vec<i32> = runs.iter().map(|r| r.trace.summary.score).collect();
        let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in runs {
            groups.entry(r.trace.header.missing_edges).or_default().push(r.trace.summary.score as f64);
        }
        EvalReport {
            overall: ScoreStats::of(&scores.iter().map(|&s| s as f64).collect::<Vec<_>>()),
            by_missing_edges: groups.into_iter().map(|(m, xs)| (m, ScoreStats::of(&xs))).collect(),
            scores,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("network does not fit the environment: {0}")]
    Shape(#[from] ShapeError),
}

/// Runs the network on the evaluation set of `cfg`.
pub fn evaluate(net: &Epn, cfg: &EvalConfig, env: &EnvConfig) -> Result<(EvalReport, Vec<EpisodeRun>), EvalError> {
    let seeds = eval_seeds(cfg.seed, cfg.n_episodes);
    evaluate_on(net, cfg, env, &seeds)
}

pub fn evaluate_on(
    net: &Epn,
    cfg: &EvalConfig,
    env: &EnvConfig,
    seeds: &[u64],
) -> Result<(EvalReport, Vec<EpisodeRun>), EvalError> {
    let want = crate::neural::EpnDims::for_encoding(&env.encoding);
    let d = net.dims;
    if (d.obs_dim, d.n_actions, d.mem_width) != (want.obs_dim, want.n_actions, want.mem_width) {
        return Err(ShapeError::mismatch(
            "checkpoint vs environment encoding",
            format!("obs {} actions {} memory {}", want.obs_dim, want.n_actions, want.mem_width),
            format!("obs {} actions {} memory {}", d.obs_dim, d.n_actions, d.mem_width),
        )
        .into());
    }
    let env = EnvConfig { shaping: cfg.shaping, ..env.clone() };
    let opts = RunOptions { record_belief: false, record_activations: cfg.record_activations };
    let runs = run_episodes(|_, _| EpnPolicy::new(net, env.encoding, cfg), &env, seeds, opts, cfg.exec)?;
    Ok((EvalReport::from_runs(&runs), runs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sem_toy() {
        let s = ScoreStats::of(&[1.0, 2.0, 6.0]);
        assert!((s.mean - 3.0).abs() < 1e-12);
        // sample variance 7, sem sqrt(7/3)
        assert!((s.sem - (7.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(ScoreStats::of(&[4.0]).sem, 0.0);
    }
}
