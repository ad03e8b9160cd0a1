//! Policy interface and the single-episode rollout harness.

use serde::{Deserialize, Serialize};

use super::{
    Action, AgentInfo, EncodingMode, EnvConfig, EnvError, EnvView, Environment, EpisodeTrace,
    StepRecord, TraceSummary,
};
use crate::baselines::BeliefMarginals;
use crate::par::{self, ExecMode};

/// Per-step unit activations exported to the activation sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitActivations {
    pub lstm_h: Vec<f64>,
    pub transformer_pooled: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRow {
    pub episode: usize,
    pub step: usize,
    #[serde(flatten)]
    pub units: UnitActivations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefRow {
    pub episode: usize,
    pub step: usize,
    #[serde(flatten)]
    pub marginals: BeliefMarginals,
}

pub trait Policy {
    fn info(&self) -> AgentInfo;

    fn begin_episode(&mut self, _cfg: &EnvConfig, _seed: u64) {}

    fn act(&mut self, view: &EnvView, observation: &[f64]) -> Action;

    /// Called after every step with the record and the observation of the
    /// post-action state (before any trial rollover).
    fn observe(&mut self, _record: &StepRecord, _post_observation: &[f64]) {}

    /// Belief marginals at the time of the last `act` call, if tracked.
    fn belief_marginals(&mut self) -> Option<BeliefMarginals> {
        None
    }

    /// Activations from the last `act` call, if recorded.
    fn last_activations(&self) -> Option<UnitActivations> {
        None
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub record_belief: bool,
    pub record_activations: bool,
}

#[derive(Debug, Clone)]
pub struct EpisodeRun {
    pub trace: EpisodeTrace,
    pub belief: Vec<BeliefRow>,
    pub activations: Vec<ActivationRow>,
}

/// Maps a hue-level apply onto a concrete slot when the environment expects
/// canonical (slot) actions: the lowest unused slot of that hue.
pub fn adapt_action(action: Action, view: &EnvView, mode: EncodingMode) -> Action {
    match (action, mode) {
        (Action::Apply { stone, hue }, EncodingMode::Canonical) => {
            let slot = view
                .potions
                .iter()
                .position(|p| p.hue == hue && !p.used)
                .or_else(|| view.potions.iter().position(|p| p.hue == hue));
            match slot {
                Some(slot) => Action::ApplySlot { stone, slot },
                None => Action::NoOp,
            }
        }
        (Action::ApplySlot { stone, slot }, EncodingMode::Modified) => {
            Action::Apply { stone, hue: view.potions[slot].hue }
        }
        (a, _) => a,
    }
}

pub fn run_episode(
    policy: &mut dyn Policy,
    cfg: &EnvConfig,
    seed: u64,
    episode: usize,
    opts: RunOptions,
) -> Result<EpisodeRun, EnvError> {
    let mut env = Environment::new(cfg, seed)?;
    policy.begin_episode(cfg, seed);
    let header = env.header(policy.info());
    let mut steps = Vec::with_capacity(cfg.steps_per_episode());
    let mut belief = Vec::new();
    let mut activations = Vec::new();
    while !env.is_finished() {
        let view = env.view();
        let obs = env.observation();
        let action = policy.act(&view, &obs);
        let action = adapt_action(action, &view, cfg.encoding.output);
        let t = steps.len();
        if opts.record_belief {
            if let Some(marginals) = policy.belief_marginals() {
                belief.push(BeliefRow { episode, step: t, marginals });
            }
        }
        if opts.record_activations {
            if let Some(units) = policy.last_activations() {
                activations.push(ActivationRow { episode, step: t, units });
            }
        }
        let record = env.step(action)?;
        policy.observe(&record, env.post_action_observation());
        steps.push(record);
    }
    let trace = EpisodeTrace {
        header,
        steps,
        summary: TraceSummary { trial_totals: env.trial_totals().to_vec(), score: env.score() },
    };
    Ok(EpisodeRun { trace, belief, activations })
}

/// Runs one episode per seed, each with a fresh policy from `make_policy`.
pub fn run_episodes<P, F>(
    make_policy: F,
    cfg: &EnvConfig,
    seeds: &[u64],
    opts: RunOptions,
    mode: ExecMode,
) -> Result<Vec<EpisodeRun>, EnvError>
where
    P: Policy,
    F: Fn(usize, u64) -> P + Sync + Send,
{
    let indexed: Vec<(usize, u64)> = seeds.iter().copied().enumerate().collect();
    par::map(mode, &indexed, |&(i, seed)| {
        let mut p = make_policy(i, seed);
        run_episode(&mut p, cfg, seed, i, opts)
    })
    .into_iter()
    .collect()
}

/// Always does nothing.
#[derive(Debug, Clone, Default)]
pub struct NoOpPolicy;

impl Policy for NoOpPolicy {
    fn info(&self) -> AgentInfo {
        AgentInfo { id: "noop".into(), memory_enabled: false, record_activations: false }
    }

    fn act(&mut self, _view: &EnvView, _observation: &[f64]) -> Action {
        Action::NoOp
    }
}

/// Picks uniformly among all actions of the output encoding.
#[derive(Debug, Clone)]
pub struct UniformRandomPolicy {
    rng: rand_chacha::ChaCha8Rng,
    mode: EncodingMode,
}

impl UniformRandomPolicy {
    pub fn new(seed: u64, mode: EncodingMode) -> Self {
        use rand::SeedableRng;
        UniformRandomPolicy { rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed), mode }
    }
}

impl Policy for UniformRandomPolicy {
    fn info(&self) -> AgentInfo {
        AgentInfo { id: "uniform".into(), memory_enabled: false, record_activations: false }
    }

    fn act(&mut self, _view: &EnvView, _observation: &[f64]) -> Action {
        use rand::Rng;
        let i = self.rng.gen_range(0..self.mode.n_actions());
        super::index_action(i, self.mode).expect("index within range")
    }
}
