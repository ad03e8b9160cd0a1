//! Interactive episodes and the step views shared by the service and
//! offline tools.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    ideal_observer_act, random_heuristic_act, BeliefError, BeliefMarginals, BeliefState, IdealConfig,
    ObservationEvent,
};
use crate::chemistry::{reward_of, Chemistry, PerceptState};
use crate::environment::runner::{adapt_action, BeliefRow, Policy};
use crate::environment::{
    index_action, Action, AgentInfo, EnvConfig, EnvError, EnvView, Environment, EpisodeTrace, Outcome,
    PotionSlot, StepRecord, TraceHeader, TraceSummary,
};
use crate::neural::Epn;
use crate::training::{EpnPolicy, EvalConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Human,
    Ideal,
    Random,
    Epn,
}

impl SessionMode {
    pub fn name(self) -> &'static str {
        match self {
            SessionMode::Human => "human",
            SessionMode::Ideal => "ideal",
            SessionMode::Random => "random",
            SessionMode::Epn => "epn",
        }
    }
}

/// A stone as shown to a player.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoneInfo {
    pub index: usize,
    pub percept: PerceptState,
    pub reward: i32,
    pub deposited: bool,
}

/// Everything about one recorded step that a viewer needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub t: usize,
    pub trial: u32,
    pub step: u32,
    /// State the action was taken in.
    pub stones: Vec<StoneInfo>,
    pub potions: Vec<PotionSlot>,
    pub action: Action,
    pub action_index: usize,
    pub env_reward: i32,
    pub shaping_reward: f64,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief: Option<BeliefMarginals>,
}

impl StepView {
    pub fn of(chem: &Chemistry, t: usize, record: &StepRecord, belief: Option<BeliefMarginals>) -> Self {
        let stones = record
            .state
            .stones
            .iter()
            .enumerate()
            .map(|(index, s)| StoneInfo {
                index,
                percept: chem.latent_to_percept(s.latent),
                reward: reward_of(s.latent),
                deposited: s.deposited,
            })
            .collect();
        StepView {
            t,
            trial: record.trial,
            step: record.step,
            stones,
            potions: record.state.potions.clone(),
            action: record.action,
            action_index: record.action_index,
            env_reward: record.env_reward,
            shaping_reward: record.shaping_reward,
            outcome: record.outcome.clone(),
            belief,
        }
    }

    /// Step `t` of a recorded trace, with the belief row for it if given.
    pub fn from_trace(trace: &EpisodeTrace, t: usize, belief: Option<&[BeliefRow]>) -> Option<Self> {
        let record = trace.steps.get(t)?;
        let marginals = belief.and_then(|rows| rows.iter().find(|r| r.step == t)).map(|r| r.marginals.clone());
        Some(StepView::of(&trace.chemistry(), t, record, marginals))
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("episode is finished")]
    Finished,
    #[error("malformed action: {0}")]
    BadAction(String),
    #[error("session mode {0} has no automatic policy")]
    NoPolicy(&'static str),
    #[error("mode epn needs a trained network")]
    NoNetwork,
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// What to do next: a concrete action index or the session policy's move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionRequest {
    Index(usize),
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub id: String,
    pub seed: u64,
    pub mode: SessionMode,
    pub finished: bool,
    pub trial: u32,
    pub step_in_trial: u32,
    /// Steps taken so far.
    pub cursor: usize,
    pub score: i32,
    pub trial_totals: Vec<i32>,
    pub stones: Vec<StoneInfo>,
    pub potions: Vec<PotionSlot>,
    pub n_actions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last: Option<StepView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief_error: Option<String>,
}

/// One live episode. The belief is filtered on every observation whatever
/// the mode, so it always reflects all applies seen so far.
pub struct Session {
    id: String,
    seed: u64,
    mode: SessionMode,
    env: Environment,
    header: TraceHeader,
    steps: Vec<StepRecord>,
    belief: BeliefState,
    belief_error: Option<BeliefError>,
    sighted_trial: Option<u32>,
    ideal: IdealConfig,
    rng: ChaCha8Rng,
    epn: Option<EpnPolicy<Arc<Epn>>>,
}

impl Session {
    /// `prior` is the belief before any observation, usually shared.
    pub fn new(
        id: impl Into<String>,
        seed: u64,
        mode: SessionMode,
        cfg: &EnvConfig,
        prior: BeliefState,
        net: Option<Arc<Epn>>,
    ) -> Result<Self, SessionError> {
        let env = Environment::new(cfg, seed)?;
        let epn = match (mode, net) {
            (SessionMode::Epn, None) => return Err(SessionError::NoNetwork),
            (SessionMode::Epn, Some(net)) => {
                let mut p = EpnPolicy::new(net, cfg.encoding, &EvalConfig { seed, ..EvalConfig::default() });
                p.begin_episode(cfg, seed);
                Some(p)
            }
            _ => None,
        };
        let info = AgentInfo { id: format!("session_{}", mode.name()), memory_enabled: true, record_activations: false };
        let header = env.header(info);
        let mut s = Session {
            id: id.into(),
            seed,
            mode,
            env,
            header,
            steps: Vec::new(),
            belief: prior,
            belief_error: None,
            sighted_trial: None,
            ideal: IdealConfig::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            epn,
        };
        s.sight();
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mode(&self) -> SessionMode {
        self.mode
    }

    pub fn is_finished(&self) -> bool {
        self.env.is_finished()
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn belief(&self) -> &BeliefState {
        &self.belief
    }

    pub fn belief_marginals(&self) -> BeliefMarginals {
        self.belief.marginals()
    }

    fn observe_event(&mut self, e: &ObservationEvent) {
        match self.belief.updated(e) {
            Ok(b) => self.belief = b,
            Err(err) => {
                self.belief_error.get_or_insert(err);
            }
        }
    }

    fn sight(&mut self) {
        if self.env.is_finished() || self.sighted_trial == Some(self.env.trial()) {
            return;
        }
        self.sighted_trial = Some(self.env.trial());
        for s in self.env.view().stones {
            self.observe_event(&ObservationEvent::Sighting { percept: s.percept, reward: s.reward });
        }
    }

    fn auto_action(&mut self, view: &EnvView, obs: &[f64]) -> Result<Action, SessionError> {
        match self.mode {
            SessionMode::Human => Err(SessionError::NoPolicy("human")),
            SessionMode::Ideal => {
                let offset: f64 = self.rng.gen();
                Ok(ideal_observer_act(&self.belief, view, &self.ideal, offset))
            }
            SessionMode::Random => Ok(random_heuristic_act(view, &mut self.rng)),
            SessionMode::Epn => Ok(self.epn.as_mut().ok_or(SessionError::NoNetwork)?.act(view, obs)),
        }
    }

    pub fn step(&mut self, req: ActionRequest) -> Result<&StepRecord, SessionError> {
        if self.env.is_finished() {
            return Err(SessionError::Finished);
        }
        let view = self.env.view();
        let obs = self.env.observation();
        let output = self.header.env.encoding.output;
        let action = match req {
            ActionRequest::Index(i) => index_action(i, output).map_err(|e| SessionError::BadAction(e.to_string()))?,
            ActionRequest::Auto => adapt_action(self.auto_action(&view, &obs)?, &view, output),
        };
        let record = self.env.step(action)?;
        if let Some(p) = self.epn.as_mut() {
            p.observe(&record, self.env.post_action_observation());
        }
        if let Some(e) = ObservationEvent::from_step(&record) {
            self.observe_event(&e);
        }
        self.steps.push(record);
        self.sight();
        Ok(self.steps.last().expect("just pushed"))
    }

    pub fn state(&self) -> SessionState {
        let view = self.env.view();
        let chem = self.env.chemistry();
        let stones = view
            .stones
            .iter()
            .enumerate()
            .map(|(index, s)| StoneInfo { index, percept: s.percept, reward: s.reward, deposited: s.deposited })
            .collect();
        SessionState {
            id: self.id.clone(),
            seed: self.seed,
            mode: self.mode,
            finished: self.env.is_finished(),
            trial: view.trial,
            step_in_trial: view.step,
            cursor: self.steps.len(),
            score: self.env.score(),
            trial_totals: self.env.trial_totals().to_vec(),
            stones,
            potions: view.potions.clone(),
            n_actions: self.header.env.encoding.output.n_actions(),
            last: self.steps.last().map(|r| StepView::of(chem, self.steps.len() - 1, r, None)),
            belief_error: self.belief_error.as_ref().map(|e| e.to_string()),
        }
    }

    /// The episode so far as a trace.
    pub fn trace(&self) -> EpisodeTrace {
        EpisodeTrace {
            header: self.header.clone(),
            steps: self.steps.clone(),
            summary: TraceSummary { trial_totals: self.env.trial_totals().to_vec(), score: self.env.score() },
        }
    }
}
