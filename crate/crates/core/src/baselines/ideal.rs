//! Bayesian observer that plans against its posterior.
//!
//! Actions that are invalid, or null under every surviving hypothesis, are
//! never candidates. The rest are scored by the posterior average of the
//! immediate reward plus the fully informed value of the resulting state.
//! When the posterior is large the average is taken over a systematic
//! resample of it. Ties go to fewer expected steps, then to the lowest
//! action index.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chemistry::{Chemistry, GenConfig, PotionColor, N_HUES};
use crate::environment::runner::Policy;
use crate::environment::{action_index, Action, AgentInfo, EncodingMode, EnvConfig, EnvView, StepRecord};
use crate::par::ExecMode;

use super::belief::{init_belief, BeliefError, BeliefMarginals, BeliefState, ObservationEvent, DEFAULT_HYPOTHESIS_CAP};
use super::planner::{plan_latent, slot_budget, Plan};

const TIE_EPS: f64 = 1e-9;
const CACHE_LIMIT: usize = 1 << 21;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdealConfig {
    /// Hypotheses averaged over when choosing an action.
    pub sample_cap: usize,
    pub hypothesis_cap: usize,
    pub exec: ExecMode,
}

impl Default for IdealConfig {
    fn default() -> Self {
        IdealConfig { sample_cap: 128, hypothesis_cap: DEFAULT_HYPOTHESIS_CAP, exec: ExecMode::default() }
    }
}

#[derive(Debug, Default)]
struct PlanCache(HashMap<u64, Plan>);

impl PlanCache {
    fn get(&mut self, mask: u16, budget: [u8; 6], verts: &mut [u8], steps_left: u32) -> Plan {
        verts.sort_unstable();
        let mut key = mask as u64;
        for b in budget {
            key = key << 4 | b.min(15) as u64;
        }
        for i in 0..3 {
            key = key << 4 | verts.get(i).map_or(8, |&v| v as u64);
        }
        key = key << 8 | steps_left.min(255) as u64;
        if let Some(p) = self.0.get(&key) {
            return *p;
        }
        if self.0.len() >= CACHE_LIMIT {
            self.0.clear();
        }
        let p = plan_latent(mask, budget, verts, steps_left);
        self.0.insert(key, p);
        p
    }
}

fn candidates(b: &BeliefState, view: &EnvView) -> Vec<Action> {
    let mut out = vec![Action::NoOp];
    for (stone, s) in view.stones.iter().enumerate() {
        if s.deposited {
            continue;
        }
        for hue in PotionColor::ALL {
            if view.counts[hue.index()] > 0 && !b.provably_null(s.percept, hue) {
                out.push(Action::Apply { stone, hue });
            }
        }
    }
    for (stone, s) in view.stones.iter().enumerate() {
        if !s.deposited {
            out.push(Action::Deposit { stone });
        }
    }
    out
}

/// Posterior-averaged (value, expected steps) of each candidate.
fn score(sample: &[(Chemistry, f64)], view: &EnvView, actions: &[Action], cache: &mut PlanCache) -> Vec<(f64, f64)> {
    let mut acc = vec![(0.0, 0.0); actions.len()];
    let after = view.steps_left().saturating_sub(1);
    for (chem, w) in sample {
        let mask = chem.edges.mask();
        let latent: Vec<u8> = view.stones.iter().map(|s| chem.percept_to_latent(s.percept).id()).collect();
        let live = |skip: Option<usize>| -> Vec<u8> {
            (0..latent.len())
                .filter(|&i| !view.stones[i].deposited && Some(i) != skip)
                .map(|i| latent[i])
                .collect()
        };
        for (a, slot) in actions.iter().zip(acc.iter_mut()) {
            let (r, p) = match *a {
                Action::NoOp => (0.0, cache.get(mask, slot_budget(chem, &view.counts), &mut live(None), after)),
                Action::Deposit { stone } => {
                    let r = view.stones[stone].reward as f64;
                    (r, cache.get(mask, slot_budget(chem, &view.counts), &mut live(Some(stone)), after))
                }
                Action::Apply { stone, hue } => {
                    let mut counts: [u8; N_HUES] = view.counts;
                    counts[hue.index()] -= 1;
                    let mut verts = live(Some(stone));
                    let out = chem.apply_potion_latent(crate::chemistry::LatentVertex::from_id(latent[stone]), hue);
                    verts.push(out.new_vertex.id());
                    (0.0, cache.get(mask, slot_budget(chem, &counts), &mut verts, after))
                }
                Action::ApplySlot { .. } => unreachable!("candidates are hue-level"),
            };
            slot.0 += w * (r + p.value as f64);
            slot.1 += w * (1.0 + p.steps as f64);
        }
    }
    acc
}

fn pick(actions: &[Action], scores: &[(f64, f64)]) -> Action {
    let idx = |a: &Action| action_index(a, EncodingMode::Modified).expect("hue-level action");
    let mut best = 0;
    for i in 1..actions.len() {
        let (q, t) = scores[i];
        let (bq, bt) = scores[best];
        let better = q > bq + TIE_EPS
            || ((q - bq).abs() <= TIE_EPS
                && (t < bt - TIE_EPS || ((t - bt).abs() <= TIE_EPS && idx(&actions[i]) < idx(&actions[best]))));
        if better {
            best = i;
        }
    }
    actions[best]
}

fn choose(b: &BeliefState, view: &EnvView, cfg: &IdealConfig, offset: f64, cache: &mut PlanCache) -> Action {
    if view.stones.iter().all(|s| s.deposited) {
        return Action::NoOp;
    }
    let actions = candidates(b, view);
    let sample = b.planning_sample(cfg.sample_cap, offset);
    let scores = score(&sample, view, &actions, cache);
    pick(&actions, &scores)
}

/// One decision of the observer for belief `b`. `offset` in `[0, 1)` places
/// the resampling grid when the posterior exceeds `cfg.sample_cap`.
pub fn ideal_observer_act(b: &BeliefState, view: &EnvView, cfg: &IdealConfig, offset: f64) -> Action {
    choose(b, view, cfg, offset, &mut PlanCache::default())
}

#[derive(Debug)]
pub struct IdealObserver {
    cfg: IdealConfig,
    prior: Option<(GenConfig, BeliefState)>,
    belief: Option<BeliefState>,
    sighted_trial: Option<u32>,
    rng: ChaCha8Rng,
    cache: PlanCache,
    error: Option<BeliefError>,
}

impl IdealObserver {
    pub fn new(cfg: IdealConfig) -> Self {
        IdealObserver {
            cfg,
            prior: None,
            belief: None,
            sighted_trial: None,
            rng: ChaCha8Rng::seed_from_u64(0),
            cache: PlanCache::default(),
            error: None,
        }
    }

    pub fn belief(&self) -> Option<&BeliefState> {
        self.belief.as_ref()
    }

    /// First filtering failure of the current episode, if any. The belief
    /// is kept at its last nonempty value when this happens.
    pub fn error(&self) -> Option<&BeliefError> {
        self.error.as_ref()
    }

    fn apply_event(&mut self, e: &ObservationEvent) {
        if let Some(b) = self.belief.as_mut() {
            if let Err(err) = b.update(e) {
                self.error.get_or_insert(err);
            }
        }
    }
}

impl Default for IdealObserver {
    fn default() -> Self {
        IdealObserver::new(IdealConfig::default())
    }
}

impl Policy for IdealObserver {
    fn info(&self) -> AgentInfo {
        AgentInfo { id: "ideal_observer".into(), memory_enabled: false, record_activations: false }
    }

    fn begin_episode(&mut self, cfg: &EnvConfig, seed: u64) {
        let reuse = matches!(&self.prior, Some((g, _)) if *g == cfg.gen);
        if !reuse {
            self.prior = match init_belief(&cfg.gen, self.cfg.hypothesis_cap) {
                Ok(b) => Some((cfg.gen.clone(), b.with_mode(self.cfg.exec))),
                Err(e) => {
                    self.error = Some(e);
                    None
                }
            };
        }
        self.belief = self.prior.as_ref().map(|(_, b)| b.clone());
        self.sighted_trial = None;
        self.error = None;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn act(&mut self, view: &EnvView, _observation: &[f64]) -> Action {
        if self.sighted_trial != Some(view.trial) {
            self.sighted_trial = Some(view.trial);
            for s in &view.stones {
                self.apply_event(&ObservationEvent::Sighting { percept: s.percept, reward: s.reward });
            }
        }
        let offset: f64 = self.rng.gen();
        match &self.belief {
            Some(b) => choose(b, view, &self.cfg, offset, &mut self.cache),
            None => Action::NoOp,
        }
    }

    fn observe(&mut self, record: &StepRecord, _post_observation: &[f64]) {
        if let Some(e) = ObservationEvent::from_step(record) {
            self.apply_event(&e);
        }
    }

    fn belief_marginals(&mut self) -> Option<BeliefMarginals> {
        self.belief.as_ref().map(|b| b.marginals())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::planner::{plan, PlanStone};
    use crate::chemistry::{sample_chemistry, EdgeSet, LatentVertex, PerceptMap, PerceptState, PotionMap};
    use crate::environment::{PotionSlot, StoneView};

    fn view_for(chem: &Chemistry, stones: &[[i8; 3]], counts: [u8; 6], step: u32) -> EnvView {
        EnvView {
            trial: 0,
            step,
            steps_per_trial: 15,
            trials_per_episode: 10,
            stones: stones
                .iter()
                .map(|&c| {
                    let v = LatentVertex::from_coords(c);
                    StoneView { percept: chem.latent_to_percept(v), reward: crate::chemistry::reward_of(v), deposited: false }
                })
                .collect(),
            potions: vec![PotionSlot { hue: PotionColor::Red, used: true }; 12],
            counts,
        }
    }

    #[test]
    fn deposits_plus_fifteen() {
        let chem = Chemistry::new(PotionMap::new(0, 0b111), EdgeSet::FULL, PerceptMap::IDENTITY);
        let v = view_for(&chem, &[[-1, -1, -1], [1, 1, 1], [-1, 1, -1]], [0; 6], 3);
        let b = BeliefState::point_mass(&chem);
        assert_eq!(ideal_observer_act(&b, &v, &IdealConfig::default(), 0.5), Action::Deposit { stone: 1 });
    }

    #[test]
    fn keeps_negative_stones() {
        let chem = sample_chemistry(7, &GenConfig::default()).unwrap();
        let cube = [[-1, -1, -1], [-1, -1, 1], [1, -1, -1]];
        let stones: Vec<[i8; 3]> = cube.to_vec();
        let v = view_for(&chem, &stones, [0; 6], 5);
        let b = BeliefState::point_mass(&chem);
        assert_eq!(ideal_observer_act(&b, &v, &IdealConfig::default(), 0.0), Action::NoOp);
    }

    #[test]
    fn single_hypothesis_matches_planner_optimum() {
        let cfg = IdealConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for seed in 0..60 {
            let chem = sample_chemistry(seed, &GenConfig::default()).unwrap();
            let stones: Vec<[i8; 3]> =
                (0..3).map(|_| [0; 3].map(|_: i8| if rng.gen::<bool>() { 1 } else { -1 })).collect();
            let counts = [0; 6].map(|_: u8| rng.gen_range(0..3));
            let step = rng.gen_range(0..15);
            let v = view_for(&chem, &stones, counts, step);
            let b = BeliefState::point_mass(&chem);
            let a = ideal_observer_act(&b, &v, &cfg, 0.0);
            let plan_stones: Vec<PlanStone> =
                stones.iter().map(|&c| PlanStone { vertex: LatentVertex::from_coords(c), deposited: false }).collect();
            let best = plan(&chem, &plan_stones, &counts, v.steps_left());
            // value of the chosen first action under the known chemistry
            let left = v.steps_left() - 1;
            let got = match a {
                Action::NoOp => plan(&chem, &plan_stones, &counts, left).value,
                Action::Deposit { stone } => {
                    let mut s = plan_stones.clone();
                    s[stone].deposited = true;
                    v.stones[stone].reward + plan(&chem, &s, &counts, left).value
                }
                Action::Apply { stone, hue } => {
                    let mut s = plan_stones.clone();
                    s[stone].vertex = chem.apply_potion_latent(s[stone].vertex, hue).new_vertex;
                    let mut c = counts;
                    c[hue.index()] -= 1;
                    plan(&chem, &s, &c, left).value
                }
                Action::ApplySlot { .. } => unreachable!(),
            };
            assert_eq!(got, best.value, "seed {seed}");
        }
    }

    #[test]
    fn never_repeats_a_known_null() {
        let chem = Chemistry::new(PotionMap::new(0, 0b111), EdgeSet::FULL, PerceptMap::IDENTITY);
        let prior = init_belief(&GenConfig::fixed_missing(0), DEFAULT_HYPOTHESIS_CAP).unwrap();
        let p = PerceptState::new([1, -1, -1]);
        let e = ObservationEvent::Transition {
            percept_before: p,
            percept_after: p,
            reward_before: -1,
            reward_after: -1,
            hue: PotionColor::Red,
            null: true,
        };
        let b = prior.updated(&e).unwrap();
        let mut counts = [0; 6];
        counts[PotionColor::Red.index()] = 2;
        let v = view_for(&chem, &[[1, -1, -1], [1, -1, -1], [1, -1, -1]], counts, 0);
        for k in 0..10 {
            let a = ideal_observer_act(&b, &v, &IdealConfig::default(), k as f64 / 10.0);
            assert!(!matches!(a, Action::Apply { .. }), "{a:?}");
        }
    }
}
