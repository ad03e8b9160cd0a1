//! Non-adaptive reference policy.
//!
//! Rules, in order: deposit a stone showing +15; in the last three steps of
//! a trial deposit any stone with positive reward; otherwise apply a random
//! available hue to a random undeposited stone; otherwise do nothing.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chemistry::PotionColor;
use crate::environment::runner::Policy;
use crate::environment::{Action, AgentInfo, EnvConfig, EnvView};

const ENDGAME_STEPS: u32 = 3;

pub fn random_heuristic_act<R: Rng + ?Sized>(view: &EnvView, rng: &mut R) -> Action {
    let live: Vec<usize> = (0..view.stones.len()).filter(|&i| !view.stones[i].deposited).collect();
    if let Some(&stone) = live.iter().find(|&&i| view.stones[i].reward == 15) {
        return Action::Deposit { stone };
    }
    if view.steps_left() <= ENDGAME_STEPS {
        if let Some(&stone) = live.iter().find(|&&i| view.stones[i].reward > 0) {
            return Action::Deposit { stone };
        }
    }
    let hues: Vec<PotionColor> = PotionColor::ALL.into_iter().filter(|h| view.counts[h.index()] > 0).collect();
    match (live.choose(rng), hues.choose(rng)) {
        (Some(&stone), Some(&hue)) => Action::Apply { stone, hue },
        _ => Action::NoOp,
    }
}

#[derive(Debug, Clone)]
pub struct RandomHeuristic {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomHeuristic {
    pub fn new(seed: u64) -> Self {
        RandomHeuristic { seed, rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomHeuristic {
    fn info(&self) -> AgentInfo {
        AgentInfo { id: "random_heuristic".into(), memory_enabled: false, record_activations: false }
    }

    fn begin_episode(&mut self, _cfg: &EnvConfig, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(self.seed ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }

    fn act(&mut self, view: &EnvView, _observation: &[f64]) -> Action {
        random_heuristic_act(view, &mut self.rng)
    }
}
