//! Exact posterior over chemistry hypotheses.
//!
//! Transitions are deterministic, so each observation either keeps or rules
//! out a hypothesis. The posterior is the prior restricted to the surviving
//! support and renormalised; a hypothesis' prior only depends on its
//! missing-edge count.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemistry::{
    connected_edge_sets, reward_of, Chemistry, ChemistryError, EdgeSet, GenConfig,
    LatentVertex, PerceptMap, PerceptState, PotionColor, PotionMap, N_EDGES, N_HUES,
};
use crate::environment::{Outcome, StepRecord};
use crate::par::{self, ExecMode};

pub const DEFAULT_HYPOTHESIS_CAP: usize = 4_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("hypothesis space has {size} members, above the cap of {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("observation left no consistent hypothesis (prior misspecified)")]
    EmptySupport,
    #[error(transparent)]
    Chemistry(#[from] ChemistryError),
}

/// Evidence available to an observer that sees percepts and rewards only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObservationEvent {
    /// A potion applied to a stone.
    Transition {
        percept_before: PerceptState,
        percept_after: PerceptState,
        reward_before: i32,
        reward_after: i32,
        hue: PotionColor,
        null: bool,
    },
    /// A stone seen with its reward.
    Sighting { percept: PerceptState, reward: i32 },
}

impl ObservationEvent {
    /// The transition event of a valid apply step, if any.
    pub fn from_step(record: &StepRecord) -> Option<Self> {
        match record.outcome {
            Outcome::Applied { hue, percept_before, percept_after, reward_before, reward_after, .. } => {
                Some(ObservationEvent::Transition {
                    percept_before,
                    percept_after,
                    reward_before,
                    reward_after,
                    hue,
                    null: percept_before == percept_after,
                })
            }
            _ => None,
        }
    }

    pub fn consistent_with(&self, chem: &Chemistry) -> bool {
        consistent(Chemistry::hypothesis_id(chem), self)
    }
}

pub(crate) struct Tables {
    /// `[percept map][percept id] -> latent id`
    pub latent_of: [[u8; 8]; PerceptMap::COUNT],
    /// `[percept map][latent id] -> percept id`
    pub percept_of: [[u8; 8]; PerceptMap::COUNT],
    /// `[potion map][hue] -> latent axis`
    pub axis: [[u8; N_HUES]; PotionMap::COUNT],
    /// `[potion map][hue] -> direction`
    pub dir: [[i8; N_HUES]; PotionMap::COUNT],
    /// `[latent id][axis] -> edge index`
    pub edge: [[u8; 3]; 8],
    /// `[percept map][percept edge] -> latent edge`
    pub percept_edge: [[u8; N_EDGES]; PerceptMap::COUNT],
    pub reward: [i32; 8],
}

pub(crate) fn tables() -> &'static Tables {
    static T: OnceLock<Tables> = OnceLock::new();
    T.get_or_init(|| {
        let mut t = Tables {
            latent_of: [[0; 8]; PerceptMap::COUNT],
            percept_of: [[0; 8]; PerceptMap::COUNT],
            axis: [[0; N_HUES]; PotionMap::COUNT],
            dir: [[0; N_HUES]; PotionMap::COUNT],
            edge: [[0; 3]; 8],
            percept_edge: [[0; N_EDGES]; PerceptMap::COUNT],
            reward: [0; 8],
        };
        for ci in 0..PerceptMap::COUNT {
            let cm = PerceptMap::from_index(ci);
            for id in 0..8u8 {
                t.latent_of[ci][id as usize] = cm.to_latent(PerceptState::from_id(id)).id();
                t.percept_of[ci][id as usize] = cm.to_percept(LatentVertex::from_id(id)).id();
            }
            for pe in 0..N_EDGES {
                let (lo, _) = EdgeSet::endpoints(pe);
                let v = cm.to_latent(PerceptState::from_id(lo.id()));
                t.percept_edge[ci][pe] = EdgeSet::edge_index(v, cm.axis_of_dim(pe / 4)) as u8;
            }
        }
        for pi in 0..PotionMap::COUNT {
            let pm = PotionMap::from_index(pi);
            for h in PotionColor::ALL {
                t.axis[pi][h.index()] = pm.axis_of(h) as u8;
                t.dir[pi][h.index()] = pm.direction_of(h);
            }
        }
        for v in LatentVertex::all() {
            for axis in 0..3 {
                t.edge[v.id() as usize][axis] = EdgeSet::edge_index(v, axis) as u8;
            }
            t.reward[v.id() as usize] = reward_of(v);
        }
        t
    })
}

#[inline]
fn split(id: u32) -> (u16, usize, usize) {
    ((id >> 12) as u16, (id >> 6 & 0x3f) as usize, (id & 0x3f) as usize)
}

/// Latent outcome of `hue` on latent vertex `v` under hypothesis parts;
/// returns `(new latent, null)`.
#[inline]
pub(crate) fn step_latent(t: &Tables, mask: u16, pm: usize, v: u8, hue: usize) -> (u8, bool) {
    let axis = t.axis[pm][hue] as usize;
    let bit = v >> (2 - axis) & 1;
    let target = (t.dir[pm][hue] > 0) as u8;
    if bit == target || mask >> t.edge[v as usize][axis] & 1 == 0 {
        (v, true)
    } else {
        (v ^ (1 << (2 - axis)), false)
    }
}

#[inline]
pub(crate) fn null_under(id: u32, percept: PerceptState, hue: PotionColor) -> bool {
    let t = tables();
    let (mask, pm, cm) = split(id);
    let v = t.latent_of[cm][percept.id() as usize];
    step_latent(t, mask, pm, v, hue.index()).1
}

#[inline]
fn consistent(id: u32, e: &ObservationEvent) -> bool {
    let t = tables();
    let (mask, pm, cm) = split(id);
    match *e {
        ObservationEvent::Sighting { percept, reward } => {
            t.reward[t.latent_of[cm][percept.id() as usize] as usize] == reward
        }
        ObservationEvent::Transition { percept_before, percept_after, reward_before, reward_after, hue, null } => {
            let v = t.latent_of[cm][percept_before.id() as usize];
            if t.reward[v as usize] != reward_before {
                return false;
            }
            let (w, is_null) = step_latent(t, mask, pm, v, hue.index());
            is_null == null
                && t.percept_of[cm][w as usize] == percept_after.id()
                && t.reward[w as usize] == reward_after
        }
    }
}

/// Prior weight of one hypothesis for each missing-edge count.
fn weight_table(probs: &[f64]) -> [f64; N_EDGES + 1] {
    let mut w = [0.0; N_EDGES + 1];
    let per_map = (PotionMap::COUNT * PerceptMap::COUNT) as f64;
    for (m, p) in probs.iter().enumerate() {
        let n = connected_edge_sets(m).len();
        if *p > 0.0 && n > 0 {
            w[m] = p / (n as f64 * per_map);
        }
    }
    w
}

type PriorCache = Mutex<Vec<(Vec<f64>, Arc<Vec<u32>>)>>;

/// Shared, sorted hypothesis ids of the full prior support.
fn prior_support(probs: &[f64]) -> Arc<Vec<u32>> {
    static CACHE: OnceLock<PriorCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
    let mut guard = cache.lock().expect("prior cache poisoned");
    if let Some((_, s)) = guard.iter().find(|(p, _)| p.as_slice() == probs) {
        return Arc::clone(s);
    }
    let mut ids = Vec::new();
    for (m, p) in probs.iter().enumerate() {
        if *p <= 0.0 {
            continue;
        }
        for e in connected_edge_sets(m) {
            for pi in 0..PotionMap::COUNT as u32 {
                for ci in 0..PerceptMap::COUNT as u32 {
                    ids.push((e.mask() as u32) << 12 | pi << 6 | ci);
                }
            }
        }
    }
    ids.sort_unstable();
    let arc = Arc::new(ids);
    if guard.len() >= 4 {
        guard.remove(0);
    }
    guard.push((probs.to_vec(), Arc::clone(&arc)));
    arc
}

#[derive(Debug, Clone)]
pub struct BeliefState {
    support: Arc<Vec<u32>>,
    weights: [f64; N_EDGES + 1],
    mass: f64,
    mode: ExecMode,
}

/// Prior over every chemistry the generator can produce.
pub fn init_belief(cfg: &GenConfig, cap: usize) -> Result<BeliefState, BeliefError> {
    let probs = cfg.missing_edge_probs()?;
    let size: usize = probs
        .iter()
        .enumerate()
        .filter(|(_, p)| **p > 0.0)
        .map(|(m, _)| connected_edge_sets(m).len() * PotionMap::COUNT * PerceptMap::COUNT)
        .sum();
    if size > cap {
        return Err(BeliefError::TooLarge { size, cap });
    }
    for (m, p) in probs.iter().enumerate() {
        if *p > 0.0 && connected_edge_sets(m).is_empty() {
            return Err(ChemistryError::Infeasible(format!("no connected edge set with {m} missing edges")).into());
        }
    }
    let weights = weight_table(&probs);
    let support = prior_support(&probs);
    let mass = mass_of(&support, &weights, ExecMode::default());
    Ok(BeliefState { support, weights, mass, mode: ExecMode::default() })
}

fn mass_of(support: &[u32], weights: &[f64; N_EDGES + 1], mode: ExecMode) -> f64 {
    par::sum_f64(mode, support, |&id| weights[12 - ((id >> 12) as u16).count_ones() as usize])
}

/// Posterior marginals, all expressed in perceptual coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefMarginals {
    /// Presence probability of each edge of the perceptual cube, indexed like
    /// latent edges with perceptual dimensions in place of axes.
    pub edge_prob: Vec<f64>,
    /// `[hue][perceptual dimension][direction]`, direction 0 = towards -1.
    pub potion_axis_prob: Vec<[[f64; 2]; 3]>,
    /// Probability that each perceptual state is the +15 vertex.
    pub plus15_vertex_prob: Vec<f64>,
    pub support_size: usize,
}

impl BeliefState {
    /// Belief concentrated on a single known chemistry.
    pub fn point_mass(chem: &Chemistry) -> Self {
        BeliefState {
            support: Arc::new(vec![chem.hypothesis_id()]),
            weights: [1.0; N_EDGES + 1],
            mass: 1.0,
            mode: ExecMode::default(),
        }
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.support
    }

    pub fn contains(&self, chem: &Chemistry) -> bool {
        self.support.binary_search(&chem.hypothesis_id()).is_ok()
    }

    #[inline]
    pub fn prior_weight_of(&self, id: u32) -> f64 {
        self.weights[12 - ((id >> 12) as u16).count_ones() as usize]
    }

    /// Posterior probability of hypothesis `id`.
    pub fn weight(&self, id: u32) -> f64 {
        if self.support.binary_search(&id).is_ok() {
            self.prior_weight_of(id) / self.mass
        } else {
            0.0
        }
    }

    pub fn total_weight(&self) -> f64 {
        par::sum_f64(self.mode, &self.support, |&id| self.prior_weight_of(id)) / self.mass
    }

    pub fn hypotheses(&self) -> impl Iterator<Item = (Chemistry, f64)> + '_ {
        self.support.iter().map(|&id| (Chemistry::from_hypothesis_id(id), self.prior_weight_of(id) / self.mass))
    }

    /// Belief after filtering by `e`; `self` is left untouched.
    pub fn updated(&self, e: &ObservationEvent) -> Result<BeliefState, BeliefError> {
        let kept = par::filter(self.mode, &self.support, |&id| consistent(id, e));
        if kept.is_empty() {
            return Err(BeliefError::EmptySupport);
        }
        let support = if kept.len() == self.support.len() { Arc::clone(&self.support) } else { Arc::new(kept) };
        let mass = mass_of(&support, &self.weights, self.mode);
        Ok(BeliefState { support, weights: self.weights, mass, mode: self.mode })
    }

    pub fn update(&mut self, e: &ObservationEvent) -> Result<(), BeliefError> {
        *self = self.updated(e)?;
        Ok(())
    }

    /// True iff applying `hue` to a stone showing `percept` is null under
    /// every surviving hypothesis.
    pub fn provably_null(&self, percept: PerceptState, hue: PotionColor) -> bool {
        !par::any(self.mode, &self.support, |&id| !null_under(id, percept, hue))
    }

    /// Systematic resample of at most `k` hypotheses, merged by observational
    /// equivalence class. Returns canonical chemistries with weights summing
    /// to 1, ordered by canonical id. With `k >= len()` the result is exact.
    pub fn planning_sample(&self, k: usize, offset: f64) -> Vec<(Chemistry, f64)> {
        let mut merged: HashMap<u32, f64> = HashMap::new();
        if self.support.len() <= k {
            for &id in self.support.iter() {
                let c = Chemistry::from_hypothesis_id(id).canonical();
                *merged.entry(c.hypothesis_id()).or_default() += self.prior_weight_of(id) / self.mass;
            }
        } else {
            let step = 1.0 / k as f64;
            let mut next = offset.clamp(0.0, 1.0 - 1e-12) * step;
            let mut acc = 0.0;
            for &id in self.support.iter() {
                acc += self.prior_weight_of(id) / self.mass;
                while next < acc {
                    let c = Chemistry::from_hypothesis_id(id).canonical();
                    *merged.entry(c.hypothesis_id()).or_default() += step;
                    next += step;
                }
                if next >= 1.0 {
                    break;
                }
            }
        }
        let mut out: Vec<(u32, f64)> = merged.into_iter().collect();
        out.sort_unstable_by_key(|(id, _)| *id);
        let total: f64 = out.iter().map(|(_, w)| w).sum();
        out.into_iter().map(|(id, w)| (Chemistry::from_hypothesis_id(id), w / total)).collect()
    }

    pub fn marginals(&self) -> BeliefMarginals {
        let t = tables();
        let chunks: Vec<&[u32]> = self.support.chunks(16_384).collect();
        let partial = par::map(self.mode, &chunks, |chunk| {
            let mut edge = [0.0f64; N_EDGES];
            let mut potion = [[[0.0f64; 2]; 3]; N_HUES];
            let mut plus15 = [0.0f64; 8];
            for &id in chunk.iter() {
                let w = self.prior_weight_of(id);
                let (mask, pm, cm) = split(id);
                for (pe, acc) in edge.iter_mut().enumerate() {
                    if mask >> t.percept_edge[cm][pe] & 1 == 1 {
                        *acc += w;
                    }
                }
                let cmap = PerceptMap::from_index(cm);
                for h in 0..N_HUES {
                    let axis = t.axis[pm][h] as usize;
                    let dim = cmap.dim_of_axis(axis);
                    let d = t.dir[pm][h] * cmap.polarity(dim);
                    potion[h][dim][(d > 0) as usize] += w;
                }
                plus15[t.percept_of[cm][7] as usize] += w;
            }
            (edge, potion, plus15)
        });
        let mut edge = [0.0f64; N_EDGES];
        let mut potion = [[[0.0f64; 2]; 3]; N_HUES];
        let mut plus15 = [0.0f64; 8];
        for (e, p, q) in partial {
            for i in 0..N_EDGES {
                edge[i] += e[i];
            }
            for h in 0..N_HUES {
                for d in 0..3 {
                    for s in 0..2 {
                        potion[h][d][s] += p[h][d][s];
                    }
                }
            }
            for i in 0..8 {
                plus15[i] += q[i];
            }
        }
        let clamp = |x: f64| (x / self.mass).clamp(0.0, 1.0);
        BeliefMarginals {
            edge_prob: edge.iter().map(|&x| clamp(x)).collect(),
            potion_axis_prob: potion.iter().map(|h| h.map(|d| d.map(clamp))).collect(),
            plus15_vertex_prob: plus15.iter().map(|&x| clamp(x)).collect(),
            support_size: self.support.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chemistry::{sample_chemistry, NullCause, StoneShape};

    fn fresh(m: usize) -> BeliefState {
        init_belief(&GenConfig::fixed_missing(m), DEFAULT_HYPOTHESIS_CAP).unwrap()
    }

    #[test]
    fn prior_size_and_normalisation() {
        let b = fresh(0);
        assert_eq!(b.len(), 2304);
        assert!((b.total_weight() - 1.0).abs() < 1e-9);
        let m = b.marginals();
        assert!(m.edge_prob.iter().all(|&p| (p - 1.0).abs() < 1e-12));
        let full = init_belief(&GenConfig::default(), DEFAULT_HYPOTHESIS_CAP).unwrap();
        assert_eq!(full.len(), 1083 * 2304);
        assert!((full.total_weight() - 1.0).abs() < 1e-9);
        assert!(matches!(
            init_belief(&GenConfig::default(), 1000),
            Err(BeliefError::TooLarge { .. })
        ));
    }

    fn red_round_to_pointy() -> ObservationEvent {
        // large blue round -> large blue pointy; rewards are consistent with
        // the identity map but the observer does not know that.
        let before = PerceptState::new([-1, 1, -1]);
        let after = PerceptState::new([-1, 1, 1]);
        ObservationEvent::Transition {
            percept_before: before,
            percept_after: after,
            reward_before: -1,
            reward_after: 1,
            hue: PotionColor::Red,
            null: false,
        }
    }

    #[test]
    fn filtering_pins_down_red() {
        let b = fresh(0);
        let e = red_round_to_pointy();
        let a = b.updated(&e).unwrap();
        assert!(a.len() < b.len());
        for (chem, _) in a.hypotheses() {
            let (dim, value) = chem.percept_effect(PotionColor::Red);
            assert_eq!(dim, 2);
            assert_eq!(value, 1);
            assert_eq!(PerceptState::new([0, 0, value]).shape(), StoneShape::Pointy);
            let (gdim, gval) = chem.percept_effect(PotionColor::Green);
            assert_eq!((gdim, gval), (2, -1));
        }
        let m = a.marginals();
        assert!((m.potion_axis_prob[0][2][1] - 1.0).abs() < 1e-12);
        assert!((a.total_weight() - 1.0).abs() < 1e-9);
        // idempotent
        let again = a.updated(&e).unwrap();
        assert_eq!(again.ids(), a.ids());
    }

    #[test]
    fn orange_fixes_yellow_direction() {
        let b = fresh(0);
        let e = ObservationEvent::Transition {
            percept_before: PerceptState::new([1, -1, 1]),
            percept_after: PerceptState::new([1, 1, 1]),
            reward_before: 1,
            reward_after: 15,
            hue: PotionColor::Orange,
            null: false,
        };
        let a = b.updated(&e).unwrap();
        for (chem, _) in a.hypotheses() {
            assert_eq!(
                chem.potion_map.direction_of(PotionColor::Yellow),
                -chem.potion_map.direction_of(PotionColor::Orange)
            );
            assert_eq!(chem.percept_effect(PotionColor::Yellow), (1, -1));
        }
    }

    #[test]
    fn empty_support_is_an_error() {
        let b = fresh(0);
        let e = ObservationEvent::Sighting { percept: PerceptState::new([1, 1, 1]), reward: 15 };
        let a = b.updated(&e).unwrap();
        let contradiction = ObservationEvent::Sighting { percept: PerceptState::new([1, 1, 1]), reward: -3 };
        assert_eq!(a.updated(&contradiction).unwrap_err(), BeliefError::EmptySupport);
    }

    #[test]
    fn true_chemistry_survives_its_own_evidence() {
        let cfg = GenConfig::default();
        let prior = init_belief(&cfg, DEFAULT_HYPOTHESIS_CAP).unwrap();
        for seed in 0..20 {
            let chem = sample_chemistry(seed, &cfg).unwrap();
            let mut b = prior.clone();
            let mut prev = b.len();
            for p in PerceptState::all().take(4) {
                b.update(&ObservationEvent::Sighting { percept: p, reward: chem.reward_of_percept(p) }).unwrap();
                for h in PotionColor::ALL {
                    let (q, cause) = chem.apply_potion_percept(p, h);
                    let e = ObservationEvent::Transition {
                        percept_before: p,
                        percept_after: q,
                        reward_before: chem.reward_of_percept(p),
                        reward_after: chem.reward_of_percept(q),
                        hue: h,
                        null: cause != NullCause::None,
                    };
                    assert!(e.consistent_with(&chem));
                    b.update(&e).unwrap();
                    assert!(b.contains(&chem));
                    assert!(b.len() <= prev);
                    prev = b.len();
                }
            }
        }
    }

    #[test]
    fn partition_mode_does_not_change_result() {
        let b = init_belief(&GenConfig::default(), DEFAULT_HYPOTHESIS_CAP).unwrap();
        let e = red_round_to_pointy();
        let p = b.clone().with_mode(ExecMode::Parallel).updated(&e).unwrap();
        let s = b.with_mode(ExecMode::Sequential).updated(&e).unwrap();
        assert_eq!(p.ids(), s.ids());
        assert_eq!(p.marginals(), s.marginals());
    }

    #[test]
    fn missing_edge_evidence_lowers_edge_marginal() {
        let b = fresh(1);
        let before = b.marginals();
        assert!(before.edge_prob.iter().all(|&p| p < 1.0));
        // red is null on a stone that is not at the red endpoint once red's
        // direction is known: only possible through a missing edge.
        let b = b.updated(&red_round_to_pointy()).unwrap();
        let e = ObservationEvent::Transition {
            percept_before: PerceptState::new([1, -1, -1]),
            percept_after: PerceptState::new([1, -1, -1]),
            reward_before: -1,
            reward_after: -1,
            hue: PotionColor::Red,
            null: true,
        };
        let a = b.updated(&e).unwrap();
        let m = a.marginals();
        // percept edge along shape (dim 2) at color=+1, size=-1: index 2*4 + 0b10
        assert!(m.edge_prob[10] < 1e-12);
    }
}
