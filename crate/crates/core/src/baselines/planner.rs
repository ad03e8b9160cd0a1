//! Optimal play under a known chemistry.
//!
//! Stones are independent given the potions and steps they consume, and
//! under a known chemistry a useful plan never produces a null transition.
//! Each stone's options are therefore "leave it" or "walk to a vertex with
//! positive reward and deposit it", and every walk can be shortened to a
//! simple path whose potion usage is no larger. For each edge mask and start
//! vertex we precompute the simple paths to every target, keep the ones with
//! Pareto-minimal potion usage, and search the cross product of per-stone
//! options under the potion and step budgets. The result is exact for any
//! instance size.

use std::sync::OnceLock;

use crate::chemistry::{reward_of, Chemistry, LatentVertex, N_HUES};

use super::belief::tables;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanStone {
    pub vertex: LatentVertex,
    pub deposited: bool,
}

/// Best achievable deposit total and the fewest steps that achieve it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Plan {
    pub value: i32,
    pub steps: u32,
}

/// A simple path, with potion usage per (axis, direction) slot
/// `axis * 2 + (direction > 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PathOption {
    target: u8,
    cost: [u8; 6],
    len: u8,
}

fn path_table() -> &'static Vec<[Vec<PathOption>; 8]> {
    static T: OnceLock<Vec<[Vec<PathOption>; 8]>> = OnceLock::new();
    T.get_or_init(|| (0..4096u16).map(build_for_mask).collect())
}

fn build_for_mask(mask: u16) -> [Vec<PathOption>; 8] {
    let t = tables();
    std::array::from_fn(|start| {
        let mut found: Vec<PathOption> = Vec::new();
        let mut cost = [0u8; 6];
        dfs(t, mask, start as u8, 1 << start, &mut cost, 0, &mut found);
        // keep targets with positive reward, Pareto-minimal per target
        let mut kept: Vec<PathOption> = Vec::new();
        for o in found.iter().filter(|o| t.reward[o.target as usize] > 0) {
            let dominated = found.iter().any(|p| {
                p.target == o.target && p.cost != o.cost && p.cost.iter().zip(&o.cost).all(|(a, b)| a <= b)
            });
            if !dominated && !kept.contains(o) {
                kept.push(*o);
            }
        }
        kept
    })
}

fn dfs(
    t: &super::belief::Tables,
    mask: u16,
    v: u8,
    visited: u8,
    cost: &mut [u8; 6],
    len: u8,
    out: &mut Vec<PathOption>,
) {
    out.push(PathOption { target: v, cost: *cost, len });
    for axis in 0..3 {
        if mask >> t.edge[v as usize][axis] & 1 == 0 {
            continue;
        }
        let w = v ^ (1 << (2 - axis));
        if visited >> w & 1 == 1 {
            continue;
        }
        // moving towards +1 iff the bit is currently 0
        let slot = axis * 2 + (v >> (2 - axis) & 1 == 0) as usize;
        cost[slot] += 1;
        dfs(t, mask, w, visited | 1 << w, cost, len + 1, out);
        cost[slot] -= 1;
    }
}

/// Exact optimum of the deposit total for the rest of a trial.
pub fn plan(chem: &Chemistry, stones: &[PlanStone], counts: &[u8; N_HUES], steps_left: u32) -> Plan {
    let verts: Vec<u8> = stones.iter().filter(|s| !s.deposited).map(|s| s.vertex.id()).collect();
    plan_latent(chem.edges.mask(), slot_budget(chem, counts), &verts, steps_left)
}

/// Potions available per (axis, direction) slot.
pub(crate) fn slot_budget(chem: &Chemistry, counts: &[u8; N_HUES]) -> [u8; 6] {
    let mut budget = [0u8; 6];
    for axis in 0..3 {
        for (k, d) in [-1i8, 1].into_iter().enumerate() {
            budget[axis * 2 + k] = counts[chem.potion_map.hue_for(axis, d).index()];
        }
    }
    budget
}

pub(crate) fn plan_latent(mask: u16, mut budget: [u8; 6], verts: &[u8], steps_left: u32) -> Plan {
    let table = &path_table()[mask as usize];
    let options: Vec<&[PathOption]> = verts.iter().map(|&v| table[v as usize].as_slice()).collect();
    let mut best = Plan { value: 0, steps: 0 };
    search(&options, 0, &mut budget, steps_left, 0, 0, &mut best);
    best
}

fn search(
    options: &[&[PathOption]],
    i: usize,
    budget: &mut [u8; 6],
    steps_left: u32,
    value: i32,
    used: u32,
    best: &mut Plan,
) {
    if i == options.len() {
        if value > best.value || (value == best.value && used < best.steps) {
            *best = Plan { value, steps: used };
        }
        return;
    }
    // leave this stone
    search(options, i + 1, budget, steps_left, value, used, best);
    for o in options[i] {
        let need = o.len as u32 + 1;
        if need > steps_left || o.cost.iter().zip(budget.iter()).any(|(c, b)| c > b) {
            continue;
        }
        for k in 0..6 {
            budget[k] -= o.cost[k];
        }
        let r = reward_of(LatentVertex::from_id(o.target));
        search(options, i + 1, budget, steps_left - need, value + r, used + need, best);
        for k in 0..6 {
            budget[k] += o.cost[k];
        }
    }
}

/// Maximal achievable sum of deposited rewards under full knowledge.
pub fn hypothesis_value(chem: &Chemistry, stones: &[PlanStone], counts: &[u8; N_HUES], steps_left: u32) -> f64 {
    plan(chem, stones, counts, steps_left).value as f64
}
