//! Returns, the actor-critic loss, gradient clipping, Adam and schedules.

use crate::neural::{Graph, Real, ShapeError, Tensor, Var};

/// Discounted n-step returns and advantages for one unroll.
///
/// `R_t = r_t + gamma * R_{t+1}` with `R_T = bootstrap`.
pub fn n_step_returns(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64) -> (Vec<f64>, Vec<f64>) {
    let dones = vec![false; rewards.len()];
    n_step_returns_masked(rewards, &dones, values, bootstrap, gamma)
}

/// As [`n_step_returns`], with the return cut after every step whose
/// `dones` flag is set (episode end).
pub fn n_step_returns_masked(
    rewards: &[f64],
    dones: &[bool],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(rewards.len(), values.len());
    assert_eq!(rewards.len(), dones.len());
    let mut returns = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            next = 0.0;
        }
        next = rewards[t] + gamma * next;
        returns[t] = next;
    }
    let adv = returns.iter().zip(values).map(|(r, v)| r - v).collect();
    (returns, adv)
}

/// Scalar loss terms of one step, kept for logging.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

/// Adds one step's contribution to the actor-critic loss inside `g`:
/// `scale * (-log pi(a) * adv + beta_v * (R - V)^2 - beta_e * H(pi))`.
/// The advantage is a constant, so no gradient flows through it.
#[allow(clippy::too_many_arguments)]
pub fn a2c_step_loss(
    g: &mut Graph,
    logits: Var,
    value: Var,
    action: usize,
    advantage: f64,
    ret: f64,
    beta_v: f64,
    beta_e: f64,
    scale: f64,
) -> Result<(Var, LossTerms), ShapeError> {
    let logp = g.log_softmax_rows(logits);
    let p = g.softmax_rows(logits);
    let la = g.pick(logp, 0, action)?;
    let pg = g.scale(la, (-advantage * scale) as Real);
    let plogp = g.mul(p, logp)?;
    let neg_h = g.sum(plogp);
    let ent = g.scale(neg_h, (beta_e * scale) as Real);
    let r = g.constant(Tensor::scalar(ret as Real));
    let err = g.sub(r, value)?;
    let sq = g.mul(err, err)?;
    let vl = g.scale(sq, (beta_v * scale) as Real);
    let a = g.add(pg, vl)?;
    let loss = g.add(a, ent)?;
    let e = g.value(err).item() as f64;
    let terms = LossTerms {
        policy: -(g.value(la).item() as f64) * advantage,
        value: e * e,
        entropy: -(g.value(neg_h).item() as f64),
    };
    Ok((loss, terms))
}

/// Mean loss over a batch of one-row logits, values and targets.
pub fn a2c_loss(
    g: &mut Graph,
    steps: &[(Var, Var, usize, f64, f64)],
    beta_v: f64,
    beta_e: f64,
) -> Result<Var, ShapeError> {
    let scale = 1.0 / steps.len().max(1) as f64;
    let mut total: Option<Var> = None;
    for &(logits, value, a, adv, ret) in steps {
        let (l, _) = a2c_step_loss(g, logits, value, a, adv, ret, beta_v, beta_e, scale)?;
        total = Some(match total {
            Some(t) => g.add(t, l)?,
            None => l,
        });
    }
    Ok(total.unwrap_or_else(|| g.constant(Tensor::scalar(0.0))))
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let n = global_norm(grads);
    if n > max_norm && n > 0.0 {
        let s = (max_norm / n) as Real;
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    n
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(shapes: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = shapes.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                let gi = g.data()[i] as f64;
                let mi = self.beta1 * m.data()[i] as f64 + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] as f64 + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi as Real;
                v.data_mut()[i] = vi as Real;
                let step = lr * (mi / b1t) / ((vi / b2t).sqrt() + self.eps);
                p.data_mut()[i] -= step as Real;
            }
        }
    }
}

/// Linear interpolation from `start` at update 0 to `end` at the last of
/// `total` updates.
pub fn linear_schedule(start: f64, end: f64, update: u64, total: u64) -> f64 {
    if total <= 1 {
        return end;
    }
    let frac = (update.min(total - 1)) as f64 / (total - 1) as f64;
    if frac >= 1.0 {
        end
    } else {
        start + (end - start) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_examples() {
        let (r, _) = n_step_returns(&[0.0; 4], &[0.0; 4], 0.0, 0.7);
        assert_eq!(r, vec![0.0; 4]);
        let (r, a) = n_step_returns(&[1.0, 2.0, 3.0], &[0.5; 3], 9.0, 0.0);
        assert_eq!(r, vec![1.0, 2.0, 3.0]);
        assert_eq!(a, vec![0.5, 1.5, 2.5]);
        let (r, _) = n_step_returns(&[1.0, 1.0, 1.0], &[0.0; 3], 0.0, 0.7);
        let want = [2.19, 1.7, 1.0];
        for (x, y) in r.iter().zip(want) {
            assert!((x - y).abs() < 1e-12);
        }
        let (r, _) = n_step_returns_masked(&[1.0, 1.0], &[true, false], &[0.0; 2], 5.0, 0.5);
        assert_eq!(r, vec![1.0, 3.5]);
    }

    #[test]
    fn schedule_endpoints() {
        assert_eq!(linear_schedule(0.1, 0.0, 0, 10), 0.1);
        assert_eq!(linear_schedule(0.1, 0.0, 9, 10), 0.0);
        assert_eq!(linear_schedule(7.5e-4, 1e-5, 9, 10), 1e-5);
        assert!(linear_schedule(1.0, 0.0, 3, 10) > linear_schedule(1.0, 0.0, 4, 10));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Tensor::filled(10, 10, 50.0)];
        let before = clip_global_norm(&mut g, 100.0);
        assert_eq!(before, 500.0);
        assert!(global_norm(&g) <= 100.0 + 1e-9);
    }

    #[test]
    fn uniform_policy_zero_terms_gives_zero_loss() {
        let mut g = Graph::new();
        let logits = g.leaf(Tensor::zeros(1, 22));
        let value = g.leaf(Tensor::scalar(0.0));
        let loss = a2c_loss(&mut g, &[(logits, value, 3, 0.0, 0.0)], 0.5, 0.0).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn entropy_bonus_favours_uniform() {
        let eval = |logits: Tensor| {
            let mut g = Graph::new();
            let l = g.leaf(logits);
            let v = g.leaf(Tensor::scalar(0.0));
            let loss = a2c_loss(&mut g, &[(l, v, 0, 0.0, 0.0)], 0.5, 0.1).unwrap();
            g.value(loss).item()
        };
        let mut peaked = Tensor::zeros(1, 3);
        peaked.set(0, 0, 10.0);
        assert!(eval(Tensor::zeros(1, 3)) < eval(peaked));
    }
}
