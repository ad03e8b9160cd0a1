//! Synchronous advantage actor-critic over a batch of environments.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::environment::{EnvConfig, EnvError, Environment};
use crate::neural::checkpoint::{self, CheckpointError};
use crate::neural::{
    memory_entry, sample_action, AgentState, Epn, GradError, Graph, Real, SampleMode, ShapeError, Tensor,
};
use crate::par;

use super::a2c::{a2c_step_loss, clip_global_norm, linear_schedule, n_step_returns_masked, Adam, LossTerms};
use super::config::{EvalConfig, TrainConfig};
use super::eval::{evaluate, reward_input, EvalError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("non-finite loss at phase {phase} update {update}: policy {policy}, value {value}, entropy {entropy}")]
    NonFinite { phase: usize, update: u64, policy: f64, value: f64, entropy: f64 },
    #[error("invalid config: {0}")]
    Config(String),
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub phase: usize,
    pub update: u64,
    pub env_steps: u64,
    pub loss: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    /// Mean score of training episodes finished during this update.
    pub train_score: Option<f64>,
    pub eval_score: Option<f64>,
}

pub const METRICS_HEADER: &str =
    "phase\tupdate\tenv_steps\tloss\tpolicy_loss\tvalue_loss\tentropy\tgrad_norm\tlr\tentropy_coef\tgamma\ttrain_score\teval_score";

impl MetricsRow {
    pub fn to_tsv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::new();
        write!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.phase,
            self.update,
            self.env_steps,
            self.loss,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.grad_norm,
            self.lr,
            self.entropy_coef,
            self.gamma,
            opt(self.train_score),
            opt(self.eval_score)
        )
        .expect("write to string");
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Epn,
    pub metrics: Vec<MetricsRow>,
    pub episodes: usize,
    pub checkpoints: Vec<PathBuf>,
}

struct Worker {
    env: Environment,
    state: AgentState,
    seeds: ChaCha8Rng,
    rng: ChaCha8Rng,
}

struct UnrollResult {
    grads: Vec<Tensor>,
    terms: LossTerms,
    loss: f64,
    finished: Vec<i32>,
}

impl Worker {
    fn new(cfg: &TrainConfig, env_cfg: &EnvConfig, net: &Epn, i: usize) -> Result<Self, TrainError> {
        let mix = cfg.seed ^ (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut seeds = ChaCha8Rng::seed_from_u64(mix);
        let rng = ChaCha8Rng::seed_from_u64(mix.rotate_left(17) ^ 0x5851_f42d_4c95_7f2d);
        let env = Environment::new(env_cfg, seeds.gen())?;
        Ok(Worker { env, state: net.initial_state(), seeds, rng })
    }

    fn unroll(
        &mut self,
        net: &Epn,
        cfg: &TrainConfig,
        env_cfg: &EnvConfig,
        gamma: f64,
        beta_e: f64,
        scale: f64,
    ) -> Result<UnrollResult, TrainError> {
        let mut g = Graph::new();
        let mut h = g.constant(self.state.h.clone());
        let mut c = g.constant(self.state.c.clone());
        let mut outs = Vec::with_capacity(cfg.unroll);
        let (mut rewards, mut dones, mut values) = (Vec::new(), Vec::new(), Vec::new());
        let mut finished = Vec::new();
        let mem_mode = env_cfg.encoding.memory;
        for _ in 0..cfg.unroll {
            let obs: Vec<Real> = self.env.observation().iter().map(|&v| v as Real).collect();
            let s = &self.state;
            let v = net.forward_in(&mut g, &obs, &s.memory, s.prev_action, s.prev_reward, h, c)?;
            let a = sample_action(g.value(v.logits).data(), None, &mut self.rng, SampleMode::Sample);
            let record = self.env.step_index(a)?;
            if cfg.memory_enabled {
                if let Some(e) = memory_entry(&record, self.env.post_action_observation(), mem_mode, net.dims.n_actions) {
                    self.state.memory.push(e);
                }
            }
            self.state.prev_action = Some(a);
            self.state.prev_reward = reward_input(&record);
            rewards.push(record.total_reward());
            values.push(g.value(v.value).item() as f64);
            outs.push((v.logits, v.value, a));
            let done = self.env.is_finished();
            dones.push(done);
            if done {
                finished.push(self.env.score());
                self.env = Environment::new(env_cfg, self.seeds.gen())?;
                self.state.reset();
                h = g.constant(self.state.h.clone());
                c = g.constant(self.state.c.clone());
            } else {
                h = v.h;
                c = v.c;
            }
        }
        self.state.h = g.value(h).clone();
        self.state.c = g.value(c).clone();
        let bootstrap = if *dones.last().unwrap_or(&true) {
            0.0
        } else {
            let obs: Vec<Real> = self.env.observation().iter().map(|&v| v as Real).collect();
            net.step(&mut self.state.clone(), &obs, false)?.value as f64
        };
        let (returns, adv) = n_step_returns_masked(&rewards, &dones, &values, bootstrap, gamma);
        let mut terms = LossTerms::default();
        let mut total = None;
        for (t, &(logits, value, a)) in outs.iter().enumerate() {
            let (l, lt) = a2c_step_loss(&mut g, logits, value, a, adv[t], returns[t], cfg.value_coef, beta_e, scale)?;
            terms.policy += lt.policy * scale;
            terms.value += lt.value * scale;
            terms.entropy += lt.entropy * scale;
            total = Some(match total {
                Some(acc) => g.add(acc, l)?,
                None => l,
            });
        }
        let loss = total.expect("unroll has at least one step");
        let loss_value = g.value(loss).item() as f64;
        let mut grads = net.params.zeros_like();
        g.backward(loss)?.accumulate_into(&mut grads);
        Ok(UnrollResult { grads, terms, loss: loss_value, finished })
    }
}

/// Appends rows to a tab-separated metrics file.
pub struct MetricsLog {
    file: std::io::BufWriter<std::fs::File>,
}

impl MetricsLog {
    pub fn create(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "{METRICS_HEADER}")?;
        Ok(MetricsLog { file })
    }

    pub fn append(&mut self, row: &MetricsRow) -> std::io::Result<()> {
        writeln!(self.file, "{}", row.to_tsv())?;
        self.file.flush()
    }
}

/// Trains a freshly initialised network. With `out_dir`, writes
/// `metrics.tsv` and checkpoints there.
pub fn train(cfg: &TrainConfig, env_cfg: &EnvConfig, out_dir: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    let dims = cfg.net.dims(env_cfg);
    let net = Epn::new(dims, cfg.seed)?;
    train_from(net, cfg, env_cfg, out_dir)
}

/// Continues training `net`: the main phase, then the finetune phase if
/// configured.
pub fn train_from(
    mut net: Epn,
    cfg: &TrainConfig,
    env_cfg: &EnvConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate().map_err(|e| TrainError::Config(e.to_string()))?;
    env_cfg.validate()?;
    let mut log = match out_dir {
        Some(d) => {
            std::fs::create_dir_all(d)?;
            Some(MetricsLog::create(d.join("metrics.tsv"))?)
        }
        None => None,
    };
    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let mut episodes = 0;
    let mut env_steps = 0u64;
    let phases = [(cfg.total_steps, cfg.gamma), (cfg.finetune_steps, cfg.finetune_gamma)];
    for (phase, &(steps, gamma)) in phases.iter().enumerate() {
        let total = cfg.updates_for(steps);
        if total == 0 {
            continue;
        }
        let mut workers =
            (0..cfg.batch).map(|i| Worker::new(cfg, env_cfg, &net, i + phase * cfg.batch)).collect::<Result<Vec<_>, _>>()?;
        let mut adam = Adam::new(net.params.values());
        let scale = 1.0 / (cfg.batch * cfg.unroll) as f64;
        for update in 0..total {
            let lr = linear_schedule(cfg.learning_rate, cfg.learning_rate_final, update, total);
            let beta_e = linear_schedule(cfg.entropy_coef, cfg.entropy_coef_final, update, total);
            let results = par::map_mut(cfg.exec, &mut workers, |w| w.unroll(&net, cfg, env_cfg, gamma, beta_e, scale));
            let mut grads = net.params.zeros_like();
            let mut terms = LossTerms::default();
            let mut loss = 0.0;
            let mut finished = Vec::new();
            for r in results {
                let r = r?;
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    acc.add_assign(g);
                }
                terms.policy += r.terms.policy;
                terms.value += r.terms.value;
                terms.entropy += r.terms.entropy;
                loss += r.loss;
                finished.extend(r.finished);
            }
            if !loss.is_finite() {
                return Err(TrainError::NonFinite {
                    phase,
                    update,
                    policy: terms.policy,
                    value: terms.value,
                    entropy: terms.entropy,
                });
            }
            let grad_norm = clip_global_norm(&mut grads, cfg.max_grad_norm);
            debug_assert!(super::a2c::global_norm(&grads) <= cfg.max_grad_norm * (1.0 + 1e-9));
            adam.update(net.params.values_mut(), &grads, lr);
            env_steps += (cfg.batch * cfg.unroll) as u64;
            episodes += finished.len();
            let train_score = (!finished.is_empty())
                .then(|| finished.iter().map(|&s| s as f64).sum::<f64>() / finished.len() as f64);
            let last = update + 1 == total;
            let eval_score = if cfg.eval_every > 0 && ((update + 1) % cfg.eval_every == 0 || last) {
                let ec = EvalConfig {
                    n_episodes: cfg.eval_episodes,
                    memory_enabled: cfg.memory_enabled,
                    seed: cfg.seed.wrapping_add(1_000_003),
                    exec: cfg.exec,
                    ..EvalConfig::default()
                };
                Some(evaluate(&net, &ec, env_cfg)?.0.overall.mean)
            } else {
                None
            };
            let row = MetricsRow {
                phase,
                update,
                env_steps,
                loss,
                policy_loss: terms.policy,
                value_loss: terms.value,
                entropy: terms.entropy,
                grad_norm,
                lr,
                entropy_coef: beta_e,
                gamma,
                train_score,
                eval_score,
            };
            if let Some(l) = log.as_mut() {
                l.append(&row)?;
            }
            metrics.push(row);
            if let Some(d) = out_dir {
                if cfg.checkpoint_every > 0 && (update + 1) % cfg.checkpoint_every == 0 && !last {
                    let p = d.join(format!("checkpoint-p{phase}-u{:06}.bin", update + 1));
                    checkpoint::save(&net, &p)?;
                    checkpoints.push(p);
                }
            }
        }
        if let Some(d) = out_dir {
            let p = d.join(format!("checkpoint-p{phase}-final.bin"));
            checkpoint::save(&net, &p)?;
            checkpoints.push(p);
        }
    }
    if let Some(d) = out_dir {
        let p = d.join("final.bin");
        checkpoint::save(&net, &p)?;
        checkpoints.push(p);
    }
    Ok(TrainOutcome { net, metrics, episodes, checkpoints })
}
