//! The episodic planner network.
//!
//! Every memory row is concatenated with the current observation, embedded,
//! passed through one pre-norm self-attention block with a rectified
//! residual, then a row-wise MLP, and max-pooled feature-wise into a fixed
//! readout. The readout joins the encoded observation, the previous action
//! and reward as LSTM input; policy logits and value are linear in the
//! LSTM output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::environment::runner::UnitActivations;
use crate::environment::EncodingConfig;

use super::graph::{Graph, Var};
use super::memory::{entry_width, EpisodicMemory};
use super::params::ParamStore;
use super::tensor::{Real, ShapeError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpnDims {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub mem_width: usize,
    pub enc_hidden: usize,
    pub enc_out: usize,
    pub embed: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub mlp: usize,
    pub lstm: usize,
}

impl Default for EpnDims {
    fn default() -> Self {
        EpnDims {
            obs_dim: 21,
            n_actions: 22,
            mem_width: 17,
            enc_hidden: 32,
            enc_out: 32,
            embed: 256,
            heads: 4,
            head_dim: 64,
            mlp: 64,
            lstm: 256,
        }
    }
}

impl EpnDims {
    /// Full-size network adapted to an encoding configuration.
    pub fn for_encoding(enc: &EncodingConfig) -> Self {
        let obs_dim = enc.input.obs_dim();
        let n_actions = enc.output.n_actions();
        EpnDims { obs_dim, n_actions, mem_width: entry_width(enc.memory, obs_dim, n_actions), ..EpnDims::default() }
    }

    /// Hidden widths divided by `k`, keeping input and output sizes.
    pub fn shrunk(self, k: usize) -> Self {
        let d = |x: usize| (x / k).max(1);
        EpnDims {
            enc_hidden: d(self.enc_hidden),
            enc_out: d(self.enc_out),
            embed: d(self.embed),
            head_dim: d(self.head_dim),
            mlp: d(self.mlp),
            lstm: d(self.lstm),
            ..self
        }
    }

    pub fn row_width(&self) -> usize {
        self.mem_width + self.obs_dim
    }

    pub fn lstm_input(&self) -> usize {
        self.enc_out + self.n_actions + 1 + self.mlp
    }

    pub fn validate(&self) -> Result<(), ShapeError> {
        if self.heads * self.head_dim != self.embed {
            return Err(ShapeError::mismatch("attention", "heads * head_dim == embed", format!("{}*{} vs {}", self.heads, self.head_dim, self.embed)));
        }
        let dims = [self.obs_dim, self.n_actions, self.mem_width, self.enc_hidden, self.enc_out, self.embed, self.heads, self.head_dim, self.mlp, self.lstm];
        if dims.contains(&0) {
            return Err(ShapeError::Other("network dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter ids of each layer within the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    enc_w1: usize,
    enc_b1: usize,
    enc_w2: usize,
    enc_b2: usize,
    mem_w: usize,
    mem_b: usize,
    ln_g: usize,
    ln_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    mlp_w1: usize,
    mlp_b1: usize,
    mlp_w2: usize,
    mlp_b2: usize,
    lstm_w: usize,
    lstm_b: usize,
    pi_w: usize,
    pi_b: usize,
    v_w: usize,
    v_b: usize,
}

/// Parameter names in registration order, which is also the checkpoint order.
pub const PARAM_NAMES: [&str; 22] = [
    "encoder.w1", "encoder.b1", "encoder.w2", "encoder.b2",
    "memory.embed.w", "memory.embed.b", "attention.ln.gain", "attention.ln.bias",
    "attention.wq", "attention.wk", "attention.wv", "attention.wo",
    "memory.mlp.w1", "memory.mlp.b1", "memory.mlp.w2", "memory.mlp.b2",
    "lstm.w", "lstm.b", "policy.w", "policy.b", "value.w", "value.b",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Epn {
    pub dims: EpnDims,
    pub params: ParamStore,
    layout: Layout,
}

/// Recurrent state carried across steps of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub h: Tensor,
    pub c: Tensor,
    pub memory: EpisodicMemory,
    pub prev_action: Option<usize>,
    pub prev_reward: Real,
}

impl AgentState {
    pub fn new(dims: &EpnDims) -> Self {
        AgentState {
            h: Tensor::zeros(1, dims.lstm),
            c: Tensor::zeros(1, dims.lstm),
            memory: EpisodicMemory::new(dims.mem_width),
            prev_action: None,
            prev_reward: 0.0,
        }
    }

    pub fn reset(&mut self) {
        self.h.data_mut().fill(0.0);
        self.c.data_mut().fill(0.0);
        self.memory.clear();
        self.prev_action = None;
        self.prev_reward = 0.0;
    }
}

/// Graph handles produced by one forward step.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub logits: Var,
    pub value: Var,
    pub h: Var,
    pub c: Var,
    pub readout: Var,
    /// Memory rows joined with the observation, embedded.
    pub x: Option<Var>,
    /// Attention output before the residual.
    pub phi: Option<Var>,
    pub s_star: Option<Var>,
}

/// Intermediate values of one forward step.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub rows: Tensor,
    pub x: Option<Tensor>,
    pub phi: Option<Tensor>,
    pub s_star: Option<Tensor>,
    pub readout: Tensor,
    pub lstm_h: Tensor,
    pub logits: Tensor,
    pub value: Real,
}

impl ForwardTrace {
    pub fn activations(&self) -> UnitActivations {
        UnitActivations {
            lstm_h: self.lstm_h.data().iter().map(|&v| v as f64).collect(),
            transformer_pooled: self.readout.data().iter().map(|&v| v as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub logits: Vec<Real>,
    pub value: Real,
    pub trace: Option<ForwardTrace>,
}

impl Epn {
    pub fn new(dims: EpnDims, seed: u64) -> Result<Self, ShapeError> {
        dims.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let zeros = |n: usize| Tensor::zeros(1, n);
        let d = &dims;
        let enc_w1 = p.add_uniform(PARAM_NAMES[0], d.obs_dim, d.enc_hidden, &mut rng);
        let enc_b1 = p.add(PARAM_NAMES[1], zeros(d.enc_hidden));
        let enc_w2 = p.add_uniform(PARAM_NAMES[2], d.enc_hidden, d.enc_out, &mut rng);
        let enc_b2 = p.add(PARAM_NAMES[3], zeros(d.enc_out));
        let mem_w = p.add_uniform(PARAM_NAMES[4], d.row_width(), d.embed, &mut rng);
        let mem_b = p.add(PARAM_NAMES[5], zeros(d.embed));
        let ln_g = p.add(PARAM_NAMES[6], Tensor::filled(1, d.embed, 1.0));
        let ln_b = p.add(PARAM_NAMES[7], zeros(d.embed));
        let wq = p.add_uniform(PARAM_NAMES[8], d.embed, d.embed, &mut rng);
        let wk = p.add_uniform(PARAM_NAMES[9], d.embed, d.embed, &mut rng);
        let wv = p.add_uniform(PARAM_NAMES[10], d.embed, d.embed, &mut rng);
        let wo = p.add_uniform(PARAM_NAMES[11], d.embed, d.embed, &mut rng);
        let mlp_w1 = p.add_uniform(PARAM_NAMES[12], d.embed, d.mlp, &mut rng);
        let mlp_b1 = p.add(PARAM_NAMES[13], zeros(d.mlp));
        let mlp_w2 = p.add_uniform(PARAM_NAMES[14], d.mlp, d.mlp, &mut rng);
        let mlp_b2 = p.add(PARAM_NAMES[15], zeros(d.mlp));
        let lstm_w = p.add_uniform(PARAM_NAMES[16], d.lstm_input() + d.lstm, 4 * d.lstm, &mut rng);
        let lstm_b = p.add(PARAM_NAMES[17], zeros(4 * d.lstm));
        let pi_w = p.add_uniform(PARAM_NAMES[18], d.lstm, d.n_actions, &mut rng);
        let pi_b = p.add(PARAM_NAMES[19], zeros(d.n_actions));
        let v_w = p.add_uniform(PARAM_NAMES[20], d.lstm, 1, &mut rng);
        let v_b = p.add(PARAM_NAMES[21], zeros(1));
        let layout = Layout {
            enc_w1, enc_b1, enc_w2, enc_b2, mem_w, mem_b, ln_g, ln_b, wq, wk, wv, wo,
            mlp_w1, mlp_b1, mlp_w2, mlp_b2, lstm_w, lstm_b, pi_w, pi_b, v_w, v_b,
        };
        Ok(Epn { dims, params: p, layout })
    }

    /// Rebuilds a network around loaded parameters; names and shapes must
    /// match a freshly initialised one.
    pub fn from_params(dims: EpnDims, params: ParamStore) -> Result<Self, ShapeError> {
        let fresh = Epn::new(dims, 0)?;
        if params.len() != fresh.params.len() {
            return Err(ShapeError::mismatch("parameters", fresh.params.len(), params.len()));
        }
        for ((n0, t0), (n1, t1)) in fresh.params.iter().zip(params.iter()) {
            if n0 != n1 || t0.shape() != t1.shape() {
                return Err(ShapeError::mismatch(format!("parameter {n0}"), format!("{n0} {:?}", t0.shape()), format!("{n1} {:?}", t1.shape())));
            }
        }
        Ok(Epn { dims, params, layout: fresh.layout })
    }

    pub fn initial_state(&self) -> AgentState {
        AgentState::new(&self.dims)
    }

    fn affine(&self, g: &mut Graph, x: Var, w: usize, b: usize) -> Result<Var, ShapeError> {
        let wv = g.param(&self.params, w);
        let bv = g.param(&self.params, b);
        let y = g.matmul(x, wv)?;
        g.add_row(y, bv)
    }

    /// Memory rows joined with the observation, one row per entry.
    pub fn memory_rows(&self, memory: &EpisodicMemory, obs: &[Real]) -> Result<Tensor, ShapeError> {
        let d = &self.dims;
        if memory.width() != d.mem_width {
            return Err(ShapeError::mismatch("memory entry", d.mem_width, memory.width()));
        }
        let mut rows = Tensor::zeros(memory.len(), d.row_width());
        for (i, e) in memory.entries().enumerate() {
            let r = rows.row_slice_mut(i);
            r[..d.mem_width].copy_from_slice(e);
            r[d.mem_width..].copy_from_slice(obs);
        }
        Ok(rows)
    }

    /// Attention pathway over `rows` (a `k x row_width` constant).
    fn memory_pathway(&self, g: &mut Graph, rows: Var) -> Result<(Var, Option<(Var, Var, Var)>), ShapeError> {
        let d = self.dims;
        let l = self.layout;
        if g.value(rows).rows() == 0 {
            let z = g.constant(Tensor::zeros(1, d.mlp));
            return Ok((z, None));
        }
        let x = self.affine(g, rows, l.mem_w, l.mem_b).map_err(|e| stage("memory embedding", e))?;
        let n = g.layer_norm(x);
        let gain = g.param(&self.params, l.ln_g);
        let bias = g.param(&self.params, l.ln_b);
        let n = g.mul_row(n, gain)?;
        let n = g.add_row(n, bias)?;
        let (wq, wk, wv, wo) = (
            g.param(&self.params, l.wq),
            g.param(&self.params, l.wk),
            g.param(&self.params, l.wv),
            g.param(&self.params, l.wo),
        );
        let q = g.matmul(n, wq)?;
        let k = g.matmul(n, wk)?;
        let v = g.matmul(n, wv)?;
        let scale = 1.0 / (d.head_dim as Real).sqrt();
        let mut heads = Vec::with_capacity(d.heads);
        for h in 0..d.heads {
            let (a, b) = (h * d.head_dim, (h + 1) * d.head_dim);
            let qh = g.slice_cols(q, a, b)?;
            let kh = g.slice_cols(k, a, b)?;
            let vh = g.slice_cols(v, a, b)?;
            let kt = g.transpose(kh);
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, scale);
            let p = g.softmax_rows(s);
            heads.push(g.matmul(p, vh)?);
        }
        let cat = g.concat_cols(&heads)?;
        let phi = g.matmul(cat, wo)?;
        let res = g.add(x, phi)?;
        let s_star = g.relu(res);
        let m = self.affine(g, s_star, l.mlp_w1, l.mlp_b1).map_err(|e| stage("memory mlp", e))?;
        let m = g.elu(m);
        let m = self.affine(g, m, l.mlp_w2, l.mlp_b2)?;
        Ok((g.max_pool_rows(m), Some((x, phi, s_star))))
    }

    /// One step inside `g`. `h` and `c` are the incoming LSTM state.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_in(
        &self,
        g: &mut Graph,
        obs: &[Real],
        memory: &EpisodicMemory,
        prev_action: Option<usize>,
        prev_reward: Real,
        h: Var,
        c: Var,
    ) -> Result<StepVars, ShapeError> {
        let d = self.dims;
        let l = self.layout;
        if obs.len() != d.obs_dim {
            return Err(ShapeError::mismatch("observation", d.obs_dim, obs.len()));
        }
        if let Some(a) = prev_action {
            if a >= d.n_actions {
                return Err(ShapeError::mismatch("previous action", format!("< {}", d.n_actions), a));
            }
        }
        let o = g.constant(Tensor::row(obs));
        let e = self.affine(g, o, l.enc_w1, l.enc_b1).map_err(|e| stage("encoder", e))?;
        let e = g.elu(e);
        let enc = self.affine(g, e, l.enc_w2, l.enc_b2)?;
        let rows = g.constant(self.memory_rows(memory, obs)?);
        let (readout, inner) = self.memory_pathway(g, rows)?;
        let mut extra = vec![0.0; d.n_actions + 1];
        if let Some(a) = prev_action {
            extra[a] = 1.0;
        }
        extra[d.n_actions] = prev_reward;
        let extra = g.constant(Tensor::row(&extra));
        let input = g.concat_cols(&[enc, extra, readout, h]).map_err(|e| stage("lstm input", e))?;
        let z = self.affine(g, input, l.lstm_w, l.lstm_b).map_err(|e| stage("lstm", e))?;
        let n = d.lstm;
        let zi = g.slice_cols(z, 0, n)?;
        let zf = g.slice_cols(z, n, 2 * n)?;
        let zg = g.slice_cols(z, 2 * n, 3 * n)?;
        let zo = g.slice_cols(z, 3 * n, 4 * n)?;
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let gg = g.tanh(zg);
        let o = g.sigmoid(zo);
        let fc = g.mul(f, c).map_err(|e| stage("lstm cell", e))?;
        let ig = g.mul(i, gg)?;
        let c2 = g.add(fc, ig)?;
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc)?;
        let logits = self.affine(g, h2, l.pi_w, l.pi_b)?;
        let value = self.affine(g, h2, l.v_w, l.v_b)?;
        let (x, phi, s_star) = match inner {
            Some((x, p, s)) => (Some(x), Some(p), Some(s)),
            None => (None, None, None),
        };
        Ok(StepVars { logits, value, h: h2, c: c2, readout, x, phi, s_star })
    }

    /// Forward step without gradients. Advances the LSTM state in `state`
    /// but leaves memory and previous action to the caller.
    pub fn step(&self, state: &mut AgentState, obs: &[Real], record: bool) -> Result<StepOutput, ShapeError> {
        let mut g = Graph::new();
        let h = g.constant(state.h.clone());
        let c = g.constant(state.c.clone());
        let v = self.forward_in(&mut g, obs, &state.memory, state.prev_action, state.prev_reward, h, c)?;
        state.h = g.value(v.h).clone();
        state.c = g.value(v.c).clone();
        let logits = g.value(v.logits).data().to_vec();
        let value = g.value(v.value).item();
        let trace = record.then(|| ForwardTrace {
            rows: self.memory_rows(&state.memory, obs).expect("checked above"),
            x: v.x.map(|x| g.value(x).clone()),
            phi: v.phi.map(|x| g.value(x).clone()),
            s_star: v.s_star.map(|x| g.value(x).clone()),
            readout: g.value(v.readout).clone(),
            lstm_h: state.h.clone(),
            logits: g.value(v.logits).clone(),
            value,
        });
        Ok(StepOutput { logits, value, trace })
    }
}

fn stage(name: &str, e: ShapeError) -> ShapeError {
    match e {
        ShapeError::Mismatch { stage, expected, got } => {
            ShapeError::Mismatch { stage: format!("{name}: {stage}"), expected, got }
        }
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    #[default]
    Sample,
    Argmax,
}

/// Action from policy logits. Masked-out actions (`false`) are never chosen
/// unless every action is masked, in which case the mask is ignored.
pub fn sample_action<R: Rng + ?Sized>(logits: &[Real], mask: Option<&[bool]>, rng: &mut R, mode: SampleMode) -> usize {
    let allowed = |i: usize| mask.map_or(true, |m| m.get(i).copied().unwrap_or(false));
    let any = (0..logits.len()).any(allowed);
    let ok = |i: usize| !any || allowed(i);
    match mode {
        SampleMode::Argmax => {
            let mut best = None;
            for (i, &l) in logits.iter().enumerate() {
                if ok(i) && best.map_or(true, |(_, b)| l > b) {
                    best = Some((i, l));
                }
            }
            best.map_or(0, |(i, _)| i)
        }
        SampleMode::Sample => {
            let m = logits
                .iter()
                .enumerate()
                .filter(|(i, _)| ok(*i))
                .map(|(_, &l)| l as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> =
                logits.iter().enumerate().map(|(i, &l)| if ok(i) { (l as f64 - m).exp() } else { 0.0 }).collect();
            let total: f64 = w.iter().sum();
            let mut u = rng.gen::<f64>() * total;
            let mut last = 0;
            for (i, &p) in w.iter().enumerate() {
                if p > 0.0 {
                    last = i;
                    if u < p {
                        return i;
                    }
                    u -= p;
                }
            }
            last
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_shapes() {
        let net = Epn::new(EpnDims::default(), 0).unwrap();
        let d = net.dims;
        assert_eq!(d.row_width(), 38);
        assert_eq!(d.lstm_input(), 119);
        let mut s = net.initial_state();
        let out = net.step(&mut s, &[0.0; 21], true).unwrap();
        assert_eq!(out.logits.len(), 22);
        let t = out.trace.unwrap();
        assert!(t.readout.data().iter().all(|&v| v == 0.0));
        assert_eq!(t.readout.cols(), 64);
        assert_eq!(t.lstm_h.cols(), 256);
        assert!(net.step(&mut s, &[0.0; 20], false).is_err());
    }

    #[test]
    fn argmax_and_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = [0.0, 1e9, 0.0];
        assert_eq!(sample_action(&logits, None, &mut rng, SampleMode::Sample), 1);
        assert_eq!(sample_action(&logits, None, &mut rng, SampleMode::Argmax), 1);
        let mask = [true, false, true];
        assert_ne!(sample_action(&logits, Some(&mask), &mut rng, SampleMode::Argmax), 1);
    }
}
