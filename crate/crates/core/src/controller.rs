//! Autoregressive architecture policy: a single-layer LSTM over action tokens
//! with two masked softmax heads.
//!
//! Token vocabulary is `4` activation tokens, `n - 1` predecessor tokens and
//! one start token. Step 1 reads the start token; every later step reads the
//! token of the action sampled just before it, so the hidden state can carry
//! the history of choices. The predecessor head has `n - 1` outputs and is
//! masked to the first `i - 1` at node `i`.
//!
//! All gradients are derived by hand (BPTT through the LSTM) and accumulate
//! into a [`ControllerParams`] used as a gradient buffer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cellspace::{decision_schema, Activation, Architecture, SchemaStep, SearchSpace, StepKind};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numkit::{
    argmax, clip_global_norm, entropy, gemm_acc, gemm_nt_acc, sample_categorical, softmax,
    Matrix, Rng,
};

pub const INIT_SCALE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerDims {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ControllerDims {
    fn default() -> Self {
        ControllerDims {
            embed_dim: 64,
            hidden_dim: 64,
        }
    }
}

/// Policy-gradient hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PGConfig {
    pub lr: f64,
    pub entropy_coef: f64,
    pub baseline_decay: f64,
    pub grad_clip: f64,
    pub supervised_coef: f64,
}

impl Default for PGConfig {
    fn default() -> Self {
        PGConfig {
            lr: 3.5e-4,
            entropy_coef: 1e-4,
            baseline_decay: 0.95,
            grad_clip: 0.25,
            supervised_coef: 1.0,
        }
    }
}

impl PGConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::Config("pg.lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.baseline_decay) {
            return Err(Error::Config("pg.baseline_decay must lie in [0, 1)".into()));
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(Error::Config("pg.entropy_coef must be nonnegative".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("pg.grad_clip must be positive".into()));
        }
        if !(self.supervised_coef >= 0.0) {
            return Err(Error::Config("pg.supervised_coef must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerParams {
    pub space: SearchSpace,
    pub dims: ControllerDims,
    /// `vocab × embed`
    pub embedding: Matrix,
    /// `embed × 4·hidden`, gate blocks ordered input, forget, cell, output.
    pub w_ih: Matrix,
    /// `hidden × 4·hidden`
    pub w_hh: Matrix,
    /// `1 × 4·hidden`
    pub bias: Matrix,
    /// `hidden × 4`
    pub act_head: Matrix,
    pub act_bias: Matrix,
    /// `hidden × (n - 1)`
    pub pred_head: Matrix,
    pub pred_bias: Matrix,
}

const TENSOR_NAMES: [&str; 8] = [
    "embedding",
    "w_ih",
    "w_hh",
    "bias",
    "act_head",
    "act_bias",
    "pred_head",
    "pred_bias",
];

impl ControllerParams {
    pub fn vocab_size(space: &SearchSpace) -> usize {
        Activation::COUNT + (space.n_nodes - 1) + 1
    }

    pub fn start_token(&self) -> usize {
        Activation::COUNT + self.space.n_nodes - 1
    }

    /// All-zero parameters; every step distribution is uniform.
    pub fn zeros(space: SearchSpace, dims: ControllerDims) -> Self {
        let (e, h) = (dims.embed_dim, dims.hidden_dim);
        let v = Self::vocab_size(&space);
        let p = space.n_nodes - 1;
        ControllerParams {
            space,
            dims,
            embedding: Matrix::zeros(v, e),
            w_ih: Matrix::zeros(e, 4 * h),
            w_hh: Matrix::zeros(h, 4 * h),
            bias: Matrix::zeros(1, 4 * h),
            act_head: Matrix::zeros(h, Activation::COUNT),
            act_bias: Matrix::zeros(1, Activation::COUNT),
            pred_head: Matrix::zeros(h, p),
            pred_bias: Matrix::zeros(1, p),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.space, self.dims)
    }

    pub fn tensors(&self) -> [&Matrix; 8] {
        [
            &self.embedding,
            &self.w_ih,
            &self.w_hh,
            &self.bias,
            &self.act_head,
            &self.act_bias,
            &self.pred_head,
            &self.pred_bias,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 8] {
        [
            &mut self.embedding,
            &mut self.w_ih,
            &mut self.w_hh,
            &mut self.bias,
            &mut self.act_head,
            &mut self.act_bias,
            &mut self.pred_head,
            &mut self.pred_bias,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|m| m.as_slice().len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for m in self.tensors_mut() {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors().iter().map(|m| m.norm_sq()).sum::<f64>().sqrt()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let dims = BTreeMap::from([
            ("embed_dim".to_string(), self.dims.embed_dim),
            ("hidden_dim".to_string(), self.dims.hidden_dim),
        ]);
        let mut ck = Checkpoint::new("controller", self.space, dims);
        for (name, m) in TENSOR_NAMES.iter().zip(self.tensors()) {
            ck.push(name, m);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("controller")?;
        ck.space.check()?;
        let dims = ControllerDims {
            embed_dim: ck.dim("embed_dim")?,
            hidden_dim: ck.dim("hidden_dim")?,
        };
        let mut p = ControllerParams::zeros(ck.space, dims);
        let shapes: Vec<(usize, usize)> = p.tensors().iter().map(|m| m.shape()).collect();
        for ((name, slot), (r, c)) in TENSOR_NAMES.iter().zip(p.tensors_mut()).zip(shapes) {
            *slot = ck.tensor(name, r, c)?;
        }
        if !p.is_finite() {
            return Err(Error::Checkpoint("non-finite controller parameter".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Uniform `[-0.08, 0.08]` weights, zero biases.
pub fn init_controller(rng: &mut Rng, space: SearchSpace, dims: ControllerDims) -> Result<ControllerParams> {
    space.check()?;
    if dims.embed_dim == 0 || dims.hidden_dim == 0 {
        return Err(Error::Config("controller dims must be positive".into()));
    }
    let mut p = ControllerParams::zeros(space, dims);
    for m in [
        &mut p.embedding,
        &mut p.w_ih,
        &mut p.w_hh,
        &mut p.act_head,
        &mut p.pred_head,
    ] {
        *m = Matrix::uniform(rng, m.rows(), m.cols(), INIT_SCALE);
    }
    Ok(p)
}

/// A sampled trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleTrace {
    pub actions: Vec<usize>,
    pub step_log_probs: Vec<f64>,
    pub step_entropies: Vec<f64>,
    pub argmax_probs: Vec<f64>,
    pub final_hidden: Vec<f64>,
}

impl SampleTrace {
    pub fn total_log_prob(&self) -> f64 {
        self.step_log_probs.iter().sum()
    }
}

/// Output of [`teacher_forced_log_prob`].
#[derive(Clone, Debug, PartialEq)]
pub struct ForcedLogProb {
    pub total: f64,
    pub per_step: Vec<f64>,
    pub final_hidden: Vec<f64>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct StepCache {
    token: usize,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// post-nonlinearity gates, `4·hidden`
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    kind: StepKind,
    /// probabilities over the active width (`choices` entries)
    probs: Vec<f64>,
    action: usize,
}

struct Rollout {
    steps: Vec<StepCache>,
    /// `h` after one more step that consumes the last action, so it
    /// depends on every decision. Not part of any loss.
    final_hidden: Vec<f64>,
}

fn token_of(step: &SchemaStep, action: usize) -> usize {
    match step.kind {
        StepKind::Activation => action,
        StepKind::Predecessor => Activation::COUNT + action,
    }
}

impl ControllerParams {
    fn lstm_step(&self, token: usize, h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let h = self.dims.hidden_dim;
        let e = self.dims.embed_dim;
        let mut z = self.bias.as_slice().to_vec();
        gemm_acc(self.embedding.row(token), self.w_ih.as_slice(), &mut z, 1, e, 4 * h);
        gemm_acc(h_prev, self.w_hh.as_slice(), &mut z, 1, h, 4 * h);
        let mut gates = z;
        for k in 0..h {
            gates[k] = sigmoid(gates[k]);
            gates[h + k] = sigmoid(gates[h + k]);
            gates[2 * h + k] = gates[2 * h + k].tanh();
            gates[3 * h + k] = sigmoid(gates[3 * h + k]);
        }
        let mut c = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut hn = vec![0.0; h];
        for k in 0..h {
            c[k] = gates[h + k] * c_prev[k] + gates[k] * gates[2 * h + k];
            tanh_c[k] = c[k].tanh();
            hn[k] = gates[3 * h + k] * tanh_c[k];
        }
        (gates, c, tanh_c, hn)
    }

    fn step_logits(&self, step: &SchemaStep, h: &[f64]) -> Vec<f64> {
        let hd = self.dims.hidden_dim;
        let (head, bias) = match step.kind {
            StepKind::Activation => (&self.act_head, &self.act_bias),
            StepKind::Predecessor => (&self.pred_head, &self.pred_bias),
        };
        let mut logits = bias.as_slice().to_vec();
        gemm_acc(h, head.as_slice(), &mut logits, 1, hd, head.cols());
        logits
    }

    /// Step distribution over the full head width; masked entries are 0.
    fn step_probs(&self, step: &SchemaStep, h: &[f64]) -> Result<Vec<f64>> {
        let logits = self.step_logits(step, h);
        match step.kind {
            StepKind::Activation => softmax(&logits, None),
            StepKind::Predecessor => {
                let mask: Vec<bool> = (0..logits.len()).map(|j| j < step.choices).collect();
                softmax(&logits, Some(&mask))
            }
        }
    }

    fn unroll<F>(&self, mut choose: F) -> Result<Rollout>
    where
        F: FnMut(usize, &SchemaStep, &[f64]) -> Result<usize>,
    {
        let hd = self.dims.hidden_dim;
        let schema = decision_schema(&self.space);
        let mut steps = Vec::with_capacity(schema.len());
        let mut token = self.start_token();
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for (t, step) in schema.iter().enumerate() {
            let (gates, c_new, tanh_c, h_new) = self.lstm_step(token, &h, &c);
            let mut probs = self.step_probs(step, &h_new)?;
            let action = choose(t, step, &probs)?;
            if action >= step.choices {
                return Err(Error::Architecture {
                    node: step.node,
                    reason: format!("action {action} out of range at step {}", step.index),
                });
            }
            probs.truncate(step.choices);
            let next = token_of(step, action);
            steps.push(StepCache {
                token,
                h_prev: std::mem::replace(&mut h, h_new.clone()),
                c_prev: std::mem::replace(&mut c, c_new),
                gates,
                tanh_c,
                h: h_new,
                kind: step.kind,
                probs,
                action,
            });
            token = next;
        }
        let final_hidden = self.lstm_step(token, &h, &c).3;
        Ok(Rollout { steps, final_hidden })
    }

    /// Accumulates into `grads` the gradient of
    /// `logp_coef · Σ_t log p_t(a_t) + ent_coef · Σ_t H_t`.
    fn backward(&self, r: &Rollout, logp_coef: f64, ent_coef: f64, grads: &mut ControllerParams) {
        let hd = self.dims.hidden_dim;
        let e = self.dims.embed_dim;
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for s in r.steps.iter().rev() {
            let w = s.probs.len();
            let ent = entropy(&s.probs);
            let dlogits: Vec<f64> = (0..w)
                .map(|j| {
                    let p = s.probs[j];
                    let onehot = if j == s.action { 1.0 } else { 0.0 };
                    let dent = if p > 0.0 { -p * (p.ln() + ent) } else { 0.0 };
                    logp_coef * (onehot - p) + ent_coef * dent
                })
                .collect();
            let (head, dhead, dbias) = match s.kind {
                StepKind::Activation => (&self.act_head, &mut grads.act_head, &mut grads.act_bias),
                StepKind::Predecessor => (&self.pred_head, &mut grads.pred_head, &mut grads.pred_bias),
            };
            let cols = head.cols();
            let mut dh = dh_next.clone();
            for k in 0..hd {
                let hrow = &head.as_slice()[k * cols..k * cols + w];
                let drow = &mut dhead.as_mut_slice()[k * cols..k * cols + w];
                let hk = s.h[k];
                let mut acc = 0.0;
                for j in 0..w {
                    drow[j] += hk * dlogits[j];
                    acc += hrow[j] * dlogits[j];
                }
                dh[k] += acc;
            }
            for j in 0..w {
                dbias.as_mut_slice()[j] += dlogits[j];
            }

            let g = &s.gates;
            let mut dz = vec![0.0; 4 * hd];
            let mut dc_prev = vec![0.0; hd];
            for k in 0..hd {
                let (i, f, gg, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
                let tc = s.tanh_c[k];
                let d_o = dh[k] * tc;
                let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
                dz[k] = dc * gg * i * (1.0 - i);
                dz[hd + k] = dc * s.c_prev[k] * f * (1.0 - f);
                dz[2 * hd + k] = dc * i * (1.0 - gg * gg);
                dz[3 * hd + k] = d_o * o * (1.0 - o);
                dc_prev[k] = dc * f;
            }
            let x = self.embedding.row(s.token);
            crate::numkit::gemm_tn_acc(x, &dz, grads.w_ih.as_mut_slice(), 1, e, 4 * hd);
            crate::numkit::gemm_tn_acc(&s.h_prev, &dz, grads.w_hh.as_mut_slice(), 1, hd, 4 * hd);
            for (b, d) in grads.bias.as_mut_slice().iter_mut().zip(&dz) {
                *b += d;
            }
            gemm_nt_acc(&dz, self.w_ih.as_slice(), grads.embedding.row_mut(s.token), 1, 4 * hd, e);
            let mut dh_prev = vec![0.0; hd];
            gemm_nt_acc(&dz, self.w_hh.as_slice(), &mut dh_prev, 1, 4 * hd, hd);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }
    }

    fn forced_rollout(&self, arch: &Architecture) -> Result<Rollout> {
        arch.validate_for(&self.space)?;
        let actions = arch.to_actions();
        self.unroll(|t, _, _| Ok(actions[t]))
    }
}

fn trace_of(r: &Rollout) -> SampleTrace {
    let mut t = SampleTrace {
        actions: Vec::with_capacity(r.steps.len()),
        step_log_probs: Vec::with_capacity(r.steps.len()),
        step_entropies: Vec::with_capacity(r.steps.len()),
        argmax_probs: Vec::with_capacity(r.steps.len()),
        final_hidden: r.final_hidden.clone(),
    };
    for s in &r.steps {
        t.actions.push(s.action);
        t.step_log_probs.push(s.probs[s.action].ln());
        t.step_entropies.push(entropy(&s.probs));
        t.argmax_probs.push(s.probs[argmax(&s.probs)]);
    }
    t
}

pub fn sample_architecture(params: &ControllerParams, rng: &mut Rng) -> Result<(Architecture, SampleTrace)> {
    let r = params.unroll(|_, _, probs| sample_categorical(rng, probs))?;
    let trace = trace_of(&r);
    let arch = Architecture::from_actions(&params.space, &trace.actions)?;
    Ok((arch, trace))
}

pub fn teacher_forced_log_prob(params: &ControllerParams, arch: &Architecture) -> Result<ForcedLogProb> {
    let r = params.forced_rollout(arch)?;
    let trace = trace_of(&r);
    Ok(ForcedLogProb {
        total: trace.total_log_prob(),
        per_step: trace.step_log_probs,
        final_hidden: trace.final_hidden,
    })
}

/// Per-step distributions over the full head width (4 activations or
/// `n - 1` predecessors) while teacher forcing `arch`; masked entries are 0.
pub fn step_distributions(params: &ControllerParams, arch: &Architecture) -> Result<Vec<Vec<f64>>> {
    arch.validate_for(&params.space)?;
    let actions = arch.to_actions();
    let mut out = Vec::with_capacity(actions.len());
    params.unroll(|t, _, probs| {
        out.push(probs.to_vec());
        Ok(actions[t])
    })?;
    Ok(out)
}

/// Full trace of `arch` under teacher forcing (argmax probabilities, entropies, hidden state).
pub fn teacher_forced_trace(params: &ControllerParams, arch: &Architecture) -> Result<SampleTrace> {
    Ok(trace_of(&params.forced_rollout(arch)?))
}

/// `Σ_t log P(a_t)` for `arch` and its gradient.
pub fn log_prob_grad(params: &ControllerParams, arch: &Architecture) -> Result<(f64, ControllerParams)> {
    let r = params.forced_rollout(arch)?;
    let total = r.steps.iter().map(|s| s.probs[s.action].ln()).sum();
    let mut g = params.zeros_like();
    params.backward(&r, 1.0, 0.0, &mut g);
    Ok((total, g))
}

fn accumulate_pg(
    params: &ControllerParams,
    batch: &[(SampleTrace, f64)],
    baseline: f64,
    cfg: &PGConfig,
    grads: &mut ControllerParams,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("empty policy-gradient batch".into()));
    }
    let b = batch.len() as f64;
    let mut loss = 0.0;
    for (trace, reward) in batch {
        if !reward.is_finite() {
            return Err(Error::NonFinite(format!("reward {reward}")));
        }
        let r = params.unroll(|t, _, _| Ok(trace.actions[t]))?;
        let logp: f64 = r.steps.iter().map(|s| s.probs[s.action].ln()).sum();
        let ent: f64 = r.steps.iter().map(|s| entropy(&s.probs)).sum();
        let adv = reward - baseline;
        loss -= (adv * logp + cfg.entropy_coef * ent) / b;
        params.backward(&r, -adv / b, -cfg.entropy_coef / b, grads);
    }
    Ok(loss)
}

fn accumulate_sup(
    params: &ControllerParams,
    archs: &[Architecture],
    coef: f64,
    grads: &mut ControllerParams,
) -> Result<f64> {
    if archs.is_empty() {
        return Err(Error::Config("empty reconstruction sample".into()));
    }
    let k = archs.len() as f64;
    let mut loss = 0.0;
    for a in archs {
        let r = params.forced_rollout(a)?;
        loss -= r.steps.iter().map(|s| s.probs[s.action].ln()).sum::<f64>() / k;
        params.backward(&r, -coef / k, 0.0, grads);
    }
    Ok(loss)
}

/// Policy-gradient loss `-(1/B) Σ [(R - b) Σ_t log P(a_t) + β Σ_t H_t]` and its gradient.
pub fn pg_loss_grad(
    params: &ControllerParams,
    batch: &[(SampleTrace, f64)],
    baseline: f64,
    cfg: &PGConfig,
) -> Result<(f64, ControllerParams)> {
    let mut g = params.zeros_like();
    let loss = accumulate_pg(params, batch, baseline, cfg, &mut g)?;
    Ok((loss, g))
}

/// Mean teacher-forced reconstruction cross-entropy over `archs` and its gradient.
pub fn supervised_grad(params: &ControllerParams, archs: &[Architecture]) -> Result<(f64, ControllerParams)> {
    let mut g = params.zeros_like();
    let loss = accumulate_sup(params, archs, 1.0, &mut g)?;
    Ok((loss, g))
}

/// Gradient of `L_PG + supervised_coef · L_Sup` computed in one pass.
pub fn combined_grad(
    params: &ControllerParams,
    batch: &[(SampleTrace, f64)],
    baseline: f64,
    buffer_sample: Option<&[Architecture]>,
    cfg: &PGConfig,
) -> Result<(f64, Option<f64>, ControllerParams)> {
    let mut g = params.zeros_like();
    let pg = accumulate_pg(params, batch, baseline, cfg, &mut g)?;
    let sup = match buffer_sample {
        Some(archs) if cfg.supervised_coef > 0.0 => {
            Some(accumulate_sup(params, archs, cfg.supervised_coef, &mut g)?)
        }
        _ => None,
    };
    Ok((pg, sup, g))
}

/// Adam moments for the controller parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: ControllerParams,
    v: ControllerParams,
}

impl Adam {
    pub fn new(like: &ControllerParams) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ControllerParams, grads: &ControllerParams, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for (((p, &g), m), v) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepStats {
    pub pg_loss: f64,
    pub sup_loss: Option<f64>,
    pub grad_norm: f64,
    pub clip_scale: f64,
    pub mean_reward: f64,
    pub mean_entropy: f64,
}

/// Controller parameters plus optimizer state; the single writer during search.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerTrainer {
    pub params: ControllerParams,
    pub optimizer: Adam,
    pub updates: u64,
}

impl ControllerTrainer {
    pub fn new(params: ControllerParams) -> Self {
        let optimizer = Adam::new(&params);
        ControllerTrainer {
            params,
            optimizer,
            updates: 0,
        }
    }

    /// REINFORCE step. Returns the updated moving-average baseline.
    pub fn reinforce_update(
        &mut self,
        batch: &[(SampleTrace, f64)],
        baseline: f64,
        cfg: &PGConfig,
    ) -> Result<(f64, StepStats)> {
        self.train_step(batch, baseline, None, cfg)
    }

    /// One clipped optimizer step on `L_PG + supervised_coef · L_Sup`.
    /// On a non-finite gradient the parameters are left untouched.
    pub fn train_step(
        &mut self,
        batch: &[(SampleTrace, f64)],
        baseline: f64,
        buffer_sample: Option<&[Architecture]>,
        cfg: &PGConfig,
    ) -> Result<(f64, StepStats)> {
        cfg.check()?;
        let (pg_loss, sup_loss, mut grads) =
            combined_grad(&self.params, batch, baseline, buffer_sample, cfg)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("controller gradient".into()));
        }
        let grad_norm = grads.global_norm();
        let clip_scale = clip_global_norm(&mut grads.tensors_mut(), cfg.grad_clip);
        let mut next = self.params.clone();
        let mut opt = self.optimizer.clone();
        opt.step(&mut next, &grads, cfg.lr);
        if !next.is_finite() {
            return Err(Error::NonFinite("controller parameters after update".into()));
        }
        self.params = next;
        self.optimizer = opt;
        self.updates += 1;

        let n = batch.len() as f64;
        let mean_reward = batch.iter().map(|(_, r)| r).sum::<f64>() / n;
        let mean_entropy = batch
            .iter()
            .map(|(t, _)| t.step_entropies.iter().sum::<f64>())
            .sum::<f64>()
            / n;
        let new_baseline = cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * mean_reward;
        Ok((
            new_baseline,
            StepStats {
                pg_loss,
                sup_loss,
                grad_norm,
                clip_scale,
                mean_reward,
                mean_entropy,
            },
        ))
    }
}

/// `k × (2n - 1)` matrix of per-step argmax probabilities of `k` fresh samples.
pub fn argmax_profile(params: &ControllerParams, rng: &mut Rng, k: usize) -> Result<Matrix> {
    if k == 0 {
        return Err(Error::Config("argmax_profile needs k >= 1".into()));
    }
    let w = params.space.n_steps();
    let mut out = Matrix::zeros(k, w);
    for j in 0..k {
        let (_, t) = sample_architecture(params, rng)?;
        out.row_mut(j).copy_from_slice(&t.argmax_probs);
    }
    Ok(out)
}
