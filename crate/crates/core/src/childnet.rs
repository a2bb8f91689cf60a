//! Weight-sharing child model.
//!
//! The pool holds one `hidden × hidden` matrix for every ordered node pair
//! `j < i`, plus the node-1 projections, a token embedding and an output
//! projection. A sampled cell only reads the matrices on its own edges, so a
//! training step touches nothing else.
//!
//! Cell rule, per time step:
//! - `v1 = σ1(x_t · W_x + h_{t-1} · W_h)`
//! - `vi = σi(v_pred(i) · W[i][pred(i)])`
//! - `h_t = mean of v_k over the leaf nodes`

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cellspace::{Architecture, SearchSpace};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::numkit::{clip_global_norm, gemm_acc, gemm_nt_acc, gemm_tn_acc, Matrix, Rng};

pub const INIT_SCALE: f64 = 0.08;

/// Bundled character corpus (Shakespeare's sonnets, public domain).
pub const BUNDLED_CORPUS: &[u8] = include_bytes!("../data/sonnets.txt");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChildDims {
    pub embed_dim: usize,
    pub hidden_dim: usize,
}

impl Default for ChildDims {
    fn default() -> Self {
        ChildDims {
            embed_dim: 32,
            hidden_dim: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub bptt_len: usize,
    pub grad_clip: f64,
    pub archs_per_epoch: usize,
    pub reward_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.1,
            batch_size: 16,
            bptt_len: 32,
            grad_clip: 0.25,
            archs_per_epoch: 20,
            reward_scale: 80.0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.grad_clip > 0.0 && self.reward_scale > 0.0) {
            return Err(Error::Config("child lr, grad_clip and reward_scale must be positive".into()));
        }
        if self.batch_size == 0 || self.bptt_len == 0 || self.archs_per_epoch == 0 {
            return Err(Error::Config(
                "child batch_size, bptt_len and archs_per_epoch must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Character-level task: vocabulary in order of first occurrence.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskData {
    pub vocab: Vec<u8>,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

impl TaskData {
    /// Splits `bytes` into a leading training stream and a trailing
    /// validation stream holding `valid_fraction` of the corpus.
    pub fn from_bytes(bytes: &[u8], valid_fraction: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&valid_fraction) {
            return Err(Error::Config("valid_fraction must lie in [0, 1)".into()));
        }
        let mut index = [usize::MAX; 256];
        let mut vocab = Vec::new();
        let ids: Vec<usize> = bytes
            .iter()
            .map(|&b| {
                if index[b as usize] == usize::MAX {
                    index[b as usize] = vocab.len();
                    vocab.push(b);
                }
                index[b as usize]
            })
            .collect();
        let n_valid = (ids.len() as f64 * valid_fraction).round() as usize;
        let split = ids.len() - n_valid;
        let data = TaskData {
            vocab,
            train: ids[..split].to_vec(),
            valid: ids[split..].to_vec(),
        };
        if data.train.len() < 2 {
            return Err(Error::Config("corpus too small".into()));
        }
        Ok(data)
    }

    pub fn bundled() -> Self {
        TaskData::from_bytes(BUNDLED_CORPUS, 0.1).expect("bundled corpus is well formed")
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SharedPool {
    pub space: SearchSpace,
    pub dims: ChildDims,
    pub vocab_size: usize,
    /// `embed × hidden`
    pub w_x: Matrix,
    /// `hidden × hidden`
    pub w_h: Matrix,
    /// `hidden × hidden` per pair `(i, j)`, `j < i`, laid out by [`edge_index`].
    pub edges: Vec<Matrix>,
    /// `vocab × embed`
    pub embedding: Matrix,
    /// `hidden × vocab`
    pub output: Matrix,
}

/// Slot of the matrix for edge `j -> i` (1-based, `1 <= j < i`).
pub fn edge_index(i: usize, j: usize) -> usize {
    debug_assert!(j >= 1 && j < i);
    (i - 1) * (i - 2) / 2 + (j - 1)
}

pub fn init_pool(rng: &mut Rng, space: SearchSpace, dims: ChildDims, vocab_size: usize) -> Result<SharedPool> {
    space.check()?;
    if dims.embed_dim == 0 || dims.hidden_dim == 0 || vocab_size == 0 {
        return Err(Error::Config("child dims and vocab must be positive".into()));
    }
    let (e, h) = (dims.embed_dim, dims.hidden_dim);
    let n = space.n_nodes;
    let w_x = Matrix::uniform(rng, e, h, INIT_SCALE);
    let w_h = Matrix::uniform(rng, h, h, INIT_SCALE);
    let edges = (0..n * (n - 1) / 2)
        .map(|_| Matrix::uniform(rng, h, h, INIT_SCALE))
        .collect();
    let embedding = Matrix::uniform(rng, vocab_size, e, INIT_SCALE);
    let output = Matrix::uniform(rng, h, vocab_size, INIT_SCALE);
    Ok(SharedPool {
        space,
        dims,
        vocab_size,
        w_x,
        w_h,
        edges,
        embedding,
        output,
    })
}

impl SharedPool {
    pub fn edge(&self, i: usize, j: usize) -> &Matrix {
        &self.edges[edge_index(i, j)]
    }

    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("w_x".to_string(), &self.w_x), ("w_h".to_string(), &self.w_h)];
        for i in 2..=self.space.n_nodes {
            for j in 1..i {
                out.push((format!("edge_{i}_{j}"), self.edge(i, j)));
            }
        }
        out.push(("embedding".to_string(), &self.embedding));
        out.push(("output".to_string(), &self.output));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.w_x, &mut self.w_h];
        out.extend(self.edges.iter_mut());
        out.push(&mut self.embedding);
        out.push(&mut self.output);
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|(_, m)| m.as_slice().iter().copied())
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
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let dims = BTreeMap::from([
            ("embed_dim".to_string(), self.dims.embed_dim),
            ("hidden_dim".to_string(), self.dims.hidden_dim),
            ("vocab_size".to_string(), self.vocab_size),
        ]);
        let mut ck = Checkpoint::new("shared_pool", self.space, dims);
        for (name, m) in self.tensors() {
            ck.push(&name, m);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("shared_pool")?;
        ck.space.check()?;
        let dims = ChildDims {
            embed_dim: ck.dim("embed_dim")?,
            hidden_dim: ck.dim("hidden_dim")?,
        };
        let vocab_size = ck.dim("vocab_size")?;
        let (e, h) = (dims.embed_dim, dims.hidden_dim);
        let n = ck.space.n_nodes;
        let mut edges = Vec::with_capacity(n * (n - 1) / 2);
        for i in 2..=n {
            for j in 1..i {
                edges.push(ck.tensor(&format!("edge_{i}_{j}"), h, h)?);
            }
        }
        let pool = SharedPool {
            space: ck.space,
            dims,
            vocab_size,
            w_x: ck.tensor("w_x", e, h)?,
            w_h: ck.tensor("w_h", h, h)?,
            edges,
            embedding: ck.tensor("embedding", vocab_size, e)?,
            output: ck.tensor("output", h, vocab_size)?,
        };
        if !pool.is_finite() {
            return Err(Error::Checkpoint("non-finite pool parameter".into()));
        }
        Ok(pool)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Gradients for the parameters one architecture touches. Edge matrices
/// outside the architecture are absent.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolGrads {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub edges: BTreeMap<usize, Matrix>,
    pub embedding: Matrix,
    pub output: Matrix,
}

impl PoolGrads {
    fn zeros_for(pool: &SharedPool, arch: &Architecture) -> Self {
        let (e, h, v) = (pool.dims.embed_dim, pool.dims.hidden_dim, pool.vocab_size);
        let edges = arch
            .edge_set()
            .into_iter()
            .map(|(j, i)| (edge_index(i, j), Matrix::zeros(h, h)))
            .collect();
        PoolGrads {
            w_x: Matrix::zeros(e, h),
            w_h: Matrix::zeros(h, h),
            edges,
            embedding: Matrix::zeros(v, e),
            output: Matrix::zeros(h, v),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.w_x, &mut self.w_h];
        out.extend(self.edges.values_mut());
        out.push(&mut self.embedding);
        out.push(&mut self.output);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.w_x.is_finite()
            && self.w_h.is_finite()
            && self.edges.values().all(Matrix::is_finite)
            && self.embedding.is_finite()
            && self.output.is_finite()
    }

    /// Dense vector in [`SharedPool::flatten`] order, zeros for absent edges.
    pub fn flatten_like(&self, pool: &SharedPool) -> Vec<f64> {
        let h = pool.dims.hidden_dim;
        let mut out = Vec::new();
        out.extend_from_slice(self.w_x.as_slice());
        out.extend_from_slice(self.w_h.as_slice());
        for k in 0..pool.edges.len() {
            match self.edges.get(&k) {
                Some(m) => out.extend_from_slice(m.as_slice()),
                None => out.extend(std::iter::repeat_n(0.0, h * h)),
            }
        }
        out.extend_from_slice(self.embedding.as_slice());
        out.extend_from_slice(self.output.as_slice());
        out
    }

    /// Clips to `max_norm` and applies `pool -= lr · grads`.
    pub fn apply_sgd(mut self, pool: &mut SharedPool, lr: f64, max_norm: f64) -> Result<f64> {
        if !self.is_finite() {
            return Err(Error::NonFinite("pool gradient".into()));
        }
        let scale = clip_global_norm(&mut self.tensors_mut(), max_norm);
        pool.w_x.axpy(-lr, &self.w_x)?;
        pool.w_h.axpy(-lr, &self.w_h)?;
        for (k, g) in &self.edges {
            pool.edges[*k].axpy(-lr, g)?;
        }
        pool.embedding.axpy(-lr, &self.embedding)?;
        pool.output.axpy(-lr, &self.output)?;
        Ok(scale)
    }
}

/// Precomputed wiring of one architecture.
struct Wiring<'a> {
    arch: &'a Architecture,
    leaves: Vec<usize>,
}

impl<'a> Wiring<'a> {
    fn new(pool: &SharedPool, arch: &'a Architecture) -> Result<Self> {
        arch.validate_for(&pool.space)?;
        Ok(Wiring {
            arch,
            leaves: arch.leaf_set().into_iter().collect(),
        })
    }
}

/// Batched cell step. `x` is `b × embed`, `h_prev` is `b × hidden`.
/// Returns node values (`n` blocks of `b × hidden`) and `h_t`.
fn cell_batch(pool: &SharedPool, w: &Wiring, x: &[f64], h_prev: &[f64], b: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (e, h) = (pool.dims.embed_dim, pool.dims.hidden_dim);
    let n = w.arch.n_nodes;
    let mut nodes: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut pre = vec![0.0; b * h];
    gemm_acc(x, pool.w_x.as_slice(), &mut pre, b, e, h);
    gemm_acc(h_prev, pool.w_h.as_slice(), &mut pre, b, h, h);
    let act = w.arch.activation(1);
    pre.iter_mut().for_each(|v| *v = act.apply(*v));
    nodes.push(pre);
    for i in 2..=n {
        let p = w.arch.predecessor(i).expect("validated");
        let mut pre = vec![0.0; b * h];
        gemm_acc(&nodes[p - 1], pool.edge(i, p).as_slice(), &mut pre, b, h, h);
        let act = w.arch.activation(i);
        pre.iter_mut().for_each(|v| *v = act.apply(*v));
        nodes.push(pre);
    }
    let inv = 1.0 / w.leaves.len() as f64;
    let mut out = vec![0.0; b * h];
    for &k in &w.leaves {
        for (o, v) in out.iter_mut().zip(&nodes[k - 1]) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o *= inv);
    (nodes, out)
}

/// One cell step for a single input vector. Returns `h_t` and every node value.
pub fn cell_forward(
    pool: &SharedPool,
    arch: &Architecture,
    x_t: &[f64],
    h_prev: &[f64],
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (e, h) = (pool.dims.embed_dim, pool.dims.hidden_dim);
    if x_t.len() != e || h_prev.len() != h {
        return Err(Error::Shape {
            op: "cell_forward",
            lhs: (1, x_t.len()),
            rhs: (1, h_prev.len()),
        });
    }
    let w = Wiring::new(pool, arch)?;
    let (nodes, out) = cell_batch(pool, &w, x_t, h_prev, 1);
    Ok((out, nodes))
}

/// `b` parallel token rows of equal length (inputs plus one trailing target).
#[derive(Clone, Debug, PartialEq)]
pub struct TokenBatch {
    pub batch: usize,
    pub len: usize,
    pub tokens: Vec<usize>,
}

impl TokenBatch {
    pub fn new(rows: &[&[usize]]) -> Result<Self> {
        let len = rows.first().map_or(0, |r| r.len());
        if rows.is_empty() || len < 2 || rows.iter().any(|r| r.len() != len) {
            return Err(Error::Config("token batch needs equal rows of length >= 2".into()));
        }
        Ok(TokenBatch {
            batch: rows.len(),
            len,
            tokens: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        })
    }

    fn at(&self, row: usize, t: usize) -> usize {
        self.tokens[row * self.len + t]
    }
}

/// Result of [`lm_step`].
#[derive(Clone, Debug)]
pub struct LmStep {
    pub loss: f64,
    pub grads: PoolGrads,
    pub h_next: Matrix,
}

fn gather_embeddings(pool: &SharedPool, batch: &TokenBatch, t: usize) -> Vec<f64> {
    let e = pool.dims.embed_dim;
    let mut x = vec![0.0; batch.batch * e];
    for r in 0..batch.batch {
        x[r * e..(r + 1) * e].copy_from_slice(pool.embedding.row(batch.at(r, t)));
    }
    x
}

/// Softmax rows of `logits` (`b × v`) in place; returns summed NLL of `targets`.
fn softmax_rows_nll(logits: &mut [f64], v: usize, targets: impl Iterator<Item = usize>) -> f64 {
    let mut nll = 0.0;
    for (row, tgt) in logits.chunks_mut(v).zip(targets) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let shifted = row[tgt] - max;
        let mut sum = 0.0;
        for z in row.iter_mut() {
            *z = (*z - max).exp();
            sum += *z;
        }
        for z in row.iter_mut() {
            *z /= sum;
        }
        nll += sum.ln() - shifted;
    }
    nll
}

struct StepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    nodes: Vec<Vec<f64>>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

/// Truncated-BPTT language-model step: mean next-token NLL over `batch × (len - 1)`
/// predictions and gradients of every parameter in `arch`'s computation graph.
pub fn lm_step(pool: &SharedPool, arch: &Architecture, batch: &TokenBatch, h_prev: &Matrix) -> Result<LmStep> {
    let (e, h, v) = (pool.dims.embed_dim, pool.dims.hidden_dim, pool.vocab_size);
    let b = batch.batch;
    if h_prev.shape() != (b, h) {
        return Err(Error::Shape {
            op: "lm_step hidden",
            lhs: h_prev.shape(),
            rhs: (b, h),
        });
    }
    if batch.tokens.iter().any(|&t| t >= v) {
        return Err(Error::Config("token id out of vocabulary".into()));
    }
    let w = Wiring::new(pool, arch)?;
    let steps = batch.len - 1;
    let norm = 1.0 / (b * steps) as f64;

    let mut caches = Vec::with_capacity(steps);
    let mut hcur = h_prev.as_slice().to_vec();
    let mut total_nll = 0.0;
    for t in 0..steps {
        let x = gather_embeddings(pool, batch, t);
        let (nodes, hn) = cell_batch(pool, &w, &x, &hcur, b);
        let mut probs = vec![0.0; b * v];
        gemm_acc(&hn, pool.output.as_slice(), &mut probs, b, h, v);
        total_nll += softmax_rows_nll(&mut probs, v, (0..b).map(|r| batch.at(r, t + 1)));
        caches.push(StepCache {
            x,
            h_prev: std::mem::replace(&mut hcur, hn.clone()),
            nodes,
            h: hn,
            probs,
        });
    }
    let loss = total_nll * norm;
    if !loss.is_finite() {
        return Err(Error::NonFinite("language-model loss".into()));
    }

    let mut g = PoolGrads::zeros_for(pool, arch);
    let n = arch.n_nodes;
    let inv_leaves = 1.0 / w.leaves.len() as f64;
    let mut dh_carry = vec![0.0; b * h];
    for (t, c) in caches.iter().enumerate().rev() {
        let mut dlogits = c.probs.clone();
        for r in 0..b {
            dlogits[r * v + batch.at(r, t + 1)] -= 1.0;
        }
        dlogits.iter_mut().for_each(|d| *d *= norm);
        gemm_tn_acc(&c.h, &dlogits, g.output.as_mut_slice(), b, h, v);
        let mut dh = dh_carry;
        gemm_nt_acc(&dlogits, pool.output.as_slice(), &mut dh, b, v, h);

        let mut dv: Vec<Vec<f64>> = vec![vec![0.0; b * h]; n];
        for &k in &w.leaves {
            for (d, s) in dv[k - 1].iter_mut().zip(&dh) {
                *d += s * inv_leaves;
            }
        }
        for i in (2..=n).rev() {
            let act = arch.activation(i);
            let dpre: Vec<f64> = dv[i - 1]
                .iter()
                .zip(&c.nodes[i - 1])
                .map(|(d, y)| d * act.grad_from_output(*y))
                .collect();
            let p = arch.predecessor(i).expect("validated");
            let k = edge_index(i, p);
            let ge = g.edges.get_mut(&k).expect("edge of arch");
            gemm_tn_acc(&c.nodes[p - 1], &dpre, ge.as_mut_slice(), b, h, h);
            gemm_nt_acc(&dpre, pool.edges[k].as_slice(), &mut dv[p - 1], b, h, h);
        }
        let act = arch.activation(1);
        let dpre: Vec<f64> = dv[0]
            .iter()
            .zip(&c.nodes[0])
            .map(|(d, y)| d * act.grad_from_output(*y))
            .collect();
        gemm_tn_acc(&c.x, &dpre, g.w_x.as_mut_slice(), b, e, h);
        gemm_tn_acc(&c.h_prev, &dpre, g.w_h.as_mut_slice(), b, h, h);
        let mut dx = vec![0.0; b * e];
        gemm_nt_acc(&dpre, pool.w_x.as_slice(), &mut dx, b, h, e);
        for r in 0..b {
            let row = g.embedding.row_mut(batch.at(r, t));
            for (gv, d) in row.iter_mut().zip(&dx[r * e..(r + 1) * e]) {
                *gv += d;
            }
        }
        let mut carry = vec![0.0; b * h];
        gemm_nt_acc(&dpre, pool.w_h.as_slice(), &mut carry, b, h, h);
        dh_carry = carry;
    }

    Ok(LmStep {
        loss,
        grads: g,
        h_next: Matrix::from_vec(b, h, hcur)?,
    })
}

/// Splits a stream into `rows` equal contiguous rows, dropping the tail.
pub fn batchify(stream: &[usize], rows: usize) -> Vec<&[usize]> {
    let len = stream.len() / rows;
    (0..rows).map(|r| &stream[r * len..(r + 1) * len]).collect()
}

/// Number of BPTT minibatches one epoch yields.
pub fn minibatch_count(stream_len: usize, cfg: &TrainConfig) -> usize {
    let row_len = stream_len / cfg.batch_size;
    row_len.saturating_sub(1) / cfg.bptt_len
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// Mean over the minibatches that produced a finite loss.
    pub mean_loss: f64,
    pub minibatches: usize,
    /// Minibatches skipped because the unrolled cell overflowed.
    pub skipped: usize,
    pub archs: Vec<Architecture>,
}

/// One pass over the training stream. The epoch's minibatches are split into
/// `archs_per_epoch` contiguous blocks; each block trains one architecture
/// drawn from `sampler`, starting from a zero hidden state. A minibatch
/// whose loss overflows is skipped without an update and the hidden state
/// is reset.
pub fn shared_train_epoch<F>(
    pool: &mut SharedPool,
    mut sampler: F,
    data: &[usize],
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<EpochStats>
where
    F: FnMut(&mut Rng) -> Result<Architecture>,
{
    cfg.check()?;
    let m = minibatch_count(data.len(), cfg);
    if m == 0 {
        return Err(Error::Config("training stream too short for one minibatch".into()));
    }
    let rows = batchify(data, cfg.batch_size);
    let blocks = cfg.archs_per_epoch.min(m);
    let (base, extra) = (m / blocks, m % blocks);
    let t = cfg.bptt_len;
    let mut archs = Vec::with_capacity(blocks);
    let mut loss_sum = 0.0;
    let mut skipped = 0;
    let mut k = 0;
    for blk in 0..blocks {
        let arch = sampler(rng)?;
        let mut hidden = Matrix::zeros(cfg.batch_size, pool.dims.hidden_dim);
        for _ in 0..base + usize::from(blk < extra) {
            let window: Vec<&[usize]> = rows.iter().map(|r| &r[k * t..k * t + t + 1]).collect();
            k += 1;
            let step = match lm_step(pool, &arch, &TokenBatch::new(&window)?, &hidden) {
                Ok(s) if s.grads.is_finite() => s,
                Ok(_) | Err(Error::NonFinite(_)) => {
                    skipped += 1;
                    hidden.fill(0.0);
                    continue;
                }
                Err(e) => return Err(e),
            };
            step.grads.apply_sgd(pool, cfg.lr, cfg.grad_clip)?;
            loss_sum += step.loss;
            hidden = step.h_next;
        }
        archs.push(arch);
    }
    if skipped == m {
        return Err(Error::NonFinite("every minibatch of the epoch overflowed".into()));
    }
    Ok(EpochStats {
        mean_loss: loss_sum / (m - skipped) as f64,
        minibatches: m,
        skipped,
        archs,
    })
}

/// Perplexity of `arch` on a token stream, hidden state carried throughout,
/// no parameter updates. A cell whose state overflows reports `+inf`.
pub fn evaluate_ppl(pool: &SharedPool, arch: &Architecture, tokens: &[usize]) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::Config("validation stream needs at least two tokens".into()));
    }
    let w = Wiring::new(pool, arch)?;
    let (h, v) = (pool.dims.hidden_dim, pool.vocab_size);
    let mut hidden = vec![0.0; h];
    let mut logits = vec![0.0; v];
    let mut nll = 0.0;
    for pair in tokens.windows(2) {
        let (_, hn) = cell_batch(pool, &w, pool.embedding.row(pair[0]), &hidden, 1);
        logits.iter_mut().for_each(|z| *z = 0.0);
        gemm_acc(&hn, pool.output.as_slice(), &mut logits, 1, h, v);
        nll += softmax_rows_nll(&mut logits, v, std::iter::once(pair[1]));
        if !nll.is_finite() {
            return Ok(f64::INFINITY);
        }
        hidden = hn;
    }
    Ok((nll / (tokens.len() - 1) as f64).exp())
}

/// `R = c / ppl`.
pub fn reward_of_ppl(ppl: f64, cfg: &TrainConfig) -> Result<f64> {
    if !(ppl >= 1.0) {
        return Err(Error::Config(format!("perplexity {ppl} below 1")));
    }
    Ok(cfg.reward_scale / ppl)
}

/// Parameter slots an architecture reads (edge slots by [`edge_index`]).
pub fn used_edge_slots(arch: &Architecture) -> BTreeSet<usize> {
    arch.edge_set().into_iter().map(|(j, i)| edge_index(i, j)).collect()
}
