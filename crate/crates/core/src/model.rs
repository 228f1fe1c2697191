//! The shared regression network and its trainer.
//!
//! Layout, input to output:
//!
//! ```text
//! dense  -> affine ----------\
//! ids    -> embedding rows ---+-> concat -> projection -> MLP (Swish, last layer linear) -> H --\
//! dur(z) -> affine ----------/                                                                  +-> output -> head
//!             \----------------------------------------> duration tower (Swish MLP) -> T ------/
//! ```
//!
//! Gradients are computed by hand. Dense parameters get SGD with optional
//! momentum; embedding rows get sparse plain SGD on the mean gradient of the
//! samples that reference them, scaled by [`ModelConfig::embedding_lr_scale`].

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to sigmoid outputs before taking logs or odds.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    Linear,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    WeightedLogLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dense_embed_dim: usize,
    /// Summed over id slots; split evenly, remainder to the leading slots.
    pub id_embed_total_dim: usize,
    pub duration_embed_dim: usize,
    pub projection_out_dim: usize,
    pub mlp_dims: Vec<usize>,
    pub output_head: OutputHead,
    /// Layer widths of the residual duration tower. `None` or empty disables it.
    pub duration_tower: Option<Vec<usize>>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Multiplier on the learning rate for embedding rows. A row is updated
    /// with the mean gradient of the samples that reference it, which is
    /// noisier than the full-batch dense gradient.
    pub embedding_lr_scale: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Production dimensions shrunk 8x.
    pub fn desk() -> Self {
        Self {
            dense_embed_dim: 4,
            id_embed_total_dim: 64,
            duration_embed_dim: 4,
            projection_out_dim: 64,
            mlp_dims: vec![32, 16, 8],
            output_head: OutputHead::Sigmoid,
            duration_tower: None,
            batch_size: 128,
            learning_rate: 0.3,
            momentum: 0.0,
            embedding_lr_scale: 4.0,
            epochs: 5,
            seed: 0,
        }
    }

    /// Full production dimensions (32 / 512 / 32 -> 512 -> 256, 128, 64, B = 512).
    pub fn production_scale() -> Self {
        Self {
            dense_embed_dim: 32,
            id_embed_total_dim: 512,
            duration_embed_dim: 32,
            projection_out_dim: 512,
            mlp_dims: vec![256, 128, 64],
            batch_size: 512,
            ..Self::desk()
        }
    }

    pub fn default_tower() -> Vec<usize> {
        vec![16, 16]
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.dense_embed_dim,
            self.id_embed_total_dim,
            self.duration_embed_dim,
            self.projection_out_dim,
        ];
        if dims.contains(&0) || self.mlp_dims.is_empty() || self.mlp_dims.contains(&0) {
            return Err(Error::invalid("all model dimensions must be >= 1"));
        }
        if self.duration_tower.as_ref().is_some_and(|t| t.contains(&0)) {
            return Err(Error::invalid("duration tower widths must be >= 1"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("batch_size and epochs must be >= 1"));
        }
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !finite_pos(self.learning_rate) || !finite_pos(self.embedding_lr_scale) {
            return Err(Error::invalid("learning rates must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Concrete tensor shapes: a [`ModelConfig`] bound to a data schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub dense_len: usize,
    pub id_vocab: Vec<u32>,
    pub id_dims: Vec<usize>,
    pub dense_embed_dim: usize,
    pub duration_embed_dim: usize,
    pub projection_out_dim: usize,
    pub mlp_dims: Vec<usize>,
    pub tower_dims: Vec<usize>,
    pub heads: usize,
    pub output_head: OutputHead,
}

impl Architecture {
    pub fn new(c: &ModelConfig, dense_len: usize, id_vocab: &[u32], heads: usize) -> Result<Self> {
        c.validate()?;
        let slots = id_vocab.len();
        if heads == 0 {
            return Err(Error::invalid("at least one output head is required"));
        }
        if id_vocab.contains(&0) {
            return Err(Error::invalid("id vocabularies must be non-empty"));
        }
        let id_dims = if slots == 0 {
            Vec::new()
        } else {
            if c.id_embed_total_dim < slots {
                return Err(Error::invalid(format!(
                    "id_embed_total_dim {} is smaller than the {slots} id slots",
                    c.id_embed_total_dim
                )));
            }
            let base = c.id_embed_total_dim / slots;
            let extra = c.id_embed_total_dim % slots;
            (0..slots).map(|s| base + usize::from(s < extra)).collect()
        };
        Ok(Self {
            dense_len,
            id_vocab: id_vocab.to_vec(),
            id_dims,
            dense_embed_dim: c.dense_embed_dim,
            duration_embed_dim: c.duration_embed_dim,
            projection_out_dim: c.projection_out_dim,
            mlp_dims: c.mlp_dims.clone(),
            tower_dims: c.duration_tower.clone().unwrap_or_default(),
            heads,
            output_head: c.output_head,
        })
    }

    pub fn id_total(&self) -> usize {
        self.id_dims.iter().sum()
    }

    /// Width of the concatenated encoder output fed to the projection.
    pub fn concat_dim(&self) -> usize {
        self.dense_embed_dim + self.id_total() + self.duration_embed_dim
    }

    pub fn has_tower(&self) -> bool {
        !self.tower_dims.is_empty()
    }

    fn hidden_dim(&self) -> usize {
        self.mlp_dims.last().copied().unwrap_or(self.projection_out_dim)
    }

    fn tower_out(&self) -> usize {
        self.tower_dims.last().copied().unwrap_or(0)
    }
}

/// Weights stored input-major: row `i` holds the fan-out of input `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub fan_in: usize,
    pub fan_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            fan_in,
            fan_out,
            w: vec![0.0; fan_in * fan_out],
            b: vec![0.0; fan_out],
        }
    }

    fn glorot(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut l = Self::zeros(fan_in, fan_out);
        for w in &mut l.w {
            *w = rng.gen_range(-s..s);
        }
        l
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.w[i * self.fan_out..(i + 1) * self.fan_out]
    }

    /// `out[b] = bias + x[b] W` for each of `rows` rows.
    fn forward(&self, x: &[f64], rows: usize, out: &mut [f64]) {
        let (fi, fo) = (self.fan_in, self.fan_out);
        for r in 0..rows {
            let xr = &x[r * fi..(r + 1) * fi];
            let o = &mut out[r * fo..(r + 1) * fo];
            o.copy_from_slice(&self.b);
            for (i, &xi) in xr.iter().enumerate() {
                if xi != 0.0 {
                    axpy(o, xi, self.row(i));
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and, if asked, writes the
    /// input gradient into `dx`.
    fn backward(&self, x: &[f64], dy: &[f64], rows: usize, grad: &mut Linear, dx: Option<&mut [f64]>) {
        let (fi, fo) = (self.fan_in, self.fan_out);
        for r in 0..rows {
            let xr = &x[r * fi..(r + 1) * fi];
            let dyr = &dy[r * fo..(r + 1) * fo];
            axpy(&mut grad.b, 1.0, dyr);
            for (i, &xi) in xr.iter().enumerate() {
                if xi != 0.0 {
                    axpy(&mut grad.w[i * fo..(i + 1) * fo], xi, dyr);
                }
            }
        }
        if let Some(dx) = dx {
            for r in 0..rows {
                let dyr = &dy[r * fo..(r + 1) * fo];
                let dxr = &mut dx[r * fi..(r + 1) * fi];
                for (i, d) in dxr.iter_mut().enumerate() {
                    *d = dot(self.row(i), dyr);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vocab: usize,
    pub dim: usize,
    pub table: Vec<f64>,
}

impl Embedding {
    fn row(&self, id: u32) -> &[f64] {
        let i = id as usize;
        &self.table[i * self.dim..(i + 1) * self.dim]
    }

    fn row_mut(&mut self, id: u32) -> &mut [f64] {
        let i = id as usize;
        &mut self.table[i * self.dim..(i + 1) * self.dim]
    }
}

/// All trainable weights. Also used, with identical shapes, to hold gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams {
    pub arch: Architecture,
    pub dense_enc: Linear,
    pub id_tables: Vec<Embedding>,
    pub duration_enc: Linear,
    pub projection: Linear,
    pub mlp: Vec<Linear>,
    pub tower: Vec<Linear>,
    pub output: Linear,
}

impl NetParams {
    /// Glorot-uniform weights, zero biases. Embedding rows use fan-in 1.
    /// The tower is drawn last, so trunk weights do not depend on it.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dense_enc = Linear::glorot(arch.dense_len, arch.dense_embed_dim, &mut rng);
        let id_tables = arch
            .id_vocab
            .iter()
            .zip(&arch.id_dims)
            .map(|(&vocab, &dim)| {
                let s = (6.0 / (1 + dim) as f64).sqrt();
                Embedding {
                    vocab: vocab as usize,
                    dim,
                    table: (0..vocab as usize * dim).map(|_| rng.gen_range(-s..s)).collect(),
                }
            })
            .collect();
        let duration_enc = Linear::glorot(1, arch.duration_embed_dim, &mut rng);
        let projection = Linear::glorot(arch.concat_dim(), arch.projection_out_dim, &mut rng);
        let mut mlp = Vec::new();
        let mut width = arch.projection_out_dim;
        for &d in &arch.mlp_dims {
            mlp.push(Linear::glorot(width, d, &mut rng));
            width = d;
        }
        let output = Linear::glorot(arch.hidden_dim() + arch.tower_out(), arch.heads, &mut rng);
        let mut tower = Vec::new();
        let mut width = arch.duration_embed_dim;
        for &d in &arch.tower_dims {
            tower.push(Linear::glorot(width, d, &mut rng));
            width = d;
        }
        Self {
            arch: arch.clone(),
            dense_enc,
            id_tables,
            duration_enc,
            projection,
            mlp,
            tower,
            output,
        }
    }

    pub fn zeros(arch: &Architecture) -> Self {
        let mut p = Self::init(arch, 0);
        p.for_each_tensor_mut(|_, t| t.iter_mut().for_each(|x| *x = 0.0));
        p
    }

    fn linears(&self) -> Vec<&Linear> {
        let mut v = vec![&self.dense_enc, &self.duration_enc, &self.projection];
        v.extend(self.mlp.iter());
        v.extend(self.tower.iter());
        v.push(&self.output);
        v
    }

    fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut v = vec![&mut self.dense_enc, &mut self.duration_enc, &mut self.projection];
        v.extend(self.mlp.iter_mut());
        v.extend(self.tower.iter_mut());
        v.push(&mut self.output);
        v
    }

    /// Named tensors in canonical order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn lin<'a>(name: String, l: &'a Linear, out: &mut Vec<(String, Vec<usize>, &'a [f64])>) {
            out.push((format!("{name}.w"), vec![l.fan_in, l.fan_out], l.w.as_slice()));
            out.push((format!("{name}.b"), vec![l.fan_out], l.b.as_slice()));
        }
        let mut out = Vec::new();
        lin("dense_enc".into(), &self.dense_enc, &mut out);
        for (s, t) in self.id_tables.iter().enumerate() {
            out.push((format!("id_table.{s}"), vec![t.vocab, t.dim], t.table.as_slice()));
        }
        lin("duration_enc".into(), &self.duration_enc, &mut out);
        lin("projection".into(), &self.projection, &mut out);
        for (i, l) in self.mlp.iter().enumerate() {
            lin(format!("mlp.{i}"), l, &mut out);
        }
        for (i, l) in self.tower.iter().enumerate() {
            lin(format!("tower.{i}"), l, &mut out);
        }
        lin("output".into(), &self.output, &mut out);
        out
    }

    /// Visits every tensor in the same order as [`NetParams::tensors`].
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut [f64])) {
        f("dense_enc.w", &mut self.dense_enc.w);
        f("dense_enc.b", &mut self.dense_enc.b);
        for t in &mut self.id_tables {
            f("id_table", &mut t.table);
        }
        f("duration_enc.w", &mut self.duration_enc.w);
        f("duration_enc.b", &mut self.duration_enc.b);
        f("projection.w", &mut self.projection.w);
        f("projection.b", &mut self.projection.b);
        for l in &mut self.mlp {
            f("mlp.w", &mut l.w);
            f("mlp.b", &mut l.b);
        }
        for l in &mut self.tower {
            f("tower.w", &mut l.w);
            f("tower.b", &mut l.b);
        }
        f("output.w", &mut self.output.w);
        f("output.b", &mut self.output.b);
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.2.iter().all(|x| x.is_finite()))
    }

    /// Rebuilds parameters from a flat payload laid out as [`NetParams::tensors`].
    pub fn from_flat(arch: &Architecture, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(arch);
        let total = p.num_params();
        if flat.len() != total {
            return Err(Error::Shape(format!("expected {total} parameters, got {}", flat.len())));
        }
        let mut off = 0;
        p.for_each_tensor_mut(|_, t| {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        });
        Ok(p)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.2.iter().copied()).collect()
    }
}

/// Supervision for one output head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTarget {
    pub loss: LossKind,
    pub labels: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HeadTarget {
    pub fn unweighted(loss: LossKind, labels: Vec<f64>) -> Self {
        let weights = vec![1.0; labels.len()];
        Self { loss, labels, weights }
    }
}

/// Row-aligned model inputs. `duration` is the standardized duration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub dense: Vec<f64>,
    pub ids: Vec<u32>,
    pub duration: Vec<f64>,
    pub targets: Vec<HeadTarget>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.duration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.duration.is_empty()
    }

    fn check(&self, arch: &Architecture) -> Result<()> {
        let n = self.len();
        if self.dense.len() != n * arch.dense_len {
            return Err(Error::Shape(format!(
                "dense block has {} values, expected {n} x {}",
                self.dense.len(),
                arch.dense_len
            )));
        }
        let slots = arch.id_vocab.len();
        if self.ids.len() != n * slots {
            return Err(Error::Shape(format!(
                "id block has {} values, expected {n} x {slots}",
                self.ids.len()
            )));
        }
        for (j, &id) in self.ids.iter().enumerate() {
            if id >= arch.id_vocab[j % slots] {
                return Err(Error::Shape(format!(
                    "row {} slot {}: id {id} out of vocabulary {}",
                    j / slots,
                    j % slots,
                    arch.id_vocab[j % slots]
                )));
            }
        }
        for t in &self.targets {
            if t.labels.len() != n || t.weights.len() != n {
                return Err(Error::Shape("targets not row-aligned with inputs".into()));
            }
        }
        Ok(())
    }

    fn check_targets(&self, arch: &Architecture) -> Result<()> {
        if self.targets.len() != arch.heads {
            return Err(Error::Shape(format!(
                "{} targets for {} heads",
                self.targets.len(),
                arch.heads
            )));
        }
        for t in &self.targets {
            if t.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::invalid("sample weights must be finite and >= 0"));
            }
            if t.loss == LossKind::WeightedLogLoss {
                if arch.output_head != OutputHead::Sigmoid {
                    return Err(Error::invalid("log-loss requires a sigmoid head"));
                }
                if t.labels.iter().any(|&y| y != 0.0 && y != 1.0) {
                    return Err(Error::invalid("log-loss labels must be 0 or 1"));
                }
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Forward activations kept for the backward pass.
struct Tape {
    rows: usize,
    e_dur: Vec<f64>,
    x0: Vec<f64>,
    proj: Vec<f64>,
    /// Pre-activations and outputs of each MLP layer.
    mlp_z: Vec<Vec<f64>>,
    mlp_a: Vec<Vec<f64>>,
    tower_z: Vec<Vec<f64>>,
    tower_a: Vec<Vec<f64>>,
    hidden: Vec<f64>,
    out: Vec<f64>,
}

fn forward_tape(p: &NetParams, b: &Batch) -> Tape {
    let a = &p.arch;
    let rows = b.len();
    let cd = a.concat_dim();
    let mut x0 = vec![0.0; rows * cd];

    let mut e_dense = vec![0.0; rows * a.dense_embed_dim];
    p.dense_enc.forward(&b.dense, rows, &mut e_dense);
    let mut e_dur = vec![0.0; rows * a.duration_embed_dim];
    p.duration_enc.forward(&b.duration, rows, &mut e_dur);
    let slots = a.id_vocab.len();
    let id_off = a.dense_embed_dim;
    let dur_off = id_off + a.id_total();
    for r in 0..rows {
        let row = &mut x0[r * cd..(r + 1) * cd];
        row[..id_off].copy_from_slice(&e_dense[r * a.dense_embed_dim..(r + 1) * a.dense_embed_dim]);
        let mut off = id_off;
        for (s, t) in p.id_tables.iter().enumerate() {
            row[off..off + t.dim].copy_from_slice(t.row(b.ids[r * slots + s]));
            off += t.dim;
        }
        row[dur_off..].copy_from_slice(&e_dur[r * a.duration_embed_dim..(r + 1) * a.duration_embed_dim]);
    }

    let mut proj = vec![0.0; rows * a.projection_out_dim];
    p.projection.forward(&x0, rows, &mut proj);

    let depth = p.mlp.len();
    let mut mlp_z = Vec::with_capacity(depth);
    let mut mlp_a: Vec<Vec<f64>> = Vec::with_capacity(depth);
    for (l, layer) in p.mlp.iter().enumerate() {
        let input = if l == 0 { &proj } else { &mlp_a[l - 1] };
        let mut z = vec![0.0; rows * layer.fan_out];
        layer.forward(input, rows, &mut z);
        let act = if l + 1 < depth {
            z.iter().map(|&v| swish(v)).collect()
        } else {
            z.clone()
        };
        mlp_z.push(z);
        mlp_a.push(act);
    }

    let mut tower_z = Vec::with_capacity(p.tower.len());
    let mut tower_a: Vec<Vec<f64>> = Vec::with_capacity(p.tower.len());
    for (l, layer) in p.tower.iter().enumerate() {
        let input = if l == 0 { &e_dur } else { &tower_a[l - 1] };
        let mut z = vec![0.0; rows * layer.fan_out];
        layer.forward(input, rows, &mut z);
        tower_a.push(z.iter().map(|&v| swish(v)).collect());
        tower_z.push(z);
    }

    let hd = a.hidden_dim();
    let td = a.tower_out();
    let h_last = &mlp_a[depth - 1];
    let hidden = if td == 0 {
        h_last.clone()
    } else {
        let t_last = &tower_a[tower_a.len() - 1];
        let mut h = vec![0.0; rows * (hd + td)];
        for r in 0..rows {
            h[r * (hd + td)..r * (hd + td) + hd].copy_from_slice(&h_last[r * hd..(r + 1) * hd]);
            h[r * (hd + td) + hd..(r + 1) * (hd + td)].copy_from_slice(&t_last[r * td..(r + 1) * td]);
        }
        h
    };

    let mut out = vec![0.0; rows * a.heads];
    p.output.forward(&hidden, rows, &mut out);
    if a.output_head == OutputHead::Sigmoid {
        out.iter_mut().for_each(|v| *v = sigmoid(*v));
    }
    Tape {
        rows,
        e_dur,
        x0,
        proj,
        mlp_z,
        mlp_a,
        tower_z,
        tower_a,
        hidden,
        out,
    }
}

/// `d_out` is dL/d(prediction) per row and head (after the head activation).
fn backward_tape(p: &NetParams, b: &Batch, tape: &Tape, d_out: &[f64], grad: &mut NetParams) -> Vec<f64> {
    let a = &p.arch;
    let rows = tape.rows;
    let heads = a.heads;

    let mut d_logit = d_out.to_vec();
    if a.output_head == OutputHead::Sigmoid {
        for (d, &y) in d_logit.iter_mut().zip(&tape.out) {
            *d *= y * (1.0 - y);
        }
    }
    let hd = a.hidden_dim();
    let td = a.tower_out();
    let mut d_hidden = vec![0.0; rows * (hd + td)];
    p.output
        .backward(&tape.hidden, &d_logit, rows, &mut grad.output, Some(&mut d_hidden));
    debug_assert_eq!(d_logit.len(), rows * heads);

    let (mut d_h, d_t) = if td == 0 {
        (d_hidden, Vec::new())
    } else {
        let mut dh = vec![0.0; rows * hd];
        let mut dt = vec![0.0; rows * td];
        for r in 0..rows {
            let src = &d_hidden[r * (hd + td)..(r + 1) * (hd + td)];
            dh[r * hd..(r + 1) * hd].copy_from_slice(&src[..hd]);
            dt[r * td..(r + 1) * td].copy_from_slice(&src[hd..]);
        }
        (dh, dt)
    };

    // duration embedding gradient, fed by the tower and the trunk
    let dd = a.duration_embed_dim;
    let mut d_e_dur = vec![0.0; rows * dd];

    if td > 0 {
        let mut d_act = d_t;
        for l in (0..p.tower.len()).rev() {
            let z = &tape.tower_z[l];
            let dz: Vec<f64> = d_act.iter().zip(z).map(|(&g, &zv)| g * swish_grad(zv)).collect();
            let input = if l == 0 { &tape.e_dur } else { &tape.tower_a[l - 1] };
            let mut d_in = vec![0.0; rows * p.tower[l].fan_in];
            p.tower[l].backward(input, &dz, rows, &mut grad.tower[l], Some(&mut d_in));
            d_act = d_in;
        }
        d_e_dur = d_act;
    }

    let depth = p.mlp.len();
    for l in (0..depth).rev() {
        let dz: Vec<f64> = if l + 1 < depth {
            d_h.iter()
                .zip(&tape.mlp_z[l])
                .map(|(&g, &z)| g * swish_grad(z))
                .collect()
        } else {
            d_h
        };
        let input = if l == 0 { &tape.proj } else { &tape.mlp_a[l - 1] };
        let mut d_in = vec![0.0; rows * p.mlp[l].fan_in];
        p.mlp[l].backward(input, &dz, rows, &mut grad.mlp[l], Some(&mut d_in));
        d_h = d_in;
    }

    let cd = a.concat_dim();
    let mut d_x0 = vec![0.0; rows * cd];
    p.projection
        .backward(&tape.x0, &d_h, rows, &mut grad.projection, Some(&mut d_x0));

    let de = a.dense_embed_dim;
    let it = a.id_total();
    let mut d_dense = vec![0.0; rows * de];
    let mut d_ids = vec![0.0; rows * it];
    for r in 0..rows {
        let src = &d_x0[r * cd..(r + 1) * cd];
        d_dense[r * de..(r + 1) * de].copy_from_slice(&src[..de]);
        d_ids[r * it..(r + 1) * it].copy_from_slice(&src[de..de + it]);
        for (acc, &g) in d_e_dur[r * dd..(r + 1) * dd].iter_mut().zip(&src[de + it..]) {
            *acc += g;
        }
    }
    p.dense_enc
        .backward(&b.dense, &d_dense, rows, &mut grad.dense_enc, None);
    p.duration_enc
        .backward(&b.duration, &d_e_dur, rows, &mut grad.duration_enc, None);
    d_ids
}

/// Per-head predictions, each of batch length.
pub fn forward_heads(p: &NetParams, b: &Batch) -> Result<Vec<Vec<f64>>> {
    b.check(&p.arch)?;
    let tape = forward_tape(p, b);
    let heads = p.arch.heads;
    Ok((0..heads)
        .map(|h| tape.out.iter().skip(h).step_by(heads).copied().collect())
        .collect())
}

/// Predictions of the first head.
pub fn forward(p: &NetParams, b: &Batch) -> Result<Vec<f64>> {
    Ok(forward_heads(p, b)?.swap_remove(0))
}

fn check_lengths(pred: &[f64], label: &[f64], weight: &[f64]) -> Result<()> {
    if pred.len() != label.len() || pred.len() != weight.len() {
        return Err(Error::Shape(format!(
            "lengths differ: pred {}, label {}, weight {}",
            pred.len(),
            label.len(),
            weight.len()
        )));
    }
    Ok(())
}

/// `sum w (pred - label)^2 / sum w`; zero when every weight is zero.
pub fn loss_mse(pred: &[f64], label: &[f64], weight: &[f64]) -> Result<f64> {
    check_lengths(pred, label, weight)?;
    Ok(mse_unchecked(pred, label, weight))
}

fn mse_unchecked(pred: &[f64], label: &[f64], weight: &[f64]) -> f64 {
    let sw: f64 = weight.iter().sum();
    if sw == 0.0 {
        return 0.0;
    }
    let s: f64 = pred
        .iter()
        .zip(label)
        .zip(weight)
        .map(|((p, y), w)| w * (p - y) * (p - y))
        .sum();
    s / sw
}

/// Weighted binary cross-entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn loss_weighted_logloss(pred: &[f64], label: &[f64], weight: &[f64]) -> Result<f64> {
    check_lengths(pred, label, weight)?;
    if let Some(y) = label.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(Error::invalid(format!("log-loss label {y} is not 0 or 1")));
    }
    Ok(logloss_unchecked(pred, label, weight))
}

fn logloss_unchecked(pred: &[f64], label: &[f64], weight: &[f64]) -> f64 {
    let sw: f64 = weight.iter().sum();
    if sw == 0.0 {
        return 0.0;
    }
    let s: f64 = pred
        .iter()
        .zip(label)
        .zip(weight)
        .map(|((&p, &y), &w)| {
            let pc = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -w * (y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
        })
        .sum();
    s / sw
}

/// Total loss and dL/d(prediction), row-major `rows x heads`.
fn loss_and_grad(out: &[f64], targets: &[HeadTarget], heads: usize) -> (f64, Vec<f64>) {
    let rows = out.len() / heads;
    let mut d = vec![0.0; out.len()];
    let mut total = 0.0;
    for (h, t) in targets.iter().enumerate() {
        let pred: Vec<f64> = out.iter().skip(h).step_by(heads).copied().collect();
        let sw: f64 = t.weights.iter().sum();
        if sw == 0.0 {
            continue;
        }
        match t.loss {
            LossKind::Mse => {
                total += mse_unchecked(&pred, &t.labels, &t.weights);
                for r in 0..rows {
                    d[r * heads + h] = 2.0 * t.weights[r] * (pred[r] - t.labels[r]) / sw;
                }
            }
            LossKind::WeightedLogLoss => {
                total += logloss_unchecked(&pred, &t.labels, &t.weights);
                for r in 0..rows {
                    let p = pred[r];
                    // derivative of the clamped loss; flat outside the clamp
                    if p > PROB_EPS && p < 1.0 - PROB_EPS {
                        let y = t.labels[r];
                        d[r * heads + h] = t.weights[r] / sw * (p - y) / (p * (1.0 - p));
                    }
                }
            }
        }
    }
    (total, d)
}

/// Loss of the batch under its own targets.
pub fn batch_loss(p: &NetParams, b: &Batch) -> Result<f64> {
    b.check(&p.arch)?;
    b.check_targets(&p.arch)?;
    let tape = forward_tape(p, b);
    Ok(loss_and_grad(&tape.out, &b.targets, p.arch.heads).0)
}

/// Exact gradient of [`batch_loss`] with respect to every parameter.
pub fn backward(p: &NetParams, b: &Batch) -> Result<NetParams> {
    b.check(&p.arch)?;
    b.check_targets(&p.arch)?;
    let tape = forward_tape(p, b);
    let (_, d_out) = loss_and_grad(&tape.out, &b.targets, p.arch.heads);
    let mut grad = NetParams::zeros(&p.arch);
    let d_ids = backward_tape(p, b, &tape, &d_out, &mut grad);
    scatter_id_grads(&p.arch, b, &d_ids, 1.0, false, &mut grad.id_tables);
    Ok(grad)
}

/// Adds `scale * d_ids` into the referenced embedding rows. With `row_mean`
/// each contribution is also multiplied by `batch / occurrences`, so a row
/// seen once takes a full-batch step and a row seen many times takes the mean
/// of its per-sample steps.
fn scatter_id_grads(
    arch: &Architecture,
    b: &Batch,
    d_ids: &[f64],
    scale: f64,
    row_mean: bool,
    tables: &mut [Embedding],
) {
    let slots = arch.id_vocab.len();
    let it = arch.id_total();
    let mut counts: HashMap<(usize, u32), usize> = HashMap::new();
    if row_mean {
        for (j, &id) in b.ids.iter().enumerate() {
            *counts.entry((j % slots, id)).or_default() += 1;
        }
    }
    let n = b.len() as f64;
    for r in 0..b.len() {
        let mut off = 0;
        for (s, t) in tables.iter_mut().enumerate() {
            let dim = t.dim;
            let id = b.ids[r * slots + s];
            let k = if row_mean {
                scale * n / counts[&(s, id)] as f64
            } else {
                scale
            };
            axpy(t.row_mut(id), k, &d_ids[r * it + off..r * it + off + dim]);
            off += dim;
        }
    }
}

/// A full training set in batch layout.
pub type TrainSet = Batch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per epoch, as seen during the epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

fn gather(src: &Batch, idx: &[usize], dense_len: usize, slots: usize, dst: &mut Batch) {
    dst.dense.clear();
    dst.ids.clear();
    dst.duration.clear();
    for &i in idx {
        dst.dense
            .extend_from_slice(&src.dense[i * dense_len..(i + 1) * dense_len]);
        dst.ids.extend_from_slice(&src.ids[i * slots..(i + 1) * slots]);
        dst.duration.push(src.duration[i]);
    }
    dst.targets
        .resize_with(src.targets.len(), || HeadTarget::unweighted(LossKind::Mse, Vec::new()));
    for (d, s) in dst.targets.iter_mut().zip(&src.targets) {
        d.loss = s.loss;
        d.labels.clear();
        d.weights.clear();
        for &i in idx {
            d.labels.push(s.labels[i]);
            d.weights.push(s.weights[i]);
        }
    }
}

/// Mini-batch SGD over a reshuffled order each epoch.
///
/// Given the same config, architecture and data, the returned parameters are
/// bit-identical across runs.
pub fn train(c: &ModelConfig, arch: &Architecture, data: &TrainSet) -> Result<(NetParams, TrainReport)> {
    c.validate()?;
    data.check(arch)?;
    data.check_targets(arch)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = NetParams::init(arch, c.seed);
    let mut velocity = (c.momentum > 0.0).then(|| NetParams::zeros(arch));
    let mut order_rng = ChaCha8Rng::seed_from_u64(c.seed ^ 0x5EED_0F0D_E12D_u64);
    let n = data.len();
    let slots = arch.id_vocab.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut batch = Batch::default();
    let mut grad = NetParams::zeros(arch);
    let mut epoch_losses = Vec::with_capacity(c.epochs);
    let mut steps = 0;

    for epoch in 0..c.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (bi, idx) in order.chunks(c.batch_size).enumerate() {
            gather(data, idx, arch.dense_len, slots, &mut batch);
            let tape = forward_tape(&params, &batch);
            let (loss, d_out) = loss_and_grad(&tape.out, &batch.targets, arch.heads);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss,
                    epoch,
                    batch: bi,
                    learning_rate: c.learning_rate,
                });
            }
            loss_sum += loss;
            batches += 1;

            zero_dense(&mut grad);
            let d_ids = backward_tape(&params, &batch, &tape, &d_out, &mut grad);
            apply_dense_update(&mut params, &grad, velocity.as_mut(), c);
            let emb_lr = c.learning_rate * c.embedding_lr_scale;
            scatter_id_grads(arch, &batch, &d_ids, -emb_lr, true, &mut params.id_tables);
            steps += 1;
        }
        epoch_losses.push(loss_sum / batches as f64);
        if !params.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss: f64::NAN,
                epoch,
                batch: batches,
                learning_rate: c.learning_rate,
            });
        }
    }
    Ok((params, TrainReport { epoch_losses, steps }))
}

fn zero_dense(g: &mut NetParams) {
    for l in g.linears_mut() {
        l.w.iter_mut().for_each(|x| *x = 0.0);
        l.b.iter_mut().for_each(|x| *x = 0.0);
    }
}

fn apply_dense_update(p: &mut NetParams, g: &NetParams, velocity: Option<&mut NetParams>, c: &ModelConfig) {
    let lr = c.learning_rate;
    match velocity {
        None => {
            for (pl, gl) in p.linears_mut().into_iter().zip(g.linears()) {
                axpy(&mut pl.w, -lr, &gl.w);
                axpy(&mut pl.b, -lr, &gl.b);
            }
        }
        Some(v) => {
            for ((pl, vl), gl) in p.linears_mut().into_iter().zip(v.linears_mut()).zip(g.linears()) {
                for (vx, gx) in vl.w.iter_mut().zip(&gl.w) {
                    *vx = c.momentum * *vx + gx;
                }
                for (vx, gx) in vl.b.iter_mut().zip(&gl.b) {
                    *vx = c.momentum * *vx + gx;
                }
                axpy(&mut pl.w, -lr, &vl.w);
                axpy(&mut pl.b, -lr, &vl.b);
            }
        }
    }
}
