//! Minimal differentiable model.
//!
//! A [`ModelState`] is a dense rectifier feature embedding `z = f(x)` shared by
//! two linear softmax heads: the class-balanced head `g` and the
//! random-sampling head `g'`. Gradients are derived by hand for the losses the
//! trainer needs (cross-entropy, temporal-consistency KL and their weighted
//! sum), and parameters are updated with momentum SGD under a cosine learning
//! rate schedule.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{self, LossValue};
use crate::rng::Rng;

/// Fully connected layer, weights stored row-major as `[n_out][n_in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
        }
    }

    /// He-normal weights, zero bias.
    pub fn he_init(n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        let std = (2.0 / n_in as f64).sqrt();
        let weight = (0..n_in * n_out)
            .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        Self {
            n_in,
            n_out,
            weight,
            bias: vec![0.0; n_out],
        }
    }

    fn affine_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weight
                .chunks_exact(self.n_in)
                .zip(&self.bias)
                .map(|(row, b)| b + dot(row, x)),
        );
    }

    fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Feature embedding `f(x; θ)`: a stack of dense layers, each followed by a
/// rectifier. The last layer's width is the embedding dimension `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    pub layers: Vec<Dense>,
}

impl EmbeddingParams {
    /// `dims = [d_in, h_1, ..., d]`.
    pub fn new(dims: &[usize], rng: &mut Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "embedding needs an input width and at least one layer".into(),
            ));
        }
        if let Some(pos) = dims.iter().position(|&w| w == 0) {
            return Err(Error::Config(format!("layer width {pos} is zero")));
        }
        let layers = dims
            .windows(2)
            .map(|w| Dense::he_init(w[0], w[1], rng))
            .collect();
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("embedding has no layers".into()));
        }
        for pair in self.layers.windows(2) {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::shape("embedding layer chain", pair[0].n_out, pair[1].n_in));
            }
        }
        for l in &self.layers {
            if l.weight.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::shape("embedding layer buffers", l.n_in * l.n_out, l.weight.len()));
            }
        }
        if !self.layers.iter().all(Dense::is_finite) {
            return Err(Error::Numeric("embedding has non-finite parameters".into()));
        }
        Ok(())
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    /// `z = f(x)`.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.affine_into(&cur, &mut next);
            relu_in_place(&mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Forward pass keeping every layer's input; the last entry is `z`.
    fn embed_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let mut out = Vec::with_capacity(layer.n_out);
            layer.affine_into(acts.last().unwrap(), &mut out);
            relu_in_place(&mut out);
            acts.push(out);
        }
        acts
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Linear softmax classifier `ν(W z + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub num_classes: usize,
    pub dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ClassifierParams {
    pub fn zeros(num_classes: usize, dim: usize) -> Self {
        Self {
            num_classes,
            dim,
            weight: vec![0.0; num_classes * dim],
            bias: vec![0.0; num_classes],
        }
    }

    /// Uniform weights in `±1/sqrt(d)`, zero bias.
    pub fn init(num_classes: usize, dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let weight = (0..num_classes * dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            num_classes,
            dim,
            weight,
            bias: vec![0.0; num_classes],
        }
    }

    pub fn logits(&self, z: &[f64]) -> Vec<f64> {
        self.weight
            .chunks_exact(self.dim)
            .zip(&self.bias)
            .map(|(row, b)| b + dot(row, z))
            .collect()
    }

    pub fn probs(&self, z: &[f64]) -> Vec<f64> {
        softmax(&self.logits(z))
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight.len() != self.num_classes * self.dim {
            return Err(Error::shape("classifier weight", self.num_classes * self.dim, self.weight.len()));
        }
        if self.bias.len() != self.num_classes {
            return Err(Error::shape("classifier bias", self.num_classes, self.bias.len()));
        }
        if !self.weight.iter().chain(&self.bias).all(|v| v.is_finite()) {
            return Err(Error::Numeric("classifier has non-finite parameters".into()));
        }
        Ok(())
    }
}

/// Which classifier head a computation goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// `g`, trained with class-balanced sampling on labeled data.
    Balanced,
    /// `g'`, trained with random sampling together with the embedding.
    Random,
}

/// Embedding plus both classifier heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub embedding: EmbeddingParams,
    pub head_balanced: ClassifierParams,
    pub head_random: ClassifierParams,
}

impl ModelState {
    /// Fresh model: He-initialised embedding of widths `[d_in, hidden..]` and
    /// two independently initialised heads.
    pub fn new(input_dim: usize, hidden: &[usize], num_classes: usize, rng: &mut Rng) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
        }
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        let embedding = EmbeddingParams::new(&dims, rng)?;
        let d = embedding.output_dim();
        let head_random = ClassifierParams::init(num_classes, d, rng);
        let head_balanced = ClassifierParams::init(num_classes, d, rng);
        Ok(Self {
            embedding,
            head_balanced,
            head_random,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.head_balanced.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.embedding.input_dim()
    }

    pub fn head(&self, head: Head) -> &ClassifierParams {
        match head {
            Head::Balanced => &self.head_balanced,
            Head::Random => &self.head_random,
        }
    }

    pub fn head_mut(&mut self, head: Head) -> &mut ClassifierParams {
        match head {
            Head::Balanced => &mut self.head_balanced,
            Head::Random => &mut self.head_random,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.head_balanced.validate()?;
        self.head_random.validate()?;
        let d = self.embedding.output_dim();
        for head in [&self.head_balanced, &self.head_random] {
            if head.dim != d {
                return Err(Error::shape("classifier input dim", d, head.dim));
            }
        }
        if self.head_balanced.num_classes != self.head_random.num_classes {
            return Err(Error::shape(
                "head class count",
                self.head_balanced.num_classes,
                self.head_random.num_classes,
            ));
        }
        Ok(())
    }

    /// Argmax prediction through `head`.
    pub fn predict(&self, x: &[f64], head: Head) -> usize {
        argmax(&self.head(head).logits(&self.embedding.embed(x)))
    }
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// Log-softmax through log-sum-exp.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `z = f(x)` and `head(z)` probabilities.
pub fn forward(x: &[f64], model: &ModelState, head: Head) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != model.input_dim() {
        return Err(Error::shape("forward input", model.input_dim(), x.len()));
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite input features".into()));
    }
    let z = model.embedding.embed(x);
    let probs = model.head(head).probs(&z);
    Ok((z, probs))
}

/// Loss terms a backward pass differentiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Mean cross-entropy over the batch.
    CrossEntropy,
    /// Mean KL(prev || cur) over samples carrying a previous distribution.
    Consistency,
    /// Cross-entropy plus `lambda` times consistency.
    Semi { lambda: f64 },
}

/// What to differentiate and which parameters may move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub objective: Objective,
    pub head: Head,
    /// `false` freezes θ: the embedding receives no gradient.
    pub train_embedding: bool,
}

impl LossSpec {
    pub fn cross_entropy(head: Head, train_embedding: bool) -> Self {
        Self {
            objective: Objective::CrossEntropy,
            head,
            train_embedding,
        }
    }

    pub fn semi(lambda: f64) -> Self {
        Self {
            objective: Objective::Semi { lambda },
            head: Head::Random,
            train_embedding: true,
        }
    }

    /// Classifier-only cross-entropy through `g` with θ frozen.
    pub fn supervised() -> Self {
        Self::cross_entropy(Head::Balanced, false)
    }

    fn weights(&self) -> (f64, f64) {
        match self.objective {
            Objective::CrossEntropy => (1.0, 0.0),
            Objective::Consistency => (0.0, 1.0),
            Objective::Semi { lambda } => (1.0, lambda),
        }
    }
}

/// One training example as seen by a backward pass.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub label: Option<usize>,
    /// Previous-epoch class distribution, held constant.
    pub prev: Option<&'a [f64]>,
}

/// Gradients for whichever parameter groups were trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub embedding: Option<EmbeddingParams>,
    pub head_balanced: Option<ClassifierParams>,
    pub head_random: Option<ClassifierParams>,
}

impl Gradients {
    pub fn head(&self, head: Head) -> Option<&ClassifierParams> {
        match head {
            Head::Balanced => self.head_balanced.as_ref(),
            Head::Random => self.head_random.as_ref(),
        }
    }

    /// Flattened gradient tensors in the canonical parameter order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if let Some(e) = &self.embedding {
            for l in &e.layers {
                out.push(&l.weight);
                out.push(&l.bias);
            }
        }
        for h in [&self.head_balanced, &self.head_random].into_iter().flatten() {
            out.push(&h.weight);
            out.push(&h.bias);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Trainable tensors of `model` under the same ordering as
/// [`Gradients::tensors`] for a gradient produced with `spec`.
fn trainable_tensors_mut<'m>(model: &'m mut ModelState, grads: &Gradients) -> Vec<&'m mut Vec<f64>> {
    let mut out = Vec::new();
    let ModelState {
        embedding,
        head_balanced,
        head_random,
    } = model;
    if grads.embedding.is_some() {
        for l in &mut embedding.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
    }
    if grads.head_balanced.is_some() {
        out.push(&mut head_balanced.weight);
        out.push(&mut head_balanced.bias);
    }
    if grads.head_random.is_some() {
        out.push(&mut head_random.weight);
        out.push(&mut head_random.bias);
    }
    out
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub loss: LossValue,
    pub grads: Gradients,
    /// Current class probabilities per sample, in batch order.
    pub probs: Vec<Vec<f64>>,
}

struct HeadPass {
    loss: LossValue,
    probs: Vec<Vec<f64>>,
    /// dL/dlogits per sample, already divided by the reduction counts.
    dlogits: Vec<Vec<f64>>,
}

fn head_pass(head: &ClassifierParams, zs: &[Vec<f64>], batch: &[Sample<'_>], spec: &LossSpec) -> Result<HeadPass> {
    let (ce_w, kl_w) = spec.weights();
    let c = head.num_classes;
    let n = batch.len();
    let n_kl = batch.iter().filter(|s| s.prev.is_some()).count();
    let mut ce_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut probs = Vec::with_capacity(n);
    let mut dlogits = Vec::with_capacity(n);
    for (i, (z, s)) in zs.iter().zip(batch).enumerate() {
        let logits = head.logits(z);
        let logp = log_softmax(&logits);
        let p: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let mut d = vec![0.0; c];
        if ce_w != 0.0 {
            let y = s.label.ok_or_else(|| {
                Error::Contract(format!("sample {i} has no label but the objective needs cross-entropy"))
            })?;
            if y >= c {
                return Err(Error::Data(format!("sample {i} label {y} out of range for {c} classes")));
            }
            ce_sum += losses::ce_from_log_probs(&logp, y);
            let scale = ce_w / n as f64;
            for (dj, pj) in d.iter_mut().zip(&p) {
                *dj += scale * pj;
            }
            d[y] -= scale;
        }
        if kl_w != 0.0 {
            if let Some(prev) = s.prev {
                if prev.len() != c {
                    return Err(Error::shape("previous distribution", c, prev.len()));
                }
                kl_sum += losses::kl_from_log_probs(prev, &logp);
                let mass: f64 = prev.iter().sum();
                let scale = kl_w / n_kl as f64;
                for ((dj, pj), qj) in d.iter_mut().zip(&p).zip(prev) {
                    *dj += scale * (pj * mass - qj);
                }
            }
        }
        probs.push(p);
        dlogits.push(d);
    }
    let ce_part = if ce_w != 0.0 && n > 0 { ce_sum / n as f64 } else { 0.0 };
    let consistency_part = if kl_w != 0.0 && n_kl > 0 { kl_sum / n_kl as f64 } else { 0.0 };
    let total = ce_w * ce_part + kl_w * consistency_part;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss over a batch of {n}: ce={ce_part}, consistency={consistency_part}"
        )));
    }
    Ok(HeadPass {
        loss: LossValue {
            total,
            ce_part,
            consistency_part,
        },
        probs,
        dlogits,
    })
}

fn head_grad(head: &ClassifierParams, zs: &[Vec<f64>], dlogits: &[Vec<f64>]) -> ClassifierParams {
    let mut g = ClassifierParams::zeros(head.num_classes, head.dim);
    for (z, d) in zs.iter().zip(dlogits) {
        for (k, &dk) in d.iter().enumerate() {
            if dk != 0.0 {
                axpy(dk, z, &mut g.weight[k * head.dim..(k + 1) * head.dim]);
                g.bias[k] += dk;
            }
        }
    }
    g
}

/// Loss and gradients for a batch whose embeddings are already computed.
/// Only the chosen head receives a gradient.
pub fn head_backward(
    head_params: &ClassifierParams,
    head: Head,
    zs: &[Vec<f64>],
    batch: &[Sample<'_>],
    spec: &LossSpec,
) -> Result<BackwardOutput> {
    let pass = head_pass(head_params, zs, batch, spec)?;
    let g = head_grad(head_params, zs, &pass.dlogits);
    let (head_balanced, head_random) = match head {
        Head::Balanced => (Some(g), None),
        Head::Random => (None, Some(g)),
    };
    Ok(BackwardOutput {
        loss: pass.loss,
        grads: Gradients {
            embedding: None,
            head_balanced,
            head_random,
        },
        probs: pass.probs,
    })
}

/// Analytic gradients of `spec`'s loss over `batch`.
pub fn backward(batch: &[Sample<'_>], model: &ModelState, spec: &LossSpec) -> Result<BackwardOutput> {
    for s in batch {
        if s.x.len() != model.input_dim() {
            return Err(Error::shape("backward input", model.input_dim(), s.x.len()));
        }
    }
    let head = model.head(spec.head);
    if !spec.train_embedding {
        let zs: Vec<Vec<f64>> = batch.iter().map(|s| model.embedding.embed(s.x)).collect();
        return head_backward(head, spec.head, &zs, batch, spec);
    }

    let caches: Vec<Vec<Vec<f64>>> = batch.iter().map(|s| model.embedding.embed_cached(s.x)).collect();
    let zs: Vec<Vec<f64>> = caches.iter().map(|c| c.last().unwrap().clone()).collect();
    let pass = head_pass(head, &zs, batch, spec)?;
    let hg = head_grad(head, &zs, &pass.dlogits);

    let mut eg = model.embedding.zeros_like();
    let layers = &model.embedding.layers;
    for (acts, dlog) in caches.iter().zip(&pass.dlogits) {
        // dL/dz = Wᵀ dlogits
        let mut delta = vec![0.0; head.dim];
        for (k, &dk) in dlog.iter().enumerate() {
            if dk != 0.0 {
                axpy(dk, &head.weight[k * head.dim..(k + 1) * head.dim], &mut delta);
            }
        }
        for li in (0..layers.len()).rev() {
            let layer = &layers[li];
            let out = &acts[li + 1];
            let input = &acts[li];
            for (dv, &o) in delta.iter_mut().zip(out) {
                if o <= 0.0 {
                    *dv = 0.0;
                }
            }
            let grad = &mut eg.layers[li];
            let mut next = if li > 0 { vec![0.0; layer.n_in] } else { Vec::new() };
            for (o, &dv) in delta.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                let row = o * layer.n_in..(o + 1) * layer.n_in;
                axpy(dv, input, &mut grad.weight[row.clone()]);
                grad.bias[o] += dv;
                if li > 0 {
                    axpy(dv, &layer.weight[row], &mut next);
                }
            }
            delta = next;
        }
    }
    let (head_balanced, head_random) = match spec.head {
        Head::Balanced => (Some(hg), None),
        Head::Random => (None, Some(hg)),
    };
    Ok(BackwardOutput {
        loss: pass.loss,
        grads: Gradients {
            embedding: Some(eg),
            head_balanced,
            head_random,
        },
        probs: pass.probs,
    })
}

/// Forward-only evaluation of the loss `backward` differentiates.
pub fn loss_only(batch: &[Sample<'_>], model: &ModelState, spec: &LossSpec) -> Result<LossValue> {
    let zs: Vec<Vec<f64>> = batch.iter().map(|s| model.embedding.embed(s.x)).collect();
    Ok(head_pass(model.head(spec.head), &zs, batch, spec)?.loss)
}

/// Cosine-annealed learning rate `base · ½(1 + cos(π · epoch/total))`.
pub fn cosine_lr(epoch: usize, total: usize, base: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::Config("cosine schedule horizon must be at least 1".into()));
    }
    if epoch > total {
        return Err(Error::Config(format!("epoch {epoch} beyond schedule horizon {total}")));
    }
    let t = epoch as f64 / total as f64;
    Ok(base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
}

/// In-place momentum SGD on one tensor:
/// `v ← μ·v + g + wd·p`, then `p ← p − lr·v`.
pub fn sgd_step(param: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) {
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g + weight_decay * *p;
        *p -= lr * *v;
    }
}

/// Momentum SGD with a per-phase cosine schedule. A fresh state is created
/// for each training phase, so buffers never leak across stages.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epoch: usize,
    pub total_epochs: usize,
    velocity: Vec<Vec<f64>>,
}

impl OptimState {
    pub fn new(base_lr: f64, momentum: f64, weight_decay: f64, total_epochs: usize) -> Result<Self> {
        if !(base_lr >= 0.0) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {base_lr}")));
        }
        if total_epochs == 0 {
            return Err(Error::Config("phase needs at least one epoch".into()));
        }
        Ok(Self {
            base_lr,
            momentum,
            weight_decay,
            epoch: 0,
            total_epochs,
            velocity: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.epoch.min(self.total_epochs), self.total_epochs, self.base_lr).unwrap_or(0.0)
    }

    pub fn next_epoch(&mut self) {
        self.epoch += 1;
    }

    /// Momentum buffers, one per tensor updated so far.
    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    /// Applies one step to the tensors named by `grads`.
    pub fn step(&mut self, model: &mut ModelState, grads: &Gradients) -> Result<()> {
        let lr = self.lr();
        let params = trainable_tensors_mut(model, grads);
        let gs = grads.tensors();
        if self.velocity.is_empty() {
            self.velocity = gs.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        if self.velocity.len() != gs.len() {
            return Err(Error::shape("optimizer tensor count", self.velocity.len(), gs.len()));
        }
        for ((p, g), v) in params.into_iter().zip(gs).zip(self.velocity.iter_mut()) {
            if p.len() != g.len() || v.len() != g.len() {
                return Err(Error::shape("optimizer tensor", p.len(), g.len()));
            }
            sgd_step(p, g, v, lr, self.momentum, self.weight_decay);
        }
        Ok(())
    }
}

/// Largest relative deviation between analytic gradients and central finite
/// differences over every trainable parameter. Denominators are floored at
/// `1e-6` so vanishing gradients are compared in absolute terms.
pub fn grad_check(model: &ModelState, batch: &[Sample<'_>], spec: &LossSpec, eps: f64) -> Result<f64> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!("finite-difference step must be positive, got {eps}")));
    }
    let analytic = backward(batch, model, spec)?.grads;
    let flat: Vec<Vec<f64>> = analytic.tensors().into_iter().map(<[f64]>::to_vec).collect();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (t, grad) in flat.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let orig = trainable_tensors_mut(&mut probe, &analytic)[t][i];
            trainable_tensors_mut(&mut probe, &analytic)[t][i] = orig + eps;
            let up = loss_only(batch, &probe, spec)?.total;
            trainable_tensors_mut(&mut probe, &analytic)[t][i] = orig - eps;
            let down = loss_only(batch, &probe, spec)?.total;
            trainable_tensors_mut(&mut probe, &analytic)[t][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn tiny_model(seed: u64) -> ModelState {
        ModelState::new(3, &[5, 4], 3, &mut seeded(seed)).unwrap()
    }

    #[test]
    fn zero_head_gives_uniform_probs() {
        let mut m = tiny_model(1);
        m.head_balanced = ClassifierParams::zeros(3, 4);
        let (_, p) = forward(&[0.3, -1.0, 2.0], &m, Head::Balanced).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_of_ln3_zero() {
        let p = softmax(&[3f64.ln(), 0.0]);
        assert!((p[0] - 0.75).abs() < 1e-12);
        assert!((p[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let p = softmax(&[1000.0, 999.0, -1000.0]);
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let lp = log_softmax(&[1000.0, -1000.0]);
        assert!(lp[1].is_finite());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[1.0, 2.0, 2.0]), 1);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = tiny_model(2);
        assert!(matches!(forward(&[1.0, 2.0], &m, Head::Random), Err(Error::Shape { .. })));
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 10, 0.1).unwrap(), 0.1);
        assert!(cosine_lr(10, 10, 0.1).unwrap().abs() < 1e-17);
        assert!((cosine_lr(5, 10, 0.1).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_lr(0, 0, 0.1).is_err());
    }

    #[test]
    fn sgd_formula() {
        let mut p = vec![1.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[0.5], &mut v, 0.0, 0.9, 0.1);
        assert_eq!(p, vec![1.0]);

        let mut p = vec![2.0, -1.0];
        let mut v = vec![0.0; 2];
        sgd_step(&mut p, &[0.25, -0.5], &mut v, 1.0, 0.0, 0.0);
        assert_eq!(p, vec![1.75, -0.5]);

        let mut p = vec![0.0];
        let mut v = vec![0.0];
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9, 0.0);
        sgd_step(&mut p, &[1.0], &mut v, 0.1, 0.9, 0.0);
        assert!((p[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn grad_check_rejects_zero_step() {
        let m = tiny_model(3);
        let x = [0.1, 0.2, 0.3];
        let batch = [Sample { x: &x, label: Some(0), prev: None }];
        assert!(grad_check(&m, &batch, &LossSpec::cross_entropy(Head::Random, true), 0.0).is_err());
    }

    #[test]
    fn frozen_embedding_gets_no_gradient() {
        let m = tiny_model(4);
        let x = [0.1, 0.2, 0.3];
        let batch = [Sample { x: &x, label: Some(2), prev: None }];
        let out = backward(&batch, &m, &LossSpec::supervised()).unwrap();
        assert!(out.grads.embedding.is_none());
        assert!(out.grads.head_random.is_none());
        assert!(out.grads.head_balanced.is_some());
    }

    #[test]
    fn gradient_vanishes_at_confident_correct_prediction() {
        let mut m = tiny_model(5);
        let x = [1.0, 1.0, 1.0];
        let z = m.embedding.embed(&x);
        // Push the logit of class 1 far above the others.
        m.head_random = ClassifierParams::zeros(3, z.len());
        m.head_random.bias[1] = 60.0;
        let batch = [Sample { x: &x, label: Some(1), prev: None }];
        let out = backward(&batch, &m, &LossSpec::cross_entropy(Head::Random, true)).unwrap();
        assert!(out.loss.total < 1e-20);
        assert!(out.grads.norm() < 1e-20);
    }

    #[test]
    fn missing_label_is_contract_error() {
        let m = tiny_model(6);
        let x = [0.0, 0.0, 1.0];
        let batch = [Sample { x: &x, label: None, prev: None }];
        assert!(matches!(
            backward(&batch, &m, &LossSpec::semi(1.0)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn optimizer_moves_only_trainable_tensors() {
        let mut m = tiny_model(7);
        let before = m.clone();
        let x = [0.5, -0.5, 0.25];
        let batch = [Sample { x: &x, label: Some(0), prev: None }];
        let out = backward(&batch, &m, &LossSpec::supervised()).unwrap();
        let mut opt = OptimState::new(0.1, 0.9, 5e-4, 3).unwrap();
        opt.step(&mut m, &out.grads).unwrap();
        assert_eq!(m.embedding, before.embedding);
        assert_eq!(m.head_random, before.head_random);
        assert_ne!(m.head_balanced, before.head_balanced);
        assert_eq!(opt.velocity().len(), 2);
    }
}
