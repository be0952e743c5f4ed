//! Cross-entropy, temporal-consistency KL, the combined semi-supervised loss
//! and the supervised classifier loss, plus the per-sample memory of last
//! epoch's class distributions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{self, BackwardOutput, ClassifierParams, Head, LossSpec, ModelState, Sample};
use crate::sampling::Source;

/// Stability floor for probabilities inside logarithms.
pub const KL_EPS: f64 = 1e-12;

/// A loss split into its parts: `total = ce_part + λ · consistency_part`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub ce_part: f64,
    pub consistency_part: f64,
}

pub(crate) fn ce_from_log_probs(log_probs: &[f64], label: usize) -> f64 {
    -log_probs[label]
}

/// `Σ_j prev_j (ln prev_j − ln cur_j)` with `0·ln 0 = 0`.
pub(crate) fn kl_from_log_probs(prev: &[f64], log_cur: &[f64]) -> f64 {
    prev.iter()
        .zip(log_cur)
        .filter(|(q, _)| **q > 0.0)
        .map(|(q, lc)| q * (q.ln() - lc))
        .sum()
}

fn check_probs(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("{what} contains NaN")));
    }
    Ok(())
}

/// `−ln probs[label]`. A zero probability is floored at [`KL_EPS`] rather
/// than producing an infinite loss.
pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    check_probs(probs, "probability vector")?;
    if label >= probs.len() {
        return Err(Error::Data(format!("label {label} out of range for {} classes", probs.len())));
    }
    Ok(-probs[label].max(KL_EPS).ln())
}

/// Cross-entropy straight from logits via log-softmax.
pub fn cross_entropy_logits(logits: &[f64], label: usize) -> Result<f64> {
    check_probs(logits, "logits")?;
    if label >= logits.len() {
        return Err(Error::Data(format!("label {label} out of range for {} classes", logits.len())));
    }
    Ok(ce_from_log_probs(&netcore::log_softmax(logits), label))
}

/// Counts how often [`consistency_kl_counted`] had to floor a probability.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct ClampCounter(pub u64);

/// `KL(prev ‖ cur)`; see [`consistency_kl_counted`].
pub fn consistency_kl(prev: &[f64], cur: &[f64]) -> Result<f64> {
    consistency_kl_counted(prev, cur, &mut ClampCounter::default())
}

/// `KL(prev ‖ cur) = Σ_j prev_j ln(prev_j / cur_j)`, skipping `prev_j = 0`.
/// Where `cur_j = 0` but `prev_j > 0`, `cur_j` is floored at [`KL_EPS`] and
/// the counter is bumped.
pub fn consistency_kl_counted(prev: &[f64], cur: &[f64], clamps: &mut ClampCounter) -> Result<f64> {
    if prev.len() != cur.len() {
        return Err(Error::shape("consistency_kl", prev.len(), cur.len()));
    }
    check_probs(prev, "previous distribution")?;
    check_probs(cur, "current distribution")?;
    let mut kl = 0.0;
    for (&q, &p) in prev.iter().zip(cur) {
        if q <= 0.0 {
            continue;
        }
        let p = if p < KL_EPS {
            clamps.0 += 1;
            KL_EPS
        } else {
            p
        };
        kl += q * (q / p).ln();
    }
    Ok(kl)
}

/// Key of a sample in the union `D ∪ Û`.
pub type SampleKey = (Source, usize);

/// Class distributions from the previous epoch, read as constants by the
/// consistency term, and the ones being recorded in the current epoch.
///
/// Values written with [`record`](Self::record) during epoch `e` become
/// visible through [`previous`](Self::previous) only after
/// [`advance_epoch`](Self::advance_epoch).
#[derive(Debug, Clone, Default)]
pub struct PredictionMemory {
    epoch: usize,
    prev: HashMap<SampleKey, Vec<f64>>,
    cur: HashMap<SampleKey, Vec<f64>>,
}

impl PredictionMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Epoch currently being recorded.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn previous(&self, key: SampleKey) -> Option<&[f64]> {
        self.prev.get(&key).map(Vec::as_slice)
    }

    pub fn record(&mut self, key: SampleKey, probs: Vec<f64>) {
        self.cur.insert(key, probs);
    }

    /// Ends the epoch: this epoch's records become next epoch's `p^{e−1}`.
    /// Samples not seen this epoch keep their older entry.
    pub fn advance_epoch(&mut self) {
        let cur = std::mem::take(&mut self.cur);
        self.prev.extend(cur);
        self.epoch += 1;
    }

    pub fn clear(&mut self) {
        self.prev.clear();
        self.cur.clear();
        self.epoch = 0;
    }

    pub fn len_previous(&self) -> usize {
        self.prev.len()
    }
}

/// Labeled example of `D ∪ Û` entering the semi-supervised loss.
#[derive(Debug, Clone, Copy)]
pub struct SemiSample<'a> {
    pub key: SampleKey,
    pub x: &'a [f64],
    /// True label for `D`, pseudo label for `Û`.
    pub label: usize,
}

/// `L_semi = L_CE + λ L_consist` through `g' ∘ f`, batch-mean reduced.
///
/// Samples without a stored previous distribution contribute no consistency
/// term. The current distributions are recorded into `memory` afterwards.
pub fn semi_loss(
    batch: &[SemiSample<'_>],
    model: &ModelState,
    memory: &mut PredictionMemory,
    lambda: f64,
) -> Result<BackwardOutput> {
    semi_loss_with(batch, model, memory, lambda, true)
}

/// As [`semi_loss`]; `train_embedding = false` leaves θ without gradient.
pub fn semi_loss_with(
    batch: &[SemiSample<'_>],
    model: &ModelState,
    memory: &mut PredictionMemory,
    lambda: f64,
    train_embedding: bool,
) -> Result<BackwardOutput> {
    let samples: Vec<Sample<'_>> = batch
        .iter()
        .map(|s| Sample {
            x: s.x,
            label: Some(s.label),
            prev: memory.previous(s.key),
        })
        .collect();
    let spec = LossSpec {
        train_embedding,
        ..LossSpec::semi(lambda)
    };
    let out = netcore::backward(&samples, model, &spec)?;
    for (s, p) in batch.iter().zip(&out.probs) {
        memory.record(s.key, p.clone());
    }
    Ok(out)
}

/// Example entering the supervised classifier loss.
#[derive(Debug, Clone, Copy)]
pub struct SupSample<'a> {
    pub source: Source,
    pub x: &'a [f64],
    pub label: usize,
}

fn check_sources(sources: impl Iterator<Item = Source>, allow_pseudo: bool) -> Result<()> {
    if !allow_pseudo {
        if let Some(pos) = sources.into_iter().position(|s| s == Source::Pseudo) {
            return Err(Error::Contract(format!(
                "pseudo-labeled sample at batch position {pos} reached the supervised classifier loss"
            )));
        }
    }
    Ok(())
}

/// `L_sup`: batch-mean cross-entropy through `g ∘ f` with θ frozen; only `g`
/// receives a gradient. Pseudo-labeled samples are rejected unless
/// `allow_pseudo` is set.
pub fn sup_loss(batch: &[SupSample<'_>], model: &ModelState, allow_pseudo: bool) -> Result<BackwardOutput> {
    check_sources(batch.iter().map(|s| s.source), allow_pseudo)?;
    let samples: Vec<Sample<'_>> = batch
        .iter()
        .map(|s| Sample {
            x: s.x,
            label: Some(s.label),
            prev: None,
        })
        .collect();
    netcore::backward(&samples, model, &LossSpec::supervised())
}

/// [`sup_loss`] on embeddings computed ahead of time. With θ frozen this is
/// bitwise identical to recomputing `f(x)` per batch.
pub fn sup_loss_on_features(
    features: &[Vec<f64>],
    labels: &[usize],
    sources: &[Source],
    head: &ClassifierParams,
    allow_pseudo: bool,
) -> Result<BackwardOutput> {
    check_sources(sources.iter().copied(), allow_pseudo)?;
    let samples: Vec<Sample<'_>> = features
        .iter()
        .zip(labels)
        .map(|(z, &y)| Sample {
            x: z,
            label: Some(y),
            prev: None,
        })
        .collect();
    netcore::head_backward(head, Head::Balanced, features, &samples, &LossSpec::supervised())
}
