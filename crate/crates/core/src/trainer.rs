//! Decoupled initialization and the alternate learning loop.
//!
//! Initialization trains the embedding `f` and the random-sampling head `g'`
//! jointly with random sampling on `D`, then trains a fresh class-balanced
//! head `g` on the frozen embedding. Each of the `N` loops then runs:
//!
//! 1. pseudo-label every unlabeled sample with `g ∘ f`;
//! 2. fine-tune `f` and `g'` on `D ∪ Û` with random sampling under
//!    `L_CE + λ L_consist`;
//! 3. fine-tune `g` alone on `D` with class-balanced sampling.
//!
//! Every phase gets its own optimizer (fresh momentum buffers) and its own
//! cosine schedule spanning that phase's epochs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{LabeledSet, PseudoLabeledSet, SplitSpec, UnlabeledPool, UnlabeledSet};
use crate::error::{Error, Result};
use crate::evalreport::{self, MetricsReport, Provenance};
use crate::losses::{self, LossValue, PredictionMemory, SemiSample};
use crate::netcore::{self, ClassifierParams, Head, LossSpec, ModelState, OptimState, Sample};
use crate::rng::{self, stream};
use crate::sampling::{self, BatchPlan, Source};

/// Hyperparameters of a run. Defaults follow the reference schedule:
/// 200 + 10 initialization epochs, 5 loops of 40 + 10 epochs, SGD with
/// lr 0.1, momentum 0.9, weight decay 5e-4 and λ = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub init_embed_epochs: usize,
    pub init_classifier_epochs: usize,
    pub loops: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lambda: f64,
    pub seed: u64,
    pub hidden_widths: Vec<usize>,
    /// Clear the prediction memory at the start of every Stage 2.
    pub reset_memory: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            init_embed_epochs: 200,
            init_classifier_epochs: 10,
            loops: 5,
            stage2_epochs: 40,
            stage3_epochs: 10,
            batch_size: 128,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 5e-4,
            lambda: 1.0,
            seed: 0,
            hidden_widths: vec![64, 64],
            reset_memory: true,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        for (name, v) in [
            ("init_embed_epochs", self.init_embed_epochs),
            ("init_classifier_epochs", self.init_classifier_epochs),
            ("stage2_epochs", self.stage2_epochs),
            ("stage3_epochs", self.stage3_epochs),
            ("batch_size", self.batch_size),
        ] {
            if v < 1 {
                p.push(format!("{name} must be at least 1"));
            }
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            p.push(format!("lr must be a finite value >= 0, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            p.push(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            p.push(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            p.push(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.hidden_widths.is_empty() {
            p.push("hidden_widths needs at least one layer".into());
        }
        if self.hidden_widths.contains(&0) {
            p.push("hidden_widths entries must be at least 1".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    /// Embedding-update epochs of a full alternate run.
    pub fn embedding_epoch_budget(&self) -> usize {
        self.init_embed_epochs + self.loops * self.stage2_epochs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Random,
    Balanced,
}

/// Alternate-learning variants: the sampling used in Stages 2 and 3 and
/// the data each stage trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Variant {
    /// Random sampling in Stage 2, class-balanced in Stage 3, classifier on `D`.
    #[default]
    #[serde(rename = "R+C")]
    RandomBalanced,
    #[serde(rename = "R+R")]
    RandomRandom,
    #[serde(rename = "C+R")]
    BalancedRandom,
    /// Stage 2 balances over true labels of `D` and pseudo labels of `Û`.
    #[serde(rename = "C+C")]
    BalancedBalanced,
    /// Classifier fine-tuned on `D ∪ Û`; embedding still on `D ∪ Û`.
    #[serde(rename = "classifier-on-union")]
    ClassifierOnUnion,
    /// Classifier on `D ∪ Û`; embedding fine-tuned on `D` only.
    #[serde(rename = "no-unsup-embed")]
    NoUnsupEmbed,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::RandomBalanced,
        Variant::RandomRandom,
        Variant::BalancedRandom,
        Variant::BalancedBalanced,
        Variant::ClassifierOnUnion,
        Variant::NoUnsupEmbed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::RandomBalanced => "R+C",
            Variant::RandomRandom => "R+R",
            Variant::BalancedRandom => "C+R",
            Variant::BalancedBalanced => "C+C",
            Variant::ClassifierOnUnion => "classifier-on-union",
            Variant::NoUnsupEmbed => "no-unsup-embed",
        }
    }

    pub fn stage2_sampling(self) -> Sampling {
        match self {
            Variant::BalancedRandom | Variant::BalancedBalanced => Sampling::Balanced,
            _ => Sampling::Random,
        }
    }

    pub fn stage3_sampling(self) -> Sampling {
        match self {
            Variant::RandomRandom | Variant::BalancedRandom => Sampling::Random,
            _ => Sampling::Balanced,
        }
    }

    /// Whether Stage 2 trains the embedding on `Û` as well as `D`.
    pub fn stage2_uses_pseudo(self) -> bool {
        self != Variant::NoUnsupEmbed
    }

    /// Whether Stage 3 trains `g` on `Û` as well as `D`.
    pub fn stage3_uses_pseudo(self) -> bool {
        matches!(self, Variant::ClassifierOnUnion | Variant::NoUnsupEmbed)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_lowercase();
        let v = match norm.as_str() {
            "r+c" | "default" => Variant::RandomBalanced,
            "r+r" => Variant::RandomRandom,
            "c+r" => Variant::BalancedRandom,
            "c+c" => Variant::BalancedBalanced,
            "classifier-on-union" | "union" => Variant::ClassifierOnUnion,
            "no-unsup-embed" | "labeled-embed" => Variant::NoUnsupEmbed,
            _ => {
                return Err(Error::Config(format!(
                    "unknown variant {s:?}; expected one of R+C, R+R, C+R, C+C, classifier-on-union, no-unsup-embed"
                )))
            }
        };
        Ok(v)
    }
}

/// Per-epoch mean losses of one training phase.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseLog {
    pub epoch_loss: Vec<LossValue>,
}

impl PhaseLog {
    pub fn first(&self) -> Option<&LossValue> {
        self.epoch_loss.first()
    }

    pub fn last(&self) -> Option<&LossValue> {
        self.epoch_loss.last()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InitRecord {
    pub embed: PhaseLog,
    pub classifier: PhaseLog,
    /// Test metrics of `g ∘ f` after initialization.
    pub test: Option<MetricsReport>,
    /// Test metrics of `g' ∘ f` after initialization.
    pub test_random_head: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoopRecord {
    pub loop_index: usize,
    /// Accuracy of the labels assigned in Stage 1 of this loop.
    pub pseudo: Option<MetricsReport>,
    pub pseudo_class_counts: Vec<usize>,
    pub stage2: PhaseLog,
    pub stage3: PhaseLog,
    /// Test metrics of `g ∘ f` after Stage 3.
    pub test: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoopTrace {
    pub variant: String,
    pub init: InitRecord,
    pub loops: Vec<LoopRecord>,
    /// Epochs in which the embedding was updated, initialization included.
    pub embedding_epochs: usize,
    /// Stage-2 epochs summed over the run.
    pub stage2_epochs: usize,
}

impl LoopTrace {
    pub fn final_test(&self) -> Option<&MetricsReport> {
        self.loops
            .last()
            .and_then(|l| l.test.as_ref())
            .or(self.init.test.as_ref())
    }
}

/// Held-out material used only to observe a run: the test set and, for
/// generated tasks, the ground truth of the unlabeled set. Nothing in here
/// reaches a gradient.
#[derive(Debug, Clone, Copy)]
pub struct Monitor<'a> {
    pub test: Option<&'a LabeledSet>,
    pub unlabeled_truth: Option<&'a UnlabeledSet>,
    pub splits: &'a SplitSpec,
    pub config_hash: &'a str,
}

impl<'a> Monitor<'a> {
    pub fn new(splits: &'a SplitSpec) -> Self {
        Self {
            test: None,
            unlabeled_truth: None,
            splits,
            config_hash: "",
        }
    }

    fn provenance(&self, seed: u64, loop_index: Option<usize>) -> Provenance {
        Provenance {
            config_hash: self.config_hash.to_string(),
            seed,
            loop_index,
        }
    }

    fn test_metrics(&self, model: &ModelState, head: Head, seed: u64, loop_index: Option<usize>) -> Result<Option<MetricsReport>> {
        self.test
            .map(|t| {
                evalreport::evaluate(model, head, t, self.splits).map(|m| m.with_provenance(self.provenance(seed, loop_index)))
            })
            .transpose()
    }

    fn pseudo_metrics(&self, pseudo: &PseudoLabeledSet, seed: u64, loop_index: usize) -> Result<Option<MetricsReport>> {
        match self.unlabeled_truth {
            Some(u) if u.hidden_labels().is_some() => evalreport::pseudo_accuracy(pseudo, u, self.splits)
                .map(|m| Some(m.with_provenance(self.provenance(seed, Some(loop_index))))),
            _ => Ok(None),
        }
    }
}

/// Hooks for incremental output (checkpoints, partial traces).
pub trait TrainObserver {
    fn init_finished(&mut self, _model: &ModelState, _record: &InitRecord) -> Result<()> {
        Ok(())
    }

    fn loop_finished(&mut self, _model: &ModelState, _record: &LoopRecord) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

/// Final model plus the trace of how it was reached.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub model: ModelState,
    pub trace: LoopTrace,
}

fn check_inputs(d: &LabeledSet, pool: &UnlabeledPool, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if d.is_empty() {
        return Err(Error::Data("labeled set is empty".into()));
    }
    if d.num_classes() < 2 {
        return Err(Error::Config("need at least 2 classes".into()));
    }
    if let Some(j) = d.class_counts().iter().position(|&n| n == 0) {
        return Err(Error::Data(format!("class {j} has no labeled samples")));
    }
    let dim = d.feature_dim().unwrap_or(0);
    if let Some(i) = pool.iter().position(|x| x.len() != dim) {
        return Err(Error::Data(format!("unlabeled sample {i} has width {} but labeled data has {dim}", pool.features(i).len())));
    }
    Ok(())
}

fn with_context(phase: &str, epoch: usize, batch: usize) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Numeric(m) => Error::Numeric(format!("{phase}, epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

fn mean_loss(sum: LossValue, batches: usize) -> LossValue {
    let n = batches.max(1) as f64;
    LossValue {
        total: sum.total / n,
        ce_part: sum.ce_part / n,
        consistency_part: sum.consistency_part / n,
    }
}

fn accumulate(acc: &mut LossValue, l: &LossValue) {
    acc.total += l.total;
    acc.ce_part += l.ce_part;
    acc.consistency_part += l.consistency_part;
}

/// Training data of a joint (embedding + `g'`) phase.
struct JointData<'a> {
    d: &'a LabeledSet,
    pool: &'a UnlabeledPool,
    pseudo: &'a PseudoLabeledSet,
    use_pseudo: bool,
}

impl JointData<'_> {
    fn n_pseudo(&self) -> usize {
        if self.use_pseudo {
            self.pseudo.len()
        } else {
            0
        }
    }

    fn sample(&self, source: Source, id: usize) -> SemiSample<'_> {
        match source {
            Source::Labeled => SemiSample {
                key: (Source::Labeled, id),
                x: self.d.features(id),
                label: self.d.label(id),
            },
            Source::Pseudo => SemiSample {
                key: (Source::Pseudo, id),
                x: self.pool.features(self.pseudo.ids[id]),
                label: self.pseudo.labels[id],
            },
        }
    }

    fn plan(&self, sampling: Sampling, batch: usize, seed: u64) -> Result<BatchPlan> {
        let n = self.d.len() + self.n_pseudo();
        match sampling {
            Sampling::Random => sampling::mixed_union_batches(self.d.len(), self.n_pseudo(), batch, seed),
            Sampling::Balanced => {
                let pseudo: &[usize] = if self.use_pseudo { &self.pseudo.labels } else { &[] };
                sampling::class_balanced_union_batches(
                    &self.d.labels(),
                    pseudo,
                    self.d.num_classes(),
                    batch,
                    sampling::balanced_steps_per_epoch(n, batch),
                    seed,
                )
            }
        }
    }
}

/// Trains `f` and `g'` together. With `memory` the objective is `L_semi`,
/// otherwise plain cross-entropy.
#[allow(clippy::too_many_arguments)]
fn run_joint_phase(
    model: &mut ModelState,
    data: &JointData<'_>,
    sampling: Sampling,
    epochs: usize,
    mut memory: Option<&mut PredictionMemory>,
    cfg: &TrainConfig,
    phase: &str,
    seed_tags: &[u64],
) -> Result<PhaseLog> {
    let mut opt = OptimState::new(cfg.lr, cfg.momentum, cfg.weight_decay, epochs)?;
    let mut log = PhaseLog::default();
    for epoch in 0..epochs {
        let mut tags = seed_tags.to_vec();
        tags.push(epoch as u64);
        let plan = data.plan(sampling, cfg.batch_size, rng::derive_seed(cfg.seed, &tags))?;
        let mut sum = LossValue::default();
        for (b, items) in plan.batches.iter().enumerate() {
            let batch: Vec<SemiSample<'_>> = items.iter().map(|it| data.sample(it.source, it.id)).collect();
            let out = match memory.as_deref_mut() {
                Some(mem) => losses::semi_loss(&batch, model, mem, cfg.lambda),
                None => {
                    let samples: Vec<Sample<'_>> = batch
                        .iter()
                        .map(|s| Sample { x: s.x, label: Some(s.label), prev: None })
                        .collect();
                    netcore::backward(&samples, model, &LossSpec::cross_entropy(Head::Random, true))
                }
            }
            .map_err(with_context(phase, epoch, b))?;
            opt.step(model, &out.grads)?;
            accumulate(&mut sum, &out.loss);
        }
        if let Some(mem) = memory.as_deref_mut() {
            mem.advance_epoch();
        }
        opt.next_epoch();
        log.epoch_loss.push(mean_loss(sum, plan.batches.len()));
    }
    Ok(log)
}

/// Trains `g` on frozen embeddings. `features`/`labels`/`sources` list the
/// labeled samples first, then any pseudo-labeled ones.
#[allow(clippy::too_many_arguments)]
fn run_head_phase(
    model: &mut ModelState,
    features: &[Vec<f64>],
    labels: &[usize],
    sources: &[Source],
    sampling: Sampling,
    epochs: usize,
    allow_pseudo: bool,
    cfg: &TrainConfig,
    phase: &str,
    seed_tags: &[u64],
) -> Result<PhaseLog> {
    let n_labeled = sources.iter().filter(|&&s| s == Source::Labeled).count();
    let n = features.len();
    let c = model.num_classes();
    let class_index = sampling::class_index(labels, c);
    let mut opt = OptimState::new(cfg.lr, cfg.momentum, cfg.weight_decay, epochs)?;
    let mut log = PhaseLog::default();
    for epoch in 0..epochs {
        let mut tags = seed_tags.to_vec();
        tags.push(epoch as u64);
        let seed = rng::derive_seed(cfg.seed, &tags);
        // Positions index straight into `features`.
        let plan = match sampling {
            Sampling::Random => sampling::random_batches(n, cfg.batch_size, seed)?,
            Sampling::Balanced => sampling::class_balanced_batches(
                &class_index,
                cfg.batch_size,
                sampling::balanced_steps_per_epoch(n, cfg.batch_size),
                seed,
                Source::Labeled,
            )?,
        };
        let mut sum = LossValue::default();
        for (b, items) in plan.batches.iter().enumerate() {
            let zs: Vec<Vec<f64>> = items.iter().map(|it| features[it.id].clone()).collect();
            let ys: Vec<usize> = items.iter().map(|it| labels[it.id]).collect();
            let srcs: Vec<Source> = items
                .iter()
                .map(|it| if it.id < n_labeled { Source::Labeled } else { Source::Pseudo })
                .collect();
            let out = losses::sup_loss_on_features(&zs, &ys, &srcs, &model.head_balanced, allow_pseudo)
                .map_err(with_context(phase, epoch, b))?;
            opt.step(model, &out.grads)?;
            accumulate(&mut sum, &out.loss);
        }
        opt.next_epoch();
        log.epoch_loss.push(mean_loss(sum, plan.batches.len()));
    }
    Ok(log)
}

fn embed_all<'a>(model: &ModelState, xs: impl IntoParallelIterator<Item = &'a [f64]>) -> Vec<Vec<f64>> {
    xs.into_par_iter().map(|x| model.embedding.embed(x)).collect()
}

/// Decoupled initialization: `f` and `g'` with random sampling, then a
/// freshly initialised `g` with class-balanced sampling on frozen `f`.
pub fn init_decoupled(d: &LabeledSet, cfg: &TrainConfig) -> Result<(ModelState, InitRecord)> {
    check_inputs(d, &UnlabeledPool::default(), cfg)?;
    let dim = d.feature_dim().unwrap_or(0);
    let c = d.num_classes();
    let mut model = ModelState::new(
        dim,
        &cfg.hidden_widths,
        c,
        &mut rng::derived(cfg.seed, &[stream::INIT_WEIGHTS]),
    )?;

    let empty_pool = UnlabeledPool::default();
    let no_pseudo = PseudoLabeledSet::empty(c);
    let data = JointData {
        d,
        pool: &empty_pool,
        pseudo: &no_pseudo,
        use_pseudo: false,
    };
    let embed = run_joint_phase(
        &mut model,
        &data,
        Sampling::Random,
        cfg.init_embed_epochs,
        None,
        cfg,
        "initialization (embedding)",
        &[stream::INIT_EMBED],
    )?;

    model.head_balanced = ClassifierParams::init(
        c,
        model.embedding.output_dim(),
        &mut rng::derived(cfg.seed, &[stream::HEAD_REINIT]),
    );
    let xs: Vec<&[f64]> = d.examples().iter().map(|e| e.features.as_slice()).collect();
    let features = embed_all(&model, xs);
    let classifier = run_head_phase(
        &mut model,
        &features,
        &d.labels(),
        &vec![Source::Labeled; d.len()],
        Sampling::Balanced,
        cfg.init_classifier_epochs,
        false,
        cfg,
        "initialization (classifier)",
        &[stream::INIT_CLASSIFIER],
    )?;
    Ok((
        model,
        InitRecord {
            embed,
            classifier,
            test: None,
            test_random_head: None,
        },
    ))
}

/// Stage 1: `ŷ_i = argmax g(f(x_i))` for every unlabeled sample.
pub fn assign_pseudo_labels(model: &ModelState, pool: &UnlabeledPool) -> PseudoLabeledSet {
    let xs: Vec<&[f64]> = pool.iter().collect();
    let labels = evalreport::predict_all(model, Head::Balanced, xs);
    PseudoLabeledSet {
        ids: (0..pool.len()).collect(),
        labels,
        num_classes: model.num_classes(),
    }
}

/// Stage 2: fine-tune `f` and `g'` on `D ∪ Û` with random sampling under
/// `L_semi`. `g` is not touched.
pub fn stage2_semi_finetune(
    model: &mut ModelState,
    d: &LabeledSet,
    pool: &UnlabeledPool,
    pseudo: &PseudoLabeledSet,
    memory: &mut PredictionMemory,
    cfg: &TrainConfig,
    loop_index: usize,
) -> Result<PhaseLog> {
    stage2_with(model, d, pool, pseudo, memory, cfg, cfg.stage2_epochs, loop_index, Variant::RandomBalanced)
}

#[allow(clippy::too_many_arguments)]
fn stage2_with(
    model: &mut ModelState,
    d: &LabeledSet,
    pool: &UnlabeledPool,
    pseudo: &PseudoLabeledSet,
    memory: &mut PredictionMemory,
    cfg: &TrainConfig,
    epochs: usize,
    loop_index: usize,
    variant: Variant,
) -> Result<PhaseLog> {
    if pseudo.len() != pool.len() {
        return Err(Error::Contract(format!(
            "pseudo labels cover {} of {} unlabeled samples",
            pseudo.len(),
            pool.len()
        )));
    }
    if cfg.reset_memory {
        memory.clear();
    }
    let data = JointData {
        d,
        pool,
        pseudo,
        use_pseudo: variant.stage2_uses_pseudo(),
    };
    run_joint_phase(
        model,
        &data,
        variant.stage2_sampling(),
        epochs,
        Some(memory),
        cfg,
        "stage 2",
        &[stream::STAGE2, loop_index as u64],
    )
}

/// Stage 3: fine-tune `g` alone on `D` with class-balanced sampling; `f`
/// only computes features.
pub fn stage3_sup_finetune(model: &mut ModelState, d: &LabeledSet, cfg: &TrainConfig, loop_index: usize) -> Result<PhaseLog> {
    let empty = PseudoLabeledSet::empty(d.num_classes());
    stage3_with(model, d, &UnlabeledPool::default(), &empty, cfg, loop_index, Variant::RandomBalanced)
}

fn stage3_with(
    model: &mut ModelState,
    d: &LabeledSet,
    pool: &UnlabeledPool,
    pseudo: &PseudoLabeledSet,
    cfg: &TrainConfig,
    loop_index: usize,
    variant: Variant,
) -> Result<PhaseLog> {
    let mut xs: Vec<&[f64]> = d.examples().iter().map(|e| e.features.as_slice()).collect();
    let mut labels = d.labels();
    let mut sources = vec![Source::Labeled; d.len()];
    if variant.stage3_uses_pseudo() {
        xs.extend(pseudo.ids.iter().map(|&i| pool.features(i)));
        labels.extend_from_slice(&pseudo.labels);
        sources.extend(std::iter::repeat_n(Source::Pseudo, pseudo.len()));
    }
    let features = embed_all(model, xs);
    run_head_phase(
        model,
        &features,
        &labels,
        &sources,
        variant.stage3_sampling(),
        cfg.stage3_epochs,
        variant.stage3_uses_pseudo(),
        cfg,
        "stage 3",
        &[stream::STAGE3, loop_index as u64],
    )
}

fn init_record_with_metrics(model: &ModelState, mut record: InitRecord, monitor: &Monitor<'_>, seed: u64) -> Result<InitRecord> {
    record.test = monitor.test_metrics(model, Head::Balanced, seed, None)?;
    record.test_random_head = monitor.test_metrics(model, Head::Random, seed, None)?;
    Ok(record)
}

/// Initialization followed by `cfg.loops` alternate-learning loops.
pub fn alternate_learn(
    d: &LabeledSet,
    pool: &UnlabeledPool,
    cfg: &TrainConfig,
    monitor: &Monitor<'_>,
    observer: &mut dyn TrainObserver,
) -> Result<RunOutcome> {
    ablation_variant(d, pool, cfg, Variant::RandomBalanced, monitor, observer)
}

/// Initialization followed by the loops of `variant`.
pub fn ablation_variant(
    d: &LabeledSet,
    pool: &UnlabeledPool,
    cfg: &TrainConfig,
    variant: Variant,
    monitor: &Monitor<'_>,
    observer: &mut dyn TrainObserver,
) -> Result<RunOutcome> {
    check_inputs(d, pool, cfg)?;
    let (model, init) = init_decoupled(d, cfg)?;
    let init = init_record_with_metrics(&model, init, monitor, cfg.seed)?;
    observer.init_finished(&model, &init)?;
    alternate_from(model, init, d, pool, cfg, variant, monitor, observer)
}

/// Runs the loops of `variant` starting from an initialized model. Lets
/// several variants share one initialization.
#[allow(clippy::too_many_arguments)]
pub fn alternate_from(
    mut model: ModelState,
    init: InitRecord,
    d: &LabeledSet,
    pool: &UnlabeledPool,
    cfg: &TrainConfig,
    variant: Variant,
    monitor: &Monitor<'_>,
    observer: &mut dyn TrainObserver,
) -> Result<RunOutcome> {
    check_inputs(d, pool, cfg)?;
    model.validate()?;
    let mut memory = PredictionMemory::new();
    let mut loops = Vec::with_capacity(cfg.loops);
    for i in 0..cfg.loops {
        let pseudo = assign_pseudo_labels(&model, pool);
        let pseudo_metrics = monitor.pseudo_metrics(&pseudo, cfg.seed, i)?;
        let stage2 = stage2_with(&mut model, d, pool, &pseudo, &mut memory, cfg, cfg.stage2_epochs, i, variant)?;
        let stage3 = stage3_with(&mut model, d, pool, &pseudo, cfg, i, variant)?;
        let record = LoopRecord {
            loop_index: i,
            pseudo: pseudo_metrics,
            pseudo_class_counts: pseudo.class_counts(),
            stage2,
            stage3,
            test: monitor.test_metrics(&model, Head::Balanced, cfg.seed, Some(i))?,
        };
        observer.loop_finished(&model, &record)?;
        loops.push(record);
    }
    Ok(RunOutcome {
        model,
        trace: LoopTrace {
            variant: variant.name().to_string(),
            init,
            loops,
            embedding_epochs: cfg.embedding_epoch_budget(),
            stage2_epochs: cfg.loops * cfg.stage2_epochs,
        },
    })
}

/// Pseudo-Label baseline: initialization, one round of pseudo labels, a
/// single Stage 2 of `loops · stage2_epochs` epochs (the same embedding
/// budget as alternate learning) and one Stage 3. Labels are never
/// refreshed.
pub fn baseline_pseudo_label(
    d: &LabeledSet,
    pool: &UnlabeledPool,
    cfg: &TrainConfig,
    monitor: &Monitor<'_>,
    observer: &mut dyn TrainObserver,
) -> Result<RunOutcome> {
    check_inputs(d, pool, cfg)?;
    let (model, init) = init_decoupled(d, cfg)?;
    let init = init_record_with_metrics(&model, init, monitor, cfg.seed)?;
    observer.init_finished(&model, &init)?;
    baseline_from(model, init, d, pool, cfg, monitor, observer)
}

/// [`baseline_pseudo_label`] from an existing initialization.
pub fn baseline_from(
    mut model: ModelState,
    init: InitRecord,
    d: &LabeledSet,
    pool: &UnlabeledPool,
    cfg: &TrainConfig,
    monitor: &Monitor<'_>,
    observer: &mut dyn TrainObserver,
) -> Result<RunOutcome> {
    check_inputs(d, pool, cfg)?;
    let budget = cfg.loops * cfg.stage2_epochs;
    let mut loops = Vec::new();
    if budget > 0 {
        let pseudo = assign_pseudo_labels(&model, pool);
        let pseudo_metrics = monitor.pseudo_metrics(&pseudo, cfg.seed, 0)?;
        let mut memory = PredictionMemory::new();
        let stage2 = stage2_with(&mut model, d, pool, &pseudo, &mut memory, cfg, budget, 0, Variant::RandomBalanced)?;
        let stage3 = stage3_with(&mut model, d, pool, &pseudo, cfg, 0, Variant::RandomBalanced)?;
        let record = LoopRecord {
            loop_index: 0,
            pseudo: pseudo_metrics,
            pseudo_class_counts: pseudo.class_counts(),
            stage2,
            stage3,
            test: monitor.test_metrics(&model, Head::Balanced, cfg.seed, Some(0))?,
        };
        observer.loop_finished(&model, &record)?;
        loops.push(record);
    }
    Ok(RunOutcome {
        model,
        trace: LoopTrace {
            variant: "pseudo-label".into(),
            init,
            loops,
            embedding_epochs: cfg.init_embed_epochs + budget,
            stage2_epochs: budget,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{exponential_profile, synth_gaussian_task, GeneratedTask, SplitMode, TaskSpec};

    fn task(sigma: f64, c: usize) -> GeneratedTask {
        synth_gaussian_task(&TaskSpec {
            profile: exponential_profile(c, 30, 5.0).unwrap(),
            input_dim: 4,
            unlabeled_factor: 2.0,
            class_sep: 4.0,
            noise_sigma: sigma,
            test_per_class: 10,
            split_mode: SplitMode::RankBuckets { many: 1, medium: 1 },
            seed: 5,
        })
        .unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            init_embed_epochs: 8,
            init_classifier_epochs: 3,
            loops: 2,
            stage2_epochs: 3,
            stage3_epochs: 2,
            batch_size: 16,
            hidden_widths: vec![8, 8],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_and_validation() {
        let d = TrainConfig::default();
        assert!(d.problems().is_empty());
        assert_eq!(d.loops * d.stage2_epochs, 200);
        let bad = TrainConfig {
            stage2_epochs: 0,
            lr: -1.0,
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert_eq!(bad.problems().len(), 3);
    }

    #[test]
    fn variant_names_parse_back() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("X+Y".parse::<Variant>().is_err());
        assert_eq!("default".parse::<Variant>().unwrap(), Variant::default());
    }

    #[test]
    fn zero_loops_returns_initialization() {
        let t = task(0.5, 3);
        let cfg = TrainConfig { loops: 0, ..small_cfg() };
        let (init, _) = init_decoupled(&t.labeled, &cfg).unwrap();
        let out = alternate_learn(&t.labeled, t.unlabeled.pool(), &cfg, &Monitor::new(&t.splits), &mut NoObserver).unwrap();
        assert_eq!(out.model, init);
        assert!(out.trace.loops.is_empty());
    }

    #[test]
    fn zero_weight_classifier_labels_everything_class_zero() {
        let t = task(0.5, 3);
        let (mut m, _) = init_decoupled(&t.labeled, &small_cfg()).unwrap();
        m.head_balanced = ClassifierParams::zeros(3, m.embedding.output_dim());
        let p = assign_pseudo_labels(&m, t.unlabeled.pool());
        assert_eq!(p.len(), t.unlabeled.len());
        assert!(p.labels.iter().all(|&y| y == 0));
    }

    #[test]
    fn stage2_requires_full_pseudo_coverage() {
        let t = task(0.5, 3);
        let cfg = small_cfg();
        let (mut m, _) = init_decoupled(&t.labeled, &cfg).unwrap();
        let partial = PseudoLabeledSet::new(vec![0], vec![1], 3).unwrap();
        let mut mem = PredictionMemory::new();
        assert!(matches!(
            stage2_semi_finetune(&mut m, &t.labeled, t.unlabeled.pool(), &partial, &mut mem, &cfg, 0),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn missing_class_rejected() {
        let t = task(0.5, 3);
        let only_first: Vec<_> = t.labeled.examples().iter().filter(|e| e.label == 0).cloned().collect();
        let d = LabeledSet::new(only_first, 3).unwrap();
        match init_decoupled(&d, &small_cfg()) {
            Err(Error::Data(m)) => assert!(m.contains("class 1")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn divergence_reports_position() {
        let t = task(0.5, 3);
        let cfg = TrainConfig { lr: 1e6, ..small_cfg() };
        match init_decoupled(&t.labeled, &cfg) {
            Err(Error::Numeric(m)) => assert!(m.contains("epoch"), "{m}"),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
