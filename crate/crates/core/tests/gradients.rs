use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use sslt_core::netcore::{
    backward, grad_check, softmax, ClassifierParams, EmbeddingParams, Head, LossSpec, ModelState, Objective, Sample,
};
use sslt_core::rng::{seeded, Rng};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

struct Batch {
    xs: Vec<Vec<f64>>,
    labels: Vec<usize>,
    prevs: Vec<Vec<f64>>,
}

impl Batch {
    fn random(n: usize, d_in: usize, c: usize, r: &mut Rng) -> Self {
        let xs = (0..n)
            .map(|_| (0..d_in).map(|_| StandardNormal.sample(&mut *r)).collect())
            .collect();
        let labels = (0..n).map(|_| r.random_range(0..c)).collect();
        let prevs = (0..n)
            .map(|_| {
                let l: Vec<f64> = (0..c).map(|_| 2.0 * Distribution::<f64>::sample(&StandardNormal, &mut *r)).collect();
                softmax(&l)
            })
            .collect();
        Self { xs, labels, prevs }
    }

    /// Every other sample carries a previous distribution.
    fn samples(&self) -> Vec<Sample<'_>> {
        self.xs
            .iter()
            .enumerate()
            .map(|(i, x)| Sample {
                x,
                label: Some(self.labels[i]),
                prev: (i % 2 == 0).then(|| self.prevs[i].as_slice()),
            })
            .collect()
    }
}

fn random_net(seed: u64) -> (ModelState, Batch) {
    let mut r = seeded(seed);
    let d_in = r.random_range(2..6);
    let depth = r.random_range(1..=2);
    let hidden: Vec<usize> = (0..depth).map(|_| r.random_range(3..=64)).collect();
    let c = r.random_range(2..6);
    let mut model = ModelState::new(d_in, &hidden, c, &mut r).unwrap();
    // A non-zero g makes the Balanced-head checks meaningful too.
    model.head_balanced = ClassifierParams::init(c, *hidden.last().unwrap(), &mut r);
    let batch = Batch::random(8, d_in, c, &mut r);
    (model, batch)
}

fn objectives() -> [(&'static str, LossSpec); 3] {
    [
        ("ce", LossSpec::cross_entropy(Head::Random, true)),
        (
            "consistency",
            LossSpec {
                objective: Objective::Consistency,
                head: Head::Random,
                train_embedding: true,
            },
        ),
        ("semi", LossSpec::semi(0.7)),
    ]
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for seed in 0..5 {
        let (model, batch) = random_net(seed);
        let samples = batch.samples();
        for (name, spec) in objectives() {
            let err = grad_check(&model, &samples, &spec, EPS).unwrap();
            assert!(err < TOL, "seed {seed} {name}: max relative error {err:e}");
        }
        let err = grad_check(&model, &samples, &LossSpec::supervised(), EPS).unwrap();
        assert!(err < TOL, "seed {seed} supervised: {err:e}");
    }
}

#[test]
fn linear_model_gradients_are_tight() {
    // Single hidden layer, head checked with θ frozen: the loss is smooth in
    // every checked parameter, so differences are close to exact.
    let mut r = seeded(77);
    let mut model = ModelState::new(3, &[4], 3, &mut r).unwrap();
    model.head_balanced = ClassifierParams::init(3, 4, &mut r);
    let batch = Batch::random(8, 3, 3, &mut r);
    let err = grad_check(&model, &batch.samples(), &LossSpec::cross_entropy(Head::Random, false), EPS).unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn frozen_embedding_gets_no_gradient() {
    let (model, batch) = random_net(3);
    let out = backward(&batch.samples(), &model, &LossSpec::supervised()).unwrap();
    assert!(out.grads.embedding.is_none());
    assert!(out.grads.head_random.is_none());
    assert!(out.grads.head_balanced.is_some());

    let out = backward(&batch.samples(), &model, &LossSpec::semi(1.0)).unwrap();
    assert!(out.grads.head_balanced.is_none());
    assert!(out.grads.embedding.is_some());
}

#[test]
fn consistency_gradient_vanishes_at_prev() {
    let (model, batch) = random_net(4);
    let spec = LossSpec {
        objective: Objective::Consistency,
        head: Head::Random,
        train_embedding: true,
    };
    let probs = backward(&batch.samples(), &model, &spec).unwrap().probs;
    let samples: Vec<Sample<'_>> = batch
        .xs
        .iter()
        .zip(&probs)
        .map(|(x, p)| Sample { x, label: None, prev: Some(p) })
        .collect();
    let out = backward(&samples, &model, &spec).unwrap();
    assert!(out.loss.total.abs() < 1e-12);
    assert!(out.grads.norm() < 1e-12, "{}", out.grads.norm());
}

#[test]
fn embedding_shapes_are_consistent() {
    let e = EmbeddingParams::new(&[5, 7, 3], &mut seeded(1)).unwrap();
    assert_eq!(e.input_dim(), 5);
    assert_eq!(e.output_dim(), 3);
    assert_eq!(e.num_params(), 5 * 7 + 7 + 7 * 3 + 3);
}
