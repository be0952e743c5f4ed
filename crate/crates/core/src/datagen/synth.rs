use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{assign_splits, ClassProfile, LabeledExample, LabeledSet, SplitMode, SplitSpec, UnlabeledSet};
use crate::error::{Error, Result};
use crate::rng::{self, stream, Rng};

/// Parameters of a synthetic Gaussian long-tailed task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub profile: ClassProfile,
    pub input_dim: usize,
    /// `|U| / |D|`, applied per class.
    pub unlabeled_factor: f64,
    /// Minimum distance between any two class means.
    pub class_sep: f64,
    /// Isotropic standard deviation around each mean.
    pub noise_sigma: f64,
    pub test_per_class: usize,
    pub split_mode: SplitMode,
    pub seed: u64,
}

/// Output of [`synth_gaussian_task`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTask {
    pub labeled: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub test: LabeledSet,
    pub splits: SplitSpec,
    pub means: Vec<Vec<f64>>,
}

fn class_means(c: usize, dim: usize, sep: f64, r: &mut Rng) -> Result<Vec<Vec<f64>>> {
    let dirs: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut *r)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let mut min_d = f64::INFINITY;
    for i in 0..c {
        for j in i + 1..c {
            let d = dirs[i]
                .iter()
                .zip(&dirs[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min_d = min_d.min(d);
        }
    }
    if !(min_d > 1e-6) {
        return Err(Error::Config(format!(
            "input dimension {dim} is too small to separate {c} class means"
        )));
    }
    let s = sep / min_d;
    Ok(dirs
        .into_iter()
        .map(|v| v.into_iter().map(|x| x * s).collect())
        .collect())
}

fn draw(mean: &[f64], sigma: f64, r: &mut Rng) -> Vec<f64> {
    mean.iter()
        .map(|m| {
            let e: f64 = StandardNormal.sample(&mut *r);
            m + sigma * e
        })
        .collect()
}

/// Unlabeled per-class counts for labeled counts `n` scaled by `factor`.
///
/// `M = round(factor · N)` is split by largest remainder, so every class gets
/// `⌊M n_j / N⌋` or one more and `|m_j/M − n_j/N| < 1/M`. With an integer
/// factor this is exactly `factor · n_j`. Remainder ties go to the lower
/// class index.
pub fn unlabeled_counts(n: &[usize], factor: f64) -> Vec<usize> {
    let total: usize = n.iter().sum();
    if total == 0 {
        return vec![0; n.len()];
    }
    let m_total = (factor * total as f64).round() as usize;
    // Exact integer quotas: m_total · n_j = q_j · total + r_j.
    let mut counts = Vec::with_capacity(n.len());
    let mut rems = Vec::with_capacity(n.len());
    for (j, &nj) in n.iter().enumerate() {
        let prod = m_total as u128 * nj as u128;
        counts.push((prod / total as u128) as usize);
        rems.push((prod % total as u128, j));
    }
    let short = m_total - counts.iter().sum::<usize>();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, j) in rems.iter().take(short) {
        counts[j] += 1;
    }
    counts
}

/// Gaussian class clusters with a long-tailed labeled set, an unlabeled set
/// drawn from the same class distribution (see [`unlabeled_counts`]), and a
/// balanced test set.
pub fn synth_gaussian_task(spec: &TaskSpec) -> Result<GeneratedTask> {
    let c = spec.profile.num_classes();
    let mut problems = Vec::new();
    if c < 2 {
        problems.push(format!("need at least 2 classes, got {c}"));
    }
    if spec.input_dim == 0 {
        problems.push("input dimension must be at least 1".into());
    }
    if !(spec.unlabeled_factor > 0.0) {
        problems.push(format!("unlabeled factor must be positive, got {}", spec.unlabeled_factor));
    }
    if !(spec.class_sep > 0.0) {
        problems.push(format!("class separation must be positive, got {}", spec.class_sep));
    }
    if !(spec.noise_sigma >= 0.0) {
        problems.push(format!("noise sigma must be >= 0, got {}", spec.noise_sigma));
    }
    if spec.profile.counts.contains(&0) {
        problems.push("every class needs at least one labeled sample".into());
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }

    let means = class_means(c, spec.input_dim, spec.class_sep, &mut rng::derived(spec.seed, &[stream::MEANS]))?;

    let mut r = rng::derived(spec.seed, &[stream::LABELED]);
    let mut labeled = Vec::with_capacity(spec.profile.total());
    for (j, &n) in spec.profile.counts.iter().enumerate() {
        for _ in 0..n {
            labeled.push(LabeledExample { features: draw(&means[j], spec.noise_sigma, &mut r), label: j });
        }
    }
    labeled.shuffle(&mut r);

    let mut r = rng::derived(spec.seed, &[stream::UNLABELED]);
    let mut unlabeled: Vec<(Vec<f64>, usize)> = Vec::new();
    for (j, &m) in unlabeled_counts(&spec.profile.counts, spec.unlabeled_factor).iter().enumerate() {
        for _ in 0..m {
            unlabeled.push((draw(&means[j], spec.noise_sigma, &mut r), j));
        }
    }
    unlabeled.shuffle(&mut r);
    let (u_x, u_y): (Vec<_>, Vec<_>) = unlabeled.into_iter().unzip();

    let mut r = rng::derived(spec.seed, &[stream::TEST]);
    let mut test = Vec::with_capacity(c * spec.test_per_class);
    for (j, mean) in means.iter().enumerate() {
        for _ in 0..spec.test_per_class {
            test.push(LabeledExample { features: draw(mean, spec.noise_sigma, &mut r), label: j });
        }
    }

    Ok(GeneratedTask {
        labeled: LabeledSet::new(labeled, c)?,
        unlabeled: UnlabeledSet::new(u_x, Some(u_y))?,
        test: LabeledSet::new(test, c)?,
        splits: assign_splits(&spec.profile.counts, spec.split_mode)?,
        means,
    })
}

/// Uniform per-class subsampling without replacement down to `profile`.
/// Selected examples keep their original relative order and bytes.
pub fn subsample_to_profile(set: &LabeledSet, profile: &ClassProfile, seed: u64) -> Result<LabeledSet> {
    let c = set.num_classes();
    if profile.num_classes() != c {
        return Err(Error::shape("profile classes", c, profile.num_classes()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (i, e) in set.examples().iter().enumerate() {
        by_class[e.label].push(i);
    }
    let mut chosen = Vec::with_capacity(profile.total());
    for (j, ids) in by_class.iter_mut().enumerate() {
        let want = profile.counts[j];
        if want > ids.len() {
            return Err(Error::Data(format!(
                "class {j} has {} samples but the profile asks for {want}",
                ids.len()
            )));
        }
        ids.shuffle(&mut rng::derived(seed, &[stream::SUBSAMPLE, j as u64]));
        chosen.extend_from_slice(&ids[..want]);
    }
    chosen.sort_unstable();
    let examples = chosen.into_iter().map(|i| set.examples()[i].clone()).collect();
    LabeledSet::new(examples, c)
}

/// Carves a labeled set following `profile` and a disjoint unlabeled set
/// following [`unlabeled_counts`] out of a labeled corpus such as the
/// CIFAR-10 training batches. The unlabeled side keeps its labels hidden.
pub fn long_tailed_split(
    corpus: &LabeledSet,
    profile: &ClassProfile,
    unlabeled_factor: f64,
    seed: u64,
) -> Result<(LabeledSet, UnlabeledSet)> {
    let c = corpus.num_classes();
    if profile.num_classes() != c {
        return Err(Error::shape("profile classes", c, profile.num_classes()));
    }
    let m = unlabeled_counts(&profile.counts, unlabeled_factor);
    let both: Vec<usize> = profile.counts.iter().zip(&m).map(|(n, m)| n + m).collect();
    let picked = subsample_to_profile(corpus, &ClassProfile::explicit_unsorted(both), seed)?;
    let mut r = rng::derived(seed, &[stream::UNLABELED]);
    let mut by_class: Vec<Vec<&LabeledExample>> = vec![Vec::new(); c];
    for e in picked.examples() {
        by_class[e.label].push(e);
    }
    let mut labeled = Vec::with_capacity(profile.total());
    let mut unlabeled = Vec::new();
    for (j, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut r);
        let (l, u) = members.split_at(profile.counts[j]);
        labeled.extend(l.iter().map(|&e| e.clone()));
        unlabeled.extend(u.iter().map(|&e| (e.features.clone(), e.label)));
    }
    labeled.shuffle(&mut r);
    unlabeled.shuffle(&mut r);
    let (u_x, u_y): (Vec<_>, Vec<_>) = unlabeled.into_iter().unzip();
    Ok((LabeledSet::new(labeled, c)?, UnlabeledSet::new(u_x, Some(u_y))?))
}
