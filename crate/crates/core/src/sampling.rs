//! Batch plans: random sampling (a shuffled pass over every index),
//! class-balanced sampling (class first, then an instance, with replacement)
//! and the mixed union of labeled and pseudo-labeled data.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Which corpus a sample id refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Labeled,
    Pseudo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BatchItem {
    pub source: Source,
    pub id: usize,
}

/// An epoch's worth of batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<BatchItem>>,
    pub seed: u64,
}

impl BatchPlan {
    pub fn num_items(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    pub fn items(&self) -> impl Iterator<Item = &BatchItem> {
        self.batches.iter().flatten()
    }
}

fn check_batch(batch: usize) -> Result<()> {
    if batch == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    Ok(())
}

fn chunk(items: Vec<BatchItem>, batch: usize) -> Vec<Vec<BatchItem>> {
    items.chunks(batch).map(<[BatchItem]>::to_vec).collect()
}

/// Seeded permutation of `0..set_size`, chunked into batches. Every id
/// appears exactly once.
pub fn random_batches(set_size: usize, batch: usize, seed: u64) -> Result<BatchPlan> {
    check_batch(batch)?;
    let mut ids: Vec<usize> = (0..set_size).collect();
    ids.shuffle(&mut rng::seeded(seed));
    let items = ids
        .into_iter()
        .map(|id| BatchItem {
            source: Source::Labeled,
            id,
        })
        .collect();
    Ok(BatchPlan {
        batches: chunk(items, batch),
        seed,
    })
}

/// Per-class lists of sample ids, built from a label vector.
pub fn class_index(labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut idx = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        idx[y].push(i);
    }
    idx
}

/// Number of class-balanced steps that matches one random epoch over `n` samples.
pub fn balanced_steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch.max(1))
}

/// `steps · batch` draws; each picks a class uniformly, then an instance of
/// that class uniformly with replacement. Items carry `source`.
pub fn class_balanced_batches(
    class_index: &[Vec<usize>],
    batch: usize,
    steps: usize,
    seed: u64,
    source: Source,
) -> Result<BatchPlan> {
    check_batch(batch)?;
    if class_index.is_empty() {
        return Err(Error::Data("class-balanced sampling needs at least one class".into()));
    }
    if let Some(j) = class_index.iter().position(Vec::is_empty) {
        return Err(Error::Data(format!("class {j} has no samples for class-balanced sampling")));
    }
    let mut r = rng::seeded(seed);
    let c = class_index.len();
    let batches = (0..steps)
        .map(|_| {
            (0..batch)
                .map(|_| {
                    let members = &class_index[r.random_range(0..c)];
                    BatchItem {
                        source,
                        id: members[r.random_range(0..members.len())],
                    }
                })
                .collect()
        })
        .collect();
    Ok(BatchPlan { batches, seed })
}

/// Class-balanced plan over the union `D ∪ Û`, classes defined by true
/// labels for `D` and pseudo labels for `Û`.
pub fn class_balanced_union_batches(
    labeled: &[usize],
    pseudo: &[usize],
    num_classes: usize,
    batch: usize,
    steps: usize,
    seed: u64,
) -> Result<BatchPlan> {
    check_batch(batch)?;
    let mut members: Vec<Vec<BatchItem>> = vec![Vec::new(); num_classes];
    for (id, &y) in labeled.iter().enumerate() {
        members[y].push(BatchItem { source: Source::Labeled, id });
    }
    for (id, &y) in pseudo.iter().enumerate() {
        members[y].push(BatchItem { source: Source::Pseudo, id });
    }
    // Classes with no member at all (possible when pseudo labels and true
    // labels both miss a class) cannot be drawn.
    let nonempty: Vec<&Vec<BatchItem>> = members.iter().filter(|m| !m.is_empty()).collect();
    if nonempty.is_empty() {
        return Err(Error::Data("class-balanced union has no samples".into()));
    }
    let mut r = rng::seeded(seed);
    let batches = (0..steps)
        .map(|_| {
            (0..batch)
                .map(|_| {
                    let m = nonempty[r.random_range(0..nonempty.len())];
                    m[r.random_range(0..m.len())]
                })
                .collect()
        })
        .collect();
    Ok(BatchPlan { batches, seed })
}

/// Random sampling over `D ∪ Û`: ids `0..n_labeled` are labeled, the rest
/// pseudo-labeled; each appears once, tagged with its source.
pub fn mixed_union_batches(n_labeled: usize, n_pseudo: usize, batch: usize, seed: u64) -> Result<BatchPlan> {
    let plan = random_batches(n_labeled + n_pseudo, batch, seed)?;
    let batches = plan
        .batches
        .into_iter()
        .map(|b| {
            b.into_iter()
                .map(|it| {
                    if it.id < n_labeled {
                        it
                    } else {
                        BatchItem {
                            source: Source::Pseudo,
                            id: it.id - n_labeled,
                        }
                    }
                })
                .collect()
        })
        .collect();
    Ok(BatchPlan { batches, seed })
}
