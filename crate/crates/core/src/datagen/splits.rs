use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Class group by labeled-sample count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Many,
    Medium,
    Few,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Many, Split::Medium, Split::Few];

    pub fn name(self) -> &'static str {
        match self {
            Split::Many => "many",
            Split::Medium => "medium",
            Split::Few => "few",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    /// `n > hi` many, `lo < n ≤ hi` medium, `n ≤ lo` few.
    CountThresholds { hi: usize, lo: usize },
    /// The `many` most populated classes, then the next `medium`, rest few.
    /// Ties in count go to the lower class index first.
    RankBuckets { many: usize, medium: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub tags: Vec<Split>,
    pub mode: SplitMode,
}

impl SplitSpec {
    pub fn num_classes(&self) -> usize {
        self.tags.len()
    }

    pub fn tag(&self, class: usize) -> Split {
        self.tags[class]
    }

    pub fn classes_in(&self, split: Split) -> Vec<usize> {
        (0..self.tags.len()).filter(|&j| self.tags[j] == split).collect()
    }
}

/// Tags every class of a count profile as many, medium or few shot.
pub fn assign_splits(counts: &[usize], mode: SplitMode) -> Result<SplitSpec> {
    let c = counts.len();
    let tags = match mode {
        SplitMode::CountThresholds { hi, lo } => {
            if !(hi > lo && lo >= 1) {
                return Err(Error::Config(format!("need hi > lo >= 1, got hi={hi}, lo={lo}")));
            }
            counts
                .iter()
                .map(|&n| {
                    if n > hi {
                        Split::Many
                    } else if n > lo {
                        Split::Medium
                    } else {
                        Split::Few
                    }
                })
                .collect()
        }
        SplitMode::RankBuckets { many, medium } => {
            if many + medium > c {
                return Err(Error::Config(format!(
                    "bucket sizes {many}+{medium} exceed {c} classes"
                )));
            }
            let mut order: Vec<usize> = (0..c).collect();
            order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
            let mut tags = vec![Split::Few; c];
            for (rank, &j) in order.iter().enumerate() {
                tags[j] = if rank < many {
                    Split::Many
                } else if rank < many + medium {
                    Split::Medium
                } else {
                    Split::Few
                };
            }
            tags
        }
    };
    let spec = SplitSpec { tags, mode };
    for s in Split::ALL {
        if spec.classes_in(s).is_empty() {
            log::warn!("split {} has no classes", s.name());
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds() {
        let s = assign_splits(&[250, 50, 5], SplitMode::CountThresholds { hi: 100, lo: 10 }).unwrap();
        assert_eq!(s.tags, vec![Split::Many, Split::Medium, Split::Few]);
        let edge = assign_splits(&[101, 100, 11, 10], SplitMode::CountThresholds { hi: 100, lo: 10 }).unwrap();
        assert_eq!(edge.tags, vec![Split::Many, Split::Medium, Split::Medium, Split::Few]);
    }

    #[test]
    fn rank_buckets_cifar_rule() {
        let counts = [5000, 2997, 1797, 1077, 646, 387, 232, 139, 83, 50];
        let s = assign_splits(&counts, SplitMode::RankBuckets { many: 3, medium: 3 }).unwrap();
        assert_eq!(s.classes_in(Split::Many), vec![0, 1, 2]);
        assert_eq!(s.classes_in(Split::Medium), vec![3, 4, 5]);
        assert_eq!(s.classes_in(Split::Few), vec![6, 7, 8, 9]);
    }

    #[test]
    fn rank_ties_by_index() {
        let s = assign_splits(&[7; 5], SplitMode::RankBuckets { many: 2, medium: 1 }).unwrap();
        assert_eq!(s.tags, vec![Split::Many, Split::Many, Split::Medium, Split::Few, Split::Few]);
    }

    #[test]
    fn empty_split_allowed() {
        let s = assign_splits(&[500, 400], SplitMode::CountThresholds { hi: 100, lo: 10 }).unwrap();
        assert!(s.classes_in(Split::Few).is_empty());
    }

    #[test]
    fn bad_modes_rejected() {
        assert!(assign_splits(&[1, 1], SplitMode::CountThresholds { hi: 5, lo: 5 }).is_err());
        assert!(assign_splits(&[1, 1], SplitMode::RankBuckets { many: 2, medium: 1 }).is_err());
    }
}
