use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// How a profile's counts were produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileKind {
    Exponential {
        n_max: usize,
        imbalance: f64,
    },
    Lomax {
        alpha: f64,
        scale: f64,
        cap: usize,
        floor: usize,
        seed: u64,
    },
    Explicit,
}

/// Per-class labeled counts, non-increasing in class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub counts: Vec<usize>,
    #[serde(flatten)]
    pub kind: ProfileKind,
}

impl ClassProfile {
    pub fn explicit(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Config("profile needs at least one class".into()));
        }
        if counts.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Config("profile counts must be non-increasing".into()));
        }
        Ok(Self {
            counts,
            kind: ProfileKind::Explicit,
        })
    }

    /// Explicit counts without the ordering check, for internal bookkeeping
    /// such as per-class draw totals.
    pub(crate) fn explicit_unsorted(counts: Vec<usize>) -> Self {
        Self {
            counts,
            kind: ProfileKind::Explicit,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// `counts[j] = round(n_max · imbalance^(−j/(C−1)))`, at least 1.
/// Rounding is half away from zero.
pub fn exponential_profile(num_classes: usize, n_max: usize, imbalance: f64) -> Result<ClassProfile> {
    let mut problems = Vec::new();
    if num_classes < 2 {
        problems.push(format!("need at least 2 classes, got {num_classes}"));
    }
    if !(imbalance >= 1.0) || !imbalance.is_finite() {
        problems.push(format!("imbalance must be a finite value >= 1, got {imbalance}"));
    }
    if n_max < 1 {
        problems.push("n_max must be at least 1".to_string());
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems.join("; ")));
    }
    let span = (num_classes - 1) as f64;
    let counts = (0..num_classes)
        .map(|j| {
            let v = n_max as f64 * imbalance.powf(-(j as f64) / span);
            (v.round() as usize).max(1)
        })
        .collect();
    Ok(ClassProfile {
        counts,
        kind: ProfileKind::Exponential { n_max, imbalance },
    })
}

/// Lomax (Pareto type II) distribution with shape `alpha` and `scale`,
/// sampled by inverse CDF: `scale · (U^(−1/alpha) − 1)`, `U ∈ (0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lomax {
    alpha: f64,
    scale: f64,
}

impl Lomax {
    pub fn new(alpha: f64, scale: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!(
                "Lomax needs positive shape and scale, got alpha={alpha}, scale={scale}"
            )));
        }
        Ok(Self { alpha, scale })
    }

    /// `P(S < s)`.
    pub fn cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else {
            1.0 - (1.0 + s / self.scale).powf(-self.alpha)
        }
    }

    /// `scale / (alpha − 1)` for `alpha > 1`.
    pub fn mean(&self) -> Option<f64> {
        (self.alpha > 1.0).then(|| self.scale / (self.alpha - 1.0))
    }
}

impl Distribution<f64> for Lomax {
    fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = 1.0 - rng.random::<f64>();
        lomax_draw(u, self.alpha, self.scale)
    }
}

/// Inverse-CDF transform of a uniform `u ∈ (0, 1]`.
pub fn lomax_draw(u: f64, alpha: f64, scale: f64) -> f64 {
    scale * (u.powf(-1.0 / alpha) - 1.0)
}

/// Long-tailed profile whose shape follows a Lomax density over the class
/// index.
///
/// Each labeled image draws `s ~ Lomax(alpha, scale)` and falls into class
/// `⌊s⌋` (draws at or past `C` are discarded). The number of draws is chosen
/// so the head class expects `cap` images. Counts are then clamped into
/// `[floor, cap]` and sorted non-increasing.
pub fn lomax_profile(
    num_classes: usize,
    alpha: f64,
    scale: f64,
    cap: usize,
    floor: usize,
    seed: u64,
) -> Result<ClassProfile> {
    let dist = Lomax::new(alpha, scale)?;
    if num_classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {num_classes}")));
    }
    if !(cap >= floor && floor >= 1) {
        return Err(Error::Config(format!("need cap >= floor >= 1, got cap={cap}, floor={floor}")));
    }
    let head_mass = dist.cdf(1.0);
    let draws = (cap as f64 / head_mass).round() as usize;
    let mut hist = vec![0usize; num_classes];
    let mut r: Rng = rng::derived(seed, &[rng::stream::LOMAX]);
    for _ in 0..draws {
        let s = dist.sample(&mut r);
        let j = s.floor();
        if j < num_classes as f64 {
            hist[j as usize] += 1;
        }
    }
    let mut counts: Vec<usize> = hist.into_iter().map(|n| n.clamp(floor, cap)).collect();
    counts.sort_unstable_by(|a, b| b.cmp(a));
    Ok(ClassProfile {
        counts,
        kind: ProfileKind::Lomax {
            alpha,
            scale,
            cap,
            floor,
            seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_endpoints() {
        let p = exponential_profile(10, 5000, 100.0).unwrap();
        assert_eq!(p.counts[0], 5000);
        assert_eq!(p.counts[9], 50);
        assert!(p.counts.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn flat_profile() {
        let p = exponential_profile(4, 37, 1.0).unwrap();
        assert_eq!(p.counts, vec![37; 4]);
    }

    #[test]
    fn exponential_clamps_to_one() {
        let p = exponential_profile(5, 10, 1000.0).unwrap();
        assert_eq!(*p.counts.last().unwrap(), 1);
    }

    #[test]
    fn exponential_rejects_bad_ranges() {
        let e = exponential_profile(1, 0, 0.5).unwrap_err().to_string();
        assert!(e.contains("classes") && e.contains("imbalance") && e.contains("n_max"), "{e}");
    }

    #[test]
    fn lomax_counts_within_clamp() {
        let p = lomax_profile(300, 6.0, 300.0, 250, 2, 9).unwrap();
        assert!(p.counts.iter().all(|&c| (2..=250).contains(&c)));
        assert!(p.counts.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn lomax_draw_is_inverse_cdf() {
        let d = Lomax::new(6.0, 1000.0).unwrap();
        for u in [0.1, 0.5, 0.9, 1.0] {
            let s = lomax_draw(u, 6.0, 1000.0);
            assert!((d.cdf(s) - (1.0 - u)).abs() < 1e-12);
        }
        assert!(Lomax::new(0.0, 1.0).is_err());
    }
}
