//! Run configuration: one flat TOML table covering the dataset and the
//! training schedule. Every key is optional; omitted keys take the
//! defaults below.
//!
//! | key | type | default |
//! |-----|------|---------|
//! | `source` | `"synthetic"` or `"cifar10"` | `"synthetic"` |
//! | `classes` | integer | 10 |
//! | `input_dim` | integer (synthetic only) | 16 |
//! | `profile` | `"exponential"` or `"lomax"` | `"exponential"` |
//! | `n_max`, `imbalance` | integer, float | 500, 100 |
//! | `lomax_alpha`, `lomax_scale`, `lomax_cap`, `lomax_floor` | float, float, integer, integer | 6, 1000, 250, 2 |
//! | `unlabeled_factor` | float | 5 |
//! | `class_sep`, `noise_sigma` | float | 2.5, 1 |
//! | `test_per_class` | integer | 1000 |
//! | `split_mode` | `"rank"` or `"threshold"` | `"rank"` |
//! | `split_many`, `split_medium` | integer | 3, 3 |
//! | `split_hi`, `split_lo` | integer | 100, 10 |
//! | `cifar_train`, `cifar_test` | array of paths | `[]` |
//! | `init_embed_epochs`, `init_classifier_epochs` | integer | 200, 10 |
//! | `loops`, `stage2_epochs`, `stage3_epochs` | integer | 5, 40, 10 |
//! | `batch_size` | integer | 128 |
//! | `lr`, `momentum`, `weight_decay`, `lambda` | float | 0.1, 0.9, 0.0005, 1 |
//! | `seed` | integer | 0 |
//! | `hidden_widths` | array of integers | `[64, 64]` |
//! | `reset_memory` | boolean | true |

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sslt_core::datagen::{
    exponential_profile, ingest_cifar10_binary, long_tailed_split, lomax_profile, assign_splits, synth_gaussian_task,
    ClassProfile, GeneratedTask, SplitMode, TaskSpec, CIFAR10_CLASSES,
};
use sslt_core::fsutil;
use sslt_core::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub source: String,
    pub classes: usize,
    pub input_dim: usize,
    pub profile: String,
    pub n_max: usize,
    pub imbalance: f64,
    pub lomax_alpha: f64,
    pub lomax_scale: f64,
    pub lomax_cap: usize,
    pub lomax_floor: usize,
    pub unlabeled_factor: f64,
    pub class_sep: f64,
    pub noise_sigma: f64,
    pub test_per_class: usize,
    pub split_mode: String,
    pub split_many: usize,
    pub split_medium: usize,
    pub split_hi: usize,
    pub split_lo: usize,
    pub cifar_train: Vec<PathBuf>,
    pub cifar_test: Vec<PathBuf>,
    #[serde(flatten)]
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            source: "synthetic".into(),
            classes: 10,
            input_dim: 16,
            profile: "exponential".into(),
            n_max: 500,
            imbalance: 100.0,
            lomax_alpha: 6.0,
            lomax_scale: 1000.0,
            lomax_cap: 250,
            lomax_floor: 2,
            unlabeled_factor: 5.0,
            class_sep: 2.5,
            noise_sigma: 1.0,
            test_per_class: 1000,
            split_mode: "rank".into(),
            split_many: 3,
            split_medium: 3,
            split_hi: 100,
            split_lo: 10,
            cifar_train: Vec::new(),
            cifar_test: Vec::new(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    UInt,
    Float,
    Bool,
    Str,
    UIntList,
    StrList,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::UInt => "a non-negative integer",
            Kind::Float => "a number",
            Kind::Bool => "a boolean",
            Kind::Str => "a string",
            Kind::UIntList => "an array of non-negative integers",
            Kind::StrList => "an array of strings",
        }
    }

    fn accepts(self, v: &toml::Value) -> bool {
        use toml::Value as V;
        let uint = |v: &V| matches!(v, V::Integer(i) if *i >= 0);
        match self {
            Kind::UInt => uint(v),
            Kind::Float => matches!(v, V::Float(_) | V::Integer(_)),
            Kind::Bool => matches!(v, V::Boolean(_)),
            Kind::Str => matches!(v, V::String(_)),
            Kind::UIntList => matches!(v, V::Array(a) if a.iter().all(uint)),
            Kind::StrList => matches!(v, V::Array(a) if a.iter().all(|x| matches!(x, V::String(_)))),
        }
    }
}

const SCHEMA: &[(&str, Kind)] = &[
    ("source", Kind::Str),
    ("classes", Kind::UInt),
    ("input_dim", Kind::UInt),
    ("profile", Kind::Str),
    ("n_max", Kind::UInt),
    ("imbalance", Kind::Float),
    ("lomax_alpha", Kind::Float),
    ("lomax_scale", Kind::Float),
    ("lomax_cap", Kind::UInt),
    ("lomax_floor", Kind::UInt),
    ("unlabeled_factor", Kind::Float),
    ("class_sep", Kind::Float),
    ("noise_sigma", Kind::Float),
    ("test_per_class", Kind::UInt),
    ("split_mode", Kind::Str),
    ("split_many", Kind::UInt),
    ("split_medium", Kind::UInt),
    ("split_hi", Kind::UInt),
    ("split_lo", Kind::UInt),
    ("cifar_train", Kind::StrList),
    ("cifar_test", Kind::StrList),
    ("init_embed_epochs", Kind::UInt),
    ("init_classifier_epochs", Kind::UInt),
    ("loops", Kind::UInt),
    ("stage2_epochs", Kind::UInt),
    ("stage3_epochs", Kind::UInt),
    ("batch_size", Kind::UInt),
    ("lr", Kind::Float),
    ("momentum", Kind::Float),
    ("weight_decay", Kind::Float),
    ("lambda", Kind::Float),
    ("seed", Kind::UInt),
    ("hidden_widths", Kind::UIntList),
    ("reset_memory", Kind::Bool),
];

/// Configuration failure carrying every problem found.
#[derive(Debug)]
pub struct ConfigError(pub Vec<String>);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid configuration:")?;
        for p in &self.0 {
            write!(f, "\n  - {p}")?;
        }
        Ok(())
    }
}

fn toml_to_json(v: &toml::Value) -> serde_json::Value {
    match v {
        toml::Value::Integer(i) => serde_json::Value::from(*i),
        toml::Value::Float(x) => serde_json::Value::from(*x),
        toml::Value::Boolean(b) => serde_json::Value::from(*b),
        toml::Value::String(s) => serde_json::Value::from(s.clone()),
        toml::Value::Array(a) => serde_json::Value::Array(a.iter().map(toml_to_json).collect()),
        other => serde_json::Value::from(other.to_string()),
    }
}

impl RunConfig {
    /// Parses and validates TOML text. Relative CIFAR paths resolve against
    /// `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError(vec![e.to_string()]))?;
        let mut problems = Vec::new();
        let mut doc = serde_json::to_value(Self::default()).expect("default config serializes");
        for (key, value) in &table {
            match SCHEMA.iter().find(|(k, _)| k == key) {
                None => problems.push(format!("unknown key `{key}`")),
                Some((_, kind)) if !kind.accepts(value) => {
                    problems.push(format!("`{key}` must be {}, got {}", kind.name(), value.type_str()))
                }
                Some((_, kind)) => {
                    let mut j = toml_to_json(value);
                    if *kind == Kind::Float {
                        j = serde_json::Value::from(j.as_f64().unwrap_or(f64::NAN));
                    }
                    doc[key.as_str()] = j;
                }
            }
        }
        let mut cfg: RunConfig = match serde_json::from_value(doc) {
            Ok(c) => c,
            Err(e) => {
                problems.push(e.to_string());
                return Err(ConfigError(problems));
            }
        };
        if let Some(base) = base {
            for p in cfg.cifar_train.iter_mut().chain(cfg.cifar_test.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        problems.extend(cfg.problems());
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError(problems))
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fsutil::read_to_string(path).map_err(|e| ConfigError(vec![e.to_string()]))?;
        Self::parse(&text, path.parent())
    }

    /// Every range or consistency violation.
    pub fn problems(&self) -> Vec<String> {
        let mut p = self.train.problems();
        if self.classes < 2 {
            p.push(format!("classes must be at least 2, got {}", self.classes));
        }
        match self.source.as_str() {
            "synthetic" => {
                if self.input_dim < 1 {
                    p.push("input_dim must be at least 1".into());
                }
                if !(self.class_sep > 0.0 && self.class_sep.is_finite()) {
                    p.push(format!("class_sep must be positive, got {}", self.class_sep));
                }
                if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
                    p.push(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
                }
                if self.test_per_class < 1 {
                    p.push("test_per_class must be at least 1".into());
                }
            }
            "cifar10" => {
                if self.classes != CIFAR10_CLASSES {
                    p.push(format!("cifar10 needs classes = {CIFAR10_CLASSES}, got {}", self.classes));
                }
                if self.cifar_train.is_empty() {
                    p.push("cifar10 needs at least one cifar_train file".into());
                }
                if self.cifar_test.is_empty() {
                    p.push("cifar10 needs at least one cifar_test file".into());
                }
            }
            other => p.push(format!("source must be \"synthetic\" or \"cifar10\", got {other:?}")),
        }
        match self.profile.as_str() {
            "exponential" => {
                if self.n_max < 1 {
                    p.push("n_max must be at least 1".into());
                }
                if !(self.imbalance >= 1.0 && self.imbalance.is_finite()) {
                    p.push(format!("imbalance must be >= 1, got {}", self.imbalance));
                }
            }
            "lomax" => {
                if !(self.lomax_alpha > 0.0 && self.lomax_alpha.is_finite()) {
                    p.push(format!("lomax_alpha must be positive, got {}", self.lomax_alpha));
                }
                if !(self.lomax_scale > 0.0 && self.lomax_scale.is_finite()) {
                    p.push(format!("lomax_scale must be positive, got {}", self.lomax_scale));
                }
                if !(self.lomax_cap >= self.lomax_floor && self.lomax_floor >= 1) {
                    p.push(format!(
                        "need lomax_cap >= lomax_floor >= 1, got cap {} and floor {}",
                        self.lomax_cap, self.lomax_floor
                    ));
                }
            }
            other => p.push(format!("profile must be \"exponential\" or \"lomax\", got {other:?}")),
        }
        if !(self.unlabeled_factor > 0.0 && self.unlabeled_factor.is_finite()) {
            p.push(format!("unlabeled_factor must be positive, got {}", self.unlabeled_factor));
        }
        match self.split_mode.as_str() {
            "rank" => {
                if self.split_many + self.split_medium > self.classes {
                    p.push(format!(
                        "split_many + split_medium = {} exceeds {} classes",
                        self.split_many + self.split_medium,
                        self.classes
                    ));
                }
            }
            "threshold" => {
                if !(self.split_hi > self.split_lo && self.split_lo >= 1) {
                    p.push(format!(
                        "need split_hi > split_lo >= 1, got {} and {}",
                        self.split_hi, self.split_lo
                    ));
                }
            }
            other => p.push(format!("split_mode must be \"rank\" or \"threshold\", got {other:?}")),
        }
        p
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        fsutil::content_hash(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// The effective configuration as TOML, headed by its hash.
    pub fn to_toml(&self) -> String {
        let body = toml::to_string(self).expect("config serializes to TOML");
        format!("# effective configuration\n# config_hash = {}\n{body}", self.hash())
    }

    pub fn split_mode(&self) -> SplitMode {
        if self.split_mode == "threshold" {
            SplitMode::CountThresholds { hi: self.split_hi, lo: self.split_lo }
        } else {
            SplitMode::RankBuckets { many: self.split_many, medium: self.split_medium }
        }
    }

    pub fn class_profile(&self) -> sslt_core::Result<ClassProfile> {
        if self.profile == "lomax" {
            lomax_profile(
                self.classes,
                self.lomax_alpha,
                self.lomax_scale,
                self.lomax_cap,
                self.lomax_floor,
                self.train.seed,
            )
        } else {
            exponential_profile(self.classes, self.n_max, self.imbalance)
        }
    }

    /// Generates (or ingests) the dataset this configuration describes.
    pub fn build_task(&self) -> sslt_core::Result<GeneratedTask> {
        let profile = self.class_profile()?;
        if self.source == "cifar10" {
            let corpus = ingest_cifar10_binary(&self.cifar_train, CIFAR10_CLASSES)?;
            let test = ingest_cifar10_binary(&self.cifar_test, CIFAR10_CLASSES)?;
            let (labeled, unlabeled) = long_tailed_split(&corpus, &profile, self.unlabeled_factor, self.train.seed)?;
            return Ok(GeneratedTask {
                labeled,
                unlabeled,
                test,
                splits: assign_splits(&profile.counts, self.split_mode())?,
                means: Vec::new(),
            });
        }
        synth_gaussian_task(&TaskSpec {
            profile,
            input_dim: self.input_dim,
            unlabeled_factor: self.unlabeled_factor,
            class_sep: self.class_sep,
            noise_sigma: self.noise_sigma,
            test_per_class: self.test_per_class,
            split_mode: self.split_mode(),
            seed: self.train.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let c = RunConfig::parse("", None).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.lr, 0.1);
        assert_eq!(c.train.momentum, 0.9);
        assert_eq!(c.train.weight_decay, 0.0005);
        assert_eq!(c.train.lambda, 1.0);
        assert_eq!(c.train.loops, 5);
        assert_eq!(c.train, TrainConfig::default());
    }

    #[test]
    fn echo_is_a_fixed_point() {
        let c = RunConfig::parse("lr = 0.05\nloops = 2\nhidden_widths = [8]\nimbalance = 10", None).unwrap();
        let echoed = RunConfig::parse(&c.to_toml(), None).unwrap();
        assert_eq!(echoed, c);
        assert_eq!(echoed.hash(), c.hash());
        assert_eq!(RunConfig::parse(&echoed.to_toml(), None).unwrap().to_toml(), c.to_toml());
    }

    #[test]
    fn all_problems_are_listed() {
        let e = RunConfig::parse("lr = \"fast\"\nbogus = 1\nstage2_epochs = -3\nmomentum = 1.5\nclasses = 1", None)
            .unwrap_err();
        let text = e.to_string();
        for needle in ["`lr`", "bogus", "`stage2_epochs`", "momentum", "classes"] {
            assert!(text.contains(needle), "{needle} missing from {text}");
        }
    }

    #[test]
    fn integers_are_accepted_for_reals() {
        let c = RunConfig::parse("lr = 1\nclass_sep = 3", None).unwrap();
        assert_eq!(c.train.lr, 1.0);
        assert_eq!(c.class_sep, 3.0);
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.train.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
