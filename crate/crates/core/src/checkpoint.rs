//! Model checkpoints.
//!
//! A checkpoint is a JSON document:
//!
//! ```text
//! {
//!   "format": "sslt-checkpoint",
//!   "version": 1,
//!   "config_hash": "<16 hex chars>",
//!   "loop_index": 3 | null,
//!   "model": {
//!     "embedding": { "layers": [ { "n_in", "n_out", "weight": [..], "bias": [..] }, .. ] },
//!     "head_balanced": { "num_classes", "dim", "weight": [..], "bias": [..] },
//!     "head_random":   { "num_classes", "dim", "weight": [..], "bias": [..] }
//!   }
//! }
//! ```
//!
//! Weights are row-major `[out][in]`. Reals are written in shortest
//! round-trip form, so loading restores every parameter bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::netcore::ModelState;

pub const CHECKPOINT_FORMAT: &str = "sslt-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub loop_index: Option<usize>,
    pub model: ModelState,
}

impl Checkpoint {
    pub fn new(model: ModelState, config_hash: impl Into<String>, loop_index: Option<usize>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.into(),
            loop_index,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &serde_json::to_vec(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(&fsutil::read_to_string(path)?)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "{} is not a version-{CHECKPOINT_VERSION} checkpoint (format {:?}, version {})",
                path.display(),
                ck.format,
                ck.version
            )));
        }
        ck.model.validate()?;
        Ok(ck)
    }
}
