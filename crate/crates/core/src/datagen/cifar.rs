//! CIFAR-10 binary batches: fixed 3073-byte records, one label byte
//! followed by 3072 pixel bytes (1024 red, 1024 green, 1024 blue, each plane
//! row-major 32×32).

use std::fs;
use std::path::{Path, PathBuf};

use super::{LabeledExample, LabeledSet};
use crate::error::{Error, Result};

pub const CIFAR10_RECORD_BYTES: usize = 3073;
pub const CIFAR10_CLASSES: usize = 10;

fn parse_file(path: &Path, num_classes: usize, out: &mut Vec<LabeledExample>) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let tail = bytes.len() % CIFAR10_RECORD_BYTES;
    if tail != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: (bytes.len() - tail) as u64,
            message: format!(
                "file length {} is not a multiple of the {CIFAR10_RECORD_BYTES}-byte record size",
                bytes.len()
            ),
        });
    }
    for (r, rec) in bytes.chunks_exact(CIFAR10_RECORD_BYTES).enumerate() {
        let label = rec[0] as usize;
        if label >= num_classes {
            return Err(Error::Format {
                path: path.to_path_buf(),
                offset: (r * CIFAR10_RECORD_BYTES) as u64,
                message: format!("label byte {label} out of range for {num_classes} classes"),
            });
        }
        out.push(LabeledExample {
            features: rec[1..].iter().map(|&b| b as f64 / 255.0).collect(),
            label,
        });
    }
    Ok(())
}

/// Reads CIFAR-10 binary batch files into one labeled set with pixels scaled
/// to `[0, 1]`.
pub fn ingest_cifar10_binary(paths: &[PathBuf], num_classes: usize) -> Result<LabeledSet> {
    let mut examples = Vec::new();
    for p in paths {
        parse_file(p, num_classes, &mut examples)?;
    }
    LabeledSet::new(examples, num_classes)
}
