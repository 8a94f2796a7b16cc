//! File formats: binary little-endian PLY cloud snapshots, "PGSW" named
//! tensor checkpoints, and "PGSF" per-frame driving-feature sequences.
//!
//! Every format round-trips byte-identically: write → read → write produces
//! the same bytes. Malformed inputs are reported as [`crate::Error::Format`]
//! with the byte offset of the first inconsistency.

pub mod features;
pub mod ply;
pub mod tensors;

pub use features::{read_features, write_features, FeatureSequence};
pub use ply::{read_ply, write_ply};
pub use tensors::{read_tensors, write_tensors, NamedTensor};

use std::path::Path;

use crate::Result;

/// Writes `bytes` to `path` atomically: a unique temporary file in the same
/// directory is written, flushed, and renamed over the destination.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = path.file_name().map(|n| n.to_os_string()).ok_or_else(|| {
        crate::Error::InvalidConfig(format!("not a file path: {}", path.display()))
    })?;
    tmp.push(format!(".tmp.{}", std::process::id()));
    let tmp_path = dir.join(tmp);
    {
        let mut f = std::fs::File::create(&tmp_path)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp_path, path)?;
    Ok(())
}
