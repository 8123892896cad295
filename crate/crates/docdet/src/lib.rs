//! Two-stage graphical-object detection for document images.
//!
//! The crate trains and runs a region-proposal detector that localizes
//! tables, figures and equations on document pages, entirely on CPU in
//! double precision: box geometry, a small tensor kernel with explicit
//! backward passes, the detector itself, the evaluation protocol
//! (AP/mAP, precision/recall/F1, IoU threshold sweeps), synthetic page
//! corpora with exact ground truth, and a CLI that wires it all together.

pub mod checkpoint;
pub mod data;
pub mod detector;
pub mod eval;
pub mod geometry;
pub mod numerics;
pub mod verify;

use std::io;
use std::path::Path;

/// Writes a file via a temporary sibling plus rename, so partially
/// written outputs are never observable.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut ext = path
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_default();
    ext.push_str(".tmp");
    let tmp = path.with_extension(ext);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
