//! Filesystem helpers shared by checkpoint and artifact writers.

use crate::Result;
use std::io::Write;
use std::path::Path;

/// Writes a file atomically: write to a sibling temp file, fsync, rename.
/// A crash mid-write leaves either the old file or no file, never a torn one.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    let tmp_path = dir.join(format!(".{file_name}.tmp"));
    {
        let mut tmp = std::fs::File::create(&tmp_path)?;
        tmp.write_all(bytes)?;
        tmp.sync_all()?;
    }
    std::fs::rename(&tmp_path, path)?;
    Ok(())
}
