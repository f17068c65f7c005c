//! Atomic file emission for run artifacts (temp file in the target directory,
//! then rename).

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::Io(std::io::Error::other(format!("temp file in {}: {e}", dir.display()))))?;
    tmp.write_all(bytes)?;
    tmp.persist(path)
        .map_err(|e| Error::Io(std::io::Error::other(format!("persist {}: {e}", path.display()))))?;
    Ok(())
}
