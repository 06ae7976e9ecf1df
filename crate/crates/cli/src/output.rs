//! Atomic file output.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

fn write_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Write {
        path: path.display().to_string(),
        source,
    }
}

/// An output directory; every file is written to a temporary sibling and
/// renamed into place.
#[derive(Debug, Clone)]
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| write_error(root, e))?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(|e| write_error(&path, e))?;
        tmp.write_all(contents.as_bytes()).map_err(|e| write_error(&path, e))?;
        tmp.as_file().sync_all().map_err(|e| write_error(&path, e))?;
        tmp.persist(&path).map_err(|e| write_error(&path, e.error))?;
        Ok(path)
    }
}
