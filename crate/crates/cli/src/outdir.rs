//! Output directories that are marked incomplete until a run finishes.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::CliError;

pub const INCOMPLETE_MARKER: &str = "INCOMPLETE";

#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `root` if needed and drops the incomplete marker into it.
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let dir = Self { root: root.to_path_buf() };
        dir.write(INCOMPLETE_MARKER, b"run in progress\n")?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn subdir(&self, rel: &str) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        fs::create_dir_all(&p).map_err(|e| CliError::io(&p, e))?;
        Ok(p)
    }

    /// Writes through a temporary sibling and renames, so readers never see
    /// a half-written file.
    pub fn write(&self, rel: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.path(rel);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    pub fn finish(self) -> Result<(), CliError> {
        let marker = self.path(INCOMPLETE_MARKER);
        fs::remove_file(&marker).map_err(|e| CliError::io(&marker, e))
    }

    /// Records why the run stopped; the marker stays in place.
    pub fn fail(&self, error: &CliError) {
        let text = format!("run failed: {error}\n");
        if let Err(e) = fs::write(self.path(INCOMPLETE_MARKER), text) {
            log::error!("could not update {}: {e}", self.path(INCOMPLETE_MARKER).display());
        }
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}
