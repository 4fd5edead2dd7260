//! All-or-nothing output: files are staged in a hidden directory inside the
//! output directory and only moved into place once every one of them has
//! been written.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

pub struct Staging {
    dir: tempfile::TempDir,
    out: PathBuf,
    files: Vec<PathBuf>,
}

impl Staging {
    pub fn new(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| {
            CliError::input(format!(
                "cannot create output directory {}: {e}",
                out.display()
            ))
        })?;
        let dir = tempfile::Builder::new()
            .prefix(".ubd-staging-")
            .tempdir_in(out)
            .map_err(|e| {
                CliError::input(format!("cannot stage outputs in {}: {e}", out.display()))
            })?;
        Ok(Self {
            dir,
            out: out.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Path inside the staging area for `name`, creating parent directories.
    pub fn path(&mut self, name: impl AsRef<Path>) -> Result<PathBuf> {
        let name = name.as_ref();
        let full = self.dir.path().join(name);
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_path_buf());
        }
        Ok(full)
    }

    pub fn write(&mut self, name: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.path(name)?;
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(CliError::compute)?;
        text.push('\n');
        self.write(name, text)
    }

    pub fn write_csv<R: Serialize>(
        &mut self,
        name: &str,
        rows: impl IntoIterator<Item = R>,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in rows {
            w.serialize(row).map_err(CliError::compute)?;
        }
        let bytes = w.into_inner().map_err(CliError::compute)?;
        self.write(name, bytes)
    }

    /// Moves every staged file into the output directory and returns their
    /// final paths.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut done = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let target = self.out.join(name);
            if let Some(parent) = target.parent() {
                fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
            }
            fs::rename(self.dir.path().join(name), &target).map_err(|e| io_error(&target, e))?;
            done.push(target);
        }
        Ok(done)
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::compute(format!("cannot write {}: {e}", path.display()))
}
