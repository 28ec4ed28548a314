//! Outputs are staged in a hidden directory inside `--out` and moved into place
//! only once the whole run succeeds; dropping a `Staging` discards them.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::TempDir;

pub struct Staging {
    out: PathBuf,
    dir: TempDir,
    files: Vec<String>,
}

impl Staging {
    pub fn new(out: &Path) -> io::Result<Self> {
        fs::create_dir_all(out)?;
        let dir = tempfile::Builder::new().prefix(".sdtrade-staging-").tempdir_in(out)?;
        Ok(Self { out: out.to_path_buf(), dir, files: Vec::new() })
    }

    /// Path of a staged file; the name is recorded for finalization.
    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_owned());
        }
        self.dir.path().join(name)
    }

    pub fn create(&mut self, name: &str) -> io::Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::from)?;
        text.push('\n');
        fs::write(self.path(name), text)
    }

    pub fn final_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn file_names(&self) -> &[String] {
        &self.files
    }

    /// Moves every staged file into the output directory.
    pub fn finalize(self) -> io::Result<Vec<PathBuf>> {
        let mut moved = Vec::with_capacity(self.files.len());
        for name in &self.files {
            let dest = self.out.join(name);
            fs::rename(self.dir.path().join(name), &dest)?;
            moved.push(dest);
        }
        Ok(moved)
    }
}
