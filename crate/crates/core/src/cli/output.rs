use std::path::{Path, PathBuf};

use crate::{Error, Result};

/// Files written by one command. Unless [`Outputs::commit`] succeeds, the
/// files are removed again when the set is dropped, along with the output
/// directory if this run created it.
pub struct Outputs {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
    committed: bool,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            written: Vec::new(),
            committed: false,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
        let path = self.path(name);
        self.written.push(path.clone());
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Registers a file produced by another writer.
    pub fn track(&mut self, name: &str) -> PathBuf {
        let path = self.path(name);
        self.written.push(path.clone());
        path
    }

    /// Checks every declared output exists and is nonempty.
    pub fn commit(mut self) -> Result<Vec<PathBuf>> {
        for p in &self.written {
            let len = std::fs::metadata(p).map_err(|e| Error::io(p, e))?.len();
            if len == 0 {
                return Err(Error::Invalid(format!("output {} is empty", p.display())));
            }
        }
        self.committed = true;
        Ok(std::mem::take(&mut self.written))
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
        if self.created_dir {
            let _ = std::fs::remove_dir(&self.dir);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncommitted_outputs_are_removed() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("run");
        {
            let mut o = Outputs::create(&dir).unwrap();
            o.write("a.txt", "x").unwrap();
        }
        assert!(!dir.exists());
        let mut o = Outputs::create(&dir).unwrap();
        o.write("a.txt", "x").unwrap();
        o.commit().unwrap();
        assert!(dir.join("a.txt").exists());
    }

    #[test]
    fn empty_output_fails_commit() {
        let tmp = tempfile::tempdir().unwrap();
        let mut o = Outputs::create(tmp.path()).unwrap();
        let p = o.write("empty.txt", "").unwrap();
        assert!(o.commit().is_err());
        assert!(!p.exists());
    }
}
