//! Run directories are staged under a private name and renamed into place,
//! so a directory that exists is always complete.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

pub struct Staged {
    tmp: PathBuf,
    dest: PathBuf,
}

impl Staged {
    /// Stages `<root>/<name>`. Fails if it exists unless `force` is set.
    pub fn new(root: &Path, name: &str, force: bool) -> Result<Self> {
        let dest = root.join(name);
        if dest.exists() && !force {
            bail!(
                "run directory {} already exists; pass --force to replace it",
                dest.display()
            );
        }
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let tmp = root.join(format!(".{name}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        Ok(Staged { tmp, dest })
    }

    pub fn path(&self) -> &Path {
        &self.tmp
    }

    pub fn write(&self, file: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.tmp.join(file);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn write_json<T: Serialize>(&self, file: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(file, s)
    }

    /// Moves the staged directory to its final name.
    pub fn commit(self) -> Result<PathBuf> {
        if self.dest.exists() {
            fs::remove_dir_all(&self.dest)?;
        }
        fs::rename(&self.tmp, &self.dest)
            .with_context(|| format!("renaming {} to {}", self.tmp.display(), self.dest.display()))?;
        let dest = self.dest.clone();
        std::mem::forget(self);
        Ok(dest)
    }
}

impl Drop for Staged {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.tmp);
    }
}

pub fn run_name(cmd: &str, hash: &str, seed: u64) -> String {
    format!("{cmd}-{hash}-seed{seed}")
}
