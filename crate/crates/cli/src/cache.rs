//! Content-addressed store for stage products.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// Bumped whenever a cached format or the numerics behind it change.
pub const CODE_VERSION: &str = concat!("redatum-", env!("CARGO_PKG_VERSION"), "/1");

pub const CACHE_ENV: &str = "REDATUM_CACHE_DIR";

#[derive(Clone, Debug)]
pub struct Cache {
    pub root: PathBuf,
}

/// SHA-256 of the JSON form of `(tag, CODE_VERSION, inputs)`.
pub fn key<T: Serialize + ?Sized>(tag: &str, inputs: &T) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&(tag, CODE_VERSION, inputs))?);
    Ok(format!("{:x}", h.finalize()))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(format!("{:x}", Sha256::digest(std::fs::read(path)?)))
}

impl Cache {
    /// `$REDATUM_CACHE_DIR` when set, otherwise `.redatum-cache` under `fallback`.
    pub fn locate(fallback: &Path) -> Cache {
        let root = std::env::var_os(CACHE_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| fallback.join(".redatum-cache"));
        Cache { root }
    }

    pub fn path(&self, tag: &str, key: &str) -> PathBuf {
        self.root.join(format!("{tag}-{}", &key[..32]))
    }

    /// Returns the entry for `key`, producing it with `make` on a miss. `make`
    /// writes into a scratch path that is renamed into place only on success.
    pub fn get_or_make(&self, tag: &str, key: &str, make: impl FnOnce(&Path) -> Result<()>) -> Result<(PathBuf, bool)> {
        let dest = self.path(tag, key);
        if dest.exists() {
            return Ok((dest, true));
        }
        std::fs::create_dir_all(&self.root)?;
        let tmp = self
            .root
            .join(format!(".{tag}-{}.{}.tmp", &key[..32], std::process::id()));
        remove(&tmp)?;
        match make(&tmp) {
            Ok(()) => {
                std::fs::rename(&tmp, &dest)?;
                Ok((dest, false))
            }
            Err(e) => {
                remove(&tmp).ok();
                Err(e)
            }
        }
    }
}

fn remove(p: &Path) -> std::io::Result<()> {
    if p.is_dir() {
        std::fs::remove_dir_all(p)
    } else if p.exists() {
        std::fs::remove_file(p)
    } else {
        Ok(())
    }
}

/// Copies the files of `from` (one level) into `to`.
pub fn copy_dir(from: &Path, to: &Path) -> Result<()> {
    std::fs::create_dir_all(to)?;
    for e in std::fs::read_dir(from)? {
        let e = e?;
        if e.file_type()?.is_file() {
            std::fs::copy(e.path(), to.join(e.file_name()))?;
        }
    }
    Ok(())
}
