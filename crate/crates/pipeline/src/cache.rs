//! Content-addressed store of intermediate results under `<out>/cache`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{io_err, json_err, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the compact JSON form of `value`.
pub fn hash_of<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(serde_json::to_string(value).expect("cache keys serialize").as_bytes())
}

#[derive(Debug)]
pub struct Cache {
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl Cache {
    pub fn open(out_dir: &Path) -> Result<Self> {
        let dir = out_dir.join("cache");
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        Ok(Self { dir, hits: AtomicUsize::new(0), misses: AtomicUsize::new(0) })
    }

    fn path(&self, kind: &str, key: &str) -> PathBuf {
        self.dir.join(format!("{kind}-{key}.json"))
    }

    pub fn get<T: DeserializeOwned>(&self, kind: &str, key: &str) -> Result<Option<T>> {
        let path = self.path(kind, key);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                return Ok(None);
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        self.hits.fetch_add(1, Ordering::Relaxed);
        Ok(Some(serde_json::from_str(&text).map_err(json_err(&path))?))
    }

    pub fn put<T: Serialize>(&self, kind: &str, key: &str, value: &T) -> Result<()> {
        let path = self.path(kind, key);
        let text = serde_json::to_string(value).map_err(json_err(&path))?;
        // write-then-rename so a crashed run never leaves a truncated entry
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
        Ok(())
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }
}
