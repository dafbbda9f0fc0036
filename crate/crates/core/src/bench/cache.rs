//! On-disk JSON cache, one file per (bucket, key).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone)]
pub struct Cache {
    root: PathBuf,
}

impl Cache {
    pub fn open(root: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    fn path(&self, bucket: &str, key: &str) -> PathBuf {
        let name: String = Sha256::digest(key.as_bytes())
            .iter()
            .take(16)
            .map(|b| format!("{b:02x}"))
            .collect();
        self.root.join(bucket).join(format!("{name}.json"))
    }

    /// Cached value, or `None` when absent or unreadable.
    pub fn get<T: DeserializeOwned>(&self, bucket: &str, key: &str) -> Option<T> {
        let bytes = fs::read(self.path(bucket, key)).ok()?;
        match serde_json::from_slice(&bytes) {
            Ok(v) => Some(v),
            Err(e) => {
                log::warn!("ignoring corrupt cache entry {bucket}/{key}: {e}");
                None
            }
        }
    }

    /// Stores `value` atomically: readers see the old entry or the new one, never a partial file.
    pub fn put<T: Serialize>(&self, bucket: &str, key: &str, value: &T) -> std::io::Result<()> {
        let path = self.path(bucket, key);
        let dir = path.parent().expect("bucket directory");
        fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer(&mut tmp, value)?;
        tmp.flush()?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    /// Entries stored in `bucket`.
    pub fn count(&self, bucket: &str) -> usize {
        fs::read_dir(self.root.join(bucket))
            .map(|d| {
                d.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_count() {
        let dir = tempfile::tempdir().unwrap();
        let cache = Cache::open(dir.path()).unwrap();
        assert_eq!(cache.get::<Vec<f64>>("b", "k"), None);
        cache.put("b", "k", &vec![0.1, 1e-300]).unwrap();
        assert_eq!(cache.get::<Vec<f64>>("b", "k"), Some(vec![0.1, 1e-300]));
        cache.put("b", "k", &vec![2.0]).unwrap();
        assert_eq!(cache.get::<Vec<f64>>("b", "k"), Some(vec![2.0]));
        assert_eq!(cache.count("b"), 1);
        assert_eq!(cache.count("missing"), 0);
    }
}
