//! Content-addressed image storage.
//!
//! Every image in the system is referred to by the SHA-256 of its encoded
//! bytes, formatted as `sha256:<hex>`. The store keeps bytes in memory and,
//! when given a directory, mirrors them to `<hex>.png` files so a run's
//! evidence can be inspected after the fact and reloaded on replay.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Content hash reference for a byte string: `sha256:<lowercase hex>`.
pub fn content_ref(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("sha256:{}", hex::encode(hasher.finalize()))
}

fn hex_of(image_ref: &str) -> Result<&str> {
    image_ref
        .strip_prefix("sha256:")
        .filter(|h| h.len() == 64 && h.bytes().all(|b| b.is_ascii_hexdigit()))
        .ok_or_else(|| Error::validation(format!("malformed image ref {image_ref:?}")))
}

/// Thread-safe image store; clone the `Arc` to share across workers.
pub struct ImageStore {
    cache: Mutex<HashMap<String, Arc<Vec<u8>>>>,
    dir: Option<PathBuf>,
}

impl ImageStore {
    pub fn in_memory() -> Arc<Self> {
        Arc::new(ImageStore {
            cache: Mutex::new(HashMap::new()),
            dir: None,
        })
    }

    /// A store that mirrors every image to `dir/<hex>.png` and falls back to
    /// reading from the directory on a cache miss.
    pub fn with_dir(dir: impl Into<PathBuf>) -> Result<Arc<Self>> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Arc::new(ImageStore {
            cache: Mutex::new(HashMap::new()),
            dir: Some(dir),
        }))
    }

    /// Stores bytes and returns their content ref. Idempotent.
    pub fn put(&self, bytes: Vec<u8>) -> Result<String> {
        let image_ref = content_ref(&bytes);
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{}.png", hex_of(&image_ref)?));
            if !path.exists() {
                std::fs::write(&path, &bytes)?;
            }
        }
        self.cache
            .lock()
            .unwrap()
            .entry(image_ref.clone())
            .or_insert_with(|| Arc::new(bytes));
        Ok(image_ref)
    }

    /// Fetches the bytes behind a ref, checking the mirror directory on a
    /// cache miss (and verifying the hash of anything read from disk).
    pub fn get(&self, image_ref: &str) -> Result<Arc<Vec<u8>>> {
        let hex_part = hex_of(image_ref)?;
        if let Some(bytes) = self.cache.lock().unwrap().get(image_ref) {
            return Ok(bytes.clone());
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{hex_part}.png"));
            if path.exists() {
                let bytes = std::fs::read(&path)?;
                if content_ref(&bytes) != image_ref {
                    return Err(Error::validation(format!(
                        "file {} does not match its content ref",
                        path.display()
                    )));
                }
                let arc = Arc::new(bytes);
                self.cache
                    .lock()
                    .unwrap()
                    .insert(image_ref.to_string(), arc.clone());
                return Ok(arc);
            }
        }
        Err(Error::MissingImage(image_ref.to_string()))
    }

    pub fn contains(&self, image_ref: &str) -> bool {
        self.cache.lock().unwrap().contains_key(image_ref)
    }

    pub fn len(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
