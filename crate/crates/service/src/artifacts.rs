//! Content-addressed blob storage with checksum verification on read.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("artifact {0} not found")]
    NotFound(String),
    #[error("artifact {id} is corrupt: stored checksum {stored}, computed {computed}")]
    Corrupt { id: String, stored: String, computed: String },
    #[error("invalid artifact id {0:?}")]
    InvalidId(String),
    #[error("artifact metadata unreadable: {0}")]
    Metadata(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub id: String,
    pub media_type: String,
    pub size: u64,
    /// Hex SHA-256 of the blob.
    pub checksum: String,
}

pub fn checksum(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Blobs live at `<dir>/<id>.bin` next to `<id>.json` metadata. The id is
/// the SHA-256 of the bytes, so identical content is stored once.
#[derive(Debug)]
pub struct ArtifactStore {
    dir: PathBuf,
    write: Mutex<()>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(tmp, path)
}

impl ArtifactStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, ArtifactError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, write: Mutex::new(()) })
    }

    fn check_id(id: &str) -> Result<(), ArtifactError> {
        if id.len() == 64 && id.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) {
            Ok(())
        } else {
            Err(ArtifactError::InvalidId(id.to_string()))
        }
    }

    fn blob_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.bin"))
    }

    fn meta_path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn put(&self, bytes: &[u8], media_type: &str) -> Result<ArtifactMeta, ArtifactError> {
        let id = checksum(bytes);
        let meta = ArtifactMeta {
            id: id.clone(),
            media_type: media_type.to_string(),
            size: bytes.len() as u64,
            checksum: id.clone(),
        };
        let _guard = self.write.lock().unwrap_or_else(|e| e.into_inner());
        if self.meta_path(&id).exists() && self.blob_path(&id).exists() {
            return self.meta(&id);
        }
        write_atomic(&self.blob_path(&id), bytes)?;
        let json = serde_json::to_vec_pretty(&meta).map_err(|e| ArtifactError::Metadata(e.to_string()))?;
        write_atomic(&self.meta_path(&id), &json)?;
        Ok(meta)
    }

    pub fn meta(&self, id: &str) -> Result<ArtifactMeta, ArtifactError> {
        Self::check_id(id)?;
        let raw = match fs::read(self.meta_path(id)) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ArtifactError::NotFound(id.to_string())),
            Err(e) => return Err(e.into()),
        };
        serde_json::from_slice(&raw).map_err(|e| ArtifactError::Metadata(e.to_string()))
    }

    /// Reads a blob, failing with `Corrupt` when its bytes no longer hash to
    /// the stored checksum.
    pub fn get(&self, id: &str) -> Result<(ArtifactMeta, Vec<u8>), ArtifactError> {
        let meta = self.meta(id)?;
        let bytes = match fs::read(self.blob_path(id)) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ArtifactError::NotFound(id.to_string())),
            Err(e) => return Err(e.into()),
        };
        let computed = checksum(&bytes);
        if computed != meta.checksum {
            return Err(ArtifactError::Corrupt { id: id.to_string(), stored: meta.checksum, computed });
        }
        Ok((meta, bytes))
    }

    pub fn list(&self) -> Result<Vec<ArtifactMeta>, ArtifactError> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(id) = path.file_stem().and_then(|s| s.to_str()) {
                    out.push(self.meta(id)?);
                }
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_get_and_dedupe() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let a = store.put(b"hello", "text/plain").unwrap();
        let b = store.put(b"hello", "text/plain").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.id, "2cf24dba5fb0a30e26e83b2ac5b9e29e1b161e5c1fa7425e73043362938b9824");
        assert_eq!(store.get(&a.id).unwrap().1, b"hello");
        assert_eq!(store.list().unwrap().len(), 1);
    }

    #[test]
    fn corruption_detected() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        let a = store.put(b"payload", "application/octet-stream").unwrap();
        fs::write(dir.path().join(format!("{}.bin", a.id)), b"tampered").unwrap();
        assert!(matches!(store.get(&a.id), Err(ArtifactError::Corrupt { .. })));
    }

    #[test]
    fn ids_are_validated() {
        let dir = tempfile::tempdir().unwrap();
        let store = ArtifactStore::open(dir.path()).unwrap();
        assert!(matches!(store.get("../etc/passwd"), Err(ArtifactError::InvalidId(_))));
        assert!(matches!(store.get(&"0".repeat(64)), Err(ArtifactError::NotFound(_))));
    }
}
