use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;

use super::format::{parse_pose, to_canonical_json};
use super::{PoseError, PoseSequence};

const SUFFIX: &str = ".pose.json";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LibraryEntry {
    pub id: String,
    pub name: String,
    pub duration_s: f64,
    pub fps: f64,
}

/// A directory of `<id>.pose.json` files. Writes are serialized; reads go
/// straight to disk.
#[derive(Debug)]
pub struct PoseLibrary {
    dir: PathBuf,
    write: Mutex<()>,
}

fn check_id(id: &str) -> Result<(), PoseError> {
    let ok = !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(PoseError::InvalidId(id.to_string()))
    }
}

fn display_name(id: &str) -> String {
    id.replace(['_', '-'], " ")
}

impl PoseLibrary {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, PoseError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, write: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}{SUFFIX}"))
    }

    /// Entries sorted by id. Unreadable files are skipped.
    pub fn list(&self) -> Result<Vec<LibraryEntry>, PoseError> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(id) = name.strip_suffix(SUFFIX) else { continue };
            if check_id(id).is_err() {
                continue;
            }
            if let Ok(seq) = self.get(id) {
                out.push(LibraryEntry {
                    id: id.to_string(),
                    name: display_name(id),
                    duration_s: seq.duration_s(),
                    fps: seq.fps(),
                });
            }
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    pub fn get(&self, id: &str) -> Result<PoseSequence, PoseError> {
        check_id(id)?;
        match std::fs::read_to_string(self.path_for(id)) {
            Ok(text) => parse_pose(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(PoseError::NotFound(id.to_string())),
            Err(e) => Err(e.into()),
        }
    }

    pub fn add(&self, id: &str, seq: &PoseSequence) -> Result<(), PoseError> {
        check_id(id)?;
        let _guard = self.write.lock().unwrap_or_else(|e| e.into_inner());
        let mut file = match OpenOptions::new().write(true).create_new(true).open(self.path_for(id)) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(PoseError::DuplicateId(id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        file.write_all(to_canonical_json(seq).as_bytes())?;
        file.sync_all()?;
        Ok(())
    }

    pub fn contains(&self, id: &str) -> bool {
        check_id(id).is_ok() && self.path_for(id).exists()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::neutral_face;

    fn seq(n: usize) -> PoseSequence {
        PoseSequence::face68(24.0, vec![neutral_face(); n]).unwrap()
    }

    #[test]
    fn add_get_list() {
        let dir = tempfile::tempdir().unwrap();
        let lib = PoseLibrary::open(dir.path()).unwrap();
        lib.add("wave", &seq(48)).unwrap();
        lib.add("nod_slow", &seq(12)).unwrap();
        assert_eq!(lib.get("wave").unwrap(), seq(48));
        let list = lib.list().unwrap();
        assert_eq!(list.len(), 2);
        assert_eq!(list[0].name, "nod slow");
        assert_eq!(list[1].duration_s, 2.0);
    }

    #[test]
    fn missing_and_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        let lib = PoseLibrary::open(dir.path()).unwrap();
        assert!(matches!(lib.get("missing"), Err(PoseError::NotFound(_))));
        lib.add("wave", &seq(1)).unwrap();
        assert!(matches!(lib.add("wave", &seq(2)), Err(PoseError::DuplicateId(_))));
        assert_eq!(lib.get("wave").unwrap(), seq(1));
    }

    #[test]
    fn path_like_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let lib = PoseLibrary::open(dir.path()).unwrap();
        assert!(matches!(lib.get("../etc"), Err(PoseError::InvalidId(_))));
        assert!(matches!(lib.add("a/b", &seq(1)), Err(PoseError::InvalidId(_))));
    }
}
