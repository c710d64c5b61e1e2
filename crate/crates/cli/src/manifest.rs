//! Run manifest: one record per stage with the hash of everything the stage
//! read, the hashes of the files it wrote, its wall time and its status.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
    /// Not attempted because an upstream stage failed.
    Blocked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub input_hash: String,
    /// Output paths relative to the run directory, with their SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub wall_time_s: f64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    /// Read the manifest of `run_dir`; a missing file gives an empty manifest.
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Self::default());
        }
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn get(&self, stage: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    pub fn upsert(&mut self, record: StageRecord) {
        match self.stages.iter_mut().find(|s| s.stage == record.stage) {
            Some(slot) => *slot = record,
            None => self.stages.push(record),
        }
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hash_bytes(&bytes))
}

/// Order-sensitive digest of labelled parts.
#[derive(Default)]
pub struct InputHasher {
    h: Sha256,
}

impl InputHasher {
    pub fn add(&mut self, label: &str, value: &str) -> &mut Self {
        for part in [label, value] {
            self.h.update((part.len() as u64).to_le_bytes());
            self.h.update(part.as_bytes());
        }
        self
    }

    pub fn finish(self) -> String {
        self.h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Whether a recorded stage is still valid: it succeeded with the same
/// inputs and all of its outputs are present and unmodified.
pub fn is_current(record: &StageRecord, input_hash: &str, run_dir: &Path) -> bool {
    if record.status != Status::Ok || record.input_hash != input_hash {
        return false;
    }
    record.outputs.iter().all(|(rel, want)| {
        let p = run_dir.join(rel);
        match hash_file(&p) {
            Ok(have) if &have == want => true,
            Ok(_) => {
                log::warn!("{} was modified after it was written; recomputing", p.display());
                false
            }
            Err(_) => false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(hash_bytes(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn labels_are_delimited() {
        let mut a = InputHasher::default();
        a.add("ab", "c");
        let mut b = InputHasher::default();
        b.add("a", "bc");
        assert_ne!(a.finish(), b.finish());
    }

    #[test]
    fn tampered_output_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.bin"), b"one").unwrap();
        let rec = StageRecord {
            stage: "s".into(),
            input_hash: "h".into(),
            outputs: BTreeMap::from([("x.bin".to_string(), hash_bytes(b"one"))]),
            wall_time_s: 0.0,
            status: Status::Ok,
            error: None,
        };
        assert!(is_current(&rec, "h", dir.path()));
        assert!(!is_current(&rec, "other", dir.path()));
        std::fs::write(dir.path().join("x.bin"), b"two").unwrap();
        assert!(!is_current(&rec, "h", dir.path()));
        std::fs::remove_file(dir.path().join("x.bin")).unwrap();
        assert!(!is_current(&rec, "h", dir.path()));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest::default();
        m.upsert(StageRecord {
            stage: "trend".into(),
            input_hash: "a".into(),
            outputs: BTreeMap::new(),
            wall_time_s: 1.5,
            status: Status::Failed,
            error: Some("boom".into()),
        });
        m.save(dir.path()).unwrap();
        assert_eq!(Manifest::load(dir.path()).unwrap(), m);
    }
}
