//! Run manifests and content hashing for idempotent commands.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// SHA-256 of a file, or of every file under a directory (relative paths
/// included, in sorted order).
pub fn hash_path(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    if path.is_dir() {
        let mut files = Vec::new();
        collect_files(path, path, &mut files)?;
        files.sort();
        for rel in files {
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(hash_path(&path.join(&rel))?.as_bytes());
        }
    } else {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buf = [0u8; 64 * 1024];
        loop {
            let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            h.update(&buf[..n]);
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

pub fn hash_strings<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub tool_version: String,
    pub config_snapshot: String,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Hash over the command, tool version, config and inputs.
    pub key: String,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str, config_snapshot: &str, inputs: &[PathBuf], extra: &[&str]) -> Result<Self> {
        let mut hashes = BTreeMap::new();
        for p in inputs {
            hashes.insert(p.display().to_string(), hash_path(p)?);
        }
        let mut parts: Vec<&str> = vec![command, TOOL_VERSION, config_snapshot];
        parts.extend_from_slice(extra);
        let flat: Vec<String> = hashes.iter().map(|(k, v)| format!("{k}={v}")).collect();
        parts.extend(flat.iter().map(String::as_str));
        let key = hash_strings(parts);
        Ok(Manifest {
            command: command.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            config_snapshot: config_snapshot.to_string(),
            inputs: hashes,
            key,
            outputs: Vec::new(),
        })
    }

    pub fn path_for(manifest_dir: &Path, name: &str) -> PathBuf {
        manifest_dir.join(format!("{name}.json"))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// True when a manifest at `path` has the same key and all its outputs exist.
    pub fn is_current(&self, path: &Path) -> bool {
        match Self::load(path) {
            Ok(old) => old.key == self.key && old.outputs.iter().all(|o| o.exists()),
            Err(_) => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directory_hash_tracks_content_and_names() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.txt"), "x").unwrap();
        let h1 = hash_path(dir.path()).unwrap();
        assert_eq!(h1, hash_path(dir.path()).unwrap());
        std::fs::write(dir.path().join("a.txt"), "y").unwrap();
        let h2 = hash_path(dir.path()).unwrap();
        assert_ne!(h1, h2);
        std::fs::rename(dir.path().join("a.txt"), dir.path().join("b.txt")).unwrap();
        assert_ne!(h2, hash_path(dir.path()).unwrap());
    }

    #[test]
    fn currency_needs_matching_key_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in");
        std::fs::write(&input, "data").unwrap();
        let out = dir.path().join("out");
        let mpath = dir.path().join("m.json");
        let mut m = Manifest::new("ingest", "cfg", std::slice::from_ref(&input), &[]).unwrap();
        m.outputs.push(out.clone());
        m.save(&mpath).unwrap();
        assert!(!m.is_current(&mpath), "output missing");
        std::fs::write(&out, "o").unwrap();
        assert!(m.is_current(&mpath));
        let other = Manifest::new("ingest", "cfg2", std::slice::from_ref(&input), &[]).unwrap();
        assert!(!other.is_current(&mpath));
        std::fs::write(&input, "changed").unwrap();
        let changed = Manifest::new("ingest", "cfg", &[input], &[]).unwrap();
        assert!(!changed.is_current(&mpath));
    }

    #[test]
    fn string_hash_is_length_prefixed() {
        assert_ne!(hash_strings(["ab", "c"]), hash_strings(["a", "bc"]));
    }
}
