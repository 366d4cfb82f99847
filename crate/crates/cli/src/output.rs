//! Deterministic artifact writers: full-precision floats, sorted manifests,
//! FNV-1a checksums. No timestamps anywhere, so identical runs produce
//! bit-identical files.

use crate::CliError;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// 17 significant digits: round-trips f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Clone, Debug, Serialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: usize,
    pub checksum: String,
}

#[derive(Default)]
pub struct ArtifactSink {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl ArtifactSink {
    pub fn new(root: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(root)?;
        Ok(ArtifactSink {
            root: root.to_path_buf(),
            entries: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<PathBuf, CliError> {
        let path = self.root.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, content)?;
        self.entries.push(ManifestEntry {
            path: name.to_string(),
            bytes: content.len(),
            checksum: format!("{:016x}", fnv1a64(content.as_bytes())),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        self.write(name, &text)
    }

    /// Write the manifest itself (sorted by path, excluded from its own
    /// listing).
    pub fn finish<T: Serialize>(mut self, config_echo: &T) -> Result<PathBuf, CliError> {
        self.entries.sort_by(|a, b| a.path.cmp(&b.path));
        #[derive(Serialize)]
        struct Manifest<'a, T> {
            config: &'a T,
            files: &'a [ManifestEntry],
        }
        let manifest = Manifest {
            config: config_echo,
            files: &self.entries,
        };
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        let path = self.root.join("manifest.json");
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

/// CSV from rows of (possibly mixed) columns; floats at full precision.
pub fn csv_table(header: &str, rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_is_stable() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), fnv1a64(b"a"));
        assert_ne!(fnv1a64(b"a"), fnv1a64(b"b"));
    }

    #[test]
    fn float_roundtrip() {
        for v in [1.0, -0.1, 3.14159e-7, 1.7e308, 5e-324] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }
}
