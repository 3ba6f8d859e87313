//! Versioned `key = value` text documents used for models and normalizers.
//!
//! ```text
//! format_version = 1
//! kind = mlp_model
//! ...
//! layer.0.weight.shape = 32 2
//! layer.0.weight = -1.2345678901234567e-1 ...
//! end = mlp_model
//! ```
//!
//! Reals are written with 17 significant digits so they parse back to the
//! identical bits. The trailing `end` line makes truncation detectable.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{fmt_f64, write_atomically};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct DocWriter {
    text: String,
}

impl DocWriter {
    pub fn new(kind: &str) -> Self {
        let mut w = DocWriter::default();
        w.put("format_version", FORMAT_VERSION);
        w.put("kind", kind);
        w
    }

    pub fn put(&mut self, key: &str, value: impl ToString) {
        self.text.push_str(key);
        self.text.push_str(" = ");
        self.text.push_str(&value.to_string());
        self.text.push('\n');
    }

    pub fn put_real(&mut self, key: &str, value: f64) {
        self.put(key, fmt_f64(value));
    }

    pub fn put_counts(&mut self, key: &str, values: &[usize]) {
        let joined: Vec<String> = values.iter().map(usize::to_string).collect();
        self.put(key, joined.join(" "));
    }

    pub fn put_reals(&mut self, key: &str, values: &[f64]) {
        let joined: Vec<String> = values.iter().map(|v| fmt_f64(*v)).collect();
        self.put(key, joined.join(" "));
    }

    pub fn finish(mut self, kind: &str) -> String {
        self.put("end", kind);
        self.text
    }
}

/// Parsed document. Construction checks line syntax, the version and the
/// end marker; field accessors report missing or unparsable values.
#[derive(Debug, Clone)]
pub struct Doc {
    path: PathBuf,
    entries: Vec<(String, String)>,
}

impl Doc {
    pub fn read(path: &Path, kind: &str) -> Result<Doc> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Doc::parse(path, &text, kind)
    }

    pub fn parse(path: &Path, text: &str, kind: &str) -> Result<Doc> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("line {}: expected `key = value`", i + 1),
            })?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        let doc = Doc {
            path: path.to_path_buf(),
            entries,
        };

        let version = doc.get("format_version")?;
        if version != FORMAT_VERSION.to_string() {
            return Err(Error::VersionMismatch {
                path: doc.path.clone(),
                found: version.to_string(),
                expected: FORMAT_VERSION,
            });
        }
        match doc.entries.last() {
            Some((k, v)) if k == "end" && v == kind => {}
            _ => return Err(doc.malformed("missing end marker (file truncated?)")),
        }
        let found = doc.get("kind")?;
        if found != kind {
            return Err(doc.malformed(format!("expected kind `{kind}`, found `{found}`")));
        }
        Ok(doc)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    pub fn shape_error(&self, reason: impl Into<String>) -> Error {
        Error::ShapeInconsistency {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| self.malformed(format!("missing key `{key}`")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| self.malformed(format!("key `{key}`: cannot parse `{raw}`")))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        self.get(key)?
            .split_whitespace()
            .map(|tok| {
                tok.parse()
                    .map_err(|_| self.malformed(format!("key `{key}`: cannot parse `{tok}`")))
            })
            .collect()
    }

    /// Reads `{key}.shape` and `{key}`, checking the declared shape against
    /// `expected` and the value count against the shape.
    pub fn array(&self, key: &str, expected: &[usize]) -> Result<Vec<f64>> {
        let shape: Vec<usize> = self.list(&format!("{key}.shape"))?;
        let values: Vec<f64> = self.list(key)?;
        if shape != expected {
            return Err(self.shape_error(format!("`{key}` declares shape {shape:?}, expected {expected:?}")));
        }
        let n: usize = shape.iter().product();
        if values.len() != n {
            return Err(self.shape_error(format!("`{key}` has {} values for shape {shape:?}", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(self.malformed(format!("`{key}` contains non-finite value {v}")));
        }
        Ok(values)
    }
}

pub fn write_doc(path: &Path, text: &str) -> Result<()> {
    write_atomically(path, text.as_bytes())
}
