use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Affine;

/// Ordered `key=value` text. Blank lines and lines starting with `#` are
/// ignored when parsing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn push_list(&mut self, key: impl Into<String>, values: impl IntoIterator<Item = f64>) {
        let v: Vec<String> = values.into_iter().map(|x| x.to_string()).collect();
        self.push(key, v.join(","));
    }

    pub fn push_affine(&mut self, key: impl Into<String>, a: &Affine<f64>) {
        self.push_list(key, a.to_f64()[..3].iter().flatten().copied());
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Bundle(format!("missing key `{key}`")))
    }

    pub fn parse_value<V: FromStr>(&self, key: &str) -> Result<V> {
        let v = self.require(key)?;
        v.trim().parse().map_err(|_| Error::Bundle(format!("`{key}` = `{v}` is malformed")))
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.require(key)?;
        v.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| Error::Bundle(format!("`{key}` = `{v}` is malformed")))).collect()
    }

    pub fn dims(&self, key: &str) -> Result<[usize; 3]> {
        let v = self.list(key)?;
        match v[..] {
            [a, b, c] if v.iter().all(|x| *x >= 1.0 && x.fract() == 0.0) => Ok([a as usize, b as usize, c as usize]),
            _ => Err(Error::Bundle(format!("`{key}` needs three positive integers"))),
        }
    }

    /// The top three rows of a 4×4 affine, row-major.
    pub fn affine(&self, key: &str) -> Result<Affine<f64>> {
        let v = self.list(key)?;
        if v.len() != 12 {
            return Err(Error::Bundle(format!("`{key}` needs 12 values, got {}", v.len())));
        }
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            m[r].copy_from_slice(&v[4 * r..4 * r + 4]);
        }
        m[3][3] = 1.0;
        Ok(Affine::from_f64(m))
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Bundle(format!("line {}: expected key=value", n + 1)))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Manifest { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>, comment: &str) -> Result<()> {
        fs::write(path, format!("# {comment}\n{}", self.to_text()))?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}
