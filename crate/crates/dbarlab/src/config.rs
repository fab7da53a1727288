//! Flat `key = value` experiment files. Lines starting with `#` are comments;
//! lists are comma separated.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{build_potential, PotentialField, PotentialKind, SpatialGrid, SpectralGrid};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", no + 1)));
            }
        }
        Ok(Config { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |s| parse_f64(key, s))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        self.get(key).map_or(Ok(default), |s| {
            s.parse()
                .map_err(|_| Error::Config(format!("{key}: '{s}' is not a nonnegative integer")))
        })
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        self.usize_or(key, default as usize).map(|v| v as u64)
    }

    pub fn list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(s) if s.is_empty() => Ok(Vec::new()),
            Some(s) => s.split(',').map(|t| parse_f64(key, t.trim())).collect(),
        }
    }

    pub fn require_list(&self, key: &str) -> Result<Vec<f64>> {
        if self.get(key).is_none() {
            return Err(Error::Config(format!("missing key '{key}'")));
        }
        self.list_or(key, &[])
    }

    /// `grid.n` and `grid.L` (half-width of the square).
    pub fn spatial_grid(&self) -> Result<SpatialGrid> {
        SpatialGrid::new(self.usize_or("grid.n", 64)?, self.f64_or("grid.L", 1.5)?)
    }

    pub fn spectral_grid(&self) -> Result<SpectralGrid> {
        SpectralGrid::new(
            self.f64_or("spectral.lambda_max", 8.0)?,
            self.usize_or("spectral.n_radii", 64)?,
            self.usize_or("spectral.n_theta", 64)?,
            self.usize_or("spectral.n_circle", 256)?,
            self.f64_or("spectral.offset_h", 1e-3)?,
        )
    }

    /// The potential under `<prefix>.kind` / `<prefix>.params`, with the
    /// smoothness tag `experiment.m`.
    pub fn potential(&self, prefix: &str) -> Result<PotentialField> {
        let kind_key = format!("{prefix}.kind");
        let kind = PotentialKind::parse(
            self.get(&kind_key)
                .ok_or_else(|| Error::Config(format!("missing key '{kind_key}'")))?,
        )?;
        let params = self.list_or(&format!("{prefix}.params"), &[])?;
        let m = self.usize_or("experiment.m", 3)? as u32;
        Ok(build_potential(kind, &params, self.spatial_grid()?)?.with_smoothness(m))
    }

    /// Canonical text form, one sorted `key = value` per line.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn parse_f64(key: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Config(format!("{key}: '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("{key}: '{s}' is not finite")));
    }
    Ok(v)
}
