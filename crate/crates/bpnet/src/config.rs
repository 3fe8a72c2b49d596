//! `key=value` configuration shared by every command.
//!
//! Values resolve in three layers: built-in defaults, then a config file,
//! then command-line flags. The resolved set is echoed next to outputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bpnet_core::denoiser::NormMode;
use bpnet_core::sampling::{Density, DEFAULT_VD_POWER};

use crate::error::{Error, Result};
use crate::experiment::ReconSetup;

/// Every recognised key with its default.
const DEFAULTS: &[(&str, &str)] = &[
    ("batch", "4"),
    ("calib", "20"),
    ("checkpoint", ""),
    ("coils", "4"),
    ("count", "500"),
    ("density", "variable"),
    ("features", "16"),
    ("iters", "4"),
    ("lr", "0.01"),
    ("masks", "8"),
    ("norm", "per-example"),
    ("overlap-y", "0.5"),
    ("overlap-z", "0.5"),
    ("pad", "10"),
    ("patch", "64"),
    ("R", "4"),
    ("runs", "50"),
    ("seed", "0"),
    ("size", "128"),
    ("steps", "1000"),
    ("stopband", "10"),
    ("test-count", "50"),
    ("workers", "1"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: impl Display) -> Result<()> {
        match self.values.get_mut(key) {
            Some(v) => {
                *v = value.to_string();
                Ok(())
            }
            None => Err(Error::Config(format!("unknown key '{key}'"))),
        }
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, found '{line}'", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_text(&text)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse()
            .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
    }

    /// `N` or `NxM`.
    pub fn dims(&self, key: &str) -> Result<(usize, usize)> {
        let v = self.raw(key);
        let bad = || Error::Config(format!("{key}: expected N or NxM, found '{v}'"));
        match v.split_once('x') {
            Some((a, b)) => Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)),
            None => {
                let n = v.parse().map_err(|_| bad())?;
                Ok((n, n))
            }
        }
    }

    pub fn density(&self) -> Result<Density> {
        match self.raw("density") {
            "uniform" => Ok(Density::Uniform),
            "variable" => Ok(Density::Variable { power: DEFAULT_VD_POWER }),
            other => Err(Error::Config(format!("density: expected uniform or variable, found '{other}'"))),
        }
    }

    pub fn norm(&self) -> Result<NormMode> {
        match self.raw("norm") {
            "per-example" => Ok(NormMode::PerExample),
            "running" => Ok(NormMode::Running),
            other => Err(Error::Config(format!("norm: expected per-example or running, found '{other}'"))),
        }
    }

    pub fn checkpoint(&self) -> Option<PathBuf> {
        Some(self.raw("checkpoint")).filter(|s| !s.is_empty()).map(PathBuf::from)
    }

    pub fn recon_setup(&self) -> Result<ReconSetup> {
        Ok(ReconSetup {
            patch: self.dims("patch")?,
            overlap: (self.get("overlap-y")?, self.get("overlap-z")?),
            stopband: self.get("stopband")?,
            pad: self.get("pad")?,
            mode: self.norm()?,
        })
    }

    /// Sorted `key=value` lines; parsing them back gives the same settings.
    pub fn echo(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn write_echo(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.echo()).map_err(|e| Error::io(path, e))
    }
}
