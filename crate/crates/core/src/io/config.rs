//! Flat `section.key = value` configuration with line diagnostics.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{NlsError, Result};
use crate::model::ModelParams;
use crate::potentials::{NodeGuard, PotentialKind};

/// Every key the command layer understands.
pub const KNOWN_KEYS: &[&str] = &[
    "params.hbar",
    "params.mass",
    "params.length",
    "params.eta",
    "params.q",
    "grid.periods",
    "grid.shift_steps",
    "guard.floor_rel",
    "guard.halfwidth",
    "spectrum.family",
    "spectrum.kappa_min",
    "spectrum.kappa_max",
    "spectrum.points",
    "verify.kind",
    "verify.domain",
    "verify.kappa",
    "verify.cos",
    "verify.sin",
    "verify.energy",
    "verify.tolerance",
    "evolve.state",
    "evolve.kind",
    "evolve.dt",
    "evolve.steps",
    "evolve.snapshot_every",
    "evolve.kinetic",
    "evolve.mode",
    "evolve.kappa",
    "evolve.imaginary",
    "recurse.p0",
    "recurse.p1",
    "recurse.energy",
    "recurse.gamma",
    "recurse.steps",
    "search.kind",
    "search.kappa_plus",
    "search.kappa_minus",
    "search.energy",
    "search.max_iters",
    "search.optimize_energy",
    "limits.kappa",
    "limits.etas",
];

/// Line number reported for values given on the command line.
pub const CLI_LINE: usize = 0;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    entries: BTreeMap<String, (usize, String)>,
}

fn config_error(line: usize, key: &str, message: impl Into<String>) -> NlsError {
    NlsError::Config { line, key: key.to_string(), message: message.into() }
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.insert(line, n + 1)?;
        }
        Ok(cfg)
    }

    /// Applies a `key=value` override from the command line.
    pub fn set_override(&mut self, assignment: &str) -> Result<()> {
        self.insert(assignment.trim(), CLI_LINE)
    }

    fn insert(&mut self, assignment: &str, line: usize) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| config_error(line, assignment, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        if !KNOWN_KEYS.contains(&key) {
            return Err(config_error(line, key, "unknown key"));
        }
        if value.is_empty() {
            return Err(config_error(line, key, "empty value"));
        }
        if line != CLI_LINE {
            if let Some((first, _)) = self.entries.get(key) {
                return Err(config_error(line, key, format!("duplicate key, first set on line {first}")));
            }
        }
        self.entries.insert(key.to_string(), (line, value.to_string()));
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Raw value and its line.
    pub fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| config_error(*line, key, format!("cannot parse `{v}`"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| config_error(CLI_LINE, key, "required key is missing"))
    }

    /// Comma-separated list of numbers.
    pub fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| config_error(*line, key, format!("cannot parse number list `{v}`"))),
        }
    }

    /// Re-raises a domain error from validation as a diagnostic on `key`.
    pub fn check<T>(&self, key: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| match e {
            NlsError::Domain(msg) => config_error(self.line_of(key), key, msg),
            other => other,
        })
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries.get(key).map(|(l, _)| *l).unwrap_or(CLI_LINE)
    }

    pub fn params(&self) -> Result<ModelParams> {
        let hbar = self.get_or("params.hbar", 1.0)?;
        let mass = self.get_or("params.mass", 1.0)?;
        let length = self.get_or("params.length", 1.0)?;
        let eta = self.get_or("params.eta", 1.0)?;
        let q = self.get_or("params.q", 1.0)?;
        ModelParams::new(hbar, mass, length, eta, q).map_err(|e| match e {
            NlsError::Domain(msg) => {
                let key = [("hbar ", "params.hbar"), ("mass ", "params.mass"), ("L ", "params.length"), ("eta ", "params.eta"), ("q ", "params.q")]
                    .into_iter()
                    .find(|(name, _)| msg.starts_with(name))
                    .map_or("params", |(_, key)| key);
                config_error(self.line_of(key), key, msg)
            }
            other => other,
        })
    }

    pub fn guard(&self) -> Result<NodeGuard> {
        let d = NodeGuard::default();
        let floor = self.get_or("guard.floor_rel", d.floor_rel)?;
        let halfwidth = self.get_or("guard.halfwidth", d.exclusion_halfwidth_steps)?;
        self.check("guard.floor_rel", NodeGuard::new(floor, halfwidth))
    }

    pub fn kind(&self, key: &str, default: PotentialKind) -> Result<PotentialKind> {
        match self.raw(key) {
            None => Ok(default),
            Some((line, v)) => parse_kind(v).ok_or_else(|| {
                config_error(
                    line,
                    key,
                    format!("unknown kind `{v}` (raw, regularized, qdeformed, perturbative, symmetrized-<inner>)"),
                )
            }),
        }
    }

    /// One of `choices`, or `default` when the key is absent.
    pub fn choice<'a>(&'a self, key: &str, choices: &[&str], default: &'a str) -> Result<&'a str> {
        match self.raw(key) {
            None => Ok(default),
            Some((_, v)) if choices.contains(&v) => Ok(v),
            Some((line, v)) => Err(config_error(line, key, format!("`{v}` is not one of {}", choices.join(", ")))),
        }
    }
}

pub fn parse_kind(s: &str) -> Option<PotentialKind> {
    match s {
        "raw" => Some(PotentialKind::Raw),
        "regularized" => Some(PotentialKind::Regularized),
        "qdeformed" => Some(PotentialKind::QDeformed),
        "perturbative" => Some(PotentialKind::PerturbativeO1),
        _ => {
            let inner = parse_kind(s.strip_prefix("symmetrized-")?)?;
            PotentialKind::symmetrized(inner).ok()
        }
    }
}
