//! Run configuration: defaults, a flat `key = value` file, then command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;

/// Configuration problems map to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunConfig {
    /// `2p:<p>` or a path to a weights file.
    pub model: String,
    /// Length of the disk-function table.
    pub l: usize,
    /// Truncation of the step measure `nu`; defaults to `l`.
    pub k: Option<usize>,
    /// Length of the renewal-function tables.
    pub m: usize,
    /// Length of the simple-boundary series.
    pub series_l: usize,
    /// Multiplies every tolerance of the identity suite.
    pub tol_scale: f64,
    pub seed: u64,
    pub radius: u32,
    pub radii: Vec<u32>,
    pub replicas: usize,
    pub max_darts: usize,
    pub core_runs: usize,
    pub core_budget: u64,
    pub simple_runs: usize,
    pub dangling_runs: usize,
    pub perc_replicas: usize,
    pub bootstrap: usize,
    pub out: Option<String>,
    pub format: Format,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: "2p:2".into(),
            l: 4000,
            k: None,
            m: 1 << 16,
            series_l: 500,
            tol_scale: 1.0,
            seed: 1,
            radius: 10,
            radii: vec![10, 20, 30],
            replicas: 1000,
            max_darts: 1 << 25,
            core_runs: 1_000_000,
            core_budget: 1 << 32,
            simple_runs: 100_000,
            dangling_runs: 100_000,
            perc_replicas: 10_000,
            bootstrap: 200,
            out: None,
            format: Format::Csv,
            threads: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim().parse().map_err(|_| ConfigError(format!("bad value {v:?} for {key}")))
}

pub fn parse_list(key: &str, v: &str) -> Result<Vec<u32>, ConfigError> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

impl RunConfig {
    /// Sets one key; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "model" => self.model = v.to_string(),
            "l" => self.l = parse(key, v)?,
            "k" => self.k = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "m" => self.m = parse(key, v)?,
            "series_l" => self.series_l = parse(key, v)?,
            "tol_scale" | "tolerance" => self.tol_scale = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "radius" => self.radius = parse(key, v)?,
            "radii" => self.radii = parse_list(key, v)?,
            "replicas" => self.replicas = parse(key, v)?,
            "max_darts" => self.max_darts = parse(key, v)?,
            "core_runs" => self.core_runs = parse(key, v)?,
            "core_budget" => self.core_budget = parse(key, v)?,
            "simple_runs" => self.simple_runs = parse(key, v)?,
            "dangling_runs" => self.dangling_runs = parse(key, v)?,
            "perc_replicas" => self.perc_replicas = parse(key, v)?,
            "bootstrap" => self.bootstrap = parse(key, v)?,
            "out" => self.out = Some(v.to_string()),
            "format" => {
                self.format = match v {
                    "csv" => Format::Csv,
                    "json" => Format::Json,
                    _ => return Err(ConfigError(format!("unknown format {v:?}"))),
                }
            }
            "threads" => self.threads = Some(parse(key, v)?),
            other => return Err(ConfigError(format!("unknown key {other:?}"))),
        }
        self.validate()
    }

    /// Applies a flat `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("line {}: expected key = value", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.l < 16 || self.m < 16 {
            return Err(ConfigError("table lengths l and m must be at least 16".into()));
        }
        if self.tol_scale.is_nan() || self.tol_scale < 0.0 {
            return Err(ConfigError("tol_scale must be non-negative".into()));
        }
        if self.k.is_some_and(|k| k < 16 || k > self.l) {
            return Err(ConfigError("k must lie between 16 and l".into()));
        }
        if self.threads == Some(0) {
            return Err(ConfigError("threads must be positive".into()));
        }
        Ok(())
    }

    /// Resolved settings as sorted `key = value` pairs.
    pub fn entries(&self) -> BTreeMap<String, String> {
        let value = serde_json::to_value(self).expect("config serializes");
        value
            .as_object()
            .expect("config is an object")
            .iter()
            .map(|(k, v)| {
                let s = match v {
                    serde_json::Value::String(s) => s.clone(),
                    serde_json::Value::Array(a) => a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
                    serde_json::Value::Null => String::new(),
                    other => other.to_string(),
                };
                (k.clone(), s)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let mut c = RunConfig::default();
        c.apply_text("# comment\nmodel = 2p:3\nradii = 5, 10,20\nseed=9\n").unwrap();
        assert_eq!(c.model, "2p:3");
        assert_eq!(c.radii, vec![5, 10, 20]);
        c.set("seed", "4").unwrap();
        assert_eq!(c.seed, 4);
        assert!(c.apply_text("bogus = 1").is_err());
        assert!(c.apply_text("seed").is_err());
        assert!(c.set("l", "x").is_err());
    }

    #[test]
    fn entries_round_trip() {
        let mut c = RunConfig::default();
        c.apply_text("radii = 1,2,3\nout = x.csv\n").unwrap();
        let text: String = c.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let mut d = RunConfig::default();
        for (k, v) in c.entries() {
            if !v.is_empty() {
                d.set(&k, &v).unwrap();
            }
        }
        assert_eq!(c, d, "{text}");
    }
}
