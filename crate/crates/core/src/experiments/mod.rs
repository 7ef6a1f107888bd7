//! Declarative experiment runner: each experiment turns a JSON config into
//! CSV artifacts plus a `summary.json` with pass/fail checks.

mod catalog;
pub mod lorenz;
pub mod pendulum;
pub mod random;

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::CMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentName {
    #[serde(rename = "shift-warning")]
    ShiftWarning,
    #[serde(rename = "rotation-exact")]
    RotationExact,
    #[serde(rename = "lorenz-w1-vs-M")]
    LorenzW1VsM,
    #[serde(rename = "lorenz-w1-vs-N")]
    LorenzW1VsN,
    #[serde(rename = "lorenz-cdf")]
    LorenzCdf,
    #[serde(rename = "lorenz-projection-valued")]
    LorenzProjectionValued,
    #[serde(rename = "pendulum-eigs")]
    PendulumEigs,
    #[serde(rename = "pendulum-eigenfunctions")]
    PendulumEigenfunctions,
    #[serde(rename = "pendulum-noise")]
    PendulumNoise,
    #[serde(rename = "energy-conservation")]
    EnergyConservation,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 10] = [
        ExperimentName::ShiftWarning,
        ExperimentName::RotationExact,
        ExperimentName::LorenzW1VsM,
        ExperimentName::LorenzW1VsN,
        ExperimentName::LorenzCdf,
        ExperimentName::LorenzProjectionValued,
        ExperimentName::PendulumEigs,
        ExperimentName::PendulumEigenfunctions,
        ExperimentName::PendulumNoise,
        ExperimentName::EnergyConservation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentName::ShiftWarning => "shift-warning",
            ExperimentName::RotationExact => "rotation-exact",
            ExperimentName::LorenzW1VsM => "lorenz-w1-vs-M",
            ExperimentName::LorenzW1VsN => "lorenz-w1-vs-N",
            ExperimentName::LorenzCdf => "lorenz-cdf",
            ExperimentName::LorenzProjectionValued => "lorenz-projection-valued",
            ExperimentName::PendulumEigs => "pendulum-eigs",
            ExperimentName::PendulumEigenfunctions => "pendulum-eigenfunctions",
            ExperimentName::PendulumNoise => "pendulum-noise",
            ExperimentName::EnergyConservation => "energy-conservation",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|e| e.as_str()).collect();
                Error::Parse(format!("unknown experiment {s:?}; available: {}", names.join(", ")))
            })
    }
}

/// Top-level config. `params` is validated by the selected experiment,
/// which rejects unknown keys as well.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentName,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentName) -> Self {
        Self {
            experiment,
            params: serde_json::Value::Null,
            seed: 0,
            workers: None,
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn with_params(mut self, params: serde_json::Value) -> Self {
        self.params = params;
        self
    }

    fn params<P: DeserializeOwned + Default>(&self) -> Result<P> {
        match &self.params {
            serde_json::Value::Null => Ok(P::default()),
            v => serde_json::from_value(v.clone())
                .map_err(|e| Error::Parse(format!("params for {}: {e}", self.experiment))),
        }
    }
}

/// One acceptance check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable condition, e.g. `<= 1e-12`.
    pub threshold: String,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold: format!("<= {limit:e}"),
            passed: value <= limit,
        }
    }

    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold: format!(">= {limit:e}"),
            passed: value >= limit,
        }
    }

    pub fn within(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold: format!("in [{lo}, {hi}]"),
            passed: (lo..=hi).contains(&value),
        }
    }

    pub fn flag(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            threshold: "== 1".into(),
            passed: ok,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: ExperimentName,
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<Check>,
    /// Fitted slopes, errors and other scalar diagnostics.
    pub metrics: serde_json::Map<String, serde_json::Value>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Summary,
    pub artifacts: Vec<Artifact>,
}

impl Outcome {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.summary.checks.iter().find(|c| c.name == name)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.summary.metrics.get(name).and_then(|v| v.as_f64())
    }
}

/// Accumulates checks, metrics and artifacts while an experiment runs.
#[derive(Default)]
struct Report {
    checks: Vec<Check>,
    metrics: serde_json::Map<String, serde_json::Value>,
    artifacts: Vec<Artifact>,
}

impl Report {
    fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn metric(&mut self, name: &str, value: impl Into<serde_json::Value>) {
        self.metrics.insert(name.into(), value.into());
    }

    fn file(&mut self, name: impl Into<String>, contents: String) {
        self.artifacts.push(Artifact {
            name: name.into(),
            contents,
        });
    }

    fn finish(self, experiment: ExperimentName, seed: u64) -> Outcome {
        let passed = self.checks.iter().all(|c| c.passed);
        Outcome {
            summary: Summary {
                experiment,
                seed,
                passed,
                checks: self.checks,
                metrics: self.metrics,
                files: self.artifacts.iter().map(|a| a.name.clone()).collect(),
            },
            artifacts: self.artifacts,
        }
    }
}

/// Runs an experiment on a pool of `workers` threads (all cores if `None`).
pub fn run(config: &ExperimentConfig) -> Result<Outcome> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = config.workers {
        if w == 0 {
            return Err(Error::Invalid("workers must be at least 1".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    pool.install(|| catalog::dispatch(config))
}

/// Writes artifacts and `summary.json` into `dir`.
pub fn write_outcome(outcome: &Outcome, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    for a in &outcome.artifacts {
        std::fs::write(dir.join(&a.name), &a.contents)?;
    }
    let mut summary = serde_json::to_string_pretty(&outcome.summary)?;
    summary.push('\n');
    std::fs::write(dir.join("summary.json"), summary)?;
    Ok(())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// CSV `i,j,re,im` of every entry.
pub fn matrix_csv(m: &CMatrix) -> String {
    let mut s = String::from("i,j,re,im\n");
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let _ = writeln!(s, "{i},{j},{:?},{:?}", m[(i, j)].re, m[(i, j)].im);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for e in ExperimentName::ALL {
            assert_eq!(e.as_str().parse::<ExperimentName>().unwrap(), e);
            let json = serde_json::to_string(&e).unwrap();
            assert_eq!(json, format!("\"{}\"", e.as_str()));
        }
        assert!("lorenz".parse::<ExperimentName>().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(ExperimentConfig::from_json(r#"{"experiment":"shift-warning","bogus":1}"#).is_err());
        let cfg = ExperimentConfig::from_json(r#"{"experiment":"shift-warning","params":{"N":6,"extra":2}}"#).unwrap();
        assert!(run(&cfg).is_err());
        let cfg = ExperimentConfig::from_json(r#"{"experiment":"shift-warning","seed":3}"#).unwrap();
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        assert!((loglog_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}
