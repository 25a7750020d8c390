//! Run configuration: JSON schema, defaults and validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ambiguity::{AmbiguityError, AmbiguitySpec, DualTolerances};
use crate::bellman::{default_nodes, Adversary, OuterOptions};
use crate::measures::{DiscreteMeasure, MeasureError, SampleSet};
use crate::models::{build_model, ControlProblem, ModelConfig, ModelError};
use crate::rate::config_digest;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("malformed JSON: {0}")]
    Syntax(String),
    #[error("schema error at {path}: expected {expected}, found {found}")]
    SchemaError { path: String, expected: String, found: String },
    #[error("invalid ambiguity set at {path}: {reason}")]
    InvalidAmbiguity { path: String, reason: String },
    #[error("discount must lie in (0, 1), got {0}")]
    InvalidDiscount(f64),
    #[error("invalid value at {path}: {reason}")]
    Invalid { path: String, reason: String },
}

impl From<ModelError> for ConfigError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig { field, reason } => ConfigError::Invalid { path: field, reason },
        }
    }
}

/// A noise scalar or vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Atom {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl Atom {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            Atom::Scalar(v) => vec![*v],
            Atom::Vector(v) => v.clone(),
        }
    }
}

/// The nominal noise law (the center of the ambiguity set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum NoiseConfig {
    Exact {
        atoms: Vec<Atom>,
        weights: Vec<f64>,
    },
    Samples {
        path: PathBuf,
        #[serde(default)]
        header: bool,
    },
    Bernoulli {
        p: f64,
        n: usize,
        seed: u64,
    },
}

impl NoiseConfig {
    /// The center measure. Relative sample paths resolve against `base`.
    pub fn center(&self, base: Option<&Path>) -> Result<DiscreteMeasure, MeasureError> {
        match self {
            NoiseConfig::Exact { atoms, weights } => {
                DiscreteMeasure::new(atoms.iter().map(Atom::to_vec).collect(), weights.clone())
            }
            NoiseConfig::Samples { path, header } => {
                let p = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                DiscreteMeasure::from_samples(&SampleSet::from_csv_path(&p, *header)?)
            }
            NoiseConfig::Bernoulli { p, n, seed } => {
                DiscreteMeasure::from_samples(&SampleSet::bernoulli(*p, *n, *seed, &[])?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub max_iters: Option<usize>,
    #[serde(default = "default_dual_tol")]
    pub lambda_tol: f64,
    #[serde(default = "default_dual_tol")]
    pub eta_tol: f64,
    #[serde(default = "default_outer_iters")]
    pub outer_iters: usize,
    /// Candidate points per noise dimension for the Wasserstein inner
    /// problem; `None` selects the model default.
    #[serde(default)]
    pub candidates: Option<usize>,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_dual_tol() -> f64 {
    DualTolerances::default().lambda_tol
}

fn default_outer_iters() -> usize {
    OuterOptions::default().outer_iters
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iters: None,
            lambda_tol: default_dual_tol(),
            eta_tol: default_dual_tol(),
            outer_iters: default_outer_iters(),
            candidates: None,
        }
    }
}

impl SolverConfig {
    pub fn dual(&self) -> DualTolerances {
        DualTolerances { lambda_tol: self.lambda_tol, eta_tol: self.eta_tol }
    }

    pub fn outer(&self) -> OuterOptions {
        OuterOptions { outer_iters: self.outer_iters, ..OuterOptions::default() }
    }
}

/// Default artifact paths; command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub value: Option<PathBuf>,
    #[serde(default)]
    pub policy: Option<PathBuf>,
    #[serde(default)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub discount: f64,
    pub ambiguity: AmbiguitySpec,
    #[serde(default = "default_adversary")]
    pub adversary: Adversary,
    /// Nodes per state dimension. Filled in by [`parse_config`] when absent.
    #[serde(default)]
    pub state_grid: Vec<usize>,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_adversary() -> Adversary {
    Adversary::Caa
}

impl RunConfig {
    pub fn problem(&self) -> Result<ControlProblem, ConfigError> {
        Ok(build_model(&self.model, self.discount)?)
    }

    /// Wasserstein candidates, or `None` for the model default.
    pub fn candidates(&self, problem: &ControlProblem, center: &DiscreteMeasure) -> Option<Vec<Vec<f64>>> {
        let per_dim = self.solver.candidates?;
        let mut c = crate::ambiguity::box_grid(problem.noise_box(), per_dim);
        c.extend(center.atoms().iter().cloned());
        Some(c)
    }

    pub fn digest(&self) -> String {
        config_digest(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("RunConfig serializes")
    }
}

fn schema_error(path: String, msg: &str) -> ConfigError {
    let join = |field: &str| if path == "." || path.is_empty() { field.to_string() } else { format!("{path}.{field}") };
    let quoted = |s: &str| s.split('`').nth(1).unwrap_or("").to_string();
    if let Some(rest) = msg.strip_prefix("missing field ") {
        let f = quoted(rest);
        return ConfigError::SchemaError { path: join(&f), expected: format!("field `{f}`"), found: "nothing".into() };
    }
    if let Some(rest) = msg.strip_prefix("unknown field ") {
        let f = quoted(rest);
        let expected = rest.split_once(", expected ").map(|x| x.1).unwrap_or("no further fields");
        return ConfigError::SchemaError { path, expected: expected.into(), found: format!("unknown field `{f}`") };
    }
    let body = msg.split(" at line ").next().unwrap_or(msg);
    for prefix in ["invalid type: ", "invalid value: ", "unknown variant "] {
        if let Some(rest) = body.strip_prefix(prefix) {
            if let Some((found, expected)) = rest.split_once(", expected ") {
                return ConfigError::SchemaError { path, expected: expected.into(), found: found.into() };
            }
        }
    }
    ConfigError::SchemaError { path, expected: "a valid value".into(), found: body.into() }
}

/// Parses and validates a run configuration, filling in defaults.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let json: serde_json::Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let mut cfg: RunConfig = serde_path_to_error::deserialize(json).map_err(|e| {
        let path = e.path().to_string();
        schema_error(path, &e.inner().to_string())
    })?;
    if !(cfg.discount > 0.0 && cfg.discount < 1.0) {
        return Err(ConfigError::InvalidDiscount(cfg.discount));
    }
    cfg.ambiguity.validate().map_err(|e| match e {
        AmbiguityError::InvalidK(_) => {
            ConfigError::InvalidAmbiguity { path: "ambiguity.k".into(), reason: e.to_string() }
        }
        other => ConfigError::InvalidAmbiguity { path: "ambiguity.delta".into(), reason: other.to_string() },
    })?;
    let problem = cfg.problem()?;
    let d = problem.state_dim();
    if cfg.state_grid.is_empty() {
        cfg.state_grid = vec![default_nodes(d); d];
    }
    if cfg.state_grid.len() != d {
        return Err(ConfigError::Invalid {
            path: "state_grid".into(),
            reason: format!("expected {d} node counts, got {}", cfg.state_grid.len()),
        });
    }
    if let Some(i) = cfg.state_grid.iter().position(|&n| n < 2) {
        return Err(ConfigError::Invalid {
            path: format!("state_grid[{i}]"),
            reason: "node counts must be at least 2".into(),
        });
    }
    let s = &cfg.solver;
    if !(s.tol > 0.0 && s.tol.is_finite()) {
        return Err(ConfigError::Invalid { path: "solver.tol".into(), reason: "must be positive".into() });
    }
    if s.max_iters == Some(0) {
        return Err(ConfigError::Invalid { path: "solver.max_iters".into(), reason: "must be at least 1".into() });
    }
    for (path, v) in [("solver.lambda_tol", s.lambda_tol), ("solver.eta_tol", s.eta_tol)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ConfigError::Invalid { path: path.into(), reason: "must be positive".into() });
        }
    }
    if s.outer_iters == 0 {
        return Err(ConfigError::Invalid { path: "solver.outer_iters".into(), reason: "must be at least 1".into() });
    }
    if matches!(s.candidates, Some(n) if n < 2) {
        return Err(ConfigError::Invalid { path: "solver.candidates".into(), reason: "must be at least 2".into() });
    }
    match &cfg.noise {
        NoiseConfig::Exact { atoms, .. } => {
            if let Some(i) = atoms.iter().position(|a| a.to_vec().len() != problem.noise_dim()) {
                return Err(ConfigError::Invalid {
                    path: format!("noise.atoms[{i}]"),
                    reason: format!("expected dimension {}", problem.noise_dim()),
                });
            }
            cfg.noise.center(None).map_err(|e| ConfigError::Invalid { path: "noise".into(), reason: e.to_string() })?;
        }
        NoiseConfig::Bernoulli { p, .. } => {
            if !(0.0..=1.0).contains(p) {
                return Err(ConfigError::Invalid { path: "noise.p".into(), reason: "must lie in [0, 1]".into() });
            }
            if problem.noise_dim() != 1 {
                return Err(ConfigError::Invalid {
                    path: "noise".into(),
                    reason: "bernoulli noise is one-dimensional".into(),
                });
            }
        }
        NoiseConfig::Samples { .. } => {}
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"kind": "lemma5"},
        "discount": 0.9,
        "ambiguity": {"family": "wasserstein", "delta": 0.09},
        "noise": {"kind": "exact", "atoms": [0, 1], "weights": [0.5, 0.5]}
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.solver.tol, 1e-8);
        assert_eq!(cfg.state_grid, vec![101]);
        assert_eq!(cfg.adversary, Adversary::Caa);
        assert_eq!(cfg.solver.outer_iters, 400);
    }

    #[test]
    fn missing_noise_reports_path() {
        let text =
            r#"{"model": {"kind": "lemma5"}, "discount": 0.9, "ambiguity": {"family": "wasserstein", "delta": 0.09}}"#;
        match parse_config(text) {
            Err(ConfigError::SchemaError { path, .. }) => assert_eq!(path, "noise"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_k_and_discount() {
        let fk = MINIMAL
            .replace(r#"{"family": "wasserstein", "delta": 0.09}"#, r#"{"family": "fk", "delta": 0.1, "k": 1.0}"#);
        match parse_config(&fk) {
            Err(ConfigError::InvalidAmbiguity { path, .. }) => assert_eq!(path, "ambiguity.k"),
            other => panic!("unexpected {other:?}"),
        }
        let d = MINIMAL.replace("0.9,", "1.0,");
        assert_eq!(parse_config(&d), Err(ConfigError::InvalidDiscount(1.0)));
        let neg = MINIMAL.replace("\"delta\": 0.09", "\"delta\": -1");
        assert!(matches!(parse_config(&neg), Err(ConfigError::InvalidAmbiguity { .. })));
    }

    #[test]
    fn rejects_unknown_keys_and_types() {
        let extra = MINIMAL.replace("\"discount\": 0.9,", "\"discount\": 0.9, \"bogus\": 1,");
        match parse_config(&extra) {
            Err(ConfigError::SchemaError { path, .. }) => assert_eq!(path, "bogus"),
            other => panic!("unexpected {other:?}"),
        }
        let ty = MINIMAL.replace("0.9,", "\"high\",");
        match parse_config(&ty) {
            Err(ConfigError::SchemaError { path, found, .. }) => {
                assert_eq!(path, "discount");
                assert!(found.contains("high"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let solver = MINIMAL.replace("\"discount\": 0.9,", "\"discount\": 0.9, \"solver\": {\"tolerance\": 1},");
        match parse_config(&solver) {
            Err(ConfigError::SchemaError { path, .. }) => assert_eq!(path, "solver.tolerance"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_grid_and_noise() {
        let g = MINIMAL.replace("\"discount\": 0.9,", "\"discount\": 0.9, \"state_grid\": [1],");
        assert!(matches!(parse_config(&g), Err(ConfigError::Invalid { .. })));
        let w = MINIMAL.replace("[0.5, 0.5]", "[0.5, 0.6]");
        assert!(matches!(parse_config(&w), Err(ConfigError::Invalid { .. })));
        let m = MINIMAL.replace(
            r#"{"kind": "lemma5"}"#,
            r#"{"kind": "queue", "actions": [], "service_cost": [], "x_max": 1, "r_max": 1}"#,
        );
        match parse_config(&m) {
            Err(ConfigError::Invalid { path, .. }) => assert!(path.starts_with("model.")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let texts = [
            MINIMAL.to_string(),
            r#"{
                "model": {"kind": "queue", "actions": [1.0, 2.0], "service_cost": [0.1, 0.3], "x_max": 4, "r_max": 5},
                "discount": 0.8,
                "ambiguity": {"family": "fk", "delta": 0.2, "k": 2},
                "adversary": "cau",
                "state_grid": [21],
                "noise": {"kind": "bernoulli", "p": 0.3, "n": 50, "seed": 7},
                "solver": {"tol": 1e-6, "max_iters": 500, "candidates": 51},
                "output": {"value": "v.csv"}
            }"#
            .to_string(),
        ];
        for t in texts {
            let cfg = parse_config(&t).unwrap();
            let again = parse_config(&cfg.to_json()).unwrap();
            assert_eq!(cfg, again);
            assert_eq!(cfg.digest(), again.digest());
        }
    }
}
