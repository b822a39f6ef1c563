//! Monte Carlo study configuration.
//!
//! ```json
//! {
//!   "scenario": { "name": "constant_rank", "d": 2, "q": 2, "r": 1 },
//!   "n_obs": 20000,
//!   "t_max": 1.0,
//!   "n_paths": 500,
//!   "hypotheses": ["=1", "=2", "<=0"],
//!   "alphas": [0.05],
//!   "k_n": "auto",
//!   "master_seed": 7
//! }
//! ```
//!
//! Omitted fields take the values of [`StudyConfig`]'s defaults: `t_max = 1`,
//! `refine = 8`, `theta = I`, `alphas = [0.05]`, no hypotheses, `p = 1`,
//! `k_n = "auto"`, `const_rank_test = true`, `master_seed = 0`,
//! `perturbation_salt = 0`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use volrank::detalg::SquareMatrix;
use volrank::itosim::{Scenario, DEFAULT_REFINE};
use volrank::ranktest::{default_kn, Hypothesis, PerturbationConfig};

use crate::error::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

/// Spot window length: a fixed number of blocks or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KnChoice {
    Fixed(usize),
    Auto(AutoTag),
}

impl Default for KnChoice {
    fn default() -> Self {
        KnChoice::Auto(AutoTag::Auto)
    }
}

impl KnChoice {
    pub fn resolve(self, delta_n: f64, d: usize) -> usize {
        match self {
            KnChoice::Fixed(k) => k,
            KnChoice::Auto(_) => default_kn(delta_n, d),
        }
    }
}

impl std::str::FromStr for KnChoice {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(KnChoice::default());
        }
        s.parse()
            .map(KnChoice::Fixed)
            .map_err(|_| HarnessError::Config(format!("k_n must be \"auto\" or a positive integer, got {s:?}")))
    }
}

fn default_t_max() -> f64 {
    1.0
}
fn default_refine() -> usize {
    DEFAULT_REFINE
}
fn default_alphas() -> Vec<f64> {
    vec![0.05]
}
fn default_p() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub scenario: Scenario,
    /// Observation steps per path, so `Δ = t_max / n_obs`.
    pub n_obs: usize,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    /// Euler substeps per observation step.
    #[serde(default = "default_refine")]
    pub refine: usize,
    /// Rows of the perturbation matrix; the identity when absent.
    #[serde(default)]
    pub theta: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub hypotheses: Vec<Hypothesis>,
    #[serde(default = "default_true")]
    pub const_rank_test: bool,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub k_n: KnChoice,
    pub n_paths: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Selects an independent family of perturbation seeds while keeping
    /// the simulated paths.
    #[serde(default)]
    pub perturbation_salt: u64,
    /// Output directory. Not part of the provenance hash.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: StudyConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(file: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(file).map_err(HarnessError::io(format!("reading {}", file.display())))?;
        Self::from_json(&text)
    }

    pub fn d(&self) -> usize {
        self.scenario.dim()
    }

    pub fn delta_n(&self) -> f64 {
        self.t_max / self.n_obs as f64
    }

    pub fn k_n(&self) -> usize {
        self.k_n.resolve(self.delta_n(), self.d())
    }

    pub fn theta_matrix(&self) -> Result<SquareMatrix, HarnessError> {
        match &self.theta {
            None => Ok(SquareMatrix::identity(self.d())),
            Some(rows) => {
                let m = SquareMatrix::from_rows(rows).map_err(|e| HarnessError::Config(format!("theta: {e}")))?;
                if m.dim() != self.d() {
                    return Err(HarnessError::Config(format!("theta must be {0} x {0}", self.d())));
                }
                PerturbationConfig::new(m.clone(), 0)?;
                Ok(m)
            }
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let d = self.d();
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.n_obs < 2 * d {
            return bad(format!("n_obs = {} must be at least 2d = {}", self.n_obs, 2 * d));
        }
        if self.n_paths == 0 {
            return bad("n_paths must be at least 1".into());
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad(format!("t_max = {} must be positive", self.t_max));
        }
        if self.refine == 0 {
            return bad("refine must be at least 1".into());
        }
        if self.alphas.is_empty() {
            return bad("alphas must not be empty".into());
        }
        if let Some(a) = self.alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return bad(format!("alpha = {a} must lie in (0, 1)"));
        }
        if let Some(h) = self.hypotheses.iter().find(|h| h.r > d) {
            return bad(format!("hypothesis {h} exceeds d = {d}"));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return bad(format!("p = {} must be positive", self.p));
        }
        if let KnChoice::Fixed(k) = self.k_n {
            if k < 4 * d {
                return bad(format!("k_n = {k} must be at least 4d = {}", 4 * d));
            }
        }
        self.theta_matrix()?;
        self.scenario.build(self.t_max, self.delta_n() / self.refine as f64)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
