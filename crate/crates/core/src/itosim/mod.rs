//! Continuous Itô semimartingale models, Euler–Maruyama simulation on a fine
//! grid, and equidistant observation records.
//!
//! A model is `dX = b dt + σ dW` with `W` a `q`-dimensional Brownian motion.
//! Each coefficient is a [`Coefficient`]; the [`Coefficient::Ito`] variant
//! carries its own state driven by the same `W`, which is how the nested
//! volatility-of-volatility structure is expressed.

mod io;
mod scenario;

pub use io::{
    check_grid, decode_binary, encode_binary, ingest_csv, ingest_reader, read_binary_files, read_csv, write_binary_files,
    write_csv, BinaryMeta, CsvTable, IngestError, GRID_TOL,
};
pub use scenario::{Scenario, ScenarioError};

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detalg::{rank_of, DEFAULT_RANK_TOL};
use crate::rng;

/// Default number of Euler substeps per observation interval.
pub const DEFAULT_REFINE: usize = 8;
/// Number of probe times used to check a rank profile against `σ`.
pub const RANK_PROBES: usize = 100;

/// `f(t, out)`.
pub type TimeFn = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;
/// `f(t, state, out)`.
pub type StateFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("horizon {t_max} is shorter than one block of {block} observation steps (step {delta_n})")]
    TooShort { t_max: f64, delta_n: f64, block: usize },
    #[error("invalid simulation grid: {0}")]
    BadGrid(String),
    #[error("invalid model: {0}")]
    BadModel(String),
    #[error("declared rank {declared} differs from rank {actual} of the volatility at t = {t}")]
    RankMismatch { t: f64, declared: usize, actual: usize },
    #[error("simulation produced a non-finite value at step {0}")]
    NonFinite(usize),
}

/// Ito-process coefficient `dY = drift(t, Y) dt + vol(t, Y) dW`.
///
/// `vol` writes a `len × q` row-major array: entry `j * q + k` multiplies
/// `dW^k` in the equation of component `j`.
#[derive(Clone)]
pub struct ItoCoefficient {
    pub initial: Vec<f64>,
    pub drift: StateFn,
    pub vol: StateFn,
}

/// One coefficient of the model (the drift `b`, length `d`, or the
/// volatility `σ`, a row-major `d × q` array).
#[derive(Clone)]
pub enum Coefficient {
    Constant(Vec<f64>),
    /// Non-random function of time.
    Deterministic(TimeFn),
    /// Function of time and the current value of `X`.
    StateDependent(StateFn),
    Ito(ItoCoefficient),
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(v) => f.debug_tuple("Constant").field(v).finish(),
            Coefficient::Deterministic(_) => f.write_str("Deterministic(..)"),
            Coefficient::StateDependent(_) => f.write_str("StateDependent(..)"),
            Coefficient::Ito(c) => f.debug_struct("Ito").field("initial", &c.initial).finish_non_exhaustive(),
        }
    }
}

impl Coefficient {
    pub fn zeros(len: usize) -> Self {
        Coefficient::Constant(vec![0.0; len])
    }

    /// `true` when the coefficient does not depend on the Brownian path.
    pub fn is_deterministic(&self) -> bool {
        matches!(self, Coefficient::Constant(_) | Coefficient::Deterministic(_))
    }

    /// Value at time `t` for a deterministic coefficient.
    pub fn value_at(&self, t: f64, len: usize) -> Option<Vec<f64>> {
        let mut out = vec![0.0; len];
        match self {
            Coefficient::Constant(v) => out.copy_from_slice(v),
            Coefficient::Deterministic(f) => f(t, &mut out),
            _ => return None,
        }
        Some(out)
    }

    /// Value at time `t` when `X = x0` and any own state is at its initial
    /// value; used for rank probing.
    fn probe(&self, t: f64, x0: &[f64], out: &mut [f64]) {
        match self {
            Coefficient::Constant(v) => out.copy_from_slice(v),
            Coefficient::Deterministic(f) => f(t, out),
            Coefficient::StateDependent(f) => f(t, x0, out),
            Coefficient::Ito(c) => out.copy_from_slice(&c.initial),
        }
    }

    fn check_len(&self, len: usize, what: &str) -> Result<(), SimError> {
        let got = match self {
            Coefficient::Constant(v) => v.len(),
            Coefficient::Ito(c) => c.initial.len(),
            _ => return Ok(()),
        };
        if got != len {
            return Err(SimError::BadModel(format!("{what} has {got} entries, expected {len}")));
        }
        Ok(())
    }
}

/// Piecewise-constant map `t ↦ r_t`, given by change points in increasing
/// time order. The first change point is at time 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankProfile {
    changes: Vec<(f64, usize)>,
}

impl RankProfile {
    pub fn constant(r: usize) -> Self {
        Self { changes: vec![(0.0, r)] }
    }

    pub fn piecewise(changes: Vec<(f64, usize)>) -> Result<Self, SimError> {
        if changes.first().map(|c| c.0) != Some(0.0) {
            return Err(SimError::BadModel("rank profile must start at time 0".into()));
        }
        if changes.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(SimError::BadModel("rank profile change points must increase".into()));
        }
        Ok(Self { changes })
    }

    pub fn rank_at(&self, t: f64) -> usize {
        self.changes.iter().take_while(|(s, _)| *s <= t).last().map_or(self.changes[0].1, |c| c.1)
    }

    /// `R_T = sup_{s < T} r_s`.
    pub fn max_rank(&self, t_max: f64) -> usize {
        self.changes.iter().filter(|(s, _)| *s < t_max).map(|c| c.1).max().unwrap_or(0)
    }

    /// `∫_0^T (r_s)^p ds`.
    pub fn integrated_power(&self, t_max: f64, p: f64) -> f64 {
        let mut total = 0.0;
        for (k, &(start, r)) in self.changes.iter().enumerate() {
            let end = self.changes.get(k + 1).map_or(t_max, |c| c.0).min(t_max);
            if end > start {
                total += (end - start) * (r as f64).powf(p);
            }
        }
        total
    }

    pub fn changes(&self) -> &[(f64, usize)] {
        &self.changes
    }
}

/// Model specification: dimensions, coefficients, start value and the
/// declared rank profile of `σ`.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub d: usize,
    pub q: usize,
    pub x0: Vec<f64>,
    pub drift: Coefficient,
    pub vol: Coefficient,
    pub rank_profile: RankProfile,
    pub scenario: String,
}

impl ModelSpec {
    pub fn validate(&self, t_max: f64) -> Result<(), SimError> {
        if self.d == 0 || self.q == 0 {
            return Err(SimError::BadModel("dimensions must be positive".into()));
        }
        if self.x0.len() != self.d || !self.x0.iter().all(|v| v.is_finite()) {
            return Err(SimError::BadModel(format!("start value must be {} finite numbers", self.d)));
        }
        self.drift.check_len(self.d, "drift")?;
        self.vol.check_len(self.d * self.q, "volatility")?;
        let mut sigma = vec![0.0; self.d * self.q];
        for k in 0..RANK_PROBES {
            let t = (k as f64 + 0.5) * t_max / RANK_PROBES as f64;
            self.vol.probe(t, &self.x0, &mut sigma);
            if !sigma.iter().all(|v| v.is_finite()) {
                return Err(SimError::BadModel(format!("volatility is not finite at t = {t}")));
            }
            let actual = rank_of(self.d, self.q, &sigma, DEFAULT_RANK_TOL);
            let declared = self.rank_profile.rank_at(t);
            if actual != declared {
                return Err(SimError::RankMismatch { t, declared, actual });
            }
        }
        Ok(())
    }

    /// `true` when `σ` and `b` are non-random functions of time.
    pub fn has_deterministic_coefficients(&self) -> bool {
        self.vol.is_deterministic() && self.drift.is_deterministic()
    }
}

/// Fine-grid coefficient values recorded during simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPath {
    pub fine_step: f64,
    /// Row-major, one `d × q` block per fine step.
    pub vol: Vec<f64>,
    /// Row-major, one length-`d` block per fine step.
    pub drift: Vec<f64>,
}

/// Equidistant observations `X_{iΔ}`, `i = 0..=⌊T/Δ⌋`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub delta_n: f64,
    pub t_max: f64,
    pub d: usize,
    pub obs: Vec<f64>,
    pub seed: Option<u64>,
    pub scenario: Option<String>,
    pub latent: Option<LatentPath>,
}

impl PathSample {
    pub fn new(delta_n: f64, d: usize, obs: Vec<f64>) -> Result<Self, SimError> {
        if !(delta_n > 0.0 && delta_n.is_finite()) {
            return Err(SimError::BadGrid(format!("step {delta_n} must be positive")));
        }
        if d == 0 || obs.is_empty() || !obs.len().is_multiple_of(d) {
            return Err(SimError::BadGrid(format!("{} values do not form rows of width {d}", obs.len())));
        }
        if !obs.iter().all(|v| v.is_finite()) {
            return Err(SimError::BadGrid("observations must be finite".into()));
        }
        let rows = obs.len() / d;
        Ok(Self { delta_n, t_max: (rows - 1) as f64 * delta_n, d, obs, seed: None, scenario: None, latent: None })
    }

    pub fn rows(&self) -> usize {
        self.obs.len() / self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.obs[i * self.d..(i + 1) * self.d]
    }
}

/// Number of observation steps in `[0, t_max]`, tolerant to rounding in
/// `t_max / delta_n`.
pub fn step_count(t_max: f64, delta_n: f64) -> usize {
    (t_max / delta_n * (1.0 + 1e-12)).floor() as usize
}

/// Simulation grid and randomness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_max: f64,
    pub delta_n: f64,
    /// Euler substeps per observation interval.
    pub refine: usize,
    pub seed: u64,
    pub record_latent: bool,
}

impl SimConfig {
    pub fn new(t_max: f64, delta_n: f64, seed: u64) -> Self {
        Self { t_max, delta_n, refine: DEFAULT_REFINE, seed, record_latent: false }
    }
}

struct CoefState {
    buf: Vec<f64>,
    own: Option<Vec<f64>>,
    drift_scratch: Vec<f64>,
    vol_scratch: Vec<f64>,
}

impl CoefState {
    fn new(coef: &Coefficient, len: usize, q: usize) -> Self {
        let (buf, own) = match coef {
            Coefficient::Constant(v) => (v.clone(), None),
            Coefficient::Ito(c) => (c.initial.clone(), Some(c.initial.clone())),
            _ => (vec![0.0; len], None),
        };
        Self { buf, own, drift_scratch: vec![0.0; len], vol_scratch: vec![0.0; len * q] }
    }

    fn refresh(&mut self, coef: &Coefficient, t: f64, x: &[f64]) {
        match coef {
            Coefficient::Constant(_) => {}
            Coefficient::Deterministic(f) => f(t, &mut self.buf),
            Coefficient::StateDependent(f) => f(t, x, &mut self.buf),
            Coefficient::Ito(_) => self.buf.copy_from_slice(self.own.as_ref().expect("Ito state")),
        }
    }

    fn step_own(&mut self, coef: &Coefficient, t: f64, dt: f64, dw: &[f64]) {
        if let (Coefficient::Ito(c), Some(y)) = (coef, self.own.as_mut()) {
            let q = dw.len();
            (c.drift)(t, y, &mut self.drift_scratch);
            (c.vol)(t, y, &mut self.vol_scratch);
            for (j, yj) in y.iter_mut().enumerate() {
                let noise: f64 = (0..q).map(|k| self.vol_scratch[j * q + k] * dw[k]).sum();
                *yj += self.drift_scratch[j] * dt + noise;
            }
        }
    }
}

/// Euler–Maruyama simulation with step `delta_n / refine`, subsampled to the
/// observation grid.
pub fn simulate(model: &ModelSpec, cfg: &SimConfig) -> Result<PathSample, SimError> {
    let SimConfig { t_max, delta_n, refine, seed, record_latent } = *cfg;
    if !(delta_n > 0.0 && delta_n.is_finite() && t_max.is_finite()) {
        return Err(SimError::BadGrid(format!("step {delta_n} and horizon {t_max} must be positive and finite")));
    }
    if refine == 0 {
        return Err(SimError::BadGrid("refine must be at least 1".into()));
    }
    let (d, q) = (model.d, model.q);
    let steps = step_count(t_max, delta_n);
    if steps < 2 * d {
        return Err(SimError::TooShort { t_max, delta_n, block: 2 * d });
    }
    model.validate(t_max)?;

    let mut rng = rng::derive(seed, rng::stream::PATH, 0);
    let dt = delta_n / refine as f64;
    let sqrt_dt = dt.sqrt();
    let mut x = model.x0.clone();
    let mut drift = CoefState::new(&model.drift, d, q);
    let mut vol = CoefState::new(&model.vol, d * q, q);
    let mut dw = vec![0.0; q];
    let mut obs = Vec::with_capacity((steps + 1) * d);
    obs.extend_from_slice(&x);
    let mut latent = record_latent.then(|| LatentPath {
        fine_step: dt,
        vol: Vec::with_capacity(steps * refine * d * q),
        drift: Vec::with_capacity(steps * refine * d),
    });

    for i in 0..steps {
        for k in 0..refine {
            let fine = i * refine + k;
            let t = fine as f64 * dt;
            drift.refresh(&model.drift, t, &x);
            vol.refresh(&model.vol, t, &x);
            if let Some(l) = latent.as_mut() {
                l.vol.extend_from_slice(&vol.buf);
                l.drift.extend_from_slice(&drift.buf);
            }
            for w in dw.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *w = sqrt_dt * z;
            }
            for (l, xl) in x.iter_mut().enumerate() {
                let row = &vol.buf[l * q..(l + 1) * q];
                let noise: f64 = row.iter().zip(&dw).map(|(s, w)| s * w).sum();
                *xl += drift.buf[l] * dt + noise;
            }
            drift.step_own(&model.drift, t, dt, &dw);
            vol.step_own(&model.vol, t, dt, &dw);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SimError::NonFinite(i + 1));
        }
        obs.extend_from_slice(&x);
    }

    Ok(PathSample {
        delta_n,
        t_max,
        d,
        obs,
        seed: Some(seed),
        scenario: Some(model.scenario.clone()),
        latent,
    })
}
