//! Built-in models with a known rank process.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Coefficient, ItoCoefficient, ModelSpec, RankProfile, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("unknown scenario '{0}'")]
    Unknown(String),
    #[error("rank {r} is infeasible for d = {d}, q = {q}")]
    InfeasibleRank { r: usize, d: usize, q: usize },
    #[error("invalid scenario parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Model(#[from] SimError),
}

fn default_one() -> f64 {
    1.0
}

/// Canned scenarios. All use `x0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Scenario {
    /// `σ_t = (1 + amplitude · sin(2πt/T)) E_r`, `b = 0`, where `E_r` is the
    /// `d × q` matrix with ones in the first `r` diagonal places. The
    /// amplitude must lie in `[0, 1)` so the rank stays `r`.
    ConstantRank {
        d: usize,
        q: usize,
        r: usize,
        #[serde(default)]
        vol_amplitude: f64,
    },
    /// `σ_t` moves from `E_{r_before}` to `E_{r_after}` at `switch_time`
    /// through a C¹ smoothstep ramp. The ramp lies after the switch when the
    /// rank goes up and before it when the rank goes down, so the declared
    /// profile changes exactly at `switch_time`. `ramp_width` defaults to
    /// one Euler substep.
    RankSwitch {
        d: usize,
        q: usize,
        r_before: usize,
        r_after: usize,
        switch_time: f64,
        #[serde(default)]
        ramp_width: Option<f64>,
    },
    /// `σ = 0` and `dX = b dt` with an Ornstein–Uhlenbeck drift
    /// `db = -mean_reversion · b dt + drift_vol · dW` (`q = d`).
    IntegratedDiffusion {
        d: usize,
        #[serde(default = "default_one")]
        mean_reversion: f64,
        #[serde(default = "default_one")]
        drift_vol: f64,
    },
    /// Local-volatility model `σ_t = (1 + sin(X^1_t) / 2) E_r`, `b(x) = -x / 2`.
    SdeCase { d: usize, q: usize, r: usize },
    /// `d = 3`, `q = 1`: `dX^j = σ^j dW`, `dσ^j = v^j dW` with constant `v`,
    /// `σ_0 = (1, 0, 0)`, `v = (0, 1, 1/2)`. Rank 1 throughout.
    DegenerateD3q1,
}

fn selector(d: usize, q: usize, r: usize) -> Vec<f64> {
    let mut e = vec![0.0; d * q];
    for i in 0..r {
        e[i * q + i] = 1.0;
    }
    e
}

fn check_rank(r: usize, d: usize, q: usize) -> Result<(), ScenarioError> {
    if d == 0 || q == 0 {
        return Err(ScenarioError::BadParameter("dimensions must be positive".into()));
    }
    if r > d.min(q) {
        return Err(ScenarioError::InfeasibleRank { r, d, q });
    }
    Ok(())
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::ConstantRank { .. } => "constant_rank",
            Scenario::RankSwitch { .. } => "rank_switch",
            Scenario::IntegratedDiffusion { .. } => "integrated_diffusion",
            Scenario::SdeCase { .. } => "sde_case",
            Scenario::DegenerateD3q1 => "degenerate_d3q1",
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Scenario::ConstantRank { d, .. }
            | Scenario::RankSwitch { d, .. }
            | Scenario::IntegratedDiffusion { d, .. }
            | Scenario::SdeCase { d, .. } => d,
            Scenario::DegenerateD3q1 => 3,
        }
    }

    /// Parses a scenario from its name and a JSON object of parameters.
    pub fn from_name(name: &str, params: serde_json::Value) -> Result<Self, ScenarioError> {
        const NAMES: [&str; 5] = ["constant_rank", "rank_switch", "integrated_diffusion", "sde_case", "degenerate_d3q1"];
        if !NAMES.contains(&name) {
            return Err(ScenarioError::Unknown(name.to_string()));
        }
        let mut obj = match params {
            serde_json::Value::Object(m) => m,
            serde_json::Value::Null => serde_json::Map::new(),
            other => return Err(ScenarioError::BadParameter(format!("parameters must be an object, got {other}"))),
        };
        obj.insert("name".into(), serde_json::Value::String(name.into()));
        serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| ScenarioError::BadParameter(e.to_string()))
    }

    /// Builds and validates the model for a horizon `t_max`. `fine_step` is
    /// the Euler step, used as the default rank-switch ramp width.
    pub fn build(&self, t_max: f64, fine_step: f64) -> Result<ModelSpec, ScenarioError> {
        if !(t_max > 0.0 && fine_step > 0.0) {
            return Err(ScenarioError::BadParameter("horizon and step must be positive".into()));
        }
        let model = match *self {
            Scenario::ConstantRank { d, q, r, vol_amplitude } => {
                check_rank(r, d, q)?;
                if !(0.0..1.0).contains(&vol_amplitude) {
                    return Err(ScenarioError::BadParameter(format!("vol_amplitude {vol_amplitude} not in [0, 1)")));
                }
                let e = selector(d, q, r);
                let vol = if vol_amplitude == 0.0 {
                    Coefficient::Constant(e)
                } else {
                    Coefficient::Deterministic(Arc::new(move |t, out: &mut [f64]| {
                        let scale = 1.0 + vol_amplitude * (2.0 * PI * t / t_max).sin();
                        for (o, v) in out.iter_mut().zip(&e) {
                            *o = scale * v;
                        }
                    }))
                };
                ModelSpec {
                    d,
                    q,
                    x0: vec![0.0; d],
                    drift: Coefficient::zeros(d),
                    vol,
                    rank_profile: RankProfile::constant(r),
                    scenario: self.name().into(),
                }
            }
            Scenario::RankSwitch { d, q, r_before, r_after, switch_time, ramp_width } => {
                check_rank(r_before, d, q)?;
                check_rank(r_after, d, q)?;
                if !(switch_time > 0.0 && switch_time < t_max) {
                    return Err(ScenarioError::BadParameter(format!("switch_time {switch_time} not in (0, {t_max})")));
                }
                let width = ramp_width.unwrap_or(fine_step);
                if !(width > 0.0) {
                    return Err(ScenarioError::BadParameter("ramp_width must be positive".into()));
                }
                let before = selector(d, q, r_before);
                let after = selector(d, q, r_after);
                let ramp_start = if r_after >= r_before { switch_time } else { switch_time - width };
                let vol = Coefficient::Deterministic(Arc::new(move |t, out: &mut [f64]| {
                    let w = smoothstep((t - ramp_start) / width);
                    for ((o, b), a) in out.iter_mut().zip(&before).zip(&after) {
                        *o = b + w * (a - b);
                    }
                }));
                let profile = if r_before == r_after {
                    RankProfile::constant(r_before)
                } else {
                    RankProfile::piecewise(vec![(0.0, r_before), (switch_time, r_after)])?
                };
                ModelSpec {
                    d,
                    q,
                    x0: vec![0.0; d],
                    drift: Coefficient::zeros(d),
                    vol,
                    rank_profile: profile,
                    scenario: self.name().into(),
                }
            }
            Scenario::IntegratedDiffusion { d, mean_reversion, drift_vol } => {
                if d == 0 {
                    return Err(ScenarioError::BadParameter("d must be positive".into()));
                }
                let drift = Coefficient::Ito(ItoCoefficient {
                    initial: vec![0.0; d],
                    drift: Arc::new(move |_, b: &[f64], out: &mut [f64]| {
                        for (o, v) in out.iter_mut().zip(b) {
                            *o = -mean_reversion * v;
                        }
                    }),
                    vol: Arc::new(move |_, _, out: &mut [f64]| {
                        out.fill(0.0);
                        for j in 0..d {
                            out[j * d + j] = drift_vol;
                        }
                    }),
                });
                ModelSpec {
                    d,
                    q: d,
                    x0: vec![0.0; d],
                    drift,
                    vol: Coefficient::zeros(d * d),
                    rank_profile: RankProfile::constant(0),
                    scenario: self.name().into(),
                }
            }
            Scenario::SdeCase { d, q, r } => {
                check_rank(r, d, q)?;
                let e = selector(d, q, r);
                ModelSpec {
                    d,
                    q,
                    x0: vec![0.0; d],
                    drift: Coefficient::StateDependent(Arc::new(|_, x: &[f64], out: &mut [f64]| {
                        for (o, v) in out.iter_mut().zip(x) {
                            *o = -0.5 * v;
                        }
                    })),
                    vol: Coefficient::StateDependent(Arc::new(move |_, x: &[f64], out: &mut [f64]| {
                        let scale = 1.0 + 0.5 * x[0].sin();
                        for (o, v) in out.iter_mut().zip(&e) {
                            *o = scale * v;
                        }
                    })),
                    rank_profile: RankProfile::constant(r),
                    scenario: self.name().into(),
                }
            }
            Scenario::DegenerateD3q1 => {
                const V: [f64; 3] = [0.0, 1.0, 0.5];
                ModelSpec {
                    d: 3,
                    q: 1,
                    x0: vec![0.0; 3],
                    drift: Coefficient::zeros(3),
                    vol: Coefficient::Ito(ItoCoefficient {
                        initial: vec![1.0, 0.0, 0.0],
                        drift: Arc::new(|_, _, out: &mut [f64]| out.fill(0.0)),
                        vol: Arc::new(|_, _, out: &mut [f64]| out.copy_from_slice(&V)),
                    }),
                    rank_profile: RankProfile::constant(1),
                    scenario: self.name().into(),
                }
            }
        };
        model.validate(t_max)?;
        Ok(model)
    }
}
