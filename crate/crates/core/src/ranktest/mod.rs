//! Perturbed block statistics, the maximal-rank estimator, its feasible
//! variance, and tests on the maximal rank.
//!
//! The observed path is perturbed by an independent Brownian motion `W'`:
//! `Z^κ = X + √(κΔ) θ W'` for `κ = 1, 2`. Increments are grouped into
//! non-overlapping blocks of `2d` steps. In block `i`, `f1[i]` is the
//! squared determinant of the first `d` one-step increments of `Z^1`
//! divided by `√Δ`, and `f2[i]` the squared determinant of the `d`
//! two-step increments of `Z^2` divided by `√(2Δ)`. For rank `r`,
//! `fκ ≈ (κΔ)^{d-r} × O(1)`, so `log2(S2 / S1) ≈ d - r`.

mod constrank;

pub use constrank::{
    const_rank_statistics, default_kn, spot_rank_series, test_const_rank, ConstRankDecision, ConstRankReport,
    SpotSeries,
};

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detalg::{det_row_major, SquareMatrix};
use crate::itosim::PathSample;
use crate::rng;
use crate::stats::{z_one_sided, z_two_sided};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankTestError {
    #[error("path has {rows} observations; at least {needed} are needed for one block")]
    TooShort { rows: usize, needed: usize },
    #[error("degenerate statistic: {0}")]
    Degenerate(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("k_n = {k_n} is invalid: {reason}")]
    BadWindow { k_n: usize, reason: String },
}

/// Perturbation matrix `θ` and the seed of `W'`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationConfig {
    pub theta: SquareMatrix,
    pub seed: u64,
}

impl PerturbationConfig {
    pub fn new(theta: SquareMatrix, seed: u64) -> Result<Self, RankTestError> {
        let det = crate::detalg::det(&theta);
        if !(det.abs() > 0.0) {
            return Err(RankTestError::Config("theta must be invertible".into()));
        }
        Ok(Self { theta, seed })
    }

    /// `θ = I_d`.
    pub fn identity(d: usize, seed: u64) -> Self {
        Self { theta: SquareMatrix::identity(d), seed }
    }
}

/// Per-block squared determinants for both frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbedBlocks {
    pub d: usize,
    pub delta_n: f64,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

impl PerturbedBlocks {
    /// Blocks from given values (for synthetic inputs).
    pub fn from_values(d: usize, delta_n: f64, f1: Vec<f64>, f2: Vec<f64>) -> Result<Self, RankTestError> {
        if f1.len() != f2.len() {
            return Err(RankTestError::Config("f1 and f2 lengths differ".into()));
        }
        if d == 0 || !(delta_n > 0.0) {
            return Err(RankTestError::Config("d and delta_n must be positive".into()));
        }
        if f1.iter().chain(&f2).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(RankTestError::Config("block values must be finite and non-negative".into()));
        }
        Ok(Self { d, delta_n, f1, f2 })
    }

    pub fn n_blocks(&self) -> usize {
        self.f1.len()
    }

    /// Length of one block in time, `2dΔ`.
    pub fn block_span(&self) -> f64 {
        2.0 * self.d as f64 * self.delta_n
    }

    /// Number of complete blocks inside `[0, t]`.
    pub fn blocks_until(&self, t: f64) -> usize {
        let k = (t / self.block_span() * (1.0 + 1e-12)).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.n_blocks())
        }
    }

    /// Writes `i,f1,f2` rows.
    pub fn write_audit_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["i", "f1", "f2"])?;
        for (i, (a, b)) in self.f1.iter().zip(&self.f2).enumerate() {
            w.write_record([i.to_string(), a.to_string(), b.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Perturbs the path with `θ W'` and computes both block series.
pub fn perturb_and_block(path: &PathSample, cfg: &PerturbationConfig) -> Result<PerturbedBlocks, RankTestError> {
    let d = path.d;
    let needed = 2 * d + 1;
    if path.rows() < needed {
        return Err(RankTestError::TooShort { rows: path.rows(), needed });
    }
    if cfg.theta.dim() != d {
        return Err(RankTestError::Config(format!("theta is {0}x{0} but the path has d = {d}", cfg.theta.dim())));
    }
    let delta = path.delta_n;
    let n_blocks = (path.rows() - 1) / (2 * d);
    let theta = cfg.theta.entries();
    let scale1 = delta.sqrt();
    let scale2 = (2.0 * delta).sqrt();
    let mut rng = rng::derive(cfg.seed, rng::stream::PERTURBATION, 0);

    let mut f1 = Vec::with_capacity(n_blocks);
    let mut f2 = Vec::with_capacity(n_blocks);
    // One block: 2d steps of (ΔX, ΔX') per coordinate.
    let steps = 2 * d;
    let mut dx = vec![0.0; steps * d];
    let mut dxp = vec![0.0; steps * d];
    let mut wp = vec![0.0; d];
    let mut m1 = vec![0.0; d * d];
    let mut m2 = vec![0.0; d * d];
    for b in 0..n_blocks {
        let start = 2 * d * b;
        for s in 0..steps {
            let (cur, prev) = (path.row(start + s + 1), path.row(start + s));
            for l in 0..d {
                dx[s * d + l] = cur[l] - prev[l];
            }
            for w in wp.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *w = z * scale1;
            }
            for l in 0..d {
                dxp[s * d + l] = (0..d).map(|m| theta[l * d + m] * wp[m]).sum();
            }
        }
        // Column j of m1: (ΔX + √Δ ΔX') / √Δ at step j; of m2: the sum over
        // steps 2j, 2j+1 of (ΔX + √(2Δ) ΔX') / √(2Δ).
        for j in 0..d {
            for l in 0..d {
                m1[l * d + j] = (dx[j * d + l] + scale1 * dxp[j * d + l]) / scale1;
                let two = dx[2 * j * d + l] + dx[(2 * j + 1) * d + l]
                    + scale2 * (dxp[2 * j * d + l] + dxp[(2 * j + 1) * d + l]);
                m2[l * d + j] = two / scale2;
            }
        }
        let a = det_row_major(&mut m1, d);
        let c = det_row_major(&mut m2, d);
        f1.push(a * a);
        f2.push(c * c);
    }
    Ok(PerturbedBlocks { d, delta_n: delta, f1, f2 })
}

/// `(S^1_t, S^2_t) = 2dΔ Σ_{blocks in [0, t]} (f1, f2)`.
pub fn s_statistics(blocks: &PerturbedBlocks, up_to: f64) -> (f64, f64) {
    let k = blocks.blocks_until(up_to);
    let span = blocks.block_span();
    (span * blocks.f1[..k].iter().sum::<f64>(), span * blocks.f2[..k].iter().sum::<f64>())
}

/// `d - log2(s2 / s1)`.
pub fn rank_estimate(s1: f64, s2: f64, d: usize) -> Result<f64, RankTestError> {
    if !(s1 > 0.0 && s2 > 0.0 && s1.is_finite() && s2.is_finite()) {
        return Err(RankTestError::Degenerate(format!("need positive finite S statistics, got S1 = {s1}, S2 = {s2}")));
    }
    Ok(d as f64 - (s2 / s1).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimates {
    pub v11: f64,
    pub v22: f64,
    pub v12: f64,
}

/// `V^{κκ'}_t = 4d²Δ Σ fκ fκ'` over blocks in `[0, t]`.
pub fn variance_estimators(blocks: &PerturbedBlocks, t: f64) -> VarianceEstimates {
    let k = blocks.blocks_until(t);
    let c = 4.0 * (blocks.d * blocks.d) as f64 * blocks.delta_n;
    let (f1, f2) = (&blocks.f1[..k], &blocks.f2[..k]);
    VarianceEstimates {
        v11: c * f1.iter().map(|a| a * a).sum::<f64>(),
        v22: c * f2.iter().map(|b| b * b).sum::<f64>(),
        v12: c * f1.iter().zip(f2).map(|(a, b)| a * b).sum::<f64>(),
    }
}

/// Feasible variance from the three estimators:
/// `(V11 + 2^{2(R̂-d)} V22 - 2^{1+R̂-d} V12) / (S1 log 2)²`.
pub fn feasible_variance(s1: f64, r_hat: f64, v: &VarianceEstimates, d: usize) -> Result<f64, RankTestError> {
    if !(s1 > 0.0) {
        return Err(RankTestError::Degenerate(format!("S1 = {s1} must be positive")));
    }
    let e = r_hat - d as f64;
    let num = v.v11 + 2f64.powf(2.0 * e) * v.v22 - 2f64.powf(1.0 + e) * v.v12;
    Ok(num / (s1 * std::f64::consts::LN_2).powi(2))
}

/// Same quantity through its perfect-square form
/// `4d²Δ Σ (f1 - 2^{R̂-d} f2)² / (S1 log 2)²`, non-negative by construction.
pub fn feasible_variance_square_form(blocks: &PerturbedBlocks, t: f64, s1: f64, r_hat: f64) -> Result<f64, RankTestError> {
    if !(s1 > 0.0) {
        return Err(RankTestError::Degenerate(format!("S1 = {s1} must be positive")));
    }
    let k = blocks.blocks_until(t);
    let w = 2f64.powf(r_hat - blocks.d as f64);
    let c = 4.0 * (blocks.d * blocks.d) as f64 * blocks.delta_n;
    let sum: f64 = blocks.f1[..k].iter().zip(&blocks.f2[..k]).map(|(a, b)| (a - w * b).powi(2)).sum();
    Ok(c * sum / (s1 * std::f64::consts::LN_2).powi(2))
}

/// Alternative estimator `(2V11 - 2^{1+R̂-d} V12) / (S1 log 2)²`, which uses
/// `V11 ≈ V22` after normalization. It can be negative.
pub fn feasible_variance_alt(s1: f64, r_hat: f64, v: &VarianceEstimates, d: usize) -> Result<f64, RankTestError> {
    if !(s1 > 0.0) {
        return Err(RankTestError::Degenerate(format!("S1 = {s1} must be positive")));
    }
    let e = r_hat - d as f64;
    Ok((2.0 * v.v11 - 2f64.powf(1.0 + e) * v.v12) / (s1 * std::f64::consts::LN_2).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisKind {
    /// `R_T = r`, two-sided.
    Equal,
    /// `R_T ≤ r`.
    AtMost,
    /// `R_T ≥ r`.
    AtLeast,
}

/// A null hypothesis on the maximal rank, written `=r`, `<=r` or `>=r`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Hypothesis {
    pub kind: HypothesisKind,
    pub r: usize,
}

impl FromStr for Hypothesis {
    type Err = RankTestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (kind, rest) = if let Some(rest) = s.strip_prefix("<=").or_else(|| s.strip_prefix('≤')) {
            (HypothesisKind::AtMost, rest)
        } else if let Some(rest) = s.strip_prefix(">=").or_else(|| s.strip_prefix('≥')) {
            (HypothesisKind::AtLeast, rest)
        } else if let Some(rest) = s.strip_prefix("==").or_else(|| s.strip_prefix('=')) {
            (HypothesisKind::Equal, rest)
        } else {
            return Err(RankTestError::Config(format!("hypothesis '{s}' must start with =, <= or >=")));
        };
        let r = rest.trim().parse().map_err(|_| RankTestError::Config(format!("bad rank in hypothesis '{s}'")))?;
        Ok(Self { kind, r })
    }
}

impl TryFrom<String> for Hypothesis {
    type Error = RankTestError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Hypothesis> for String {
    fn from(h: Hypothesis) -> String {
        h.to_string()
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = match self.kind {
            HypothesisKind::Equal => "=",
            HypothesisKind::AtMost => "<=",
            HypothesisKind::AtLeast => ">=",
        };
        write!(f, "{op}{}", self.r)
    }
}

/// Outcome of one maximal-rank test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDecision {
    pub hypothesis: Hypothesis,
    pub alpha: f64,
    pub reject: bool,
    /// `(R̂ - r) / √(Δ V)`.
    pub standardized: f64,
    /// Half-width of the acceptance band, `z √(Δ V)`.
    pub band: f64,
}

/// Tests `hyp` at level `alpha` given `R̂`, the feasible variance and `Δ`.
pub fn test_max_rank(
    r_hat: f64,
    v_feasible: f64,
    delta_n: f64,
    d: usize,
    hyp: Hypothesis,
    alpha: f64,
) -> Result<TestDecision, RankTestError> {
    if hyp.r > d {
        return Err(RankTestError::Config(format!("rank {} exceeds d = {d}", hyp.r)));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RankTestError::Config(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if !(v_feasible >= 0.0) || !r_hat.is_finite() {
        return Err(RankTestError::Degenerate(format!("R̂ = {r_hat}, V = {v_feasible}")));
    }
    let sd = (delta_n * v_feasible).sqrt();
    let diff = r_hat - hyp.r as f64;
    let standardized = if diff == 0.0 { 0.0 } else { diff / sd };
    let z = match hyp.kind {
        HypothesisKind::Equal => z_two_sided(alpha),
        _ => z_one_sided(alpha),
    }
    .map_err(|e| RankTestError::Config(e.to_string()))?;
    let band = z * sd;
    let reject = match hyp.kind {
        HypothesisKind::Equal => diff.abs() > band,
        HypothesisKind::AtMost => diff > band,
        HypothesisKind::AtLeast => -diff > band,
    };
    Ok(TestDecision { hypothesis: hyp, alpha, reject, standardized, band })
}

/// Everything computed by [`run_rank_test`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTestReport {
    pub d: usize,
    pub delta_n: f64,
    pub t_max: f64,
    pub n_blocks: usize,
    pub r_hat: f64,
    /// `R̂` rounded to the nearest integer and clamped to `0..=d`.
    pub r_rounded: usize,
    pub s1: f64,
    pub s2: f64,
    pub v11: f64,
    pub v22: f64,
    pub v12: f64,
    /// Feasible variance via the perfect-square form.
    pub v_feasible: f64,
    /// Feasible variance via the three-estimator formula (equal up to rounding).
    pub v_feasible_formula: f64,
    /// Alternative variance estimate; may be negative.
    pub v_alt: f64,
    pub decisions: Vec<TestDecision>,
}

pub fn round_rank(r_hat: f64, d: usize) -> usize {
    r_hat.round().clamp(0.0, d as f64) as usize
}

/// Full maximal-rank pipeline on a path.
pub fn run_rank_test(
    path: &PathSample,
    cfg: &PerturbationConfig,
    hypotheses: &[Hypothesis],
    alpha: f64,
) -> Result<RankTestReport, RankTestError> {
    let blocks = perturb_and_block(path, cfg)?;
    report_from_blocks(&blocks, path.t_max, hypotheses, alpha)
}

/// [`run_rank_test`] on precomputed blocks.
pub fn report_from_blocks(
    blocks: &PerturbedBlocks,
    t_max: f64,
    hypotheses: &[Hypothesis],
    alpha: f64,
) -> Result<RankTestReport, RankTestError> {
    let d = blocks.d;
    let (s1, s2) = s_statistics(blocks, t_max);
    let r_hat = rank_estimate(s1, s2, d)?;
    let v = variance_estimators(blocks, t_max);
    let v_feasible = feasible_variance_square_form(blocks, t_max, s1, r_hat)?;
    let v_feasible_formula = feasible_variance(s1, r_hat, &v, d)?;
    let v_alt = feasible_variance_alt(s1, r_hat, &v, d)?;
    let decisions = hypotheses
        .iter()
        .map(|&h| test_max_rank(r_hat, v_feasible, blocks.delta_n, d, h, alpha))
        .collect::<Result<_, _>>()?;
    Ok(RankTestReport {
        d,
        delta_n: blocks.delta_n,
        t_max,
        n_blocks: blocks.n_blocks(),
        r_hat,
        r_rounded: round_rank(r_hat, d),
        s1,
        s2,
        v11: v.v11,
        v22: v.v22,
        v12: v.v12,
        v_feasible,
        v_feasible_formula,
        v_alt,
        decisions,
    })
}
