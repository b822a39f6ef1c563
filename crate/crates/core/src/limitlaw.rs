//! Monte Carlo evaluation of the limiting block variables and of their
//! moments `Γ_r`, `Γ'_r`, `Γ''_r`.
//!
//! For `u = (α, β, γ, a)` a draw consists of `d` blocks of `2d` numbers for
//! each frequency `κ ∈ {1, 2}`. Block `i` at frequency `κ` covers the time
//! interval `[κ(i-1), κi]` of a `q`-dimensional Brownian motion `W` and an
//! independent `d`-dimensional `W'`:
//!
//! - first `d` entries: `κ^{-1/2} α ΔW`,
//! - last `d` entries: `a + κ^{-1/2} β ΔW' + κ^{-1} Σ_{m,k} γ^{lmk} ∫ (W^k - W^k_start) dW^m`.
//!
//! Both frequencies are read off one path on `[0, 2d]`, so the two sets of
//! blocks are dependent, as required for the cross moment `Γ''_r`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detalg::{gamma_r, rank_of, SquareMatrix, DEFAULT_RANK_TOL};
use crate::itosim::ModelSpec;
use crate::rng;

/// Smallest accepted number of Euler substeps per unit time.
pub const MIN_SUBSTEPS: usize = 100;
/// Smallest accepted Monte Carlo sample size.
pub const MIN_SAMPLES: usize = 100;
pub const DEFAULT_SAMPLES: usize = 20_000;
pub const DEFAULT_SUBSTEPS: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error("n_substeps = {0} is below the minimum of {MIN_SUBSTEPS}")]
    TooFewSubsteps(usize),
    #[error("n_samples = {0} is below the minimum of {MIN_SAMPLES}")]
    TooFewSamples(usize),
    #[error("invalid limit input: {0}")]
    BadInput(String),
    #[error("r = {r} is out of range for d = {d}")]
    RankOutOfRange { r: usize, d: usize },
    #[error("limit integrals need non-random coefficients; model '{0}' has random ones")]
    Unsupported(String),
}

/// Point `u = (α, β, γ, a)`: `alpha` is `d × q`, `beta` is `d × d`,
/// `gamma[l][m][k]` multiplies `∫ W^k dW^m` in row `l`, and `a` has length `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitInput {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    #[serde(default)]
    pub gamma: Option<Vec<Vec<Vec<f64>>>>,
    #[serde(default)]
    pub a: Option<Vec<f64>>,
}

/// Validated, flattened form of [`LimitInput`].
#[derive(Debug, Clone, PartialEq)]
pub struct LimitPoint {
    d: usize,
    q: usize,
    alpha: Vec<f64>,
    beta: Vec<f64>,
    /// `(l * q + m) * q + k`, empty when identically zero.
    gamma: Vec<f64>,
    a: Vec<f64>,
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl LimitInput {
    pub fn point(&self) -> Result<LimitPoint, LimitError> {
        let d = self.alpha.len();
        if d == 0 {
            return Err(LimitError::BadInput("alpha must have at least one row".into()));
        }
        let q = self.alpha[0].len();
        if q == 0 || self.alpha.iter().any(|row| row.len() != q) {
            return Err(LimitError::BadInput("alpha must be a non-empty rectangular d x q array".into()));
        }
        if self.beta.len() != d || self.beta.iter().any(|row| row.len() != d) {
            return Err(LimitError::BadInput(format!("beta must be {d} x {d}")));
        }
        let alpha: Vec<f64> = self.alpha.concat();
        let beta: Vec<f64> = self.beta.concat();
        let mut gamma = Vec::new();
        if let Some(g) = &self.gamma {
            if g.len() != d || g.iter().any(|m| m.len() != q || m.iter().any(|k| k.len() != q)) {
                return Err(LimitError::BadInput(format!("gamma must be {d} x {q} x {q}")));
            }
            gamma = g.iter().flat_map(|m| m.iter().flatten().copied()).collect();
            if gamma.iter().all(|&v| v == 0.0) {
                gamma.clear();
            }
        }
        let a = match &self.a {
            Some(a) if a.len() != d => return Err(LimitError::BadInput(format!("a must have {d} entries"))),
            Some(a) => a.clone(),
            None => vec![0.0; d],
        };
        if !(finite(&alpha) && finite(&beta) && finite(&gamma) && finite(&a)) {
            return Err(LimitError::BadInput("entries must be finite".into()));
        }
        Ok(LimitPoint { d, q, alpha, beta, gamma, a })
    }
}

impl LimitPoint {
    /// `u` with `γ = 0` from row-major `α` (`d × q`), `β` (`d × d`) and `a`.
    pub fn new(d: usize, q: usize, alpha: Vec<f64>, beta: Vec<f64>, a: Vec<f64>) -> Result<Self, LimitError> {
        if d == 0 || q == 0 || alpha.len() != d * q || beta.len() != d * d || a.len() != d {
            return Err(LimitError::BadInput("shape mismatch".into()));
        }
        if !(finite(&alpha) && finite(&beta) && finite(&a)) {
            return Err(LimitError::BadInput("entries must be finite".into()));
        }
        Ok(Self { d, q, alpha, beta, gamma: Vec::new(), a })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn alpha_rank(&self) -> usize {
        rank_of(self.d, self.q, &self.alpha, DEFAULT_RANK_TOL)
    }

    fn has_integrals(&self) -> bool {
        !self.gamma.is_empty()
    }
}

/// One realization of the `d` blocks at a single frequency.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiDraw {
    pub kappa: u8,
    pub d: usize,
    /// Block `i` occupies `psi[2d·i .. 2d·(i+1)]`.
    pub psi: Vec<f64>,
}

impl PsiDraw {
    pub fn block(&self, i: usize) -> &[f64] {
        &self.psi[2 * self.d * i..2 * self.d * (i + 1)]
    }
}

/// Per-unit-interval Brownian data of one draw.
struct UnitPath {
    /// `dw[j * q + m]`: increment of `W^m` over `[j, j+1]`.
    dw: Vec<f64>,
    /// `dw_prime[j * d + m]`.
    dw_prime: Vec<f64>,
    /// `ito[(j * q + k) * q + m] = ∫_j^{j+1} (W^k_s - W^k_j) dW^m_s`.
    ito: Vec<f64>,
}

/// Number of Euler substeps actually used: the request rounded up to a power
/// of two, so that paths for different resolutions are nested refinements
/// of each other (Lévy midpoint construction).
pub fn effective_substeps(requested: usize) -> usize {
    requested.next_power_of_two()
}

fn simulate_units(pt: &LimitPoint, n_sub: usize, main: &mut ChaCha8Rng, bridge: &mut ChaCha8Rng, fine: &mut Vec<f64>) -> UnitPath {
    let (d, q) = (pt.d, pt.q);
    let units = 2 * d;
    let dw: Vec<f64> = (0..units * q).map(|_| main.sample(StandardNormal)).collect();
    let dw_prime: Vec<f64> = (0..units * d).map(|_| main.sample(StandardNormal)).collect();
    let mut ito = Vec::new();
    if pt.has_integrals() {
        // fine[(j * q + k) * (n_sub + 1) + s] = W^k at j + s / n_sub, relative to W^k_j.
        let stride = n_sub + 1;
        fine.clear();
        fine.resize(units * q * stride, 0.0);
        for j in 0..units {
            for k in 0..q {
                fine[(j * q + k) * stride + n_sub] = dw[j * q + k];
            }
        }
        let mut span = n_sub;
        while span > 1 {
            let half = span / 2;
            let sd = ((half as f64) / n_sub as f64 / 2.0).sqrt();
            for j in 0..units {
                for k in 0..q {
                    let path = &mut fine[(j * q + k) * stride..(j * q + k + 1) * stride];
                    let mut left = 0;
                    while left < n_sub {
                        let z: f64 = bridge.sample(StandardNormal);
                        path[left + half] = 0.5 * (path[left] + path[left + span]) + sd * z;
                        left += span;
                    }
                }
            }
            span = half;
        }
        ito = vec![0.0; units * q * q];
        for j in 0..units {
            for k in 0..q {
                let wk = &fine[(j * q + k) * stride..(j * q + k + 1) * stride];
                for m in 0..q {
                    let wm = &fine[(j * q + m) * stride..(j * q + m + 1) * stride];
                    let mut acc = 0.0;
                    for s in 0..n_sub {
                        acc += wk[s] * (wm[s + 1] - wm[s]);
                    }
                    ito[(j * q + k) * q + m] = acc;
                }
            }
        }
    }
    UnitPath { dw, dw_prime, ito }
}

fn assemble(pt: &LimitPoint, units: &UnitPath) -> (PsiDraw, PsiDraw) {
    let (d, q) = (pt.d, pt.q);
    let mut one = vec![0.0; 2 * d * d];
    let mut two = vec![0.0; 2 * d * d];
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let mut inc = vec![0.0; q];
    let mut inc_prime = vec![0.0; d];
    let mut area = vec![0.0; q * q];
    for kappa in [1usize, 2] {
        let out = if kappa == 1 { &mut one } else { &mut two };
        for i in 0..d {
            // Unit intervals covered by block i at this frequency.
            let first = kappa * i;
            for m in 0..q {
                inc[m] = (0..kappa).map(|s| units.dw[(first + s) * q + m]).sum();
            }
            for m in 0..d {
                inc_prime[m] = (0..kappa).map(|s| units.dw_prime[(first + s) * d + m]).sum();
            }
            if pt.has_integrals() {
                for k in 0..q {
                    for m in 0..q {
                        let mut v = units.ito[(first * q + k) * q + m];
                        if kappa == 2 {
                            v += units.ito[((first + 1) * q + k) * q + m]
                                + units.dw[first * q + k] * units.dw[(first + 1) * q + m];
                        }
                        area[k * q + m] = v;
                    }
                }
            }
            let scale = if kappa == 1 { 1.0 } else { inv_sqrt2 };
            let block = &mut out[2 * d * i..2 * d * (i + 1)];
            for l in 0..d {
                let x: f64 = (0..q).map(|m| pt.alpha[l * q + m] * inc[m]).sum();
                let mut y = pt.a[l] + scale * (0..d).map(|m| pt.beta[l * d + m] * inc_prime[m]).sum::<f64>();
                if pt.has_integrals() {
                    let mut s = 0.0;
                    for m in 0..q {
                        for k in 0..q {
                            s += pt.gamma[(l * q + m) * q + k] * area[k * q + m];
                        }
                    }
                    y += s / kappa as f64;
                }
                block[l] = scale * x;
                block[d + l] = y;
            }
        }
    }
    (PsiDraw { kappa: 1, d, psi: one }, PsiDraw { kappa: 2, d, psi: two })
}

fn draw_indexed(pt: &LimitPoint, n_sub: usize, seed: u64, index: u64, fine: &mut Vec<f64>) -> (PsiDraw, PsiDraw) {
    let mut main = rng::derive(seed, rng::stream::LIMIT, index);
    let mut bridge = ChaCha8Rng::from_rng(&mut main);
    let units = simulate_units(pt, n_sub, &mut main, &mut bridge, fine);
    assemble(pt, &units)
}

/// One coupled realization `(Ψ(u, 1), Ψ(u, 2))`.
pub fn draw_psi(u: &LimitInput, seed: u64, n_substeps: usize) -> Result<(PsiDraw, PsiDraw), LimitError> {
    if n_substeps < MIN_SUBSTEPS {
        return Err(LimitError::TooFewSubsteps(n_substeps));
    }
    let pt = u.point()?;
    Ok(draw_indexed(&pt, effective_substeps(n_substeps), seed, 0, &mut Vec::new()))
}

/// `F̄_r`: `γ_r(mat(x_1..x_d), mat(y_1..y_d))²`.
pub fn fbar_r(r: usize, draw: &PsiDraw) -> Result<f64, LimitError> {
    let d = draw.d;
    if r > d {
        return Err(LimitError::RankOutOfRange { r, d });
    }
    let xs: Vec<&[f64]> = (0..d).map(|i| &draw.block(i)[..d]).collect();
    let ys: Vec<&[f64]> = (0..d).map(|i| &draw.block(i)[d..]).collect();
    let x = SquareMatrix::from_columns(&xs).map_err(|e| LimitError::BadInput(e.to_string()))?;
    let y = SquareMatrix::from_columns(&ys).map_err(|e| LimitError::BadInput(e.to_string()))?;
    let g = gamma_r(r, &x, &y).map_err(|e| LimitError::BadInput(e.to_string()))?;
    Ok(g * g)
}

/// Monte Carlo moments of `F̄_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaEstimate {
    pub r: usize,
    /// `Γ_r = E F̄_r(u, 1)`.
    pub gamma_r: f64,
    /// `Γ'_r = E F̄_r(u, 1)² - Γ_r²`.
    pub gamma_r_prime: f64,
    /// `Γ''_r = E F̄_r(u, 1) F̄_r(u, 2) - Γ_r²`.
    pub gamma_r_dprime: f64,
    pub se: GammaStdErrors,
    /// Sample mean of `F̄_r(u, 2)`.
    pub mean_kappa2: f64,
    pub n_samples: usize,
    pub n_substeps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaStdErrors {
    pub gamma_r: f64,
    pub gamma_r_prime: f64,
    pub gamma_r_dprime: f64,
    /// Standard error of `Γ'_r - Γ''_r`.
    pub prime_minus_dprime: f64,
}

impl GammaEstimate {
    fn zero(r: usize, n_samples: usize, n_substeps: usize) -> Self {
        let se = GammaStdErrors { gamma_r: 0.0, gamma_r_prime: 0.0, gamma_r_dprime: 0.0, prime_minus_dprime: 0.0 };
        Self { r, gamma_r: 0.0, gamma_r_prime: 0.0, gamma_r_dprime: 0.0, se, mean_kappa2: 0.0, n_samples, n_substeps }
    }
}

/// Pairs `(F̄_r(u, 1), F̄_r(u, 2))` for draws `0..n_samples`, in draw order.
pub fn sample_fbar(
    pt: &LimitPoint,
    r: usize,
    n_samples: usize,
    n_substeps: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>, LimitError> {
    if n_substeps < MIN_SUBSTEPS {
        return Err(LimitError::TooFewSubsteps(n_substeps));
    }
    if r > pt.d {
        return Err(LimitError::RankOutOfRange { r, d: pt.d });
    }
    let n_sub = effective_substeps(n_substeps);
    (0..n_samples as u64)
        .into_par_iter()
        .map_init(Vec::new, |fine, i| {
            let (one, two) = draw_indexed(pt, n_sub, seed, i, fine);
            Ok((fbar_r(r, &one)?, fbar_r(r, &two)?))
        })
        .collect()
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone, n: f64) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.max(0.0).sqrt())
}

/// Estimates `Γ_r`, `Γ'_r`, `Γ''_r` with delta-method standard errors.
/// When `rank(α) < r` every draw vanishes and zeros are returned directly.
pub fn estimate_gamma_at(
    pt: &LimitPoint,
    r: usize,
    n_samples: usize,
    n_substeps: usize,
    seed: u64,
) -> Result<GammaEstimate, LimitError> {
    if n_samples < MIN_SAMPLES {
        return Err(LimitError::TooFewSamples(n_samples));
    }
    if n_substeps < MIN_SUBSTEPS {
        return Err(LimitError::TooFewSubsteps(n_substeps));
    }
    if r > pt.d {
        return Err(LimitError::RankOutOfRange { r, d: pt.d });
    }
    let n_eff = effective_substeps(n_substeps);
    if pt.alpha_rank() < r {
        return Ok(GammaEstimate::zero(r, n_samples, n_eff));
    }
    let pairs = sample_fbar(pt, r, n_samples, n_substeps, seed)?;
    let n = n_samples as f64;
    let (g, se_g) = mean_sd(pairs.iter().map(|p| p.0), n);
    let (m11, _) = mean_sd(pairs.iter().map(|p| p.0 * p.0), n);
    let (m12, _) = mean_sd(pairs.iter().map(|p| p.0 * p.1), n);
    let (m2, _) = mean_sd(pairs.iter().map(|p| p.1), n);
    let (_, sd_prime) = mean_sd(pairs.iter().map(|p| p.0 * p.0 - 2.0 * g * p.0), n);
    let (_, sd_dprime) = mean_sd(pairs.iter().map(|p| p.0 * p.1 - 2.0 * g * p.0), n);
    let (_, sd_diff) = mean_sd(pairs.iter().map(|p| p.0 * p.0 - p.0 * p.1), n);
    let root = n.sqrt();
    Ok(GammaEstimate {
        r,
        gamma_r: g,
        gamma_r_prime: m11 - g * g,
        gamma_r_dprime: m12 - g * g,
        se: GammaStdErrors {
            gamma_r: se_g / root,
            gamma_r_prime: sd_prime / root,
            gamma_r_dprime: sd_dprime / root,
            prime_minus_dprime: sd_diff / root,
        },
        mean_kappa2: m2,
        n_samples,
        n_substeps: n_eff,
    })
}

/// [`estimate_gamma_at`] for a serialized input.
pub fn estimate_gamma(
    u: &LimitInput,
    r: usize,
    n_samples: usize,
    n_substeps: usize,
    seed: u64,
) -> Result<GammaEstimate, LimitError> {
    estimate_gamma_at(&u.point()?, r, n_samples, n_substeps, seed)
}

/// Monte Carlo settings for [`integrated_limits`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McParams {
    pub n_samples: usize,
    pub n_substeps: usize,
    pub seed: u64,
}

impl Default for McParams {
    fn default() -> Self {
        Self { n_samples: DEFAULT_SAMPLES, n_substeps: DEFAULT_SUBSTEPS, seed: 0 }
    }
}

/// Time integrals of the Γ quantities along a model with non-random
/// coefficients, evaluated with the midpoint rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratedLimits {
    pub r: usize,
    pub t_max: f64,
    /// `S(r)_T = ∫ Γ_r ds`.
    pub s: f64,
    /// `2d ∫ Γ'_r ds` (the same for `κκ' = 11` and `22`).
    pub v11: f64,
    pub v22: f64,
    /// `2d ∫ Γ''_r ds`.
    pub v12: f64,
    /// `∫ (Γ'_r + Γ_r²) ds`.
    pub theta_same: f64,
    /// `∫ (Γ''_r + Γ_r²) ds`.
    pub theta_cross: f64,
    /// Limit variance of the rank estimator.
    pub v_rank: f64,
    /// Limit variance of the constant-rank statistic for power `p`.
    pub vbar: f64,
    pub p: f64,
    pub grid: usize,
}

/// Integrals of the Γ quantities for `u_s = (σ_s, θ, 0, b_s)` over `[0, T]`.
/// All grid points share the same random numbers; identical `u_s` values
/// are estimated once.
pub fn integrated_limits(
    model: &ModelSpec,
    theta: &SquareMatrix,
    r: usize,
    t_max: f64,
    grid: usize,
    mc: &McParams,
    p: f64,
) -> Result<IntegratedLimits, LimitError> {
    if !model.has_deterministic_coefficients() {
        return Err(LimitError::Unsupported(model.scenario.clone()));
    }
    let (d, q) = (model.d, model.q);
    if theta.dim() != d {
        return Err(LimitError::BadInput(format!("theta must be {d} x {d}")));
    }
    if grid == 0 || !(t_max > 0.0) {
        return Err(LimitError::BadInput("grid and horizon must be positive".into()));
    }
    let h = t_max / grid as f64;
    let mut cache: Vec<(LimitPoint, GammaEstimate)> = Vec::new();
    let mut values = Vec::with_capacity(grid);
    for k in 0..grid {
        let t = (k as f64 + 0.5) * h;
        let sigma = model.vol.value_at(t, d * q).expect("deterministic volatility");
        let b = model.drift.value_at(t, d).expect("deterministic drift");
        let pt = LimitPoint::new(d, q, sigma, theta.entries().to_vec(), b)?;
        let est = match cache.iter().find(|(c, _)| *c == pt) {
            Some((_, e)) => e.clone(),
            None => {
                let e = estimate_gamma_at(&pt, r, mc.n_samples, mc.n_substeps, mc.seed)?;
                cache.push((pt, e.clone()));
                e
            }
        };
        values.push(est);
    }
    let two_d = 2.0 * d as f64;
    let s: f64 = values.iter().map(|e| e.gamma_r * h).sum();
    let v11 = two_d * values.iter().map(|e| e.gamma_r_prime * h).sum::<f64>();
    let v12 = two_d * values.iter().map(|e| e.gamma_r_dprime * h).sum::<f64>();
    let theta_same = values.iter().map(|e| (e.gamma_r_prime + e.gamma_r * e.gamma_r) * h).sum();
    let theta_cross = values.iter().map(|e| (e.gamma_r_dprime + e.gamma_r * e.gamma_r) * h).sum();
    let ln2 = std::f64::consts::LN_2;
    let (v_rank, vbar) = if s > 0.0 {
        let v_rank = 2.0 * (v11 - v12) / (s * ln2).powi(2);
        let factor = (p * (r as f64).powf(p - 1.0) / ln2).powi(2);
        let integral: f64 = values
            .iter()
            .map(|e| {
                let w = 1.0 / e.gamma_r - t_max / s;
                w * w * 2.0 * two_d * (e.gamma_r_prime - e.gamma_r_dprime) * h
            })
            .sum();
        (v_rank, factor * integral)
    } else {
        (0.0, 0.0)
    };
    Ok(IntegratedLimits { r, t_max, s, v11, v22: v11, v12, theta_same, theta_cross, v_rank, vbar, p, grid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input_1d(alpha: f64, beta: f64, gamma: f64, a: f64) -> LimitInput {
        LimitInput { alpha: vec![vec![alpha]], beta: vec![vec![beta]], gamma: Some(vec![vec![vec![gamma]]]), a: Some(vec![a]) }
    }

    #[test]
    fn constant_term_only() {
        let u = LimitInput {
            alpha: vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            beta: vec![vec![0.0; 2], vec![0.0; 2]],
            gamma: None,
            a: Some(vec![7.0, 7.0]),
        };
        let (one, two) = draw_psi(&u, 1, 128).unwrap();
        for draw in [&one, &two] {
            for i in 0..2 {
                assert_eq!(&draw.block(i)[2..], &[7.0, 7.0]);
                assert_eq!(&draw.block(i)[..2], &[0.0, 0.0]);
            }
        }
    }

    #[test]
    fn raw_prime_increments_have_unit_variance() {
        let pt = input_1d(0.0, 1.0, 0.0, 0.0).point().unwrap();
        let n = 20_000;
        let mut sum2 = 0.0;
        for i in 0..n {
            let (one, _) = draw_indexed(&pt, 128, 3, i, &mut Vec::new());
            sum2 += one.psi[1] * one.psi[1];
        }
        let var = sum2 / n as f64;
        // sd of the sample second moment of N(0,1) is sqrt(2/n).
        assert!((var - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "{var}");
    }

    #[test]
    fn ito_integral_second_moment() {
        // (Ψ^2_1)² = (∫_0^1 W dW)², mean 1/2.
        let pt = input_1d(0.0, 0.0, 1.0, 0.0).point().unwrap();
        let n = 20_000u64;
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let (one, _) = draw_indexed(&pt, 256, 5, i, &mut Vec::new());
                one.psi[1] * one.psi[1]
            })
            .collect();
        let (m, sd) = mean_sd(vals.iter().copied(), n as f64);
        assert!((m - 0.5).abs() < 4.0 * sd / (n as f64).sqrt(), "{m}");
    }

    #[test]
    fn closed_forms_1d() {
        let est = estimate_gamma(&input_1d(2.0, 0.7, 0.4, 0.3), 1, 20_000, 128, 11).unwrap();
        assert!((est.gamma_r - 4.0).abs() < 3.0 * est.se.gamma_r, "{est:?}");
        let est = estimate_gamma(&input_1d(0.5, 0.7, 0.8, 0.3), 0, 20_000, 256, 12).unwrap();
        let target = 0.09 + 0.49 + 0.64 / 2.0;
        assert!((est.gamma_r - target).abs() < 3.0 * est.se.gamma_r, "{est:?}");
    }

    #[test]
    fn degenerate_alpha_is_zero() {
        let u = input_1d(0.0, 1.0, 0.0, 1.0);
        let est = estimate_gamma(&u, 1, 200, 128, 1).unwrap();
        assert_eq!((est.gamma_r, est.gamma_r_prime, est.gamma_r_dprime), (0.0, 0.0, 0.0));
        assert_eq!(est.se.gamma_r, 0.0);
        let (one, two) = draw_psi(&u, 4, 128).unwrap();
        assert_eq!(fbar_r(1, &one).unwrap(), 0.0);
        assert_eq!(fbar_r(1, &two).unwrap(), 0.0);
    }

    #[test]
    fn fbar_extremes() {
        let u = LimitInput {
            alpha: vec![vec![1.0, 0.3], vec![0.2, 1.0]],
            beta: vec![vec![1.0, 0.0], vec![0.5, 1.0]],
            gamma: None,
            a: Some(vec![0.1, -0.2]),
        };
        let (one, _) = draw_psi(&u, 9, 128).unwrap();
        let b0 = one.block(0);
        let b1 = one.block(1);
        let det_x = b0[0] * b1[1] - b1[0] * b0[1];
        let det_y = b0[2] * b1[3] - b1[2] * b0[3];
        assert!((fbar_r(2, &one).unwrap() - det_x * det_x).abs() < 1e-12);
        assert!((fbar_r(0, &one).unwrap() - det_y * det_y).abs() < 1e-12);
        assert!(fbar_r(3, &one).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        let u = input_1d(1.0, 1.0, 0.0, 0.0);
        assert_eq!(draw_psi(&u, 1, 99), Err(LimitError::TooFewSubsteps(99)));
        assert_eq!(estimate_gamma(&u, 1, 99, 128, 1), Err(LimitError::TooFewSamples(99)));
        let bad = LimitInput { alpha: vec![vec![1.0]], beta: vec![vec![1.0, 2.0]], gamma: None, a: None };
        assert!(matches!(bad.point(), Err(LimitError::BadInput(_))));
    }

    #[test]
    fn kappa_two_integral_splits() {
        // With a = 0, α = 0, β = 0 and γ = 1 (d = q = 1), the κ = 2 block is
        // half the Itô integral over [0, 2], which the helper assembles from
        // the two unit integrals plus the cross term.
        let pt = input_1d(0.0, 0.0, 1.0, 0.0).point().unwrap();
        let mut main = rng::derive(1, rng::stream::LIMIT, 0);
        let mut bridge = ChaCha8Rng::from_rng(&mut main);
        let units = simulate_units(&pt, 256, &mut main, &mut bridge, &mut Vec::new());
        let (_, two) = assemble(&pt, &units);
        let w1 = units.dw[0];
        let w2 = units.dw[1];
        let expect = 0.5 * (units.ito[0] + units.ito[1] + w1 * w2);
        assert!((two.psi[1] - expect).abs() < 1e-15);
        // Each unit integral is close to (ΔW² - 1) / 2 on a fine grid.
        assert!((units.ito[0] - 0.5 * (w1 * w1 - 1.0)).abs() < 0.5);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let pt = input_1d(1.0, 1.0, 0.5, 0.0).point().unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_gamma_at(&pt, 1, 300, 128, 8).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
