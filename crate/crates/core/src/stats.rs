//! Standard normal distribution helpers and a Kolmogorov–Smirnov check.

use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("probability {0} is outside (0, 1)")]
    BadProbability(f64),
    #[error("at least {min} finite samples are needed, got {got}")]
    TooFewSamples { min: usize, got: usize },
}

/// Minimum sample size accepted by [`ks_normality`].
pub const KS_MIN_SAMPLES: usize = 20;

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

// Wichura's AS241 (PPND16), lowest-order coefficient first.
#[allow(clippy::inconsistent_digit_grouping, clippy::excessive_precision)]
mod as241 {
    pub(super) const CENTRAL_NUM: [f64; 8] = [
    3.387_132_872_796_366_5,
    133.141_667_891_784_38,
    1971.590_950_306_551_3,
    13731.693_765_509_461,
    45921.953_931_549_87,
    67265.770_927_008_7,
    33430.575_583_588_128,
    2509.080_928_730_122_7,
];
    pub(super) const CENTRAL_DEN: [f64; 8] = [
    1.0,
    42.313_330_701_600_91,
    687.187_007_492_057_9,
    5394.196_021_424_751,
    21213.794_301_586_597,
    39307.895_800_092_71,
    28729.085_735_721_943,
    5226.495_278_852_545,
];
    pub(super) const NEAR_NUM: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_546,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    0.241_780_725_177_450_6,
    0.022_723_844_989_269_184,
    7.745_450_142_783_414e-4,
];
    pub(super) const NEAR_DEN: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    0.689_767_334_985_1,
    0.148_103_976_427_480_08,
    0.015_198_666_563_616_457,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
    pub(super) const TAIL_NUM: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    0.296_560_571_828_504_9,
    0.026_532_189_526_576_124,
    0.001_242_660_947_388_078_4,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
    pub(super) const TAIL_DEN: [f64; 8] = [
    1.0,
    0.599_832_206_555_888,
    0.136_929_880_922_735_8,
    0.014_875_361_290_850_615,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];
}
use as241::*;

/// Standard normal quantile (Wichura's AS241, about 1e-16 relative accuracy).
pub fn normal_quantile(p: f64) -> Result<f64, StatsError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(StatsError::BadProbability(p));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * horner(&CENTRAL_NUM, r) / horner(&CENTRAL_DEN, r));
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        horner(&NEAR_NUM, r) / horner(&NEAR_DEN, r)
    } else {
        let r = r - 5.0;
        horner(&TAIL_NUM, r) / horner(&TAIL_DEN, r)
    };
    Ok(if q < 0.0 { -val } else { val })
}

/// `z_α = Φ⁻¹(1 − α/2)`.
pub fn z_two_sided(alpha: f64) -> Result<f64, StatsError> {
    normal_quantile(1.0 - alpha / 2.0)
}

/// `z'_α = Φ⁻¹(1 − α)`.
pub fn z_one_sided(alpha: f64) -> Result<f64, StatsError> {
    normal_quantile(1.0 - alpha)
}

/// Result of a one-sample Kolmogorov–Smirnov comparison with `N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KsResult {
    pub n: usize,
    pub distance: f64,
    /// Asymptotic p-value from the Kolmogorov distribution.
    pub p_value: f64,
}

/// KS distance to the standard normal, ignoring non-finite samples.
pub fn ks_normality(samples: &[f64]) -> Result<KsResult, StatsError> {
    let mut xs: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    if xs.len() < KS_MIN_SAMPLES {
        return Err(StatsError::TooFewSamples { min: KS_MIN_SAMPLES, got: xs.len() });
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut distance = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = normal_cdf(x);
        distance = distance.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(KsResult { n: xs.len(), distance, p_value: kolmogorov_survival(distance * n.sqrt()) })
}

/// Two-sample KS distance between the empirical distributions of `a` and
/// `b`; `n` in the result is the effective size `n_a n_b / (n_a + n_b)`,
/// rounded down.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    let sorted = |s: &[f64]| -> Result<Vec<f64>, StatsError> {
        let mut v: Vec<f64> = s.iter().copied().filter(|v| v.is_finite()).collect();
        if v.len() < KS_MIN_SAMPLES {
            return Err(StatsError::TooFewSamples { min: KS_MIN_SAMPLES, got: v.len() });
        }
        v.sort_by(f64::total_cmp);
        Ok(v)
    };
    let (xs, ys) = (sorted(a)?, sorted(b)?);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut distance = 0.0f64;
    while i < xs.len() && j < ys.len() {
        let x = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        distance = distance.max((i as f64 / na - j as f64 / nb).abs());
    }
    let n_eff = na * nb / (na + nb);
    Ok(KsResult { n: n_eff as usize, distance, p_value: kolmogorov_survival(distance * n_eff.sqrt()) })
}

/// `P(K > x)` for the Kolmogorov distribution.
fn kolmogorov_survival(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // Small-x form converges faster there.
        let t = -std::f64::consts::PI * std::f64::consts::PI / (8.0 * x * x);
        let mut s = 0.0;
        for k in 1..=20 {
            let j = (2 * k - 1) as f64;
            s += (t * j * j).exp();
        }
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * s).clamp(0.0, 1.0);
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}
