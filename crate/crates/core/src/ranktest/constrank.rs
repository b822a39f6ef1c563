//! Spot rank estimates on sliding windows of blocks and the test that the
//! rank stays constant over the observation horizon.

use serde::{Deserialize, Serialize};

use super::{PerturbedBlocks, RankTestError};
use crate::stats::z_one_sided;

/// `k_n = max(4d, ⌈Δ^{-4/5}⌉)`.
pub fn default_kn(delta_n: f64, d: usize) -> usize {
    let raw = delta_n.powf(-0.8);
    // Guard against values like 10000.000000000002 for Δ = 1e-5.
    let k = (raw * (1.0 - 1e-12)).ceil() as usize;
    k.max(4 * d)
}

/// `R̂_i = d - log2(Σ_{j=i}^{i+k-1} f2[j] / Σ_{j=i}^{i+k-1} f1[j])` for every
/// window start `i` with `i + k ≤ n_blocks`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotSeries {
    pub k_n: usize,
    /// `None` where a window sum vanishes.
    pub values: Vec<Option<f64>>,
    pub invalid: usize,
}

impl SpotSeries {
    pub fn valid(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().filter_map(|v| *v)
    }

    /// Median of the valid values.
    pub fn median(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.valid().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }
}

fn prefix(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for v in values {
        acc += v;
        out.push(acc);
    }
    out
}

fn check_window(blocks: &PerturbedBlocks, k_n: usize) -> Result<(), RankTestError> {
    if k_n < 4 * blocks.d {
        return Err(RankTestError::BadWindow { k_n, reason: format!("must be at least 4d = {}", 4 * blocks.d) });
    }
    if k_n > blocks.n_blocks() {
        return Err(RankTestError::BadWindow { k_n, reason: format!("exceeds the {} available blocks", blocks.n_blocks()) });
    }
    Ok(())
}

/// Sums over every window of `k_n` consecutive values. Prefix-sum
/// differences lose relative precision when a window is tiny compared to the
/// running total, so such windows are summed directly.
fn window_sums(values: &[f64], k_n: usize) -> Vec<f64> {
    let p = prefix(values);
    let n = values.len();
    (0..=n - k_n)
        .map(|i| {
            let fast = p[i + k_n] - p[i];
            if fast > 1e-8 * p[i + k_n] {
                fast
            } else {
                values[i..i + k_n].iter().sum()
            }
        })
        .collect()
}

pub fn spot_rank_series(blocks: &PerturbedBlocks, k_n: usize) -> Result<SpotSeries, RankTestError> {
    check_window(blocks, k_n)?;
    let d = blocks.d as f64;
    let s1 = window_sums(&blocks.f1, k_n);
    let s2 = window_sums(&blocks.f2, k_n);
    let mut invalid = 0;
    let values = s1
        .iter()
        .zip(&s2)
        .map(|(&a, &b)| {
            if a > 0.0 && b > 0.0 {
                Some(d - (b / a).log2())
            } else {
                invalid += 1;
                None
            }
        })
        .collect();
    Ok(SpotSeries { k_n, values, invalid })
}

/// Outcome of [`test_const_rank`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstRankDecision {
    pub alpha: f64,
    /// `true` rejects constancy of the rank.
    pub reject: bool,
    /// Rejection happens when `B` falls below this value.
    pub threshold: f64,
    pub note: String,
}

/// Statistics of the constant-rank test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstRankReport {
    pub d: usize,
    pub delta_n: f64,
    pub t_max: f64,
    pub k_n: usize,
    pub p: f64,
    pub r_hat: f64,
    pub spot: SpotSeries,
    /// `A(p)`: weighted sum of capped `|R̂_{i k_n}|^p` over disjoint windows.
    pub a_p: f64,
    /// Number of disjoint windows entering `A(p)`.
    pub windows_used: usize,
    /// Disjoint windows skipped because their spot value is undefined.
    pub windows_skipped: usize,
    /// `a(n, T) = w (⌊T / w⌋ - 1)` with `w = 2d k_n Δ`.
    pub a_n_t: f64,
    /// `B = A(p) - a(n, T) |R̂|^p`.
    pub b_stat: f64,
    pub vbar11: f64,
    pub vbar22: f64,
    pub vbar12: f64,
    /// Variance estimate of `B` (see [`const_rank_statistics`]).
    pub vbar: f64,
    /// Blocks left out of the variance sums because their window `S1`
    /// increment vanishes.
    pub vbar_skipped: usize,
    pub z_stat: f64,
    pub decision: Option<ConstRankDecision>,
}

/// Computes `A(p)`, `B`, the variance estimate and the standardized `Z`.
///
/// `vbar11/22/12` carry the prefactor `4d²Δ^{1+2d-2R̂}`. The combination
/// used for `vbar` is
/// `(p|R̂|^{p-1}/log 2)² · 4d²Δ Σ_i w_i² (f1[i] - 2^{R̂-d} f2[i])²`,
/// with `w_i = 2dk_nΔ / (S1 increment over window i) - T / S1_T`, which is
/// `Δ^{-2(d-R̂)}` times the usual combination of the three components and is
/// non-negative by construction.
pub fn const_rank_statistics(
    blocks: &PerturbedBlocks,
    spot: &SpotSeries,
    p: f64,
    r_hat: f64,
    s1: f64,
    t_max: f64,
) -> Result<ConstRankReport, RankTestError> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(RankTestError::Config(format!("p = {p} must be positive")));
    }
    if !(s1 > 0.0) {
        return Err(RankTestError::Degenerate(format!("S1 = {s1} must be positive")));
    }
    let k_n = spot.k_n;
    check_window(blocks, k_n)?;
    let d = blocks.d;
    let df = d as f64;
    let delta = blocks.delta_n;
    let n_blocks = blocks.blocks_until(t_max);
    let windows = n_blocks / k_n;
    if windows < 2 {
        return Err(RankTestError::BadWindow {
            k_n,
            reason: format!("{n_blocks} blocks give fewer than two disjoint windows"),
        });
    }
    let w = 2.0 * df * k_n as f64 * delta;
    let cap = (df + 1.0).powf(p);
    let mut a_sum = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for i in 0..windows - 1 {
        match spot.values.get(i * k_n).copied().flatten() {
            Some(v) => {
                a_sum += v.abs().powf(p).min(cap);
                used += 1;
            }
            None => skipped += 1,
        }
    }
    let a_p = w * a_sum;
    let a_n_t = w * (windows - 1) as f64;
    let b_stat = a_p - a_n_t * r_hat.abs().powf(p);

    let span = blocks.block_span();
    let ratio_weight = 2f64.powf(r_hat - df);
    let prefactor = 4.0 * df * df * delta;
    let printed = prefactor * delta.powf(2.0 * df - 2.0 * r_hat);
    let global = t_max / s1;
    let (mut s11, mut s22, mut s12, mut square) = (0.0, 0.0, 0.0, 0.0);
    let mut vbar_skipped = 0;
    let window_s1 = window_sums(&blocks.f1[..n_blocks], k_n);
    for i in 0..n_blocks.saturating_sub(k_n) {
        let inc = span * window_s1[i];
        if !(inc > 0.0) {
            vbar_skipped += 1;
            continue;
        }
        let wi = w / inc - global;
        let wi2 = wi * wi;
        let (a, b) = (blocks.f1[i], blocks.f2[i]);
        s11 += wi2 * a * a;
        s22 += wi2 * b * b;
        s12 += wi2 * a * b;
        square += wi2 * (a - ratio_weight * b).powi(2);
    }
    let factor = (p * r_hat.abs().powf(p - 1.0) / std::f64::consts::LN_2).powi(2);
    let vbar = factor * prefactor * square;
    let denom = (delta * vbar.min(1.0 / delta.sqrt())).sqrt();
    let z_stat = if b_stat == 0.0 { 0.0 } else { b_stat / denom };
    Ok(ConstRankReport {
        d,
        delta_n: delta,
        t_max,
        k_n,
        p,
        r_hat,
        spot: spot.clone(),
        a_p,
        windows_used: used,
        windows_skipped: skipped,
        a_n_t,
        b_stat,
        vbar11: printed * s11,
        vbar22: printed * s22,
        vbar12: printed * s12,
        vbar,
        vbar_skipped,
        z_stat,
        decision: None,
    })
}

/// Rejects constancy iff `B < -z'_α √(Δ min(V̄, Δ^{-1/2}))`.
pub fn test_const_rank(report: &ConstRankReport, alpha: f64) -> Result<ConstRankDecision, RankTestError> {
    let z = z_one_sided(alpha).map_err(|e| RankTestError::Config(e.to_string()))?;
    let delta = report.delta_n;
    let threshold = -z * (delta * report.vbar.min(1.0 / delta.sqrt())).sqrt();
    let note = if report.r_hat.round() < 1.0 {
        "null is a constant rank of at least 1; an estimated maximal rank of 0 calls for the maximal-rank test instead"
    } else {
        "null is a constant rank of at least 1"
    };
    Ok(ConstRankDecision { alpha, reject: report.b_stat < threshold, threshold, note: note.into() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_kn_cases() {
        assert_eq!(default_kn(1e-5, 2), 10_000);
        assert_eq!(default_kn(0.5, 2), 8);
        // 20000^0.8 = 2759.459...
        assert_eq!(default_kn(1.0 / 20_000.0, 2), 2760);
    }

    fn blocks(f1: Vec<f64>, f2: Vec<f64>) -> PerturbedBlocks {
        PerturbedBlocks::from_values(1, 0.01, f1, f2).unwrap()
    }

    #[test]
    fn spot_cases() {
        let b = blocks(vec![1.0; 10], vec![1.0; 10]);
        let s = spot_rank_series(&b, 4).unwrap();
        assert_eq!(s.values.len(), 7);
        assert!(s.valid().all(|v| v == 1.0));
        // f2 = 2^{d-r} f1 with d = 1, r = 0.
        let b = blocks(vec![0.5; 8], vec![1.0; 8]);
        assert!(spot_rank_series(&b, 4).unwrap().valid().all(|v| v == 0.0));
        assert!(spot_rank_series(&b, 3).is_err());
        assert!(spot_rank_series(&b, 9).is_err());
    }

    #[test]
    fn zero_windows_are_flagged() {
        let mut f1 = vec![1.0; 12];
        for v in &mut f1[4..8] {
            *v = 0.0;
        }
        let b = blocks(f1, vec![1.0; 12]);
        let s = spot_rank_series(&b, 4).unwrap();
        assert_eq!(s.invalid, 1);
        assert_eq!(s.values[4], None);
    }

    #[test]
    fn b_vanishes_when_all_spots_equal() {
        let b = blocks(vec![0.5; 40], vec![0.5; 40]);
        let t = 40.0 * b.block_span();
        let spot = spot_rank_series(&b, 4).unwrap();
        let (s1, _) = super::super::s_statistics(&b, t);
        let rep = const_rank_statistics(&b, &spot, 1.0, 1.0, s1, t).unwrap();
        assert_eq!(rep.windows_used, 9);
        assert!((rep.a_n_t - 9.0 * 4.0 * 2.0 * 0.01).abs() < 1e-15);
        assert!(rep.b_stat.abs() < 1e-15);
        assert_eq!(rep.vbar, 0.0);
        assert!(!test_const_rank(&rep, 0.05).unwrap().reject);
    }

    #[test]
    fn capped_summand() {
        // d = 2, p = 1: a spot value of 10 contributes 3.
        let d = 2;
        let n = 64;
        let b = PerturbedBlocks::from_values(d, 0.01, vec![1.0; n], vec![1.0; n]).unwrap();
        let mut spot = spot_rank_series(&b, 8).unwrap();
        for v in spot.values.iter_mut() {
            *v = Some(10.0);
        }
        let t = n as f64 * b.block_span();
        let rep = const_rank_statistics(&b, &spot, 1.0, 0.0, 1.0, t).unwrap();
        let w = 2.0 * 2.0 * 8.0 * 0.01;
        assert!((rep.a_p - w * 7.0 * 3.0).abs() < 1e-12);
    }

    #[test]
    fn rejection_arithmetic() {
        let b = PerturbedBlocks::from_values(2, 1e-4, vec![1.0; 64], vec![1.0; 64]).unwrap();
        let spot = spot_rank_series(&b, 8).unwrap();
        let mut rep = const_rank_statistics(&b, &spot, 1.0, 2.0, 1.0, 64.0 * b.block_span()).unwrap();
        rep.b_stat = -1.0;
        rep.vbar = 1e-6;
        assert!(test_const_rank(&rep, 0.05).unwrap().reject);
        rep.b_stat = 0.0;
        assert!(!test_const_rank(&rep, 0.05).unwrap().reject);
    }

    #[test]
    fn needs_two_windows() {
        let b = blocks(vec![1.0; 10], vec![1.0; 10]);
        let spot = spot_rank_series(&b, 6).unwrap();
        assert!(matches!(
            const_rank_statistics(&b, &spot, 1.0, 1.0, 1.0, 10.0 * b.block_span()),
            Err(RankTestError::BadWindow { .. })
        ));
    }
}
