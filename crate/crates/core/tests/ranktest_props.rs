use proptest::prelude::*;

use volrank::detalg::SquareMatrix;
use volrank::itosim::{simulate, PathSample, Scenario, SimConfig};
use volrank::ranktest::{
    const_rank_statistics, default_kn, perturb_and_block, report_from_blocks, spot_rank_series, PerturbationConfig,
};

fn path(scenario: &Scenario, n_obs: usize, seed: u64) -> PathSample {
    let delta = 1.0 / n_obs as f64;
    let model = scenario.build(1.0, delta / 2.0).unwrap();
    let mut cfg = SimConfig::new(1.0, delta, seed);
    cfg.refine = 2;
    simulate(&model, &cfg).unwrap()
}

fn transform(p: &PathSample, m: &SquareMatrix) -> PathSample {
    let d = p.d;
    let mut obs = Vec::with_capacity(p.obs.len());
    for i in 0..p.rows() {
        let row = p.row(i);
        obs.extend((0..d).map(|a| (0..d).map(|b| m.get(a, b) * row[b]).sum::<f64>()));
    }
    PathSample::new(p.delta_n, d, obs).unwrap()
}

fn rotation(angle: f64) -> SquareMatrix {
    SquareMatrix::from_rows(&[vec![angle.cos(), -angle.sin()], vec![angle.sin(), angle.cos()]]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn orthogonal_change_keeps_every_f_value(angle in 0.0f64..std::f64::consts::TAU, t01 in -0.5f64..0.5, seed in 0u64..1000) {
        let p = path(&Scenario::SdeCase { d: 2, q: 2, r: 1 }, 400, seed);
        let theta = SquareMatrix::from_rows(&[vec![1.0, t01], vec![0.2, 0.9]]).unwrap();
        let q = rotation(angle);
        let base = perturb_and_block(&p, &PerturbationConfig::new(theta.clone(), seed).unwrap()).unwrap();
        let moved = perturb_and_block(&transform(&p, &q), &PerturbationConfig::new(q.matmul(&theta), seed).unwrap()).unwrap();
        for (a, b) in base.f1.iter().chain(&base.f2).zip(moved.f1.iter().chain(&moved.f2)) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn joint_scaling_scales_f_and_keeps_r_hat(c in 0.1f64..10.0, seed in 0u64..1000) {
        let p = path(&Scenario::ConstantRank { d: 2, q: 2, r: 1, vol_amplitude: 0.3 }, 400, seed);
        let theta = SquareMatrix::identity(2);
        let base = perturb_and_block(&p, &PerturbationConfig::new(theta.clone(), seed).unwrap()).unwrap();
        let scaled = perturb_and_block(
            &transform(&p, &SquareMatrix::identity(2).scale(c)),
            &PerturbationConfig::new(theta.scale(c), seed).unwrap(),
        )
        .unwrap();
        let factor = c.powi(4);
        for (a, b) in base.f1.iter().zip(&scaled.f1) {
            prop_assert!((b - factor * a).abs() <= 1e-10 * b.abs().max(1e-300));
        }
        let r0 = report_from_blocks(&base, 1.0, &[], 0.05).unwrap().r_hat;
        let r1 = report_from_blocks(&scaled, 1.0, &[], 0.05).unwrap().r_hat;
        prop_assert!((r0 - r1).abs() <= 1e-9);
    }
}

#[test]
fn spot_median_tracks_constant_rank() {
    let n_obs = 20_000;
    for r in [1, 2] {
        let p = path(&Scenario::ConstantRank { d: 2, q: 2, r, vol_amplitude: 0.0 }, n_obs, 40 + r as u64);
        let blocks = perturb_and_block(&p, &PerturbationConfig::identity(2, 41)).unwrap();
        let k_n = default_kn(p.delta_n, 2);
        assert_eq!(k_n, 2760);
        let spot = spot_rank_series(&blocks, k_n).unwrap();
        let median = spot.median().unwrap();
        let global = report_from_blocks(&blocks, 1.0, &[], 0.05).unwrap().r_hat;
        assert!((median - r as f64).abs() < 0.25, "r = {r}: median {median}");
        assert!((median - global).abs() < 0.25, "r = {r}: median {median}, global {global}");
    }
}

/// Mean of `B` over `n_paths` paths with windows of 500 blocks.
fn mean_b(scenario: &Scenario, p: f64, n_paths: u64) -> f64 {
    let total: f64 = (0..n_paths)
        .map(|s| {
            let path = path(scenario, 20_000, 900 + s);
            let blocks = perturb_and_block(&path, &PerturbationConfig::identity(scenario.dim(), 1900 + s)).unwrap();
            let rep = report_from_blocks(&blocks, 1.0, &[], 0.05).unwrap();
            let spot = spot_rank_series(&blocks, 500).unwrap();
            const_rank_statistics(&blocks, &spot, p, rep.r_hat, rep.s1, 1.0).unwrap().b_stat
        })
        .sum();
    total / n_paths as f64
}

#[test]
fn b_statistic_approaches_its_limit() {
    let up = Scenario::RankSwitch { d: 2, q: 2, r_before: 1, r_after: 2, switch_time: 0.5, ramp_width: None };
    let down = Scenario::RankSwitch { d: 2, q: 2, r_before: 2, r_after: 1, switch_time: 0.25, ramp_width: None };
    let constant = Scenario::ConstantRank { d: 2, q: 2, r: 2, vol_amplitude: 0.3 };
    // Limits ∫ r_s^p ds - T R^p with T = 1.
    for (scenario, p, limit) in
        [(&up, 1.0, -0.5), (&up, 2.0, -1.5), (&down, 1.0, -0.75), (&constant, 1.0, 0.0)]
    {
        let b = mean_b(scenario, p, 40);
        assert!((b - limit).abs() < 0.15, "{} p = {p}: mean B {b}, limit {limit}", scenario.name());
    }
}
