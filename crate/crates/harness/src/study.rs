//! Monte Carlo studies: simulate many paths, run both tests on each and
//! aggregate rejection frequencies.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use volrank::itosim::{simulate, ModelSpec, SimConfig};
use volrank::ranktest::{
    const_rank_statistics, perturb_and_block, report_from_blocks, spot_rank_series, test_const_rank, test_max_rank,
    PerturbationConfig, PerturbedBlocks, RankTestReport, SpotSeries,
};
use volrank::rng::{derive_seed, mix64};
use volrank::stats::{ks_normality, KsResult};

use crate::config::StudyConfig;
use crate::error::HarnessError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const PERTURBATION_FAMILY: u64 = 0x7065_7274_7572_6221;

/// Seeds of the simulated path and of `W'` for path `index`.
pub fn path_seeds(master: u64, salt: u64, index: u64) -> (u64, u64) {
    let family = mix64(master ^ PERTURBATION_FAMILY) ^ mix64(salt.wrapping_add(1));
    (derive_seed(master, index), derive_seed(family, index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
    pub version: String,
    pub config: StudyConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstRankOutcome {
    pub alpha: f64,
    pub reject: bool,
    pub threshold: f64,
}

/// Per-path constant-rank statistics without the spot series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstRankSummary {
    pub k_n: usize,
    pub a_p: f64,
    pub a_n_t: f64,
    pub b_stat: f64,
    pub vbar: f64,
    pub z_stat: f64,
    pub spot_median: Option<f64>,
    pub spot_invalid: usize,
    pub windows_used: usize,
    pub decisions: Vec<ConstRankOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOutcome {
    pub index: usize,
    pub path_seed: u64,
    pub perturbation_seed: u64,
    pub rank: Option<RankTestReport>,
    pub const_rank: Option<ConstRankSummary>,
    /// Errors are recorded here and the study continues.
    pub errors: Vec<String>,
}

/// One line of the level/power table. `hypothesis` is `"const_rank"` for
/// the constant-rank test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRow {
    pub hypothesis: String,
    pub alpha: f64,
    pub n_obs: usize,
    pub reject_freq: f64,
    pub se: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { n: values.len(), mean, sd })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_paths: usize,
    pub n_failed: usize,
    /// Maximal rank of the simulated volatility on `[0, T]`.
    pub true_rank: usize,
    pub rejections: Vec<RejectionRow>,
    pub r_hat: Option<Summary>,
    /// Share of paths whose rounded estimate equals `true_rank`.
    pub rounded_hit_rate: Option<f64>,
    /// `(R̂ - true_rank) / √(Δ V)` over paths with `V > 0`.
    pub standardized: Option<Summary>,
    pub normality: Option<KsResult>,
    pub b_stat: Option<Summary>,
    pub z_stat: Option<Summary>,
    /// Per-path medians of the spot estimates.
    pub spot_median: Option<Summary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotPoint {
    pub i: usize,
    pub t: f64,
    pub r_hat_spot: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub provenance: Provenance,
    pub aggregate: Aggregate,
    pub paths: Vec<PathOutcome>,
    /// Spot series of the first path.
    pub spot_series: Vec<SpotPoint>,
}

fn spot_points(blocks: &PerturbedBlocks, spot: &SpotSeries) -> Vec<SpotPoint> {
    let span = blocks.block_span();
    spot.values.iter().enumerate().map(|(i, v)| SpotPoint { i, t: i as f64 * span, r_hat_spot: *v }).collect()
}

fn rank_report(cfg: &StudyConfig, blocks: &PerturbedBlocks) -> Result<RankTestReport, HarnessError> {
    let mut report = report_from_blocks(blocks, cfg.t_max, &[], cfg.alphas[0])?;
    for &alpha in &cfg.alphas {
        for &h in &cfg.hypotheses {
            report.decisions.push(test_max_rank(report.r_hat, report.v_feasible, blocks.delta_n, blocks.d, h, alpha)?);
        }
    }
    Ok(report)
}

fn const_rank_summary(
    cfg: &StudyConfig,
    blocks: &PerturbedBlocks,
    report: &RankTestReport,
    want_spot: bool,
) -> Result<(ConstRankSummary, Vec<SpotPoint>), HarnessError> {
    let spot = spot_rank_series(blocks, cfg.k_n())?;
    let stats = const_rank_statistics(blocks, &spot, cfg.p, report.r_hat, report.s1, cfg.t_max)?;
    let decisions = cfg
        .alphas
        .iter()
        .map(|&a| {
            test_const_rank(&stats, a).map(|d| ConstRankOutcome { alpha: a, reject: d.reject, threshold: d.threshold })
        })
        .collect::<Result<_, _>>()?;
    let points = if want_spot { spot_points(blocks, &spot) } else { Vec::new() };
    let summary = ConstRankSummary {
        k_n: stats.k_n,
        a_p: stats.a_p,
        a_n_t: stats.a_n_t,
        b_stat: stats.b_stat,
        vbar: stats.vbar,
        z_stat: stats.z_stat,
        spot_median: spot.median(),
        spot_invalid: spot.invalid,
        windows_used: stats.windows_used,
        decisions,
    };
    Ok((summary, points))
}

fn run_path(cfg: &StudyConfig, model: &ModelSpec, theta: &PerturbationConfig, index: usize) -> (PathOutcome, Vec<SpotPoint>) {
    let (path_seed, perturbation_seed) = path_seeds(cfg.master_seed, cfg.perturbation_salt, index as u64);
    let mut outcome =
        PathOutcome { index, path_seed, perturbation_seed, rank: None, const_rank: None, errors: Vec::new() };
    let mut spot = Vec::new();
    let mut sim = SimConfig::new(cfg.t_max, cfg.delta_n(), path_seed);
    sim.refine = cfg.refine;
    let blocks = simulate(model, &sim)
        .map_err(HarnessError::from)
        .and_then(|path| Ok(perturb_and_block(&path, &PerturbationConfig { seed: perturbation_seed, ..theta.clone() })?));
    let blocks = match blocks {
        Ok(b) => b,
        Err(e) => {
            outcome.errors.push(e.to_string());
            return (outcome, spot);
        }
    };
    match rank_report(cfg, &blocks) {
        Ok(report) => {
            if cfg.const_rank_test {
                match const_rank_summary(cfg, &blocks, &report, index == 0) {
                    Ok((summary, points)) => {
                        outcome.const_rank = Some(summary);
                        spot = points;
                    }
                    Err(e) => outcome.errors.push(format!("constant-rank test: {e}")),
                }
            }
            outcome.rank = Some(report);
        }
        Err(e) => outcome.errors.push(e.to_string()),
    }
    (outcome, spot)
}

fn rate_row(hypothesis: String, alpha: f64, n_obs: usize, hits: impl Iterator<Item = bool>) -> RejectionRow {
    let (mut n, mut k) = (0usize, 0usize);
    for hit in hits {
        n += 1;
        k += hit as usize;
    }
    let f = if n > 0 { k as f64 / n as f64 } else { 0.0 };
    let se = if n > 0 { (f * (1.0 - f) / n as f64).sqrt() } else { 0.0 };
    RejectionRow { hypothesis, alpha, n_obs, reject_freq: f, se, n }
}

/// Aggregates per-path outcomes. Depends on nothing but its arguments, so
/// persisted outcomes reproduce the aggregate exactly.
pub fn aggregate(cfg: &StudyConfig, true_rank: usize, paths: &[PathOutcome]) -> Aggregate {
    let ranks: Vec<&RankTestReport> = paths.iter().filter_map(|p| p.rank.as_ref()).collect();
    let consts: Vec<&ConstRankSummary> = paths.iter().filter_map(|p| p.const_rank.as_ref()).collect();
    let mut rejections = Vec::new();
    for &alpha in &cfg.alphas {
        for &h in &cfg.hypotheses {
            let hits = ranks.iter().map(|r| {
                r.decisions.iter().find(|d| d.hypothesis == h && d.alpha == alpha).is_some_and(|d| d.reject)
            });
            rejections.push(rate_row(h.to_string(), alpha, cfg.n_obs, hits));
        }
        if cfg.const_rank_test {
            let hits = consts.iter().map(|c| c.decisions.iter().find(|d| d.alpha == alpha).is_some_and(|d| d.reject));
            rejections.push(rate_row("const_rank".into(), alpha, cfg.n_obs, hits));
        }
    }
    let r_hats: Vec<f64> = ranks.iter().map(|r| r.r_hat).collect();
    let standardized: Vec<f64> = ranks
        .iter()
        .filter(|r| r.v_feasible > 0.0)
        .map(|r| (r.r_hat - true_rank as f64) / (r.delta_n * r.v_feasible).sqrt())
        .collect();
    let hits = ranks.iter().filter(|r| r.r_rounded == true_rank).count();
    let collect = |f: &dyn Fn(&ConstRankSummary) -> Option<f64>| -> Vec<f64> { consts.iter().filter_map(|c| f(c)).collect() };
    Aggregate {
        n_paths: paths.len(),
        n_failed: paths.iter().filter(|p| !p.errors.is_empty()).count(),
        true_rank,
        rejections,
        r_hat: Summary::of(&r_hats),
        rounded_hit_rate: (!ranks.is_empty()).then(|| hits as f64 / ranks.len() as f64),
        normality: ks_normality(&standardized).ok(),
        standardized: Summary::of(&standardized),
        b_stat: Summary::of(&collect(&|c| Some(c.b_stat))),
        z_stat: Summary::of(&collect(&|c| Some(c.z_stat))),
        spot_median: Summary::of(&collect(&|c| c.spot_median)),
    }
}

fn model_of(cfg: &StudyConfig) -> Result<ModelSpec, HarnessError> {
    Ok(cfg.scenario.build(cfg.t_max, cfg.delta_n() / cfg.refine as f64)?)
}

/// Runs the study on a pool of `threads` workers (`None` lets rayon
/// decide). The result does not depend on the number of workers.
pub fn run_study(cfg: &StudyConfig, threads: Option<usize>) -> Result<StudyResult, HarnessError> {
    cfg.validate()?;
    let model = model_of(cfg)?;
    let theta = PerturbationConfig::new(cfg.theta_matrix()?, 0)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let results: Vec<(PathOutcome, Vec<SpotPoint>)> =
        pool.install(|| (0..cfg.n_paths).into_par_iter().map(|i| run_path(cfg, &model, &theta, i)).collect());
    let mut spot_series = Vec::new();
    let mut paths = Vec::with_capacity(results.len());
    for (outcome, spot) in results {
        if outcome.index == 0 {
            spot_series = spot;
        }
        paths.push(outcome);
    }
    let true_rank = model.rank_profile.max_rank(cfg.t_max);
    Ok(StudyResult {
        provenance: Provenance {
            config_hash: cfg.hash(),
            master_seed: cfg.master_seed,
            version: VERSION.to_string(),
            config: cfg.clone(),
        },
        aggregate: aggregate(cfg, true_rank, &paths),
        paths,
        spot_series,
    })
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<(), HarnessError> {
    let file = dir.join(name);
    std::fs::write(&file, bytes).map_err(HarnessError::io(format!("writing {}", file.display())))
}

pub fn level_power_csv(result: &StudyResult) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["hypothesis", "alpha", "n_obs", "reject_freq", "se"])?;
    for row in &result.aggregate.rejections {
        w.write_record([
            row.hypothesis.clone(),
            row.alpha.to_string(),
            row.n_obs.to_string(),
            row.reject_freq.to_string(),
            row.se.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))
}

fn normality_csv(result: &StudyResult) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["ks", "p"])?;
    if let Some(ks) = result.aggregate.normality {
        w.write_record([ks.distance.to_string(), ks.p_value.to_string()])?;
    }
    w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))
}

pub fn spot_csv(points: &[SpotPoint]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["i", "t", "r_hat_spot"])?;
    for p in points {
        w.write_record([p.i.to_string(), p.t.to_string(), p.r_hat_spot.map(|v| v.to_string()).unwrap_or_default()])?;
    }
    w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))
}

fn paths_csv(result: &StudyResult) -> Result<Vec<u8>, HarnessError> {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "path_seed", "perturbation_seed", "r_hat", "v_feasible", "b_stat", "z_stat", "error"])?;
    for p in &result.paths {
        w.write_record([
            p.index.to_string(),
            p.path_seed.to_string(),
            p.perturbation_seed.to_string(),
            opt(p.rank.as_ref().map(|r| r.r_hat)),
            opt(p.rank.as_ref().map(|r| r.v_feasible)),
            opt(p.const_rank.as_ref().map(|c| c.b_stat)),
            opt(p.const_rank.as_ref().map(|c| c.z_stat)),
            p.errors.join("; "),
        ])?;
    }
    w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))
}

/// Output files written by [`write_outputs`].
pub const OUTPUT_FILES: [&str; 5] = ["study.json", "level_power.csv", "normality.csv", "spot.csv", "paths.csv"];

pub fn write_outputs(result: &StudyResult, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io(format!("creating {}", dir.display())))?;
    let mut json = serde_json::to_vec_pretty(result)?;
    json.push(b'\n');
    write_file(dir, OUTPUT_FILES[0], &json)?;
    write_file(dir, OUTPUT_FILES[1], &level_power_csv(result)?)?;
    write_file(dir, OUTPUT_FILES[2], &normality_csv(result)?)?;
    write_file(dir, OUTPUT_FILES[3], &spot_csv(&result.spot_series)?)?;
    write_file(dir, OUTPUT_FILES[4], &paths_csv(result)?)?;
    Ok(())
}
