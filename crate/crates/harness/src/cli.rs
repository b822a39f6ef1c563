//! `volrank` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use volrank::detalg::{oracle, SquareMatrix};
use volrank::itosim::{ingest_csv, read_binary_files, simulate, write_binary_files, write_csv, PathSample, Scenario, SimConfig};
use volrank::limitlaw::{estimate_gamma, LimitInput, DEFAULT_SAMPLES, DEFAULT_SUBSTEPS};
use volrank::ranktest::{
    const_rank_statistics, perturb_and_block, report_from_blocks, spot_rank_series, test_const_rank, Hypothesis,
    PerturbationConfig,
};

use crate::config::{KnChoice, StudyConfig};
use crate::error::HarnessError;
use crate::study::{level_power_csv, run_study, spot_csv, write_outputs, SpotPoint, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "volrank", version, about = "Volatility rank estimation and tests for high-frequency data")]
pub struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory for commands that write files.
    #[arg(long, global = true, env = "VOLRANK_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write the path.
    Simulate(SimulateArgs),
    /// Maximal-rank estimate and tests on observed paths.
    TestRank(TestRankArgs),
    /// Constant-rank test on an observed path.
    TestConstRank(TestConstRankArgs),
    /// Monte Carlo estimates of the limit moments at one point.
    GammaMc(GammaMcArgs),
    /// Monte Carlo study of level, power and normality.
    McStudy(McStudyArgs),
    /// Exact determinant identity checks on random integer matrices.
    OracleDet(OracleDetArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: String,
    /// Scenario parameters as a JSON object; `--d`, `--q`, `--r` override it.
    #[arg(long)]
    pub params: Option<String>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Number of observation steps.
    #[arg(long = "n")]
    pub n_obs: usize,
    #[arg(long, default_value_t = 1.0)]
    pub t_max: f64,
    #[arg(long, default_value_t = volrank::itosim::DEFAULT_REFINE)]
    pub refine: usize,
    /// Output file; defaults to `<out>/<scenario>.csv` (or `.bin` with `--format json`).
    #[arg(long)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    /// A `.csv` or `.bin` path file, or a directory of them.
    #[arg(long)]
    pub path: PathBuf,
    /// Observation step; inferred from the timestamps when absent.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Perturbation matrix as JSON rows, or `@file`.
    #[arg(long)]
    pub theta: Option<String>,
}

#[derive(Debug, Args)]
pub struct TestRankArgs {
    #[command(flatten)]
    pub input: PathArgs,
    /// Comma-separated hypotheses such as `=1,<=2,>=1`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub hypotheses: Vec<Hypothesis>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct TestConstRankArgs {
    #[command(flatten)]
    pub input: PathArgs,
    /// Window length in blocks, or `auto`.
    #[arg(long = "k-n", default_value = "auto")]
    pub k_n: KnChoice,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct GammaMcArgs {
    /// JSON file with `alpha`, `beta` and optional `gamma`, `a`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub r: usize,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = DEFAULT_SUBSTEPS)]
    pub substeps: usize,
}

#[derive(Debug, Args)]
pub struct McStudyArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleDetArgs {
    #[arg(long, default_value_t = 200)]
    pub cases: usize,
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli, stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32, HarnessError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli, a, out),
        Command::TestRank(a) => cmd_test_rank(cli, a, out),
        Command::TestConstRank(a) => cmd_test_const_rank(cli, a, out),
        Command::GammaMc(a) => cmd_gamma_mc(cli, a, out),
        Command::McStudy(a) => cmd_mc_study(cli, a, out),
        Command::OracleDet(a) => cmd_oracle_det(cli, a, out),
    }
}

fn emit_json<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), HarnessError> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out).map_err(HarnessError::io("writing output"))
}

fn emit_bytes(out: &mut dyn Write, bytes: &[u8]) -> Result<(), HarnessError> {
    out.write_all(bytes).map_err(HarnessError::io("writing output"))
}

fn out_dir(cli: &Cli, fallback: Option<&Path>) -> PathBuf {
    cli.out.clone().or_else(|| fallback.map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Serialize)]
struct Simulated<'a> {
    version: &'a str,
    scenario: &'a Scenario,
    seed: u64,
    rows: usize,
    d: usize,
    delta_n: f64,
    file: String,
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let mut params = match &a.params {
        Some(text) => serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("--params: {e}")))?,
        None => serde_json::Value::Object(Default::default()),
    };
    let obj = params.as_object_mut().ok_or_else(|| HarnessError::Config("--params must be a JSON object".into()))?;
    if let Some(d) = a.d {
        obj.insert("d".into(), d.into());
        if matches!(a.scenario.as_str(), "constant_rank" | "rank_switch" | "sde_case") && !obj.contains_key("q") {
            obj.insert("q".into(), d.into());
        }
    }
    if let Some(q) = a.q {
        obj.insert("q".into(), q.into());
    }
    if let Some(r) = a.r {
        obj.insert("r".into(), r.into());
    }
    let scenario = Scenario::from_name(&a.scenario, params)?;
    if a.n_obs == 0 || a.refine == 0 {
        return Err(HarnessError::Config("--n and --refine must be positive".into()));
    }
    let delta_n = a.t_max / a.n_obs as f64;
    let model = scenario.build(a.t_max, delta_n / a.refine as f64)?;
    let seed = cli.seed.unwrap_or(0);
    let mut sim = SimConfig::new(a.t_max, delta_n, seed);
    sim.refine = a.refine;
    let mut path = simulate(&model, &sim)?;
    path.seed = Some(seed);
    path.scenario = Some(scenario.name().to_string());

    let ext = match cli.format {
        Format::Csv => "csv",
        Format::Json => "bin",
    };
    let file = match &a.file {
        Some(f) => f.clone(),
        None => out_dir(cli, None).join(format!("{}.{ext}", scenario.name())),
    };
    if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(HarnessError::io(format!("creating {}", parent.display())))?;
    }
    match cli.format {
        Format::Csv => {
            let f = std::fs::File::create(&file).map_err(HarnessError::io(format!("creating {}", file.display())))?;
            write_csv(&path, std::io::BufWriter::new(f))?;
        }
        Format::Json => write_binary_files(&path, &file)?,
    }
    emit_json(
        out,
        &Simulated {
            version: VERSION,
            scenario: &scenario,
            seed,
            rows: path.rows(),
            d: path.d,
            delta_n,
            file: file.display().to_string(),
        },
    )?;
    Ok(0)
}

fn load_path(file: &Path, delta: Option<f64>) -> Result<PathSample, HarnessError> {
    match file.extension().and_then(|e| e.to_str()) {
        Some("bin") => {
            let mut p = read_binary_files(file)?;
            if let Some(d) = delta {
                if (d - p.delta_n).abs() > 1e-9 * d {
                    return Err(HarnessError::Config(format!("--delta {d} disagrees with stored step {}", p.delta_n)));
                }
                p.delta_n = d;
            }
            Ok(p)
        }
        _ => Ok(ingest_csv(file, delta)?),
    }
}

/// The file itself, or the sorted `.csv`/`.bin` files of a directory.
fn input_files(path: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let entries = std::fs::read_dir(path).map_err(HarnessError::io(format!("listing {}", path.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry.map_err(HarnessError::io(format!("listing {}", path.display())))?.path();
        if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "bin")) {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(HarnessError::Config(format!("no .csv or .bin files in {}", path.display())));
    }
    Ok(files)
}

fn parse_theta(arg: Option<&str>, d: usize, seed: u64) -> Result<PerturbationConfig, HarnessError> {
    let Some(text) = arg else {
        return Ok(PerturbationConfig::identity(d, seed));
    };
    let text = match text.strip_prefix('@') {
        Some(file) => std::fs::read_to_string(file).map_err(HarnessError::io(format!("reading {file}")))?,
        None => text.to_string(),
    };
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("--theta: {e}")))?;
    let m = SquareMatrix::from_rows(&rows).map_err(|e| HarnessError::Config(format!("--theta: {e}")))?;
    if m.dim() != d {
        return Err(HarnessError::Config(format!("--theta must be {d} x {d}")));
    }
    Ok(PerturbationConfig::new(m, seed)?)
}

#[derive(Serialize)]
struct Provenanced<'a, T: Serialize> {
    version: &'a str,
    seed: u64,
    input: String,
    theta: Vec<f64>,
    #[serde(flatten)]
    body: T,
}

fn cmd_test_rank(cli: &Cli, a: &TestRankArgs, out: &mut dyn Write) -> Result<i32, HarnessError> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(HarnessError::Config(format!("alpha = {} must lie in (0, 1)", a.alpha)));
    }
    let seed = cli.seed.unwrap_or(0);
    let mut reports = Vec::new();
    for file in input_files(&a.input.path)? {
        let path = load_path(&file, a.input.delta)?;
        let cfg = parse_theta(a.input.theta.as_deref(), path.d, seed)?;
        let blocks = perturb_and_block(&path, &cfg)?;
        let report = report_from_blocks(&blocks, path.t_max, &a.hypotheses, a.alpha)?;
        reports.push(Provenanced {
            version: VERSION,
            seed,
            input: file.display().to_string(),
            theta: cfg.theta.entries().to_vec(),
            body: report,
        });
    }
    match cli.format {
        Format::Json if reports.len() == 1 && !a.input.path.is_dir() => emit_json(out, &reports[0])?,
        Format::Json => emit_json(out, &reports)?,
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["input".to_string(), "r_hat".into(), "r_rounded".into(), "v_feasible".into()];
            header.extend(a.hypotheses.iter().map(|h| format!("reject {h}")));
            w.write_record(&header)?;
            for rep in &reports {
                let r = &rep.body;
                let mut row = vec![rep.input.clone(), r.r_hat.to_string(), r.r_rounded.to_string(), r.v_feasible.to_string()];
                row.extend(r.decisions.iter().map(|d| d.reject.to_string()));
                w.write_record(&row)?;
            }
            emit_bytes(out, &w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?)?;
        }
    }
    Ok(0)
}

fn cmd_test_const_rank(cli: &Cli, a: &TestConstRankArgs, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let seed = cli.seed.unwrap_or(0);
    let file = &a.input.path;
    let path = load_path(file, a.input.delta)?;
    let cfg = parse_theta(a.input.theta.as_deref(), path.d, seed)?;
    let blocks = perturb_and_block(&path, &cfg)?;
    let base = report_from_blocks(&blocks, path.t_max, &[], a.alpha)?;
    let k_n = a.k_n.resolve(path.delta_n, path.d);
    let spot = spot_rank_series(&blocks, k_n)?;
    let mut report = const_rank_statistics(&blocks, &spot, a.p, base.r_hat, base.s1, path.t_max)?;
    report.decision = Some(test_const_rank(&report, a.alpha)?);
    match cli.format {
        Format::Json => emit_json(
            out,
            &Provenanced {
                version: VERSION,
                seed,
                input: file.display().to_string(),
                theta: cfg.theta.entries().to_vec(),
                body: report,
            },
        )?,
        Format::Csv => {
            let span = blocks.block_span();
            let points: Vec<SpotPoint> = report
                .spot
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| SpotPoint { i, t: i as f64 * span, r_hat_spot: *v })
                .collect();
            emit_bytes(out, &spot_csv(&points)?)?;
        }
    }
    Ok(0)
}

fn cmd_gamma_mc(cli: &Cli, a: &GammaMcArgs, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let text = std::fs::read_to_string(&a.input).map_err(HarnessError::io(format!("reading {}", a.input.display())))?;
    let input: LimitInput = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("limit input: {e}")))?;
    let seed = cli.seed.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let est = pool.install(|| estimate_gamma(&input, a.r, a.samples, a.substeps, seed))?;
    match cli.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a, T: Serialize> {
                version: &'a str,
                seed: u64,
                input: &'a LimitInput,
                #[serde(flatten)]
                estimate: T,
            }
            emit_json(out, &Out { version: VERSION, seed, input: &input, estimate: est })?
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["r", "gamma_r", "gamma_r_prime", "gamma_r_dprime", "se_gamma_r", "n_samples", "n_substeps"])?;
            w.write_record([
                est.r.to_string(),
                est.gamma_r.to_string(),
                est.gamma_r_prime.to_string(),
                est.gamma_r_dprime.to_string(),
                est.se.gamma_r.to_string(),
                est.n_samples.to_string(),
                est.n_substeps.to_string(),
            ])?;
            emit_bytes(out, &w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?)?;
        }
    }
    Ok(0)
}

fn cmd_mc_study(cli: &Cli, a: &McStudyArgs, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let mut cfg = StudyConfig::load(&a.config)?;
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    let dir = out_dir(cli, cfg.out.as_deref());
    let result = run_study(&cfg, cli.threads)?;
    write_outputs(&result, &dir)?;
    match cli.format {
        Format::Json => emit_json(out, &result.aggregate)?,
        Format::Csv => emit_bytes(out, &level_power_csv(&result)?)?,
    }
    Ok(0)
}

fn cmd_oracle_det(cli: &Cli, a: &OracleDetArgs, out: &mut dyn Write) -> Result<i32, HarnessError> {
    let report = oracle::run_suite(a.cases, cli.seed.unwrap_or(0));
    emit_json(out, &report)?;
    Ok(if report.passed() { 0 } else { 1 })
}
