//! Path import and export: CSV (`t,x_1..x_d`) and a compact little-endian
//! binary container with a JSON sidecar for metadata.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PathSample;

/// Relative tolerance on timestamp deviations from an equidistant grid.
pub const GRID_TOL: f64 = 1e-9;

const MAGIC: &[u8; 8] = b"VRPATH01";
const HEADER_LEN: usize = 8 + 8 + 8 + 8;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("row {row}, column {col}: {msg}")]
    Value { row: usize, col: usize, msg: String },
    #[error("irregular grid: {0}")]
    Grid(String),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("binary container: {0}")]
    Binary(String),
    #[error("metadata: {0}")]
    Meta(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

/// Writes `t,x_1..x_d` rows with `t = iΔ`. Floats use the shortest
/// representation that reads back to the same value.
pub fn write_csv<W: Write>(path: &PathSample, out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=path.d).map(|j| format!("x_{j}")));
    w.write_record(&header)?;
    let mut record = Vec::with_capacity(path.d + 1);
    for i in 0..path.rows() {
        record.clear();
        record.push((i as f64 * path.delta_n).to_string());
        record.extend(path.row(i).iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

/// Parsed CSV contents before grid checks.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub times: Vec<f64>,
    pub d: usize,
    pub obs: Vec<f64>,
}

pub fn read_csv<R: Read>(input: R) -> Result<CsvTable, IngestError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input);
    let header = r.headers()?.clone();
    if header.len() < 2 {
        return Err(IngestError::Header("expected t and at least one x column".into()));
    }
    if &header[0] != "t" {
        return Err(IngestError::Header(format!("first column must be 't', found '{}'", &header[0])));
    }
    for (j, name) in header.iter().enumerate().skip(1) {
        if name != format!("x_{j}") {
            return Err(IngestError::Header(format!("column {j} must be 'x_{j}', found '{name}'")));
        }
    }
    let d = header.len() - 1;
    let mut times = Vec::new();
    let mut obs = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != d + 1 {
            return Err(IngestError::Value { row, col: rec.len(), msg: format!("expected {} fields", d + 1) });
        }
        for (col, field) in rec.iter().enumerate() {
            if field.is_empty() {
                return Err(IngestError::Value { row, col, msg: "missing value".into() });
            }
            let v: f64 = field.parse().map_err(|_| IngestError::Value { row, col, msg: format!("'{field}' is not a number") })?;
            if !v.is_finite() {
                return Err(IngestError::Value { row, col, msg: "non-finite value".into() });
            }
            if col == 0 {
                times.push(v);
            } else {
                obs.push(v);
            }
        }
    }
    Ok(CsvTable { times, d, obs })
}

/// Checks that `times` is equidistant and returns the step. With
/// `delta_n = None` the step is `(t_last - t_0) / (rows - 1)`.
pub fn check_grid(times: &[f64], delta_n: Option<f64>) -> Result<f64, IngestError> {
    let n = times.len();
    if n < 2 {
        return Err(IngestError::TooFewRows(n));
    }
    let step = match delta_n {
        Some(s) if s > 0.0 && s.is_finite() => s,
        Some(s) => return Err(IngestError::Grid(format!("step {s} must be positive"))),
        None => (times[n - 1] - times[0]) / (n - 1) as f64,
    };
    if !(step > 0.0) {
        return Err(IngestError::Grid("timestamps must increase".into()));
    }
    for (i, &t) in times.iter().enumerate() {
        let expected = times[0] + i as f64 * step;
        if (t - expected).abs() > GRID_TOL * step {
            return Err(IngestError::Grid(format!("row {i}: t = {t}, expected {expected} for step {step}")));
        }
    }
    Ok(step)
}

/// Reads a path from CSV. `delta_n` is checked against the timestamps when
/// given and inferred otherwise.
pub fn ingest_csv(file: &Path, delta_n: Option<f64>) -> Result<PathSample, IngestError> {
    let f = std::fs::File::open(file).map_err(io_err(file))?;
    ingest_reader(std::io::BufReader::new(f), delta_n)
}

pub fn ingest_reader<R: Read>(input: R, delta_n: Option<f64>) -> Result<PathSample, IngestError> {
    let table = read_csv(input)?;
    let step = check_grid(&table.times, delta_n)?;
    PathSample::new(step, table.d, table.obs).map_err(|e| IngestError::Grid(e.to_string()))
}

/// Sidecar metadata for the binary container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMeta {
    pub format: String,
    pub rows: usize,
    pub d: usize,
    pub delta_n: f64,
    pub t_max: f64,
    pub seed: Option<u64>,
    pub scenario: Option<String>,
    pub version: String,
}

/// Layout: magic `VRPATH01`, `rows: u64`, `d: u64`, `delta_n: f64`, then
/// `rows × d` observations, all little-endian.
pub fn encode_binary(path: &PathSample) -> (Vec<u8>, BinaryMeta) {
    let mut buf = Vec::with_capacity(HEADER_LEN + 8 * path.obs.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(path.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(path.d as u64).to_le_bytes());
    buf.extend_from_slice(&path.delta_n.to_le_bytes());
    for v in &path.obs {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let meta = BinaryMeta {
        format: String::from_utf8_lossy(MAGIC).into_owned(),
        rows: path.rows(),
        d: path.d,
        delta_n: path.delta_n,
        t_max: path.t_max,
        seed: path.seed,
        scenario: path.scenario.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    (buf, meta)
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

/// Decodes a binary container. When `meta` is given, its shape and step
/// must agree with the header, and its seed and scenario are attached.
pub fn decode_binary(bytes: &[u8], meta: Option<&BinaryMeta>) -> Result<PathSample, IngestError> {
    if bytes.len() < HEADER_LEN {
        return Err(IngestError::Binary(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(IngestError::Binary("bad magic".into()));
    }
    let rows = read_u64(bytes, 8);
    let d = read_u64(bytes, 16);
    let delta_n = f64::from_le_bytes(bytes[24..32].try_into().expect("8-byte slice"));
    let count = rows
        .checked_mul(d)
        .and_then(|c| c.checked_mul(8))
        .filter(|&c| c == (bytes.len() - HEADER_LEN) as u64)
        .ok_or_else(|| IngestError::Binary(format!("payload of {} bytes does not hold {rows} x {d} values", bytes.len() - HEADER_LEN)))?;
    let obs: Vec<f64> = bytes[HEADER_LEN..HEADER_LEN + count as usize]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if rows < 2 {
        return Err(IngestError::TooFewRows(rows as usize));
    }
    let mut path = PathSample::new(delta_n, d as usize, obs).map_err(|e| IngestError::Binary(e.to_string()))?;
    if let Some(m) = meta {
        if m.rows as u64 != rows || m.d as u64 != d || m.delta_n.to_bits() != delta_n.to_bits() {
            return Err(IngestError::Meta("sidecar disagrees with the container header".into()));
        }
        path.seed = m.seed;
        path.scenario = m.scenario.clone();
    }
    Ok(path)
}

/// Writes `<base>.bin` and `<base>.json`.
pub fn write_binary_files(path: &PathSample, base: &Path) -> Result<(), IngestError> {
    let (bytes, meta) = encode_binary(path);
    let bin = base.with_extension("bin");
    std::fs::write(&bin, bytes).map_err(io_err(&bin))?;
    let json = base.with_extension("json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| IngestError::Meta(e.to_string()))?;
    std::fs::write(&json, text).map_err(io_err(&json))?;
    Ok(())
}

/// Reads `<base>.bin` and, when present, `<base>.json`.
pub fn read_binary_files(base: &Path) -> Result<PathSample, IngestError> {
    let bin = base.with_extension("bin");
    let bytes = std::fs::read(&bin).map_err(io_err(&bin))?;
    let json = base.with_extension("json");
    let meta = match std::fs::read_to_string(&json) {
        Ok(text) => Some(serde_json::from_str::<BinaryMeta>(&text).map_err(|e| IngestError::Meta(e.to_string()))?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(IngestError::Io { path: json, source: e }),
    };
    decode_binary(&bytes, meta.as_ref())
}
