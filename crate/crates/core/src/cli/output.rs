//! Versioned CSV/JSON artifacts and the stored-draws format.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::inference::{SurfaceSummary, SusceptibilityProfile};

pub const SURFACE_SCHEMA: &str = "mtdlnm.surface/1";
pub const SUSCEPTIBILITY_SCHEMA: &str = "mtdlnm.susceptibility/1";
pub const DIAGNOSTICS_SCHEMA: &str = "mtdlnm.diagnostics/1";
pub const DRAWS_SCHEMA: &str = "mtdlnm.draws/1";
pub const INDICATORS_SCHEMA: &str = "mtdlnm.indicators/1";
pub const METRICS_SCHEMA: &str = "mtdlnm.metrics/1";
pub const REPLICATES_SCHEMA: &str = "mtdlnm.replicates/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSeed {
    pub chain: usize,
    /// The chain's RNG is stream `stream` of `seed`.
    pub seed: u64,
    pub stream: u64,
}

/// What is needed to rerun a command bit-for-bit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub arguments: Vec<String>,
    pub version: String,
    pub started: String,
    pub finished: String,
    pub inputs: Vec<InputDigest>,
    pub seeds: Vec<ChainSeed>,
    pub config: serde_json::Value,
    #[serde(default)]
    pub extra: serde_json::Value,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.to_string(),
            arguments: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            started: chrono::Utc::now().to_rfc3339(),
            finished: String::new(),
            inputs: Vec::new(),
            seeds: Vec::new(),
            config: serde_json::Value::Null,
            extra: serde_json::Value::Null,
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path)?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(())
    }

    pub fn finish(&mut self, path: &Path) -> Result<()> {
        self.finished = chrono::Utc::now().to_rfc3339();
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// CSV writer whose first line is `# schema: <schema>`.
pub fn schema_writer(path: &Path, schema: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(file, "# schema: {schema}")?;
    Ok(csv::Writer::from_writer(file))
}

/// Opens a CSV written by [`schema_writer`], checking its schema line.
pub fn schema_reader(path: &Path, schema: &str) -> Result<csv::Reader<BufReader<File>>> {
    let mut file = BufReader::new(
        File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?,
    );
    let mut first = String::new();
    file.read_line(&mut first)?;
    let found = first.trim().strip_prefix("# schema:").map(str::trim);
    if found != Some(schema) {
        return Err(Error::Schema(format!(
            "{}: expected schema {schema}, found {:?}",
            path.display(),
            first.trim()
        )));
    }
    Ok(csv::Reader::from_reader(file))
}

pub fn write_surface(path: &Path, s: &SurfaceSummary) -> Result<()> {
    let mut w = schema_writer(path, SURFACE_SCHEMA)?;
    w.write_record(["x", "l", "mean", "lower", "upper"])?;
    for (i, x) in s.grid_x.iter().enumerate() {
        for (j, l) in s.grid_l.iter().enumerate() {
            w.write_record(&[
                x.to_string(),
                l.to_string(),
                s.mean[(i, j)].to_string(),
                s.lower[(i, j)].to_string(),
                s.upper[(i, j)].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_susceptibility(path: &Path, s: &SusceptibilityProfile) -> Result<()> {
    let mut w = schema_writer(path, SUSCEPTIBILITY_SCHEMA)?;
    w.write_record(["l", "probability", "declared"])?;
    for (l, p) in s.probabilities.iter().enumerate() {
        w.write_record(&[l.to_string(), p.to_string(), u8::from(*p >= s.threshold).to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Retained draws as stored on disk: one surface per draw plus the
/// per-lag effect indicators.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredDraws {
    pub grid_x: Vec<f64>,
    pub grid_l: Vec<usize>,
    /// `(chain, iteration)` per draw.
    pub keys: Vec<(usize, usize)>,
    pub surfaces: Vec<DMatrix<f64>>,
    pub indicators: Vec<Vec<bool>>,
}

fn surface_path(dir: &Path) -> PathBuf {
    dir.join("surface_draws.csv")
}

fn indicator_path(dir: &Path) -> PathBuf {
    dir.join("indicators.csv")
}

/// Writes `surface_draws.csv` (long format: chain, iteration, x, l, value)
/// and `indicators.csv` (chain, iteration, one 0/1 column per lag).
pub fn write_draws(dir: &Path, draws: &StoredDraws) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = schema_writer(&surface_path(dir), DRAWS_SCHEMA)?;
    w.write_record(["chain", "iteration", "x", "l", "value"])?;
    for ((c, it), s) in draws.keys.iter().zip(&draws.surfaces) {
        for (i, x) in draws.grid_x.iter().enumerate() {
            for (j, l) in draws.grid_l.iter().enumerate() {
                w.write_record(&[
                    c.to_string(),
                    it.to_string(),
                    x.to_string(),
                    l.to_string(),
                    s[(i, j)].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;

    let mut w = schema_writer(&indicator_path(dir), INDICATORS_SCHEMA)?;
    let lags = draws.indicators.first().map_or(0, Vec::len);
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend((0..lags).map(|l| format!("lag{l}")));
    w.write_record(&header)?;
    for ((c, it), ind) in draws.keys.iter().zip(&draws.indicators) {
        let mut row = vec![c.to_string(), it.to_string()];
        row.extend(ind.iter().map(|b| u8::from(*b).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, k: usize, line: usize) -> Result<T> {
    rec.get(k)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Schema(format!("draws line {line}: bad field {k}")))
}

pub fn read_draws(dir: &Path) -> Result<StoredDraws> {
    let mut r = schema_reader(&surface_path(dir), DRAWS_SCHEMA)?;
    let mut keys: Vec<(usize, usize)> = Vec::new();
    let mut cells: Vec<Vec<(f64, usize, f64)>> = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let key = (field(&rec, 0, k + 2)?, field(&rec, 1, k + 2)?);
        if keys.last() != Some(&key) {
            keys.push(key);
            cells.push(Vec::new());
        }
        cells.last_mut().expect("pushed").push((
            field(&rec, 2, k + 2)?,
            field(&rec, 3, k + 2)?,
            field(&rec, 4, k + 2)?,
        ));
    }
    let first = cells.first().ok_or_else(|| Error::Schema("no stored draws".into()))?;
    let mut grid_x: Vec<f64> = Vec::new();
    let mut grid_l: Vec<usize> = Vec::new();
    for (x, l, _) in first {
        if !grid_x.contains(x) {
            grid_x.push(*x);
        }
        if !grid_l.contains(l) {
            grid_l.push(*l);
        }
    }
    let (nx, nl) = (grid_x.len(), grid_l.len());
    let mut surfaces = Vec::with_capacity(cells.len());
    for c in &cells {
        if c.len() != nx * nl {
            return Err(Error::Schema("stored draws have differing grids".into()));
        }
        for (idx, (x, l, _)) in c.iter().enumerate() {
            if *x != grid_x[idx / nl] || *l != grid_l[idx % nl] {
                return Err(Error::Schema("stored draws have differing grids".into()));
            }
        }
        surfaces.push(DMatrix::from_fn(nx, nl, |i, j| c[i * nl + j].2));
    }

    let mut r = schema_reader(&indicator_path(dir), INDICATORS_SCHEMA)?;
    let mut indicators = Vec::with_capacity(keys.len());
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let key: (usize, usize) = (field(&rec, 0, k + 2)?, field(&rec, 1, k + 2)?);
        if keys.get(k) != Some(&key) {
            return Err(Error::Schema("indicator rows do not match surface draws".into()));
        }
        let row = (2..rec.len())
            .map(|j| field::<u8>(&rec, j, k + 2).map(|v| v != 0))
            .collect::<Result<Vec<bool>>>()?;
        indicators.push(row);
    }
    if indicators.len() != keys.len() {
        return Err(Error::Schema("indicator rows do not match surface draws".into()));
    }
    Ok(StoredDraws {
        grid_x,
        grid_l,
        keys,
        surfaces,
        indicators,
    })
}
