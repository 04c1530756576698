//! CSV outputs. Every file opens with a comment line carrying the config
//! hash and seed, followed by a column header row.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{Source, StressField, StressSample};
use crate::training::lbfgs::IterRecord;

/// Identifies the run that produced a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn line(&self) -> String {
        format!("# config_sha256={} seed={}\n", self.config_hash, self.seed)
    }

    fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad provenance line: {line:?}"));
        let rest = line.trim().strip_prefix("# config_sha256=").ok_or_else(bad)?;
        let (hash, seed) = rest.split_once(" seed=").ok_or_else(bad)?;
        Ok(Provenance {
            config_hash: hash.to_string(),
            seed: seed.parse().map_err(|_| bad())?,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

fn write_rows<W: Write, R: Serialize>(mut out: W, prov: &Provenance, rows: impl IntoIterator<Item = R>) -> Result<()> {
    out.write_all(prov.line().as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldRow {
    segment_id: usize,
    x_m: f64,
    t_s: f64,
    #[serde(rename = "sigma_Pa")]
    sigma_pa: f64,
    source: Source,
}

pub fn write_field<W: Write>(out: W, field: &StressField, prov: &Provenance) -> Result<()> {
    write_rows(
        out,
        prov,
        field.samples.iter().map(|s| FieldRow {
            segment_id: s.segment_id,
            x_m: s.x_m,
            t_s: s.t_s,
            sigma_pa: s.sigma_pa,
            source: field.source,
        }),
    )
}

pub fn read_field(path: &Path) -> Result<(StressField, Provenance)> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let prov = Provenance::parse(&first)?;
    let mut r = csv::Reader::from_reader(reader);
    let mut samples = Vec::new();
    let mut source = Source::Oracle;
    for row in r.deserialize() {
        let row: FieldRow = row.map_err(csv_err)?;
        source = row.source;
        samples.push(StressSample {
            segment_id: row.segment_id,
            x_m: row.x_m,
            t_s: row.t_s,
            sigma_pa: row.sigma_pa,
        });
    }
    Ok((StressField { samples, source }, prov))
}

/// Columns: iter, loss, grad_norm, wall_time_s.
pub fn write_loss_history<W: Write>(out: W, history: &[IterRecord], prov: &Provenance) -> Result<()> {
    write_rows(out, prov, history)
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub n_g: usize,
    pub n_c: usize,
    pub layers: usize,
    pub neurons: usize,
    pub n_segments: usize,
    pub rel_error: f64,
    pub train_s: f64,
    pub infer_s: f64,
}

pub fn write_sweep<W: Write>(out: W, rows: &[SweepRow], prov: &Provenance) -> Result<()> {
    write_rows(out, prov, rows)
}

pub fn write_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, buf)?;
    Ok(())
}
