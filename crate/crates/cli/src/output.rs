//! Fixed-name artifacts in the output directory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use quantest::attack::RecordLine;
use quantest::metrics::Combine;
use quantest::{AdversarialRecord, CampaignSummary, QnnModel, SimilarityThresholds};

use crate::UserError;

pub const CONFIG: &str = "config.json";
pub const MODEL: &str = "model.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const RECORDS: &str = "records.jsonl";
pub const SUMMARY: &str = "summary.csv";
pub const SAMPLING: &str = "sampling.csv";
pub const REPORT: &str = "report.json";

/// One campaign row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub task: String,
    pub strategy: String,
    pub w: Option<f64>,
    pub k: Option<f64>,
    pub r: Option<f64>,
    pub thresholds: String,
    #[serde(rename = "Gen_Rate")]
    pub gen_rate: f64,
    #[serde(rename = "AFM")]
    pub afm: Option<f64>,
    #[serde(rename = "ATD")]
    pub atd: Option<f64>,
    #[serde(rename = "mean_QEA")]
    pub mean_qea: Option<f64>,
}

impl SummaryRow {
    pub fn new(model: &QnnModel, task: String, strategy: String, wkr: Option<(f64, f64, f64)>, thresholds: Option<&SimilarityThresholds>, s: &CampaignSummary) -> Self {
        Self {
            model: model_name(model),
            task,
            strategy,
            w: wkr.map(|t| t.0),
            k: wkr.map(|t| t.1),
            r: wkr.map(|t| t.2),
            thresholds: thresholds_label(thresholds),
            gen_rate: s.gen_rate,
            afm: s.afm,
            atd: s.atd,
            mean_qea: s.mean_qea,
        }
    }
}

pub fn model_name(m: &QnnModel) -> String {
    format!("{}-{}q-d{}", m.arch(), m.n_qubits(), m.depth())
}

pub fn thresholds_label(t: Option<&SimilarityThresholds>) -> String {
    match t {
        None => "none".into(),
        Some(t) => {
            let op = match t.combine {
                Combine::Or => "or",
                Combine::And => "and",
            };
            format!("F>{} {op} D<{}", t.min_fidelity, t.max_trace_distance)
        }
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// A record line tagged with the noise strength that produced it.
#[derive(Serialize)]
struct NoiseLine<'a> {
    sigma: f64,
    #[serde(flatten)]
    record: &'a RecordLine,
}

/// Writes records in seed order; each noise record carries its `sigma`.
pub fn write_records(path: &Path, batches: &[(Option<f64>, Vec<AdversarialRecord>)], dump_states: bool) -> anyhow::Result<()> {
    let mut w = create(path)?;
    for (sigma, records) in batches {
        for r in records {
            let line = RecordLine::from_record(r, dump_states);
            match sigma {
                Some(sigma) => serde_json::to_writer(&mut w, &NoiseLine { sigma: *sigma, record: &line })?,
                None => serde_json::to_writer(&mut w, &line)?,
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a JSONL record file written with state dumping.
pub fn read_records(path: &Path) -> anyhow::Result<Vec<AdversarialRecord>> {
    let f = File::open(path).map_err(|e| UserError(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine =
            serde_json::from_str(&line).map_err(|e| UserError(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let record = parsed
            .to_record()
            .map_err(|e| UserError(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(record);
    }
    Ok(out)
}
