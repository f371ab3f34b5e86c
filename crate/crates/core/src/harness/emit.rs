use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::sweeps::SweepReport;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::Invalid(format!("unknown format `{s}` (csv or json)"))),
        }
    }
}

pub const CSV_COLUMNS: [&str; 15] = [
    "experiment",
    "model",
    "causal",
    "condition",
    "split",
    "seed",
    "scenes",
    "l2_1s",
    "l2_2s",
    "l2_3s",
    "l2_avg",
    "collision_rate",
    "derived_name",
    "derived",
    "model_hash",
];

pub const SCENE_CSV_COLUMNS: [&str; 10] = [
    "experiment",
    "row",
    "model",
    "condition",
    "index",
    "context",
    "l2_1s",
    "l2_2s",
    "l2_3s",
    "collision",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv: {e}"))
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One line per sweep cell.
pub fn to_csv(r: &SweepReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for row in &r.rows {
        let m = &row.report;
        w.write_record([
            r.experiment.name().to_string(),
            m.model.clone(),
            row.causal.to_string(),
            m.condition.clone(),
            m.split.clone(),
            m.seed.to_string(),
            m.scenes.to_string(),
            m.l2_1s.to_string(),
            m.l2_2s.to_string(),
            m.l2_3s.to_string(),
            m.l2_avg.to_string(),
            m.collision_rate.to_string(),
            r.derived_name.clone(),
            row.derived.map(|v| v.to_string()).unwrap_or_default(),
            m.model_hash.clone(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

/// Per-scene records behind every cell.
pub fn scenes_to_csv(r: &SweepReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCENE_CSV_COLUMNS).map_err(csv_err)?;
    for (i, row) in r.rows.iter().enumerate() {
        for s in &row.report.records {
            w.write_record([
                r.experiment.name().to_string(),
                i.to_string(),
                row.report.model.clone(),
                row.report.condition.clone(),
                s.index.to_string(),
                s.context.clone(),
                s.l2[0].to_string(),
                s.l2[1].to_string(),
                s.l2[2].to_string(),
                s.collision.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    finish(w)
}

pub fn to_json(r: &SweepReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(r)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json(s: &str) -> Result<SweepReport> {
    Ok(serde_json::from_str(s)?)
}

/// Path of the per-scene companion file written next to a CSV report.
pub fn scenes_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.scenes.csv"))
}

/// Writes the report; CSV output also writes the per-scene companion file.
/// Returns every path written.
pub fn emit(r: &SweepReport, format: Format, path: &Path) -> Result<Vec<PathBuf>> {
    match format {
        Format::Json => {
            std::fs::write(path, to_json(r)?)?;
            Ok(vec![path.to_path_buf()])
        }
        Format::Csv => {
            std::fs::write(path, to_csv(r)?)?;
            let scenes = scenes_path(path);
            std::fs::write(&scenes, scenes_to_csv(r)?)?;
            Ok(vec![path.to_path_buf(), scenes])
        }
    }
}
