//! CSV schema for the depression-trial pipeline.
//!
//! Header: `id, qids_c_1, qids_s_1, slope_1, preference_1, a_1, qids_c_2,
//! qids_s_2, slope_2, preference_2, a_2, y1, y2, r1`. Binary columns hold
//! `0`/`1`; remitters (`r1 = 1`) leave the stage-2 cells and `y2` empty.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rcql_core::stard::{composite_outcome, StardRow, StardStage};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::records_csv::format_float;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct FlatRow {
    id: u64,
    qids_c_1: f64,
    qids_s_1: f64,
    slope_1: f64,
    preference_1: u8,
    a_1: u8,
    qids_c_2: Option<f64>,
    qids_s_2: Option<f64>,
    slope_2: Option<f64>,
    preference_2: Option<u8>,
    a_2: Option<u8>,
    y1: f64,
    y2: Option<f64>,
    r1: u8,
}

const HEADER: [&str; 14] = [
    "id",
    "qids_c_1",
    "qids_s_1",
    "slope_1",
    "preference_1",
    "a_1",
    "qids_c_2",
    "qids_s_2",
    "slope_2",
    "preference_2",
    "a_2",
    "y1",
    "y2",
    "r1",
];

fn binary(v: u8, what: &str) -> std::result::Result<bool, String> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(format!("{what} must be 0 or 1, found {other}")),
    }
}

impl FlatRow {
    fn into_row(self) -> std::result::Result<StardRow, String> {
        let stage1 = StardStage {
            qids_c: self.qids_c_1,
            qids_s: self.qids_s_1,
            slope: self.slope_1,
            preference: binary(self.preference_1, "preference_1")?,
            treatment: binary(self.a_1, "a_1")?,
        };
        let stage2 = match (self.qids_c_2, self.qids_s_2, self.slope_2, self.preference_2, self.a_2) {
            (None, None, None, None, None) => None,
            (Some(qids_c), Some(qids_s), Some(slope), Some(p), Some(a)) => Some(StardStage {
                qids_c,
                qids_s,
                slope,
                preference: binary(p, "preference_2")?,
                treatment: binary(a, "a_2")?,
            }),
            _ => return Err(format!("patient {}: stage-2 cells are partially filled", self.id)),
        };
        Ok(StardRow { id: self.id, stage1, stage2, y1: self.y1, y2: self.y2, r1: binary(self.r1, "r1")? })
    }

    fn from_row(row: &StardRow) -> FlatRow {
        let s2 = row.stage2.as_ref();
        FlatRow {
            id: row.id,
            qids_c_1: row.stage1.qids_c,
            qids_s_1: row.stage1.qids_s,
            slope_1: row.stage1.slope,
            preference_1: row.stage1.preference.into(),
            a_1: row.stage1.treatment.into(),
            qids_c_2: s2.map(|s| s.qids_c),
            qids_s_2: s2.map(|s| s.qids_s),
            slope_2: s2.map(|s| s.slope),
            preference_2: s2.map(|s| s.preference.into()),
            a_2: s2.map(|s| s.treatment.into()),
            y1: row.y1,
            y2: row.y2,
            r1: row.r1.into(),
        }
    }
}

/// Parse and validate rows, including the composite outcome.
pub fn read_stard<R: Read>(input: R, origin: &str) -> Result<Vec<StardRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut rows = Vec::new();
    for flat in reader.deserialize::<FlatRow>() {
        let flat = flat.map_err(|e| {
            let line = e.position().map_or(0, csv::Position::line);
            CliError::parse(origin, line, e.to_string())
        })?;
        let line = rows.len() as u64 + 2;
        let row = flat.into_row().map_err(|m| CliError::parse(origin, line, m))?;
        let row_error = |source| CliError::Row { origin: origin.to_string(), line, source };
        row.validate().map_err(row_error)?;
        composite_outcome(&row).map_err(row_error)?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_stard_path(path: &Path) -> Result<Vec<StardRow>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_stard(file, &path.display().to_string())
}

pub fn write_stard<W: Write>(output: W, rows: &[StardRow]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    let fail = |e: csv::Error| CliError::Usage(e.to_string());
    writer.write_record(HEADER).map_err(fail)?;
    let opt = |v: Option<f64>| v.map(format_float).unwrap_or_default();
    let opt_flag = |v: Option<u8>| v.map(|b| b.to_string()).unwrap_or_default();
    for row in rows {
        let f = FlatRow::from_row(row);
        writer
            .write_record([
                f.id.to_string(),
                format_float(f.qids_c_1),
                format_float(f.qids_s_1),
                format_float(f.slope_1),
                f.preference_1.to_string(),
                f.a_1.to_string(),
                opt(f.qids_c_2),
                opt(f.qids_s_2),
                opt(f.slope_2),
                opt_flag(f.preference_2),
                opt_flag(f.a_2),
                format_float(f.y1),
                opt(f.y2),
                f.r1.to_string(),
            ])
            .map_err(fail)?;
    }
    writer.flush().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(())
}

pub fn write_stard_path(path: &Path, rows: &[StardRow]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_stard(file, rows)
}
