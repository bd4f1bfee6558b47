//! Patient trajectory CSV.
//!
//! One row per patient. Columns are recognised by name:
//!
//! | column | meaning |
//! |---|---|
//! | `id` | patient id |
//! | `z{j}_{c}` | error-free covariate `c` at stage `j` |
//! | `w{j}_r{l}` / `w{j}_{c}_r{l}` | replicate `l` of error-prone coordinate `c` (the short form means `c = 1`) |
//! | `x{j}` / `x{j}_{c}` | true error-prone covariate, optional |
//! | `a{j}` | treatment, `0` or `1` |
//! | `y` | final outcome |
//! | `y1`, `r1` | optional stage-1 outcome and remission flag |
//!
//! Empty cells mark absent replicates and absent stages. A patient without a
//! second stage leaves every stage-2 cell empty.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rcql_core::data::{PatientRecord, StageObservation};

use crate::error::{CliError, Result};

/// Whether outcome and treatment cells are required.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    /// Fitting input: `y` and every present stage's `a{j}` are required.
    Training,
    /// Recommendation input: `y` and the final present stage's `a{j}` may be
    /// empty (missing values read as `0`).
    Covariates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    Id,
    ErrorFree { stage: usize, coord: usize },
    Replicate { stage: usize, coord: usize, rep: usize },
    Truth { stage: usize, coord: usize },
    Treatment { stage: usize },
    Outcome,
    StageOneOutcome,
    Remission,
}

fn parse_column(name: &str) -> Option<Column> {
    match name {
        "id" => return Some(Column::Id),
        "y" => return Some(Column::Outcome),
        "y1" => return Some(Column::StageOneOutcome),
        "r1" => return Some(Column::Remission),
        _ => {}
    }
    let index = |s: &str| s.parse::<usize>().ok().filter(|&v| v >= 1);
    let mut chars = name.chars();
    let kind = chars.next()?;
    let parts: Vec<&str> = chars.as_str().split('_').collect();
    let stage = index(parts.first()?).filter(|s| *s <= 2)?;
    match (kind, parts.as_slice()) {
        ('a', [_]) => Some(Column::Treatment { stage }),
        ('z', [_, c]) => Some(Column::ErrorFree { stage, coord: index(c)? }),
        ('x', [_]) => Some(Column::Truth { stage, coord: 1 }),
        ('x', [_, c]) => Some(Column::Truth { stage, coord: index(c)? }),
        ('w', [_, r]) => Some(Column::Replicate { stage, coord: 1, rep: index(r.strip_prefix('r')?)? }),
        ('w', [_, c, r]) => Some(Column::Replicate { stage, coord: index(c)?, rep: index(r.strip_prefix('r')?)? }),
        _ => None,
    }
}

/// Column positions for one stage.
#[derive(Debug, Default)]
struct StageColumns {
    error_free: Vec<usize>,
    /// `[coord][rep]`
    replicates: Vec<Vec<usize>>,
    truth: Vec<usize>,
    treatment: Option<usize>,
}

impl StageColumns {
    fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.error_free
            .iter()
            .chain(self.replicates.iter().flatten())
            .chain(&self.truth)
            .chain(&self.treatment)
            .copied()
    }
}

#[derive(Debug)]
struct Schema {
    id: usize,
    stages: Vec<StageColumns>,
    outcome: Option<usize>,
    stage1_outcome: Option<usize>,
    remission: Option<usize>,
}

/// Values of a map keyed `1..=n`, in key order.
fn dense<T>(map: BTreeMap<usize, T>, what: &str, origin: &str) -> Result<Vec<T>> {
    if map.keys().copied().ne(1..=map.len()) {
        return Err(CliError::parse(origin, 1, format!("`{what}` columns must be numbered from 1 without gaps")));
    }
    Ok(map.into_values().collect())
}

#[derive(Default)]
struct StageHeader {
    error_free: BTreeMap<usize, usize>,
    replicates: BTreeMap<usize, BTreeMap<usize, usize>>,
    truth: BTreeMap<usize, usize>,
    treatment: Option<usize>,
}

impl StageHeader {
    fn is_empty(&self) -> bool {
        self.error_free.is_empty() && self.replicates.is_empty() && self.truth.is_empty() && self.treatment.is_none()
    }

    fn finish(self, stage: usize, origin: &str) -> Result<StageColumns> {
        let error_free = dense(self.error_free, &format!("z{stage}"), origin)?;
        let replicates = dense(self.replicates, &format!("w{stage}"), origin)?
            .into_iter()
            .map(|reps| dense(reps, &format!("w{stage}"), origin))
            .collect::<Result<Vec<_>>>()?;
        if replicates.is_empty() {
            return Err(CliError::parse(origin, 1, format!("stage {stage} has no `w{stage}` replicate columns")));
        }
        if replicates.iter().any(|r| r.len() != replicates[0].len()) {
            return Err(CliError::parse(origin, 1, format!("stage {stage} coordinates have different replicate counts")));
        }
        let truth = dense(self.truth, &format!("x{stage}"), origin)?;
        if !truth.is_empty() && truth.len() != replicates.len() {
            return Err(CliError::parse(origin, 1, format!("stage {stage} truth columns do not match the `w` columns")));
        }
        Ok(StageColumns { error_free, replicates, truth, treatment: self.treatment })
    }
}

impl Schema {
    fn from_header(header: &csv::StringRecord, origin: &str) -> Result<Schema> {
        let mut id = None;
        let mut outcome = None;
        let mut stage1_outcome = None;
        let mut remission = None;
        let mut stages: [StageHeader; 2] = Default::default();
        for (pos, name) in header.iter().enumerate() {
            let col = parse_column(name.trim())
                .ok_or_else(|| CliError::parse(origin, 1, format!("unrecognised column `{name}`")))?;
            let duplicate = match col {
                Column::Id => id.replace(pos).is_some(),
                Column::Outcome => outcome.replace(pos).is_some(),
                Column::StageOneOutcome => stage1_outcome.replace(pos).is_some(),
                Column::Remission => remission.replace(pos).is_some(),
                Column::Treatment { stage } => stages[stage - 1].treatment.replace(pos).is_some(),
                Column::ErrorFree { stage, coord } => stages[stage - 1].error_free.insert(coord, pos).is_some(),
                Column::Truth { stage, coord } => stages[stage - 1].truth.insert(coord, pos).is_some(),
                Column::Replicate { stage, coord, rep } => {
                    stages[stage - 1].replicates.entry(coord).or_default().insert(rep, pos).is_some()
                }
            };
            if duplicate {
                return Err(CliError::parse(origin, 1, format!("duplicate column `{name}`")));
            }
        }
        let id = id.ok_or_else(|| CliError::parse(origin, 1, "missing `id` column"))?;
        let [first, second] = stages;
        if first.is_empty() {
            return Err(CliError::parse(origin, 1, "no stage-1 columns"));
        }
        let mut columns = vec![first.finish(1, origin)?];
        if !second.is_empty() {
            columns.push(second.finish(2, origin)?);
        }
        Ok(Schema { id, stages: columns, outcome, stage1_outcome, remission })
    }
}

fn cell(row: &csv::StringRecord, pos: usize) -> Option<&str> {
    row.get(pos).map(str::trim).filter(|s| !s.is_empty())
}

struct RowReader<'a> {
    row: &'a csv::StringRecord,
    origin: &'a str,
    line: u64,
}

impl RowReader<'_> {
    fn err(&self, message: impl Into<String>) -> CliError {
        CliError::parse(self.origin, self.line, message)
    }

    fn float(&self, pos: usize, what: &str) -> Result<Option<f64>> {
        cell(self.row, pos)
            .map(|s| {
                let v: f64 = s.parse().map_err(|_| self.err(format!("{what}: `{s}` is not a number")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(self.err(format!("{what}: non-finite value")))
                }
            })
            .transpose()
    }

    fn required_float(&self, pos: usize, what: &str) -> Result<f64> {
        self.float(pos, what)?.ok_or_else(|| self.err(format!("{what} is empty")))
    }

    fn flag(&self, pos: usize, what: &str) -> Result<Option<bool>> {
        cell(self.row, pos)
            .map(|s| match s {
                "0" | "false" => Ok(false),
                "1" | "true" => Ok(true),
                other => Err(self.err(format!("{what}: `{other}` is not 0 or 1"))),
            })
            .transpose()
    }

    fn stage(&self, cols: &StageColumns, stage: usize, treatment_required: bool) -> Result<StageObservation> {
        let error_free = cols
            .error_free
            .iter()
            .enumerate()
            .map(|(c, &p)| self.required_float(p, &format!("z{stage}_{}", c + 1)))
            .collect::<Result<Vec<_>>>()?;
        let surrogates = cols
            .replicates
            .iter()
            .enumerate()
            .map(|(c, reps)| {
                reps.iter()
                    .enumerate()
                    .map(|(l, &p)| self.float(p, &format!("w{stage}_{}_r{}", c + 1, l + 1)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let truth = cols
            .truth
            .iter()
            .enumerate()
            .map(|(c, &p)| self.float(p, &format!("x{stage}_{}", c + 1)))
            .collect::<Result<Vec<_>>>()?;
        let truth = match truth.iter().filter(|v| v.is_some()).count() {
            0 => None,
            n if n == truth.len() => Some(truth.into_iter().flatten().collect()),
            _ => return Err(self.err(format!("stage {stage} truth is partially filled"))),
        };
        let treatment = match cols.treatment {
            Some(p) => self.flag(p, &format!("a{stage}"))?,
            None => None,
        };
        let treatment = match (treatment, treatment_required) {
            (Some(a), _) => a,
            (None, false) => false,
            (None, true) => return Err(self.err(format!("a{stage} is empty"))),
        };
        StageObservation::new(error_free, surrogates, truth, treatment)
            .map_err(|e| CliError::Row { origin: self.origin.to_string(), line: self.line, source: e })
    }
}

/// Parse patient records from CSV text. `origin` names the input in errors.
pub fn read_records<R: Read>(input: R, origin: &str, mode: ReadMode) -> Result<Vec<PatientRecord>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers().map_err(|e| csv_error(origin, e))?.clone();
    if header.is_empty() {
        return Ok(Vec::new());
    }
    let schema = Schema::from_header(&header, origin)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(origin, e))?;
        let line = row.position().map_or(0, csv::Position::line);
        let r = RowReader { row: &row, origin, line };
        let id_cell = cell(&row, schema.id).ok_or_else(|| r.err("id is empty"))?;
        let id: u64 = id_cell.parse().map_err(|_| r.err(format!("id `{id_cell}` is not a non-negative integer")))?;
        let second_present = schema.stages.get(1).is_some_and(|s| s.cells().any(|p| cell(&row, p).is_some()));
        let stage_count = if second_present { 2 } else { 1 };
        let mut stages = Vec::with_capacity(stage_count);
        for (j, cols) in schema.stages.iter().take(stage_count).enumerate() {
            let required = mode == ReadMode::Training || j + 1 < stage_count;
            stages.push(r.stage(cols, j + 1, required)?);
        }
        let outcome = match (schema.outcome, mode) {
            (Some(p), ReadMode::Training) => r.required_float(p, "y")?,
            (None, ReadMode::Training) => return Err(CliError::parse(origin, 1, "missing `y` column")),
            (Some(p), ReadMode::Covariates) => r.float(p, "y")?.unwrap_or(0.0),
            (None, ReadMode::Covariates) => 0.0,
        };
        let y1 = schema.stage1_outcome.map(|p| r.float(p, "y1")).transpose()?.flatten();
        let r1 = schema.remission.map(|p| r.flag(p, "r1")).transpose()?.flatten();
        let record = PatientRecord::new(id, stages, outcome, y1, r1)
            .map_err(|e| CliError::Row { origin: origin.to_string(), line, source: e })?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_records_path(path: &Path, mode: ReadMode) -> Result<Vec<PatientRecord>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_records(file, &path.display().to_string(), mode)
}

fn csv_error(origin: &str, e: csv::Error) -> CliError {
    let line = e.position().map_or(0, csv::Position::line);
    CliError::parse(origin, line, e.to_string())
}

/// Column counts of one stage as written.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct StageShape {
    error_free: usize,
    error_prone: usize,
    replicates: usize,
    truth: bool,
}

fn stage_shape(records: &[PatientRecord], stage: usize) -> Result<Option<StageShape>> {
    let mut shape: Option<StageShape> = None;
    for r in records {
        let Ok(obs) = r.stage(stage) else { continue };
        let this = StageShape {
            error_free: obs.error_free().len(),
            error_prone: obs.error_prone_dim(),
            replicates: obs.replicate_columns(),
            truth: obs.true_covariate().is_some(),
        };
        match &mut shape {
            None => shape = Some(this),
            Some(s) => {
                if (s.error_free, s.error_prone) != (this.error_free, this.error_prone) {
                    return Err(CliError::Usage(format!(
                        "patient {}: stage {stage} covariate dimensions differ from earlier patients",
                        r.id()
                    )));
                }
                s.replicates = s.replicates.max(this.replicates);
                s.truth |= this.truth;
            }
        }
    }
    Ok(shape)
}

/// Floats are written with 17 significant digits so that reading them back
/// is exact.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

/// Write records in the layout [`read_records`] accepts.
pub fn write_records<W: Write>(output: W, records: &[PatientRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(output);
    let shapes: Vec<StageShape> = [1, 2].into_iter().map_while(|j| stage_shape(records, j).transpose()).collect::<Result<_>>()?;
    let has_y1 = records.iter().any(|r| r.stage1_outcome().is_some());
    let has_r1 = records.iter().any(|r| r.remission_flag().is_some());

    let mut header = vec!["id".to_string()];
    for (j, s) in shapes.iter().enumerate() {
        let j = j + 1;
        header.extend((1..=s.error_free).map(|c| format!("z{j}_{c}")));
        for c in 1..=s.error_prone {
            header.extend((1..=s.replicates).map(|l| {
                if s.error_prone == 1 { format!("w{j}_r{l}") } else { format!("w{j}_{c}_r{l}") }
            }));
        }
        if s.truth {
            header.extend((1..=s.error_prone).map(|c| if s.error_prone == 1 { format!("x{j}") } else { format!("x{j}_{c}") }));
        }
        header.push(format!("a{j}"));
    }
    header.push("y".into());
    if has_y1 {
        header.push("y1".into());
    }
    if has_r1 {
        header.push("r1".into());
    }
    writer.write_record(&header).map_err(|e| CliError::Usage(e.to_string()))?;

    for r in records {
        let mut row = vec![r.id().to_string()];
        for (j, s) in shapes.iter().enumerate() {
            let width = s.error_free + s.error_prone * s.replicates + if s.truth { s.error_prone } else { 0 } + 1;
            let Ok(obs) = r.stage(j + 1) else {
                row.extend(std::iter::repeat_n(String::new(), width));
                continue;
            };
            row.extend(obs.error_free().iter().map(|&z| format_float(z)));
            for reps in obs.surrogates() {
                row.extend((0..s.replicates).map(|l| reps.get(l).copied().flatten().map(format_float).unwrap_or_default()));
            }
            if s.truth {
                match obs.true_covariate() {
                    Some(x) => row.extend(x.iter().map(|&v| format_float(v))),
                    None => row.extend(std::iter::repeat_n(String::new(), s.error_prone)),
                }
            }
            row.push(flag(obs.treatment()));
        }
        row.push(format_float(r.outcome()));
        if has_y1 {
            row.push(r.stage1_outcome().map(format_float).unwrap_or_default());
        }
        if has_r1 {
            row.push(r.remission_flag().map(flag).unwrap_or_default());
        }
        writer.write_record(&row).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    writer.flush().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(())
}

pub fn write_records_path(path: &Path, records: &[PatientRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_records(file, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(z: f64, w: Vec<Option<f64>>, x: Option<f64>, a: bool) -> StageObservation {
        StageObservation::new(vec![z], vec![w], x.map(|v| vec![v]), a).unwrap()
    }

    #[test]
    fn column_names() {
        assert_eq!(parse_column("w1_r2"), Some(Column::Replicate { stage: 1, coord: 1, rep: 2 }));
        assert_eq!(parse_column("w2_3_r1"), Some(Column::Replicate { stage: 2, coord: 3, rep: 1 }));
        assert_eq!(parse_column("z2_1"), Some(Column::ErrorFree { stage: 2, coord: 1 }));
        assert_eq!(parse_column("x1"), Some(Column::Truth { stage: 1, coord: 1 }));
        assert_eq!(parse_column("a2"), Some(Column::Treatment { stage: 2 }));
        assert_eq!(parse_column("a3"), None);
        assert_eq!(parse_column("w1_r0"), None);
        assert_eq!(parse_column("q1"), None);
    }

    #[test]
    fn reads_the_documented_layout() {
        let text = "id,z1_1,w1_r1,w1_r2,w1_r3,a1,z2_1,w2_r1,w2_r2,w2_r3,a2,y\n\
                    1,0.5,1.0,1.2,,1,0.1,2.0,2.2,2.4,0,3.5\n\
                    2,0.25,0.9,1.1,1.3,0,,,,,,1.5\n";
        let recs = read_records(text.as_bytes(), "t", ReadMode::Training).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].stages().len(), 2);
        assert_eq!(recs[0].stage(1).unwrap().replicate_count(), 2);
        assert!(recs[0].stage(1).unwrap().treatment());
        assert_eq!(recs[1].stages().len(), 1);
        assert_eq!(recs[1].outcome(), 1.5);
    }

    #[test]
    fn bad_cell_reports_line() {
        let text = "id,z1_1,w1_r1,w1_r2,a1,y\n1,0.5,1.0,1.2,1,3\n2,0.5,oops,1.2,1,3\n";
        let err = read_records(text.as_bytes(), "t", ReadMode::Training).unwrap_err();
        assert_eq!(err.line(), Some(3));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_column_is_rejected() {
        let err = read_records("id,z1_1,w1_r1,a1,y,bogus\n".as_bytes(), "t", ReadMode::Training).unwrap_err();
        assert_eq!(err.line(), Some(1));
    }

    #[test]
    fn covariate_mode_tolerates_missing_outcome() {
        let text = "id,z1_1,w1_r1,w1_r2,a1,z2_1,w2_r1,w2_r2,a2,y\n7,0,1,1,1,0,1,1,,\n";
        assert!(read_records(text.as_bytes(), "t", ReadMode::Training).is_err());
        let recs = read_records(text.as_bytes(), "t", ReadMode::Covariates).unwrap();
        assert_eq!(recs[0].id(), 7);
    }

    #[test]
    fn empty_input_has_no_records() {
        assert!(read_records("".as_bytes(), "t", ReadMode::Covariates).unwrap().is_empty());
        let header_only = "id,z1_1,w1_r1,a1,y\n";
        assert!(read_records(header_only.as_bytes(), "t", ReadMode::Training).unwrap().is_empty());
    }

    #[test]
    fn round_trip_is_exact() {
        let recs = vec![
            PatientRecord::new(
                3,
                vec![obs(0.1, vec![Some(1.0 / 3.0), None, Some(-2.5e-9)], Some(0.7), true), obs(-1.0, vec![Some(2.0), Some(1e300), None], Some(1.5), false)],
                core::f64::consts::PI,
                Some(1.25),
                Some(false),
            )
            .unwrap(),
            PatientRecord::new(4, vec![obs(0.2, vec![Some(0.5), Some(0.6), None], Some(0.9), false)], -1.0, Some(2.0), Some(true))
                .unwrap(),
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &recs).unwrap();
        let back = read_records(buf.as_slice(), "t", ReadMode::Training).unwrap();
        assert_eq!(back, recs);
    }
}
