//! CSV ingestion and export of grouped survival data.
//!
//! Three files describe a dataset:
//!
//! * covariates: a header of column names, then one row of numbers per subject;
//! * survival: columns `time` (positive) and `status` (`1` event, `0` censored);
//! * groups: columns `column_name` and `group_id`, one row per covariate.
//!
//! Groups are laid out in order of first appearance in the groups file, and
//! columns keep their covariate-file order inside a group.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{FadsError, Result};
use crate::survival::{break_ties, Group, SurvivalDataset};

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    /// Separate tied event times by `1e-9` per rank instead of failing.
    pub break_ties: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub id: String,
    pub size: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestReport {
    pub n: usize,
    pub p: usize,
    pub groups: Vec<GroupSummary>,
    pub events: usize,
    pub censoring_rate: f64,
    pub ties_broken: usize,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: SurvivalDataset,
    /// Column names in dataset order.
    pub column_names: Vec<String>,
    pub report: IngestReport,
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| FadsError::InvalidInput(format!("{}: {e}", path.display())))
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| {
        FadsError::InvalidInput(format!("{}: missing required column `{name}`", path.display()))
    })
}

fn parse_real(cell: &str, path: &Path, row: usize, column: &str) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| {
        FadsError::InvalidInput(format!(
            "{}: non-numeric value `{cell}` at data row {row}, column `{column}`",
            path.display()
        ))
    })
}

pub fn ingest(covariates: &Path, survival: &Path, groups: &Path) -> Result<Ingested> {
    ingest_with(covariates, survival, groups, IngestOptions::default())
}

pub fn ingest_with(
    covariates: &Path,
    survival: &Path,
    groups: &Path,
    options: IngestOptions,
) -> Result<Ingested> {
    let mut rdr = reader(covariates)?;
    let names: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    let mut seen = HashSet::new();
    if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
        return Err(FadsError::InvalidInput(format!(
            "{}: duplicate column name `{dup}`",
            covariates.display()
        )));
    }
    let mut values = Vec::new();
    let mut n = 0;
    for record in rdr.records() {
        let record = record?;
        n += 1;
        if record.len() != names.len() {
            return Err(FadsError::InvalidInput(format!(
                "{}: data row {n} has {} fields, header has {}",
                covariates.display(),
                record.len(),
                names.len()
            )));
        }
        for (cell, name) in record.iter().zip(&names) {
            values.push(parse_real(cell, covariates, n, name)?);
        }
    }
    let raw = DMatrix::from_row_slice(n, names.len(), &values);

    let mut rdr = reader(survival)?;
    let headers = rdr.headers()?.clone();
    let (ti, si) = (
        column_index(&headers, "time", survival)?,
        column_index(&headers, "status", survival)?,
    );
    let mut times = Vec::new();
    let mut events = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let row = row + 1;
        let field = |i: usize| record.get(i).unwrap_or("");
        times.push(parse_real(field(ti), survival, row, "time")?);
        events.push(match field(si) {
            "1" => true,
            "0" => false,
            other => {
                return Err(FadsError::InvalidInput(format!(
                    "{}: status must be 0 or 1, got `{other}` at data row {row}",
                    survival.display()
                )))
            }
        });
    }
    if times.len() != n {
        return Err(FadsError::Dimension(format!(
            "covariates have {n} rows but survival has {}",
            times.len()
        )));
    }

    let mut rdr = reader(groups)?;
    let headers = rdr.headers()?.clone();
    let (ci, gi) = (
        column_index(&headers, "column_name", groups)?,
        column_index(&headers, "group_id", groups)?,
    );
    let mut group_of: HashMap<String, String> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let column = record.get(ci).unwrap_or("").to_string();
        let group = record.get(gi).unwrap_or("").to_string();
        if group.is_empty() {
            return Err(FadsError::InvalidInput(format!(
                "{}: empty group_id at data row {}",
                groups.display(),
                row + 1
            )));
        }
        if !names.contains(&column) {
            return Err(FadsError::InvalidInput(format!(
                "{}: column `{column}` is not in the covariate file",
                groups.display()
            )));
        }
        if group_of.insert(column.clone(), group.clone()).is_some() {
            return Err(FadsError::InvalidInput(format!(
                "{}: column `{column}` assigned twice",
                groups.display()
            )));
        }
        if !order.contains(&group) {
            order.push(group);
        }
    }
    let orphans: Vec<&str> = names
        .iter()
        .filter(|c| !group_of.contains_key(*c))
        .map(String::as_str)
        .collect();
    if !orphans.is_empty() {
        return Err(FadsError::InvalidInput(format!(
            "columns without a group: {}",
            orphans.join(", ")
        )));
    }

    let mut permutation = Vec::with_capacity(names.len());
    let mut layout = Vec::with_capacity(order.len());
    for g in &order {
        let start = permutation.len();
        permutation.extend((0..names.len()).filter(|&j| &group_of[&names[j]] == g));
        layout.push(Group::new(g.clone(), start..permutation.len()));
    }
    let x = raw.select_columns(&permutation);
    let column_names = permutation.iter().map(|&j| names[j].clone()).collect();

    let ties_broken = if options.break_ties {
        break_ties(&mut times, &events)
    } else {
        0
    };
    let data = SurvivalDataset::new(times, events, x, layout).map_err(|e| match e {
        FadsError::TiedEvents { first, second, time } => FadsError::InvalidInput(format!(
            "{}: data rows {} and {} are both events at time {time}; \
             add a small jitter (e.g. 1e-9 per rank) or pass --break-ties",
            survival.display(),
            first + 1,
            second + 1
        )),
        other => other,
    })?;
    let report = IngestReport {
        n: data.n(),
        p: data.p(),
        groups: data
            .groups()
            .iter()
            .map(|g| GroupSummary {
                id: g.id.clone(),
                size: g.len(),
            })
            .collect(),
        events: data.event_count(),
        censoring_rate: data.censoring_rate(),
        ties_broken,
    };
    Ok(Ingested {
        data,
        column_names,
        report,
    })
}

/// Rescales every non-constant column to unit standard deviation.
pub fn standardize_columns(data: &SurvivalDataset) -> Result<SurvivalDataset> {
    let mut x = data.covariates().clone();
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 0.0 {
            col /= sd;
        }
    }
    SurvivalDataset::new_allowing_ties(
        data.times().to_vec(),
        data.events().to_vec(),
        x,
        data.groups().to_vec(),
    )
}

/// Writes `covariates.csv`, `survival.csv` and `groups.csv` into `dir`.
pub fn write_dataset(data: &SurvivalDataset, column_names: &[String], dir: &Path) -> Result<()> {
    if column_names.len() != data.p() {
        return Err(FadsError::Dimension(format!(
            "{} column names for {} columns",
            column_names.len(),
            data.p()
        )));
    }
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("covariates.csv"))?;
    w.write_record(column_names)?;
    let x = data.covariates();
    for i in 0..data.n() {
        w.serialize(x.row(i).iter().collect::<Vec<_>>())?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("survival.csv"))?;
    w.write_record(["time", "status"])?;
    for (t, e) in data.times().iter().zip(data.events()) {
        w.write_record([t.to_string(), (*e as u8).to_string()])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("groups.csv"))?;
    w.write_record(["column_name", "group_id"])?;
    for g in data.groups() {
        for j in g.columns.clone() {
            w.write_record([column_names[j].as_str(), g.id.as_str()])?;
        }
    }
    w.flush()?;
    Ok(())
}
