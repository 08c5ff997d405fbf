//! CSV input and output of datasets.
//!
//! The file needs a header row. The exposure column holds 0 or 1, the
//! outcome column non-negative integers and every covariate column finite
//! numbers. Columns the run does not reference are ignored.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use cmr_core::Dataset;

use crate::error::{CliError, CliResult};

/// Columns a run reads from the input file.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnSpec {
    pub exposure: String,
    pub outcome: String,
    pub covariates: Vec<String>,
}

pub fn ingest_csv(path: &Path, columns: &ColumnSpec) -> CliResult<Dataset> {
    let file = File::open(path).map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    read_csv(file, columns)
}

pub fn read_csv<R: Read>(reader: R, columns: &ColumnSpec) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("cannot read header: {e}")))?
        .clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(CliError::Data("file is empty".into()));
    }
    let position = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("unknown column `{name}`")))
    };
    let a_col = position(&columns.exposure)?;
    let y_col = position(&columns.outcome)?;
    let mut cov_cols = Vec::with_capacity(columns.covariates.len());
    for name in &columns.covariates {
        if !cov_cols.iter().any(|(n, _)| n == name) {
            cov_cols.push((name.clone(), position(name)?));
        }
    }

    let mut a = Vec::new();
    let mut y = Vec::new();
    let mut covs: Vec<Vec<f64>> = vec![Vec::new(); cov_cols.len()];
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| CliError::Data(format!("row {row}: {e}")))?;
        let field = |col: usize, name: &str| -> CliResult<&str> {
            match record.get(col) {
                Some(v) if !v.is_empty() && !v.eq_ignore_ascii_case("na") => Ok(v),
                _ => Err(CliError::Data(format!("row {row}: missing value for column `{name}`"))),
            }
        };
        let raw = field(a_col, &columns.exposure)?;
        a.push(match raw {
            "0" => 0,
            "1" => 1,
            _ => {
                return Err(CliError::Data(format!(
                    "row {row}: exposure column `{}` must be 0 or 1, got `{raw}`",
                    columns.exposure
                )))
            }
        });
        let raw = field(y_col, &columns.outcome)?;
        y.push(raw.parse::<u64>().map_err(|_| {
            CliError::Data(format!(
                "row {row}: outcome column `{}` must be a non-negative integer, got `{raw}`",
                columns.outcome
            ))
        })?);
        for ((name, col), values) in cov_cols.iter().zip(covs.iter_mut()) {
            let raw = field(*col, name)?;
            let v: f64 = raw
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CliError::Data(format!("row {row}: column `{name}` value `{raw}` is not a finite number")))?;
            values.push(v);
        }
    }
    if a.is_empty() {
        return Err(CliError::Data("file has a header but no data rows".into()));
    }
    let mut data = Dataset::with_names(&columns.exposure, &columns.outcome, a, y)?;
    for ((name, _), values) in cov_cols.into_iter().zip(covs) {
        data.add_column(&name, values)?;
    }
    Ok(data)
}

/// Writes the exposure, outcome and every covariate column. Values are
/// printed with round-trip precision.
pub fn write_csv<W: Write>(writer: W, data: &Dataset) -> CliResult<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let names: Vec<&str> = data.column_names().collect();
    let mut header = vec![data.exposure_name(), data.outcome_name()];
    header.extend(&names);
    let map = |e: csv::Error| CliError::Io(e.into());
    wtr.write_record(&header).map_err(map)?;
    let cols: Vec<&[f64]> = names.iter().map(|n| data.column(n)).collect::<Result<_, _>>()?;
    for i in 0..data.n() {
        let mut rec = vec![data.exposure()[i].to_string(), data.outcome()[i].to_string()];
        rec.extend(cols.iter().map(|c| c[i].to_string()));
        wtr.write_record(&rec).map_err(map)?;
    }
    wtr.flush()?;
    Ok(())
}
