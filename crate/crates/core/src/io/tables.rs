//! CSV ingestion: a gains table plus a two-column population table.
//!
//! The gains table has a header row of female labels (the first header cell
//! is ignored) and one row per male type whose first cell is the label.
//! The population table holds `label,count` rows, optionally under a header.

use std::path::Path;

use super::market::{GainsMode, MarketFile, FORMAT_VERSION};
use super::InputError;

fn csv_error(path: &Path, message: impl ToString) -> InputError {
    InputError::Csv {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

fn cell(path: &Path, record: &csv::StringRecord, index: usize) -> Result<f64, InputError> {
    let line = record.position().map_or(0, |p| p.line());
    let raw = record.get(index).unwrap_or("").trim();
    raw.parse::<f64>().map_err(|_| InputError::Parse {
        line: line as usize,
        column: index + 1,
        message: format!("{}: expected a number, found `{raw}`", path.display()),
    })
}

pub fn parse_tables(gains_path: &Path, population_path: &Path, mode: GainsMode) -> Result<MarketFile, InputError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(gains_path)
        .map_err(|e| csv_error(gains_path, e))?;
    let header = reader.headers().map_err(|e| csv_error(gains_path, e))?.clone();
    let female_types: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut male_types = Vec::new();
    let mut gains = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(gains_path, e))?;
        male_types.push(record.get(0).unwrap_or("").to_string());
        gains.push(
            (1..record.len())
                .map(|c| cell(gains_path, &record, c))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(population_path)
        .map_err(|e| csv_error(population_path, e))?;
    let all: Vec<&String> = male_types.iter().chain(&female_types).collect();
    let mut populations = vec![None; all.len()];
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(population_path, e))?;
        if record.len() != 2 {
            return Err(csv_error(population_path, "population rows must read `label,count`"));
        }
        let label = &record[0];
        // A non-numeric count on the first row is a header.
        if n == 0 && record[1].parse::<f64>().is_err() {
            continue;
        }
        let value = cell(population_path, &record, 1)?;
        match all
            .iter()
            .enumerate()
            .position(|(k, l)| *l == label && populations[k].is_none())
        {
            Some(k) => populations[k] = Some(value),
            None => {
                return Err(csv_error(
                    population_path,
                    format!("unexpected or repeated label `{label}`"),
                ))
            }
        }
    }
    if let Some(k) = populations.iter().position(Option::is_none) {
        return Err(InputError::Dimension(format!(
            "{}: no population for `{}`",
            population_path.display(),
            all[k]
        )));
    }

    let file = MarketFile {
        format_version: FORMAT_VERSION.to_string(),
        male_types,
        female_types,
        gains_mode: mode,
        gains,
        populations: populations.into_iter().map(Option::unwrap).collect(),
        c_matrix: None,
    };
    file.validate()?;
    Ok(file)
}
