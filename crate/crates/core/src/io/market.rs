//! The line-oriented market file.
//!
//! ```text
//! # comments run to end of line
//! format_version = 1
//!
//! [types.male]
//! young old
//!
//! [types.female]
//! young old
//!
//! [gains mode=Pi]        # or mode=pi for log-gains
//! 1.0 0.5
//! 0.2 2.0
//!
//! [population]
//! young 100              # labels are looked up on both sides
//! old   80
//!
//! [c]                    # optional exogenous c_ij
//! 0.0 0.1
//! 0.1 0.0
//! ```
//!
//! A label may appear on both sides; in that case `[population]` lists it
//! twice and the first occurrence belongs to the male type.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;

use super::InputError;
use crate::model::GainsMatrix;

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum GainsMode {
    /// Log-gains `π_ij`.
    #[value(name = "pi")]
    LogGains,
    /// Gains `Π_ij = e^{π_ij}`.
    #[value(name = "Pi")]
    Gains,
}

impl fmt::Display for GainsMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GainsMode::LogGains => "pi",
            GainsMode::Gains => "Pi",
        })
    }
}

impl FromStr for GainsMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pi" => Ok(GainsMode::LogGains),
            "Pi" => Ok(GainsMode::Gains),
            other => Err(format!("unknown gains mode `{other}` (expected `pi` or `Pi`)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarketFile {
    pub format_version: String,
    pub male_types: Vec<String>,
    pub female_types: Vec<String>,
    pub gains_mode: GainsMode,
    /// Row-major, in the units named by `gains_mode`.
    pub gains: Vec<Vec<f64>>,
    /// Men first, then women, aligned with the label lists. Zero allowed.
    pub populations: Vec<f64>,
    pub c_matrix: Option<Vec<Vec<f64>>>,
}

impl MarketFile {
    /// Checks label uniqueness, block shapes and entry signs.
    pub fn validate(&self) -> Result<(), InputError> {
        let (ni, nj) = (self.male_types.len(), self.female_types.len());
        if ni == 0 || nj == 0 {
            return Err(InputError::Dimension(
                "both [types.male] and [types.female] need at least one label".into(),
            ));
        }
        for (side, labels) in [("male", &self.male_types), ("female", &self.female_types)] {
            let mut seen = HashSet::new();
            if let Some(dup) = labels.iter().find(|l| !seen.insert(l.as_str())) {
                return Err(InputError::Dimension(format!("duplicate {side} label `{dup}`")));
            }
        }
        check_shape("gains", &self.gains, ni, nj)?;
        if let Some(c) = &self.c_matrix {
            check_shape("c", c, ni, nj)?;
        }
        if self.populations.len() != ni + nj {
            return Err(InputError::Dimension(format!(
                "population block has {} entries but {} types are declared",
                self.populations.len(),
                ni + nj
            )));
        }
        for (k, &v) in self.populations.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(InputError::Dimension(format!(
                    "population of `{}` is {v}",
                    self.type_label(k)
                )));
            }
        }
        for (i, row) in self.gains.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() || (self.gains_mode == GainsMode::Gains && v < 0.0) {
                    return Err(InputError::NegativeGains {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn type_label(&self, k: usize) -> &str {
        if k < self.male_types.len() {
            &self.male_types[k]
        } else {
            &self.female_types[k - self.male_types.len()]
        }
    }

    /// Π, exponentiating log-gains where needed.
    pub fn gains_matrix(&self) -> Result<GainsMatrix, InputError> {
        let (ni, nj) = (self.male_types.len(), self.female_types.len());
        let raw = DMatrix::from_fn(ni, nj, |i, j| self.gains[i][j]);
        let gains = match self.gains_mode {
            GainsMode::Gains => GainsMatrix::with_labels(raw, self.male_types.clone(), self.female_types.clone()),
            GainsMode::LogGains => {
                GainsMatrix::from_log_gains(&raw, self.male_types.clone(), self.female_types.clone())
            }
        };
        gains.map_err(InputError::Model)
    }

    pub fn c(&self) -> Option<DMatrix<f64>> {
        self.c_matrix
            .as_ref()
            .map(|c| DMatrix::from_fn(c.len(), c[0].len(), |i, j| c[i][j]))
    }

    /// Serializes back into the structured text format.
    pub fn to_text(&self) -> String {
        let mut out = format!("format_version = {}\n\n[types.male]\n", self.format_version);
        out += &self.male_types.join(" ");
        out += "\n\n[types.female]\n";
        out += &self.female_types.join(" ");
        out += &format!("\n\n[gains mode={}]\n", self.gains_mode);
        write_rows(&mut out, &self.gains);
        out += "\n[population]\n";
        for (k, v) in self.populations.iter().enumerate() {
            out += &format!("{} {v:?}\n", self.type_label(k));
        }
        if let Some(c) = &self.c_matrix {
            out += "\n[c]\n";
            write_rows(&mut out, c);
        }
        out
    }
}

fn write_rows(out: &mut String, rows: &[Vec<f64>]) {
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
}

fn check_shape(block: &str, rows: &[Vec<f64>], ni: usize, nj: usize) -> Result<(), InputError> {
    if rows.len() != ni {
        return Err(InputError::Dimension(format!(
            "[{block}] block has {} rows but [types.male] declares {ni} types",
            rows.len()
        )));
    }
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != nj) {
        return Err(InputError::Dimension(format!(
            "[{block}] row {} has {} entries but [types.female] declares {nj} types",
            i + 1,
            row.len()
        )));
    }
    Ok(())
}

/// Whitespace-separated tokens with their 1-based character columns.
pub(crate) fn tokens(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (col, (byte, ch)) in line.char_indices().enumerate() {
        match (ch.is_whitespace(), start) {
            (false, None) => start = Some((col + 1, byte)),
            (true, Some((c, b))) => {
                out.push((c, &line[b..byte]));
                start = None;
            }
            _ => {}
        }
    }
    if let Some((c, b)) = start {
        out.push((c, &line[b..]));
    }
    out
}

pub(crate) fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("")
}

pub(crate) fn parse_real(token: &str, line: usize, column: usize) -> Result<f64, InputError> {
    token.parse::<f64>().map_err(|_| InputError::Parse {
        line,
        column,
        message: format!("expected a number, found `{token}`"),
    })
}

/// A `[name key=value ...]` header.
pub(crate) struct SectionHeader<'a> {
    pub name: &'a str,
    pub attributes: Vec<(usize, &'a str, &'a str)>,
}

pub(crate) fn parse_header(line: &str, lineno: usize) -> Result<Option<SectionHeader<'_>>, InputError> {
    let trimmed = line.trim();
    if !trimmed.starts_with('[') {
        return Ok(None);
    }
    let offset = line.len() - line.trim_start().len();
    let inner = trimmed
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or(InputError::Parse {
            line: lineno,
            column: offset + 1,
            message: "section header must end with `]`".into(),
        })?;
    let parts = tokens(inner);
    let Some(&(_, name)) = parts.first() else {
        return Err(InputError::Parse {
            line: lineno,
            column: offset + 1,
            message: "empty section header".into(),
        });
    };
    let mut attributes = Vec::new();
    for &(col, part) in &parts[1..] {
        let (key, value) = part.split_once('=').ok_or(InputError::Parse {
            line: lineno,
            column: offset + 1 + col,
            message: format!("expected key=value in section header, found `{part}`"),
        })?;
        attributes.push((offset + 1 + col, key, value));
    }
    Ok(Some(SectionHeader { name, attributes }))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Preamble,
    Male,
    Female,
    Gains,
    Population,
    C,
}

pub fn parse_market(path: &Path) -> Result<MarketFile, InputError> {
    let text = std::fs::read_to_string(path).map_err(|e| InputError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_market_str(&text)
}

pub fn parse_market_str(text: &str) -> Result<MarketFile, InputError> {
    let mut section = Section::Preamble;
    let mut seen: Vec<&str> = Vec::new();
    let mut format_version = FORMAT_VERSION.to_string();
    let mut male_types: Vec<String> = Vec::new();
    let mut female_types: Vec<String> = Vec::new();
    let mut gains_mode = None;
    let mut gains = Vec::new();
    let mut c_rows = Vec::new();
    let mut population_lines: Vec<(usize, usize, String, f64)> = Vec::new();

    for (index, raw) in text.lines().enumerate() {
        let lineno = index + 1;
        let line = strip_comment(raw);
        if line.trim().is_empty() {
            continue;
        }
        if let Some(header) = parse_header(line, lineno)? {
            if seen.contains(&header.name) {
                return Err(InputError::Parse {
                    line: lineno,
                    column: 1,
                    message: format!("section [{}] appears twice", header.name),
                });
            }
            section = match header.name {
                "types.male" => Section::Male,
                "types.female" => Section::Female,
                "gains" => Section::Gains,
                "population" => Section::Population,
                "c" => Section::C,
                other => {
                    return Err(InputError::Parse {
                        line: lineno,
                        column: 1,
                        message: format!("unknown section [{other}]"),
                    })
                }
            };
            seen.push(header.name);
            for (col, key, value) in header.attributes {
                match (section, key) {
                    (Section::Gains, "mode") => {
                        gains_mode = Some(value.parse::<GainsMode>().map_err(|_| InputError::UnknownMode {
                            line: lineno,
                            column: col,
                            tag: value.to_string(),
                        })?)
                    }
                    _ => {
                        return Err(InputError::Parse {
                            line: lineno,
                            column: col,
                            message: format!("unexpected attribute `{key}` on [{}]", header.name),
                        })
                    }
                }
            }
            if section == Section::Gains && gains_mode.is_none() {
                return Err(InputError::Parse {
                    line: lineno,
                    column: 1,
                    message: "[gains] needs a mode tag: [gains mode=Pi] or [gains mode=pi]".into(),
                });
            }
            continue;
        }

        let toks = tokens(line);
        match section {
            Section::Preamble => {
                let (key, value) = line.split_once('=').ok_or(InputError::Parse {
                    line: lineno,
                    column: toks[0].0,
                    message: "expected `key = value` before the first section".into(),
                })?;
                match key.trim() {
                    "format_version" => format_version = value.trim().to_string(),
                    other => {
                        return Err(InputError::Parse {
                            line: lineno,
                            column: toks[0].0,
                            message: format!("unknown key `{other}`"),
                        })
                    }
                }
            }
            Section::Male => male_types.extend(toks.iter().map(|(_, t)| t.to_string())),
            Section::Female => female_types.extend(toks.iter().map(|(_, t)| t.to_string())),
            Section::Gains | Section::C => {
                let row = toks
                    .iter()
                    .map(|&(col, t)| parse_real(t, lineno, col))
                    .collect::<Result<Vec<_>, _>>()?;
                if section == Section::Gains {
                    gains.push(row)
                } else {
                    c_rows.push(row)
                }
            }
            Section::Population => {
                if toks.len() != 2 {
                    return Err(InputError::Parse {
                        line: lineno,
                        column: toks[0].0,
                        message: "population lines must read `label value`".into(),
                    });
                }
                let value = parse_real(toks[1].1, lineno, toks[1].0)?;
                population_lines.push((lineno, toks[0].0, toks[0].1.to_string(), value));
            }
        }
    }

    for required in ["types.male", "types.female", "gains", "population"] {
        if !seen.contains(&required) {
            return Err(InputError::Parse {
                line: 0,
                column: 0,
                message: format!("missing section [{required}]"),
            });
        }
    }

    // Assign population lines to types; a label shared by both sides is
    // consumed by the male type first.
    let all: Vec<&String> = male_types.iter().chain(&female_types).collect();
    let mut populations = vec![None; all.len()];
    for (lineno, col, label, value) in population_lines {
        let slot = all
            .iter()
            .enumerate()
            .position(|(k, l)| **l == label && populations[k].is_none());
        match slot {
            Some(k) => populations[k] = Some(value),
            None => {
                let message = if all.iter().any(|l| **l == label) {
                    format!("population for `{label}` given more than once")
                } else {
                    format!("`{label}` is not a declared type")
                };
                return Err(InputError::Parse {
                    line: lineno,
                    column: col,
                    message,
                });
            }
        }
    }
    if let Some(k) = populations.iter().position(Option::is_none) {
        return Err(InputError::Dimension(format!(
            "[population] has no entry for `{}`",
            all[k]
        )));
    }

    let file = MarketFile {
        format_version,
        male_types,
        female_types,
        gains_mode: gains_mode.expect("checked with the [gains] header"),
        gains,
        populations: populations.into_iter().map(Option::unwrap).collect(),
        c_matrix: seen.contains(&"c").then_some(c_rows),
    };
    file.validate()?;
    Ok(file)
}
