//! Observed marital distributions, and the gains they identify.
//!
//! ```text
//! [types.male]
//! a b
//! [types.female]
//! x y
//! [married]        # μ_ij, one row per male type
//! 10 2
//! 0  7
//! [singles]        # μ_i0 and μ_0j by label, men first on shared labels
//! a 5
//! b 3
//! x 4
//! y 9
//! ```

use std::path::Path;

use super::market::{parse_header, parse_real, strip_comment, tokens};
use super::InputError;

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedDistribution {
    pub male_types: Vec<String>,
    pub female_types: Vec<String>,
    pub married: Vec<Vec<f64>>,
    pub single_men: Vec<f64>,
    pub single_women: Vec<f64>,
}

impl ObservedDistribution {
    /// `π_ij = log(μ_ij / √(μ_i0 μ_0j))`; `None` where a count is zero and
    /// the log-gain is unidentified.
    pub fn log_gains(&self) -> Vec<Vec<Option<f64>>> {
        self.married
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &mu)| {
                        let (s0, s1) = (self.single_men[i], self.single_women[j]);
                        (mu > 0.0 && s0 > 0.0 && s1 > 0.0).then(|| mu.ln() - 0.5 * (s0.ln() + s1.ln()))
                    })
                    .collect()
            })
            .collect()
    }

    /// `Π_ij = μ_ij / √(μ_i0 μ_0j)`, taken as zero where singles vanish.
    pub fn gains(&self) -> Vec<Vec<f64>> {
        self.married
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, &mu)| {
                        let denom = (self.single_men[i] * self.single_women[j]).sqrt();
                        if denom > 0.0 {
                            mu / denom
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect()
    }

    fn validate(&self) -> Result<(), InputError> {
        let (ni, nj) = (self.male_types.len(), self.female_types.len());
        if ni == 0 || nj == 0 {
            return Err(InputError::Dimension("both sides need at least one type".into()));
        }
        if self.married.len() != ni || self.married.iter().any(|r| r.len() != nj) {
            return Err(InputError::Dimension(format!("[married] block must be {ni}x{nj}")));
        }
        let all = self
            .married
            .iter()
            .flatten()
            .chain(&self.single_men)
            .chain(&self.single_women);
        if all.clone().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(InputError::Dimension("counts must be finite and non-negative".into()));
        }
        Ok(())
    }
}

pub fn parse_distribution(path: &Path) -> Result<ObservedDistribution, InputError> {
    let text = std::fs::read_to_string(path).map_err(|e| InputError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_distribution_str(&text)
}

pub fn parse_distribution_str(text: &str) -> Result<ObservedDistribution, InputError> {
    let mut section = "";
    let mut male_types: Vec<String> = Vec::new();
    let mut female_types: Vec<String> = Vec::new();
    let mut married = Vec::new();
    let mut singles: Vec<(usize, usize, String, f64)> = Vec::new();
    for (index, raw) in text.lines().enumerate() {
        let lineno = index + 1;
        let line = strip_comment(raw);
        if line.trim().is_empty() {
            continue;
        }
        if let Some(header) = parse_header(line, lineno)? {
            if !["types.male", "types.female", "married", "singles"].contains(&header.name) {
                return Err(InputError::Parse {
                    line: lineno,
                    column: 1,
                    message: format!("unknown section [{}]", header.name),
                });
            }
            section = header.name;
            continue;
        }
        let toks = tokens(line);
        match section {
            "types.male" => male_types.extend(toks.iter().map(|(_, t)| t.to_string())),
            "types.female" => female_types.extend(toks.iter().map(|(_, t)| t.to_string())),
            "married" => married.push(
                toks.iter()
                    .map(|&(c, t)| parse_real(t, lineno, c))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            "singles" if toks.len() == 2 => singles.push((
                lineno,
                toks[0].0,
                toks[0].1.to_string(),
                parse_real(toks[1].1, lineno, toks[1].0)?,
            )),
            _ => {
                return Err(InputError::Parse {
                    line: lineno,
                    column: toks[0].0,
                    message: "unexpected content outside a section".into(),
                })
            }
        }
    }
    let ni = male_types.len();
    let all: Vec<&String> = male_types.iter().chain(&female_types).collect();
    let mut counts = vec![None; all.len()];
    for (line, column, label, value) in singles {
        match all
            .iter()
            .enumerate()
            .position(|(k, l)| **l == label && counts[k].is_none())
        {
            Some(k) => counts[k] = Some(value),
            None => {
                return Err(InputError::Parse {
                    line,
                    column,
                    message: format!("unexpected singles label `{label}`"),
                })
            }
        }
    }
    if let Some(k) = counts.iter().position(Option::is_none) {
        return Err(InputError::Dimension(format!(
            "[singles] has no entry for `{}`",
            all[k]
        )));
    }
    let counts: Vec<f64> = counts.into_iter().map(Option::unwrap).collect();
    let observed = ObservedDistribution {
        male_types,
        female_types,
        married,
        single_men: counts[..ni].to_vec(),
        single_women: counts[ni..].to_vec(),
    };
    observed.validate()?;
    Ok(observed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimates_gains_from_counts() {
        let text = "[types.male]\na b\n[types.female]\nx\n[married]\n8\n0\n[singles]\na 4\nb 3\nx 16\n";
        let d = parse_distribution_str(text).unwrap();
        assert_eq!(d.gains(), vec![vec![1.0], vec![0.0]]);
        let pi = d.log_gains();
        assert!(pi[0][0].unwrap().abs() < 1e-15);
        assert_eq!(pi[1][0], None);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(
            parse_distribution_str("[types.male]\na\n[types.female]\nx\n[married]\n1 2\n[singles]\na 1\nx 1\n")
                .is_err()
        );
        assert!(parse_distribution_str("[types.male]\na\n[types.female]\nx\n[married]\n1\n[singles]\na 1\n").is_err());
        assert!(
            parse_distribution_str("[types.male]\na\n[types.female]\nx\n[married]\n-1\n[singles]\na 1\nx 1\n").is_err()
        );
    }
}
