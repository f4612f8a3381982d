//! Line-oriented text form of an [`IlpProblem`].
//!
//! ```text
//! # sliceforest ilp v1
//! variables 3
//! v 0 appear E h0 12.5
//! v 1 disappear h0 E 12.5
//! v 2 x - - -1
//! constraints 2
//! r le 1 0:1
//! r eq 0 0:1 1:-1
//! ```
//!
//! A variable line is `v <index> <kind> <sources> <targets> <cost>`; a row line
//! is `r <le|eq> <rhs>` followed by `index:coefficient` terms. Numbers use the
//! shortest representation that parses back to the same `f64`, so the output
//! is byte-stable. Blank lines and `#` comments are ignored when parsing.

use std::fmt::Write as _;

use super::{IlpProblem, Relation, Row};
use crate::error::{Error, Result};

pub const HEADER: &str = "# sliceforest ilp v1";

/// Kind and endpoints of one variable, as printed in its line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarLabel {
    pub kind: String,
    pub sources: String,
    pub targets: String,
}

impl Default for VarLabel {
    fn default() -> Self {
        Self {
            kind: "x".into(),
            sources: "-".into(),
            targets: "-".into(),
        }
    }
}

pub fn format_problem(problem: &IlpProblem, labels: Option<&[VarLabel]>) -> String {
    let default = VarLabel::default();
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    let _ = writeln!(out, "variables {}", problem.costs.len());
    for (j, c) in problem.costs.iter().enumerate() {
        let l = labels.and_then(|l| l.get(j)).unwrap_or(&default);
        let _ = writeln!(out, "v {j} {} {} {} {c}", l.kind, l.sources, l.targets);
    }
    let _ = writeln!(out, "constraints {}", problem.rows.len());
    for row in &problem.rows {
        let _ = write!(out, "r {} {}", row.relation.as_str(), row.rhs);
        for (j, a) in &row.coefs {
            let _ = write!(out, " {j}:{a}");
        }
        out.push('\n');
    }
    out
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| Error::Data(format!("line {line}: bad number {tok:?}")))
}

fn parse_usize(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::Data(format!("line {line}: bad index {tok:?}")))
}

/// Parses the text form; variable lines may appear in any order but must
/// cover indices `0..variables` exactly once.
pub fn parse_problem(text: &str) -> Result<(IlpProblem, Vec<VarLabel>)> {
    let mut declared: Option<usize> = None;
    let mut costs: Vec<Option<f64>> = Vec::new();
    let mut labels: Vec<VarLabel> = Vec::new();
    let mut rows = Vec::new();
    let mut declared_rows = None;

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.trim();
        if content.is_empty() || content.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        match toks[0] {
            "variables" => {
                let m = parse_usize(toks.get(1).copied().unwrap_or(""), line)?;
                declared = Some(m);
                costs = vec![None; m];
                labels = vec![VarLabel::default(); m];
            }
            "constraints" => {
                declared_rows = Some(parse_usize(toks.get(1).copied().unwrap_or(""), line)?);
            }
            "v" => {
                let m = declared.ok_or_else(|| {
                    Error::Data(format!("line {line}: variable before 'variables' header"))
                })?;
                if toks.len() != 6 {
                    return Err(Error::Data(format!(
                        "line {line}: expected 'v <index> <kind> <sources> <targets> <cost>'"
                    )));
                }
                let j = parse_usize(toks[1], line)?;
                if j >= m {
                    return Err(Error::Data(format!("line {line}: index {j} out of range")));
                }
                if costs[j].is_some() {
                    return Err(Error::Data(format!("line {line}: duplicate variable {j}")));
                }
                costs[j] = Some(parse_f64(toks[5], line)?);
                labels[j] = VarLabel {
                    kind: toks[2].into(),
                    sources: toks[3].into(),
                    targets: toks[4].into(),
                };
            }
            "r" => {
                if toks.len() < 3 {
                    return Err(Error::Data(format!("line {line}: truncated row")));
                }
                let relation = match toks[1] {
                    "le" => Relation::Le,
                    "eq" => Relation::Eq,
                    other => {
                        return Err(Error::Data(format!(
                            "line {line}: unknown relation {other:?}"
                        )))
                    }
                };
                let rhs = parse_f64(toks[2], line)?;
                let mut coefs = Vec::with_capacity(toks.len() - 3);
                for term in &toks[3..] {
                    let (j, a) = term.split_once(':').ok_or_else(|| {
                        Error::Data(format!("line {line}: expected index:coef, got {term:?}"))
                    })?;
                    coefs.push((parse_usize(j, line)?, parse_f64(a, line)?));
                }
                rows.push(Row {
                    coefs,
                    relation,
                    rhs,
                });
            }
            other => {
                return Err(Error::Data(format!(
                    "line {line}: unexpected record {other:?}"
                )))
            }
        }
    }

    let costs = costs
        .into_iter()
        .enumerate()
        .map(|(j, c)| c.ok_or_else(|| Error::Data(format!("variable {j} is missing"))))
        .collect::<Result<Vec<f64>>>()?;
    if let Some(r) = declared_rows {
        if r != rows.len() {
            return Err(Error::Data(format!(
                "declared {r} constraints, found {}",
                rows.len()
            )));
        }
    }
    let problem = IlpProblem { costs, rows };
    problem.validate()?;
    Ok((problem, labels))
}
