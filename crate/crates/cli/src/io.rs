//! Matrix files: dense delimited text and 1-indexed coordinate triples.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cebmf::engine::Observations;
use cebmf::types::DataMatrix;
use ndarray::Array2;

use crate::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

fn is_missing(tok: &str) -> bool {
    matches!(tok, "" | "NA" | "na" | "NaN" | "nan" | "?")
}

fn parse_cell(tok: &str) -> Option<f64> {
    if is_missing(tok) {
        Some(f64::NAN)
    } else {
        tok.parse::<f64>().ok().filter(|v| v.is_finite())
    }
}

fn data_lines(text: &str) -> Vec<(usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .collect()
}

/// Dense delimited values (tab, comma or whitespace). A first row that does
/// not parse is a header; a first column that does not parse holds row
/// labels. NA, NaN, ? and empty fields are missing.
pub fn parse_dense(text: &str) -> CliResult<Array2<f64>> {
    let mut lines = data_lines(text);
    if lines.is_empty() {
        return Err(CliError::Parse("matrix file has no data".into()));
    }
    let first = split_fields(lines[0].1);
    if first.iter().skip(1).any(|t| parse_cell(t).is_none()) {
        lines.remove(0);
        if lines.is_empty() {
            return Err(CliError::Parse("matrix file has only a header".into()));
        }
    }
    let labelled = parse_cell(split_fields(lines[0].1)[0]).is_none();
    let mut values = Vec::new();
    let mut width = None;
    for (no, line) in &lines {
        let mut fields = split_fields(line);
        if labelled {
            fields.remove(0);
        }
        match width {
            None => width = Some(fields.len()),
            Some(w) if w != fields.len() => {
                return Err(CliError::Parse(format!("line {no}: expected {w} fields, found {}", fields.len())));
            }
            _ => {}
        }
        for tok in fields {
            values.push(parse_cell(tok).ok_or_else(|| CliError::Parse(format!("line {no}: cannot parse {tok:?}")))?);
        }
    }
    let p = width.unwrap_or(0);
    if p == 0 {
        return Err(CliError::Parse("matrix has no columns".into()));
    }
    Array2::from_shape_vec((lines.len(), p), values).map_err(|e| CliError::Parse(e.to_string()))
}

/// `row col value` lines (1-indexed; extra columns ignored; a non-numeric
/// first line is a header). Returns 0-indexed entries and the largest indices.
pub fn parse_triples(text: &str) -> CliResult<(Vec<(usize, usize, f64)>, (usize, usize))> {
    let mut entries = Vec::new();
    let (mut n, mut p) = (0, 0);
    for (k, (no, line)) in data_lines(text).into_iter().enumerate() {
        let f = split_fields(line);
        let idx = |t: &str| t.parse::<usize>().ok().filter(|&v| v >= 1);
        if f.len() < 3 || idx(f[0]).is_none() || idx(f[1]).is_none() {
            if k == 0 {
                continue;
            }
            return Err(CliError::Parse(format!("line {no}: expected `row col value` with 1-based indices")));
        }
        let (i, j) = (idx(f[0]).unwrap_or(1) - 1, idx(f[1]).unwrap_or(1) - 1);
        let v = f[2]
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| CliError::Parse(format!("line {no}: cannot parse value {:?}", f[2])))?;
        n = n.max(i + 1);
        p = p.max(j + 1);
        entries.push((i, j, v));
    }
    if entries.is_empty() {
        return Err(CliError::Parse("triple file has no entries".into()));
    }
    Ok((entries, (n, p)))
}

pub fn parse_shape(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::Usage(format!("shape must be N,P, got {s:?}"));
    let (a, b) = s.split_once([',', 'x']).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Matrix contents as loaded from either format.
pub enum Loaded {
    Dense(DataMatrix),
    Triples { shape: (usize, usize), entries: Vec<(usize, usize, f64)> },
}

impl Loaded {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Loaded::Dense(z) => (z.nrows(), z.ncols()),
            Loaded::Triples { shape, .. } => *shape,
        }
    }

    pub fn observations(&self) -> CliResult<Observations> {
        Ok(match self {
            Loaded::Dense(z) => Observations::from_data(z),
            Loaded::Triples { shape, entries } => Observations::from_triplets(shape.0, shape.1, entries)?,
        })
    }

    /// Observed cells as 0-indexed (row, col, value).
    pub fn cells(&self) -> Vec<(usize, usize, f64)> {
        match self {
            Loaded::Dense(z) => (0..z.nrows())
                .flat_map(|i| (0..z.ncols()).map(move |j| (i, j)))
                .filter(|&(i, j)| z.is_observed(i, j))
                .map(|(i, j)| (i, j, z.values()[[i, j]]))
                .collect(),
            Loaded::Triples { entries, .. } => entries.clone(),
        }
    }
}

pub fn load_matrix(path: &Path, triples: bool, shape: Option<(usize, usize)>) -> CliResult<Loaded> {
    let text = read_text(path)?;
    if triples {
        let (entries, max) = parse_triples(&text)?;
        let shape = match shape {
            Some(s) if s.0 >= max.0 && s.1 >= max.1 => s,
            Some(s) => {
                return Err(CliError::Parse(format!("entries reach {}x{}, beyond the given shape {}x{}", max.0, max.1, s.0, s.1)));
            }
            None => max,
        };
        Ok(Loaded::Triples { shape, entries })
    } else {
        Ok(Loaded::Dense(DataMatrix::from_nan(parse_dense(&text)?)?))
    }
}

/// Dense covariates; missing values are not allowed.
pub fn load_covariates(path: &Path) -> CliResult<Array2<f64>> {
    let m = parse_dense(&read_text(path)?)?;
    if m.iter().any(|v| v.is_nan()) {
        return Err(CliError::Parse(format!("{}: covariates cannot be missing", path.display())));
    }
    Ok(m)
}

/// Tab-separated values with shortest round-trip formatting; NaN is written
/// as NA.
pub fn format_dense(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push('\t');
            }
            if v.is_nan() {
                out.push_str("NA");
            } else {
                let _ = write!(out, "{v}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_file(path: &Path, body: &str) -> CliResult<()> {
    fs::write(path, body).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

/// `row col` lines, 1-indexed; returns 0-indexed cells.
pub fn parse_cells(text: &str) -> CliResult<Vec<(usize, usize)>> {
    let mut cells = Vec::new();
    for (k, (no, line)) in data_lines(text).into_iter().enumerate() {
        let f = split_fields(line);
        let idx = |t: &str| t.parse::<usize>().ok().filter(|&v| v >= 1);
        match (f.first().and_then(|t| idx(t)), f.get(1).and_then(|t| idx(t))) {
            (Some(i), Some(j)) => cells.push((i - 1, j - 1)),
            _ if k == 0 => {}
            _ => return Err(CliError::Parse(format!("line {no}: expected `row col` with 1-based indices"))),
        }
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn dense_with_header_labels_and_missing() {
        let m = parse_dense("id,a,b\nr1,1.5,NA\nr2,-2,3e2\n").unwrap();
        assert_eq!(m.dim(), (2, 2));
        assert!(m[[0, 1]].is_nan());
        assert_eq!(m[[1, 1]], 300.0);
        let plain = parse_dense("1 2\n3 4\n").unwrap();
        assert_eq!(plain, array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn dense_errors() {
        assert!(parse_dense("").is_err());
        assert!(parse_dense("1\t2\n3\n").is_err());
        assert!(parse_dense("1\tx\n").is_err());
    }

    #[test]
    fn formatting_round_trips() {
        let m = array![[0.1 + 0.2, -1e-300, 12345.678], [f64::NAN, 1.0 / 3.0, 0.0]];
        let back = parse_dense(&format_dense(&m)).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert!(a == b || a.is_nan() && b.is_nan());
        }
    }

    #[test]
    fn triples_with_header_and_extra_columns() {
        let (e, shape) = parse_triples("item\tuser\trating\tts\n3\t2\t4\t881250949\n1\t5\t3\t1\n").unwrap();
        assert_eq!(shape, (3, 5));
        assert_eq!(e, vec![(2, 1, 4.0), (0, 4, 3.0)]);
        assert!(parse_triples("0 1 2\n").is_err());
        assert!(parse_triples("").is_err());
    }

    #[test]
    fn shapes_and_cells() {
        assert_eq!(parse_shape("1682,943").unwrap(), (1682, 943));
        assert!(parse_shape("12").is_err());
        assert_eq!(parse_cells("row col\n1 2\n3 1\n").unwrap(), vec![(0, 1), (2, 0)]);
    }
}
