//! Matrix Market coordinate files (`real general`).

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::error::CliError;

/// Nonzero entries, one-based, values printed in shortest round-trip form.
pub fn to_string(a: &Array2<f64>) -> String {
    let nnz = a.iter().filter(|v| **v != 0.0).count();
    let mut s = String::new();
    s.push_str("%%MatrixMarket matrix coordinate real general\n");
    let _ = writeln!(s, "{} {} {nnz}", a.nrows(), a.ncols());
    for ((i, j), v) in a.indexed_iter() {
        if *v != 0.0 {
            let _ = writeln!(s, "{} {} {v:e}", i + 1, j + 1);
        }
    }
    s
}

pub fn write(path: &Path, a: &Array2<f64>) -> Result<(), CliError> {
    std::fs::write(path, to_string(a)).map_err(|e| CliError::io(path, e))
}

pub fn parse(text: &str) -> Result<Array2<f64>, CliError> {
    let bad = |m: &str| CliError::Input(format!("Matrix Market: {m}"));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    let h = header.to_ascii_lowercase();
    if !h.starts_with("%%matrixmarket matrix coordinate real") {
        return Err(bad("only real coordinate matrices are supported"));
    }
    let symmetric = h.contains("symmetric");
    let mut body = lines.filter(|l| !l.starts_with('%') && !l.trim().is_empty());
    let size: Vec<usize> = body
        .next()
        .ok_or_else(|| bad("missing size line"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("bad size line")))
        .collect::<Result<_, _>>()?;
    if size.len() != 3 {
        return Err(bad("size line needs rows, columns and entries"));
    }
    let mut a = Array2::zeros((size[0], size[1]));
    let mut count = 0;
    for line in body {
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 3 {
            return Err(bad(&format!("bad entry '{line}'")));
        }
        let i: usize = t[0].parse().map_err(|_| bad("bad row index"))?;
        let j: usize = t[1].parse().map_err(|_| bad("bad column index"))?;
        let v: f64 = t[2].parse().map_err(|_| bad("bad value"))?;
        if i == 0 || j == 0 || i > size[0] || j > size[1] {
            return Err(bad(&format!("index ({i}, {j}) out of range")));
        }
        a[[i - 1, j - 1]] = v;
        if symmetric {
            a[[j - 1, i - 1]] = v;
        }
        count += 1;
    }
    if count != size[2] {
        return Err(bad(&format!("expected {} entries, found {count}", size[2])));
    }
    Ok(a)
}

pub fn read(path: &Path) -> Result<Array2<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse(&text)
}
