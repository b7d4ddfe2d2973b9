//! CSV input: header row, comma separated, no missing values.

use std::path::Path;

use ndarray::Array1;

use crate::error::CliError;

#[derive(Debug, Clone)]
pub struct Table {
    headers: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self, CliError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::Input(format!("cannot read CSV header: {e}")))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut columns = vec![Vec::new(); headers.len()];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CliError::Input(format!("CSV row {}: {e}", i + 1)))?;
            for (j, field) in rec.iter().enumerate() {
                let field = field.trim();
                if field.is_empty() {
                    return Err(CliError::Input(format!(
                        "CSV row {}: missing value in column '{}'",
                        i + 1,
                        headers[j]
                    )));
                }
                let v: f64 = field.parse().map_err(|_| {
                    CliError::Input(format!(
                        "CSV row {}: cannot parse '{field}' in column '{}'",
                        i + 1,
                        headers[j]
                    ))
                })?;
                columns[j].push(v);
            }
        }
        Ok(Self { headers, columns })
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn has(&self, name: &str) -> bool {
        self.headers.iter().any(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64], CliError> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| CliError::Input(format!("input has no column '{name}'")))
    }
}

/// Observations arranged for fitting.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Scattered: one vector per covariate. Grid: the sorted axis values.
    pub covariates: Vec<Vec<f64>>,
    pub y: Array1<f64>,
    pub offset: Option<Array1<f64>>,
    pub weights: Option<Array1<f64>>,
}

/// Sorted distinct values of a column.
pub fn axis_values(col: &[f64]) -> Vec<f64> {
    let mut v = col.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Place each row of a grid table at its cell (first covariate fastest).
/// Every cell must appear exactly once.
pub fn grid_order(cols: &[&[f64]]) -> Result<(Vec<Vec<f64>>, Vec<usize>), CliError> {
    let axes: Vec<Vec<f64>> = cols.iter().map(|c| axis_values(c)).collect();
    let n_cells: usize = axes.iter().map(Vec::len).product();
    let n = cols.first().map_or(0, |c| c.len());
    if n != n_cells {
        return Err(CliError::Input(format!(
            "grid input has {n} rows but the axes span {n_cells} cells"
        )));
    }
    let mut slot = vec![usize::MAX; n_cells];
    for i in 0..n {
        let mut cell = 0;
        let mut stride = 1;
        for (c, axis) in cols.iter().zip(&axes) {
            let pos = axis
                .binary_search_by(|v| v.total_cmp(&c[i]))
                .expect("value taken from this column");
            cell += pos * stride;
            stride *= axis.len();
        }
        if slot[cell] != usize::MAX {
            return Err(CliError::Input(format!(
                "grid rows {} and {} describe the same cell",
                slot[cell] + 1,
                i + 1
            )));
        }
        slot[cell] = i;
    }
    Ok((axes, slot))
}
