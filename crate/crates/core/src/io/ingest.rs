use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{Centering, DataSet, Family};

/// A numeric CSV table with its header.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub values: DMatrix<f64>,
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::file(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file))
}

/// Reads a numeric table; every cell must parse as a finite float.
pub fn read_matrix(path: &Path) -> Result<Table> {
    let mut reader = open(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let cols = header.len();
    if cols == 0 || header.iter().all(String::is_empty) {
        return Err(Error::InvalidData(format!("{}: missing header row", path.display())));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record?;
        if record.len() != cols {
            return Err(Error::Parse {
                row,
                column: record.len().min(cols) + 1,
                message: format!("{}: expected {cols} fields, found {}", path.display(), record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row,
                column: j + 1,
                message: format!("{}: '{cell}' is not a number", path.display()),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: j + 1,
                    message: format!("{}: '{cell}' is not finite", path.display()),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::InvalidData(format!("{}: no data rows", path.display())));
    }
    Ok(Table {
        header,
        values: DMatrix::from_row_slice(rows, cols, &data),
    })
}

/// Reads a single-column outcome table.
pub fn read_outcome(path: &Path) -> Result<DVector<f64>> {
    let table = read_matrix(path)?;
    if table.values.ncols() != 1 {
        return Err(Error::InvalidData(format!(
            "{}: outcome file must have one column, found {}",
            path.display(),
            table.values.ncols()
        )));
    }
    Ok(table.values.column(0).into_owned())
}

fn check_rows(x: &DMatrix<f64>, y: &DMatrix<f64>, z: Option<&DVector<f64>>) -> Result<()> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(Error::DimensionMismatch(format!("x has {n} rows but y has {}", y.nrows())));
    }
    if let Some(z) = z {
        if z.len() != n {
            return Err(Error::DimensionMismatch(format!("x has {n} rows but z has {}", z.len())));
        }
    }
    Ok(())
}

fn check_binary(z: &DVector<f64>) -> Result<()> {
    if let Some(i) = z.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidData(format!(
            "bernoulli outcome must be 0 or 1, row {} has {}",
            i + 1,
            z[i]
        )));
    }
    Ok(())
}

/// Parsed input with the column means that were removed.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub data: DataSet,
    pub centering: Centering,
    pub x_header: Vec<String>,
    pub y_header: Vec<String>,
}

/// Reads `x`, `y` and `z`. With `center`, the columns of `x` and `y` (and
/// `z` for the Gaussian family) are centred; otherwise the data are taken
/// as given and the stored centering is zero.
pub fn ingest(x_path: &Path, y_path: &Path, z_path: &Path, family: Family, center: bool) -> Result<Ingested> {
    let x = read_matrix(x_path)?;
    let y = read_matrix(y_path)?;
    let z = read_outcome(z_path)?;
    check_rows(&x.values, &y.values, Some(&z))?;
    if family == Family::Bernoulli {
        check_binary(&z)?;
    }
    let mut data = DataSet::new(x.values, y.values, z, family)?;
    let centering = if center {
        data.center()
    } else {
        Centering {
            x_mean: vec![0.0; data.p()],
            y_mean: vec![0.0; data.q()],
            z_mean: 0.0,
        }
    };
    Ok(Ingested {
        data,
        centering,
        x_header: x.header,
        y_header: y.header,
    })
}

/// Reads new `x`, `y` (and optionally `z`) and applies a stored centering.
/// Without `z` the outcome is filled with zeros.
pub fn ingest_with_centering(
    x_path: &Path,
    y_path: &Path,
    z_path: Option<&Path>,
    family: Family,
    centering: &Centering,
) -> Result<DataSet> {
    let mut x = read_matrix(x_path)?.values;
    let mut y = read_matrix(y_path)?.values;
    let z = z_path.map(read_outcome).transpose()?;
    check_rows(&x, &y, z.as_ref())?;
    centering.apply(&mut x, &mut y)?;
    let z = match z {
        Some(z) if family == Family::Bernoulli => {
            check_binary(&z)?;
            z
        }
        Some(z) => z.add_scalar(-centering.z_mean),
        None => DVector::zeros(x.nrows()),
    };
    DataSet::new(x, y, z, family)
}
