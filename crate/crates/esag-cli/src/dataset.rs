//! Dataset and grid CSV formats, covariate standardization, and content
//! hashing.
//!
//! Dataset schema: `site_x, site_y, y_1..y_d, x_1..x_p, z_1..z_q` with a
//! mandatory header, UTF-8, '.' decimal separator. Responses are directions;
//! with `as_composition` they are compositions and are square-root transformed
//! on ingestion. Grid schema: `site_x, site_y, x_1..x_p` (raw covariates).

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use esag::model::Dataset;
use esag::sphere::{sqrt_transform, Composition, Direction};

use crate::error::{CliError, Result};

/// Per-column min/max record of the training standardization; `None` marks a
/// skipped intercept column.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TransformRecord {
    pub columns: Vec<Option<(f64, f64)>>,
}

/// Maps each non-intercept column onto [1, 2] via
/// x* = (x − min)/(max − min) + 1. Intercept columns (constant one) pass
/// through; any other constant column is an error.
pub fn standardize_covariates(raw: &DMatrix<f64>) -> Result<(DMatrix<f64>, TransformRecord)> {
    let mut columns = Vec::with_capacity(raw.ncols());
    let mut out = raw.clone();
    for c in 0..raw.ncols() {
        let col = raw.column(c);
        let min = col.min();
        let max = col.max();
        if min == max {
            if min == 1.0 {
                columns.push(None);
                continue;
            }
            return Err(CliError::Validation(format!(
                "covariate column {} is constant ({min}) and not an intercept; \
                 cannot standardize",
                c + 1
            )));
        }
        columns.push(Some((min, max)));
        for r in 0..raw.nrows() {
            out[(r, c)] = (raw[(r, c)] - min) / (max - min) + 1.0;
        }
    }
    Ok((out, TransformRecord { columns }))
}

/// Applies a recorded training transform to new covariates.
pub fn apply_transform(raw: &DMatrix<f64>, transform: &TransformRecord) -> Result<DMatrix<f64>> {
    if raw.ncols() != transform.columns.len() {
        return Err(CliError::Validation(format!(
            "covariates have {} columns, the recorded transform has {}",
            raw.ncols(),
            transform.columns.len()
        )));
    }
    let mut out = raw.clone();
    for (c, rec) in transform.columns.iter().enumerate() {
        if let Some((min, max)) = rec {
            for r in 0..raw.nrows() {
                out[(r, c)] = (raw[(r, c)] - min) / (max - min) + 1.0;
            }
        }
    }
    Ok(out)
}

/// Inverts a recorded transform (used in tests; intercepts pass through).
pub fn invert_transform(std: &DMatrix<f64>, transform: &TransformRecord) -> Result<DMatrix<f64>> {
    if std.ncols() != transform.columns.len() {
        return Err(CliError::Validation("column count mismatch".into()));
    }
    let mut out = std.clone();
    for (c, rec) in transform.columns.iter().enumerate() {
        if let Some((min, max)) = rec {
            for r in 0..std.nrows() {
                out[(r, c)] = (std[(r, c)] - 1.0) * (max - min) + min;
            }
        }
    }
    Ok(out)
}

/// Raw tabular dataset as stored on disk (covariates unstandardized).
#[derive(Debug, Clone)]
pub struct RawDataset {
    pub coords: Vec<[f64; 2]>,
    pub y: Vec<DVector<f64>>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
}

impl RawDataset {
    pub fn d(&self) -> usize {
        self.y.first().map_or(0, |v| v.len())
    }

    /// SHA-256 over sites, responses, and covariates; recorded at fit time and
    /// checked when scoring.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        let mut push = |v: f64| hasher.update(v.to_le_bytes());
        for c in &self.coords {
            push(c[0]);
            push(c[1]);
        }
        for y in &self.y {
            y.iter().for_each(|v| push(*v));
        }
        self.x.iter().for_each(|v| push(*v));
        self.z.iter().for_each(|v| push(*v));
        format!("{:x}", hasher.finalize())
    }

    /// Standardizes covariates and validates responses into a model dataset.
    /// With `as_composition`, rows are simplex points mapped through the square
    /// root; otherwise they must already be unit vectors. Returns the dataset,
    /// the transform record, and the number of renormalized compositions.
    pub fn into_model_dataset(self, as_composition: bool) -> Result<(Dataset, TransformRecord, usize)> {
        let (x_std, transform) = standardize_covariates(&self.x)?;
        let mut adjusted = 0usize;
        let mut dirs = Vec::with_capacity(self.y.len());
        for (i, raw) in self.y.into_iter().enumerate() {
            let dir = if as_composition {
                let (comp, was_adjusted) = Composition::ingest(raw).map_err(|e| {
                    CliError::Validation(format!("row {}: {e}", i + 1))
                })?;
                adjusted += usize::from(was_adjusted);
                sqrt_transform(&comp)
            } else {
                Direction::new(raw)
                    .map_err(|e| CliError::Validation(format!("row {}: {e}", i + 1)))?
            };
            dirs.push(dir);
        }
        let dataset = Dataset::new(dirs, x_std, self.z, self.coords)?;
        Ok((dataset, transform, adjusted))
    }
}

fn parse_cell(raw: &str, line: usize, name: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|_| {
        CliError::Io(format!("line {line}: cannot parse {name} value {raw:?} as a number"))
    })
}

/// Header layout `site_x, site_y, y_1.., x_1.., z_1..`.
fn split_header(header: &csv::StringRecord, path: &std::path::Path) -> Result<(usize, usize, usize)> {
    let cols: Vec<&str> = header.iter().map(|s| s.trim()).collect();
    if cols.len() < 3 || cols[0] != "site_x" || cols[1] != "site_y" {
        return Err(CliError::Io(format!(
            "{}: header must start with site_x, site_y",
            path.display()
        )));
    }
    let count = |prefix: &str| cols.iter().filter(|c| c.starts_with(prefix)).count();
    let d = count("y_");
    let p = count("x_");
    let q = count("z_");
    if 2 + d + p + q != cols.len() {
        return Err(CliError::Io(format!(
            "{}: unrecognized columns in header (expected site_x, site_y, y_*, x_*, z_*)",
            path.display()
        )));
    }
    Ok((d, p, q))
}

/// Reads a dataset CSV.
pub fn read_dataset(path: &std::path::Path) -> Result<RawDataset> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(
        |e| CliError::Io(format!("cannot open dataset {}: {e}", path.display())),
    )?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
        .clone();
    let (d, p, q) = split_header(&header, path)?;
    if d == 0 {
        return Err(CliError::Io(format!("{}: no response columns y_*", path.display())));
    }

    let mut coords = Vec::new();
    let mut y = Vec::new();
    let mut x_rows: Vec<f64> = Vec::new();
    let mut z_rows: Vec<f64> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let record = record.map_err(|e| CliError::Io(format!("line {line}: {e}")))?;
        if record.len() != header.len() {
            return Err(CliError::Io(format!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        let mut it = record.iter();
        let sx = parse_cell(it.next().unwrap(), line, "site_x")?;
        let sy = parse_cell(it.next().unwrap(), line, "site_y")?;
        coords.push([sx, sy]);
        let mut yv = DVector::zeros(d);
        for k in 0..d {
            yv[k] = parse_cell(it.next().unwrap(), line, "y")?;
        }
        y.push(yv);
        for _ in 0..p {
            x_rows.push(parse_cell(it.next().unwrap(), line, "x")?);
        }
        for _ in 0..q {
            z_rows.push(parse_cell(it.next().unwrap(), line, "z")?);
        }
    }
    if coords.is_empty() {
        return Err(CliError::Io(format!("{}: dataset has no rows", path.display())));
    }
    let n = coords.len();
    Ok(RawDataset {
        coords,
        y,
        x: DMatrix::from_row_iterator(n, p, x_rows),
        z: DMatrix::from_row_iterator(n, q, z_rows),
    })
}

/// Writes a dataset CSV in the canonical schema.
pub fn write_dataset(path: &std::path::Path, data: &RawDataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Io(format!("cannot write dataset {}: {e}", path.display())))?;
    let d = data.d();
    let p = data.x.ncols();
    let q = data.z.ncols();
    let mut header = vec!["site_x".to_string(), "site_y".to_string()];
    header.extend((1..=d).map(|k| format!("y_{k}")));
    header.extend((1..=p).map(|k| format!("x_{k}")));
    header.extend((1..=q).map(|k| format!("z_{k}")));
    writer.write_record(&header)?;
    for i in 0..data.coords.len() {
        let mut row = vec![data.coords[i][0].to_string(), data.coords[i][1].to_string()];
        row.extend(data.y[i].iter().map(|v| v.to_string()));
        row.extend((0..p).map(|k| data.x[(i, k)].to_string()));
        row.extend((0..q).map(|k| data.z[(i, k)].to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// A prediction grid: sites plus raw covariates.
#[derive(Debug, Clone)]
pub struct Grid {
    pub coords: Vec<[f64; 2]>,
    pub x: DMatrix<f64>,
}

/// Reads a grid CSV (`site_x, site_y, x_1..x_p`). An empty grid is allowed.
pub fn read_grid(path: &std::path::Path) -> Result<Grid> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(
        |e| CliError::Io(format!("cannot open grid {}: {e}", path.display())),
    )?;
    let header = reader
        .headers()
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?
        .clone();
    let cols: Vec<&str> = header.iter().map(|s| s.trim()).collect();
    if cols.len() < 2 || cols[0] != "site_x" || cols[1] != "site_y" {
        return Err(CliError::Io(format!(
            "{}: header must start with site_x, site_y",
            path.display()
        )));
    }
    let p = cols.len() - 2;
    let mut coords = Vec::new();
    let mut x_rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| CliError::Io(format!("line {line}: {e}")))?;
        if record.len() != header.len() {
            return Err(CliError::Io(format!(
                "line {line}: expected {} fields, found {}",
                header.len(),
                record.len()
            )));
        }
        let mut it = record.iter();
        let sx = parse_cell(it.next().unwrap(), line, "site_x")?;
        let sy = parse_cell(it.next().unwrap(), line, "site_y")?;
        coords.push([sx, sy]);
        for _ in 0..p {
            x_rows.push(parse_cell(it.next().unwrap(), line, "x")?);
        }
    }
    let n = coords.len();
    Ok(Grid { coords, x: DMatrix::from_row_iterator(n, p, x_rows) })
}

/// Writes a grid CSV.
pub fn write_grid(path: &std::path::Path, grid: &Grid) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| CliError::Io(format!("cannot write grid {}: {e}", path.display())))?;
    let p = grid.x.ncols();
    let mut header = vec!["site_x".to_string(), "site_y".to_string()];
    header.extend((1..=p).map(|k| format!("x_{k}")));
    writer.write_record(&header)?;
    for i in 0..grid.coords.len() {
        let mut row = vec![grid.coords[i][0].to_string(), grid.coords[i][1].to_string()];
        row.extend((0..p).map(|k| grid.x[(i, k)].to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn standardization_maps_to_unit_shift_interval() {
        let raw = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 5.0, 1.0, 10.0]);
        let (std, rec) = standardize_covariates(&raw).unwrap();
        assert_eq!(rec.columns[0], None);
        assert_eq!(std.column(1).as_slice(), &[1.0, 1.5, 2.0]);

        // Prediction value equal to the training max maps to 2 exactly.
        let newx = DMatrix::from_row_slice(1, 2, &[1.0, 10.0]);
        let applied = apply_transform(&newx, &rec).unwrap();
        assert_eq!(applied[(0, 1)], 2.0);

        // Recorded transform inverts.
        let back = invert_transform(&std, &rec).unwrap();
        for (a, b) in back.iter().zip(raw.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        // Non-intercept constant column is rejected.
        let bad = DMatrix::from_row_slice(2, 1, &[3.0, 3.0]);
        assert!(standardize_covariates(&bad).is_err());
    }

    #[test]
    fn dataset_round_trips_losslessly() {
        let data = RawDataset {
            coords: vec![[0.1, 0.9], [0.25, 0.3]],
            y: vec![
                DVector::from_row_slice(&[0.6, 0.8, 0.0]),
                DVector::from_row_slice(&[1.0 / 3f64.sqrt(); 3]),
            ],
            x: DMatrix::from_row_slice(2, 2, &[1.0, 0.123456789123456789, 1.0, 9.87e-3]),
            z: DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        write_dataset(&path, &data).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back.coords, data.coords);
        assert_eq!(back.y, data.y);
        assert_eq!(back.x, data.x);
        assert_eq!(back.z, data.z);
        assert_eq!(back.content_hash(), data.content_hash());
    }

    #[test]
    fn corrupt_rows_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "site_x,site_y,y_1,y_2\n0.1,0.2,0.6,oops\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        std::fs::write(&path, "site_x,site_y,y_1,y_2\n0.1,0.2,0.6\n").unwrap();
        let err = read_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn composition_ingestion_applies_square_root() {
        let raw = RawDataset {
            coords: vec![[0.0, 0.0]],
            y: vec![DVector::from_row_slice(&[0.25, 0.25, 0.5])],
            x: DMatrix::from_row_slice(1, 1, &[1.0]),
            z: DMatrix::zeros(1, 0),
        };
        let (data, _t, adjusted) = raw.into_model_dataset(true).unwrap();
        assert_eq!(adjusted, 0);
        assert_abs_diff_eq!(data.y[0].values()[2], 0.5f64.sqrt(), epsilon = 1e-15);
    }
}
