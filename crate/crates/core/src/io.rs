//! Dense CSV I/O.
//!
//! Matrices: a `rows,cols` header line followed by `rows` comma-separated
//! lines. Vectors: one value per line, optionally preceded by a `len,1`
//! header. Designs: matrix format whose last column holds 0/1 labels.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::classifier::LabeledDesign;
use crate::error::{Error, Result};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), msg: msg.into() }
}

fn read_records(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, format!("record {}: {e}", k + 1)))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| parse_err(path, format!("line {line}: `{s}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, format!("line {line}: non-finite value `{s}`")));
    }
    Ok(v)
}

fn parse_header(path: &Path, rec: &[String]) -> Result<(usize, usize)> {
    let dims: Vec<usize> = rec.iter().filter_map(|f| f.parse().ok()).collect();
    if rec.len() != 2 || dims.len() != 2 {
        return Err(parse_err(path, format!("expected a `rows,cols` header, found `{}`", rec.join(","))));
    }
    Ok((dims[0], dims[1]))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let recs = read_records(path)?;
    let header = recs.first().ok_or_else(|| parse_err(path, "empty file"))?;
    let (rows, cols) = parse_header(path, header)?;
    if recs.len() - 1 != rows {
        return Err(parse_err(path, format!("header says {rows} rows, found {}", recs.len() - 1)));
    }
    let mut m = DMatrix::zeros(rows, cols);
    for (i, rec) in recs[1..].iter().enumerate() {
        if rec.len() != cols {
            return Err(parse_err(path, format!("line {}: expected {cols} values, found {}", i + 2, rec.len())));
        }
        for (j, f) in rec.iter().enumerate() {
            m[(i, j)] = parse_f64(path, i + 2, f)?;
        }
    }
    Ok(m)
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<DVector<f64>> {
    let path = path.as_ref();
    let mut recs = read_records(path)?;
    let mut expected = None;
    if let Some(first) = recs.first() {
        if first.len() == 2 {
            let (rows, cols) = parse_header(path, first)?;
            if cols != 1 {
                return Err(parse_err(path, format!("expected a single column, header says {cols}")));
            }
            expected = Some(rows);
            recs.remove(0);
        } else if first.len() == 1 && first[0].parse::<f64>().is_err() {
            recs.remove(0);
        }
    }
    let mut v = Vec::with_capacity(recs.len());
    for (k, rec) in recs.iter().enumerate() {
        if rec.len() != 1 {
            return Err(parse_err(path, format!("record {}: expected one value, found {}", k + 1, rec.len())));
        }
        v.push(parse_f64(path, k + 1, &rec[0])?);
    }
    if let Some(rows) = expected {
        if rows != v.len() {
            return Err(parse_err(path, format!("header says {rows} values, found {}", v.len())));
        }
    }
    if v.is_empty() {
        return Err(parse_err(path, "no values"));
    }
    Ok(DVector::from_vec(v))
}

pub fn read_design(path: impl AsRef<Path>) -> Result<LabeledDesign> {
    let path = path.as_ref();
    let m = read_matrix(path)?;
    if m.ncols() < 2 {
        return Err(parse_err(path, "a design needs at least one feature column and a label column"));
    }
    let labels = m.column(m.ncols() - 1).clone_owned();
    let phi = m.columns(0, m.ncols() - 1).clone_owned();
    LabeledDesign::new(phi, labels).map_err(|e| parse_err(path, e.to_string()))
}

/// Features only: accepts either a feature matrix or a design whose last
/// column is a label when `features` columns are expected.
pub fn read_features(path: impl AsRef<Path>, features: usize) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let m = read_matrix(path)?;
    if m.ncols() == features {
        Ok(m)
    } else if m.ncols() == features + 1 {
        Ok(m.columns(0, features).clone_owned())
    } else {
        Err(parse_err(path, format!("expected {features} feature columns, found {}", m.ncols())))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let mut body = format!("{},{}\n", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
        body.push_str(&row.join(","));
        body.push('\n');
    }
    out.write_all(body.as_bytes()).and_then(|_| out.flush()).map_err(|e| io_err(path, e))
}

pub fn write_vector(path: impl AsRef<Path>, v: &DVector<f64>) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let mut body = String::new();
    for x in v.iter() {
        body.push_str(&x.to_string());
        body.push('\n');
    }
    out.write_all(body.as_bytes()).and_then(|_| out.flush()).map_err(|e| io_err(path, e))
}

/// Writes a CSV table with a header row.
pub fn write_table(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let path = path.as_ref();
    let out = create(path)?;
    let mut w = csv::Writer::from_writer(out);
    let to_err = |e: csv::Error| parse_err(path, e.to_string());
    w.write_record(header).map_err(to_err)?;
    for row in rows {
        w.write_record(row).map_err(to_err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = DMatrix::from_row_slice(2, 3, &[1.0, -2.5, 1e-17, 0.1, 3.0, 7.0]);
        write_matrix(&p, &m).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().next(), Some("2,3"));
        assert_eq!(read_matrix(&p).unwrap(), m);
    }

    #[test]
    fn vector_round_trip_and_headers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        let v = DVector::from_column_slice(&[0.1, 2.0, -3.0]);
        write_vector(&p, &v).unwrap();
        assert_eq!(read_vector(&p).unwrap(), v);
        std::fs::write(&p, "3,1\n0.1\n2\n-3\n").unwrap();
        assert_eq!(read_vector(&p).unwrap(), v);
        std::fs::write(&p, "y\n0.1\n2\n-3\n").unwrap();
        assert_eq!(read_vector(&p).unwrap(), v);
    }

    #[test]
    fn errors_name_the_path() {
        let err = read_matrix("/nonexistent/dir/m.csv").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/m.csv"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "2,2\n1,2\n3\n").unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Parse { .. })));
        std::fs::write(&p, "1,2\n1,nan\n").unwrap();
        assert!(matches!(read_matrix(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn design_splits_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "3,3\n1,2,0\n3,4,1\n5,6,1\n").unwrap();
        let d = read_design(&p).unwrap();
        assert_eq!(d.ncols(), 2);
        assert_eq!(d.labels.as_slice(), &[0.0, 1.0, 1.0]);
        std::fs::write(&p, "1,2\n1,0.5\n").unwrap();
        assert!(read_design(&p).is_err());
    }
}
