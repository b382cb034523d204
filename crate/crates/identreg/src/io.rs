//! CSV and JSON input/output.
//!
//! CSV files are comma-separated and row-major. An optional single header row
//! is detected when its first field does not parse as a number. Vectors are
//! stored as one column. Datasets keep the response in the last column.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sample::Dataset;

fn parse_rows<R: Read>(reader: R, source: &str) -> Result<Vec<Vec<f64>>> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows = Vec::new();
    for (index, record) in csv_reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(format!("{source}: {e}")))?;
        if record.iter().all(|field| field.is_empty()) {
            continue;
        }
        let first_numeric = record.get(0).map(|f| f.parse::<f64>().is_ok()).unwrap_or(false);
        if index == 0 && !first_numeric {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f64>().map_err(|_| {
                    Error::Parse(format!(
                        "{source}: row {}, column {}: '{field}' is not a number",
                        index + 1,
                        col + 1
                    ))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, source: &str) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    if let Some((i, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Parse(format!(
            "{source}: row {} has {} fields, expected {ncols}",
            i + 1,
            row.len()
        )));
    }
    let nrows = rows.len();
    let data: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &data))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Parses a row-major matrix.
pub fn parse_matrix<R: Read>(reader: R, source: &str) -> Result<DMatrix<f64>> {
    rows_to_matrix(parse_rows(reader, source)?, source)
}

/// Parses a one-column vector.
pub fn parse_vector<R: Read>(reader: R, source: &str) -> Result<DVector<f64>> {
    let m = parse_matrix(reader, source)?;
    if m.ncols() != 1 && m.nrows() > 0 {
        return Err(Error::Parse(format!(
            "{source}: a vector needs one column, found {}",
            m.ncols()
        )));
    }
    Ok(DVector::from_iterator(m.nrows(), m.iter().copied()))
}

/// Parses a dataset whose last column is the response.
pub fn parse_dataset<R: Read>(reader: R, source: &str) -> Result<Dataset> {
    let m = parse_matrix(reader, source)?;
    if m.nrows() == 0 {
        return Err(Error::EmptyData);
    }
    if m.ncols() < 2 {
        return Err(Error::Parse(format!(
            "{source}: a dataset needs at least one feature column and a response column"
        )));
    }
    let p = m.ncols() - 1;
    Dataset::new(m.columns(0, p).into_owned(), m.column(p).into_owned())
}

/// Reads a matrix file.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    parse_matrix(open(path)?, &path.display().to_string())
}

/// Reads a vector file.
pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    parse_vector(open(path)?, &path.display().to_string())
}

/// Reads a dataset file.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(open(path)?, &path.display().to_string())
}

/// SHA-256 of a file's bytes as lowercase hex.
pub fn file_digest(path: &Path) -> Result<String> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Shortest round-trip text of a number, in scientific notation outside
/// `[1e-4, 1e16)`.
pub fn format_number(v: f64) -> String {
    let magnitude = v.abs();
    if v == 0.0 || !v.is_finite() || (1e-4..1e16).contains(&magnitude) {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

/// Writes a matrix as CSV without header, using the shortest round-trip
/// representation of every value.
pub fn write_matrix<W: Write>(writer: W, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in m.row_iter() {
        w.write_record(row.iter().map(|&v| format_number(v)))
            .map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Writes a vector as a one-column CSV.
pub fn write_vector<W: Write>(writer: W, v: &DVector<f64>) -> Result<()> {
    write_matrix(writer, &DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
}

/// Writes a header row and records.
pub fn write_records<W: Write, I, R>(writer: W, header: &[&str], records: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header).map_err(|e| Error::Io(e.to_string()))?;
    for record in records {
        w.write_record(record).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_detected() {
        let with = parse_matrix("a,b\n1,2\n3,4\n".as_bytes(), "t").unwrap();
        let without = parse_matrix("1,2\n3,4\n".as_bytes(), "t").unwrap();
        assert_eq!(with, without);
        assert_eq!(with, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn whitespace_comments_and_blank_lines() {
        let m = parse_matrix("# note\n 1 , 2e-3\n\n-4,5\n".as_bytes(), "t").unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[1.0, 2e-3, -4.0, 5.0]));
    }

    #[test]
    fn ragged_and_non_numeric_rows_fail() {
        assert!(matches!(parse_matrix("1,2\n3\n".as_bytes(), "t"), Err(Error::Parse(_))));
        assert!(matches!(
            parse_matrix("1,2\n3,x\n".as_bytes(), "t"),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn vectors_need_one_column() {
        assert_eq!(
            parse_vector("v\n1\n2\n".as_bytes(), "t").unwrap(),
            DVector::from_vec(vec![1.0, 2.0])
        );
        assert!(parse_vector("1,2\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn dataset_uses_last_column_as_response() {
        let d = parse_dataset("x1,x2,y\n1,2,3\n4,5,6\n".as_bytes(), "t").unwrap();
        assert_eq!(d.x(), &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 5.0]));
        assert_eq!(d.y(), &DVector::from_vec(vec![3.0, 6.0]));
        assert_eq!(parse_dataset("x1,y\n".as_bytes(), "t"), Err(Error::EmptyData));
    }

    #[test]
    fn numbers_round_trip_in_both_notations() {
        for v in [0.0, -0.0, 1.5, 1e-4, 3.7e-31, -2.5e300, 1e16, 123456.789] {
            assert_eq!(format_number(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
        assert_eq!(format_number(3.7e-31), "3.7e-31");
        assert_eq!(format_number(0.25), "0.25");
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 1.0 / 3.0, -2.5e-300, 7.0]);
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        assert_eq!(parse_matrix(buf.as_slice(), "t").unwrap(), m);
    }
}
