//! Matrix Market I/O: `coordinate real {general|symmetric}` matrices in,
//! `coordinate real symmetric` out; vectors as one-column `array` files.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linops::CsrMatrix;

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Coordinate,
    Array,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
}

fn parse_header(line: &str) -> Result<(Layout, Symmetry)> {
    let tokens: Vec<String> = line.split_whitespace().map(str::to_ascii_lowercase).collect();
    if tokens.first().map(String::as_str) != Some("%%matrixmarket") {
        return Err(parse_err(1, "header must start with %%MatrixMarket"));
    }
    if tokens.len() != 5 {
        return Err(parse_err(1, format!("expected 5 header tokens, found {}", tokens.len())));
    }
    if tokens[1] != "matrix" {
        return Err(parse_err(1, format!("unsupported object '{}'", tokens[1])));
    }
    let layout = match tokens[2].as_str() {
        "coordinate" => Layout::Coordinate,
        "array" => Layout::Array,
        other => return Err(parse_err(1, format!("unsupported format '{other}'"))),
    };
    match tokens[3].as_str() {
        "real" | "integer" | "double" => {}
        other => return Err(parse_err(1, format!("unsupported field '{other}'"))),
    }
    let symmetry = match tokens[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(parse_err(1, format!("unsupported symmetry '{other}'"))),
    };
    Ok((layout, symmetry))
}

/// Non-comment, non-blank lines after the header, with 1-based line numbers.
fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(Error::Io(e))),
        Ok(l) => {
            let t = l.trim();
            if t.is_empty() || t.starts_with('%') {
                None
            } else {
                Some(Ok((i + 2, t.to_string())))
            }
        }
    })
}

fn parse_usize(tok: Option<&str>, line: usize, what: &str) -> Result<usize> {
    tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(line, format!("cannot parse {what}")))
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64> {
    let v: f64 = tok
        .ok_or_else(|| parse_err(line, "missing value"))?
        .parse()
        .map_err(|_| parse_err(line, "cannot parse value"))?;
    if !v.is_finite() {
        return Err(parse_err(line, "non-finite value"));
    }
    Ok(v)
}

fn first_line<R: BufRead>(reader: &mut R) -> Result<String> {
    let mut header = String::new();
    if reader.read_line(&mut header)? == 0 {
        return Err(parse_err(1, "empty file"));
    }
    Ok(header)
}

/// Parses a coordinate matrix. Symmetric storage is expanded, duplicates summed.
pub fn parse_matrix_market<R: BufRead>(mut reader: R) -> Result<CsrMatrix> {
    let (layout, symmetry) = parse_header(&first_line(&mut reader)?)?;
    if layout != Layout::Coordinate {
        return Err(parse_err(1, "matrices must use the 'coordinate' format"));
    }
    let mut lines = data_lines(reader);
    let (size_line, size) = lines.next().ok_or_else(|| parse_err(1, "missing size line"))??;
    let mut tok = size.split_whitespace();
    let rows = parse_usize(tok.next(), size_line, "row count")?;
    let cols = parse_usize(tok.next(), size_line, "column count")?;
    let nnz = parse_usize(tok.next(), size_line, "entry count")?;
    if rows == 0 || cols == 0 {
        return Err(parse_err(size_line, "dimensions must be positive"));
    }
    if symmetry == Symmetry::Symmetric && rows != cols {
        return Err(parse_err(size_line, "symmetric matrix must be square"));
    }

    let mut triplets = Vec::with_capacity(if symmetry == Symmetry::Symmetric { 2 * nnz } else { nnz });
    let mut seen = 0;
    for item in lines {
        let (line, text) = item?;
        if seen == nnz {
            return Err(parse_err(line, format!("more than the declared {nnz} entries")));
        }
        let mut tok = text.split_whitespace();
        let i = parse_usize(tok.next(), line, "row index")?;
        let j = parse_usize(tok.next(), line, "column index")?;
        let v = parse_f64(tok.next(), line)?;
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(parse_err(line, format!("index ({i}, {j}) outside {rows}x{cols}")));
        }
        let (i, j) = (i - 1, j - 1);
        triplets.push((i, j, v));
        if symmetry == Symmetry::Symmetric && i != j {
            triplets.push((j, i, v));
        }
        seen += 1;
    }
    if seen != nnz {
        return Err(parse_err(size_line, format!("declared {nnz} entries, found {seen}")));
    }
    CsrMatrix::from_triplets(rows, cols, &triplets)
}

pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrix> {
    parse_matrix_market(BufReader::new(File::open(path)?))
}

/// Writes `coordinate real symmetric`, lower triangle, 17 significant digits.
/// The matrix must be exactly symmetric.
pub fn format_matrix_market<W: Write>(m: &CsrMatrix, mut out: W) -> Result<()> {
    if !m.is_structurally_symmetric_exact() {
        return Err(Error::NotSymmetric("symmetric Matrix Market output needs an exactly symmetric matrix".into()));
    }
    let lower: Vec<_> = m.iter().filter(|&(i, j, _)| j <= i).collect();
    writeln!(out, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(out, "{} {} {}", m.rows(), m.cols(), lower.len())?;
    for (i, j, v) in lower {
        writeln!(out, "{} {} {:.16e}", i + 1, j + 1, v)?;
    }
    Ok(())
}

pub fn write_matrix_market(path: impl AsRef<Path>, m: &CsrMatrix) -> Result<()> {
    let mut buf = Vec::new();
    format_matrix_market(m, &mut buf)?;
    crate::io::write_atomic(path.as_ref(), &buf)
}

/// Parses a one-column `array real general` vector.
pub fn parse_vector<R: BufRead>(mut reader: R) -> Result<Vec<f64>> {
    let (layout, _) = parse_header(&first_line(&mut reader)?)?;
    if layout != Layout::Array {
        return Err(parse_err(1, "vectors must use the 'array' format"));
    }
    let mut lines = data_lines(reader);
    let (size_line, size) = lines.next().ok_or_else(|| parse_err(1, "missing size line"))??;
    let mut tok = size.split_whitespace();
    let rows = parse_usize(tok.next(), size_line, "row count")?;
    let cols = parse_usize(tok.next(), size_line, "column count")?;
    if cols != 1 || rows == 0 {
        return Err(parse_err(size_line, format!("expected an n x 1 array, got {rows}x{cols}")));
    }
    let mut values = Vec::with_capacity(rows);
    for item in lines {
        let (line, text) = item?;
        if values.len() == rows {
            return Err(parse_err(line, format!("more than the declared {rows} values")));
        }
        values.push(parse_f64(text.split_whitespace().next(), line)?);
    }
    if values.len() != rows {
        return Err(parse_err(size_line, format!("declared {rows} values, found {}", values.len())));
    }
    Ok(values)
}

pub fn read_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    parse_vector(BufReader::new(File::open(path)?))
}

pub fn format_vector<W: Write>(v: &[f64], mut out: W) -> Result<()> {
    writeln!(out, "%%MatrixMarket matrix array real general")?;
    writeln!(out, "{} 1", v.len())?;
    for x in v {
        writeln!(out, "{x:.16e}")?;
    }
    Ok(())
}

pub fn write_vector(path: impl AsRef<Path>, v: &[f64]) -> Result<()> {
    let mut buf = Vec::new();
    format_vector(v, &mut buf)?;
    crate::io::write_atomic(path.as_ref(), &buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::DenseMatrix;
    use crate::problems::gen_random_spd;

    fn parse(s: &str) -> Result<CsrMatrix> {
        parse_matrix_market(s.as_bytes())
    }

    #[test]
    fn single_entry() {
        let m = parse("%%MatrixMarket matrix coordinate real general\n1 1 1\n1 1 2.0\n").unwrap();
        assert_eq!(m.to_dense(), DenseMatrix::from_row_major(1, 1, vec![2.0]).unwrap());
    }

    #[test]
    fn symmetric_expansion() {
        let text = "%%MatrixMarket matrix coordinate real symmetric\n% lower triangle\n2 2 3\n1 1 2\n2 1 1\n2 2 3\n";
        let m = parse(text).unwrap();
        assert_eq!(m.to_dense(), DenseMatrix::from_row_major(2, 2, vec![2., 1., 1., 3.]).unwrap());
    }

    #[test]
    fn duplicates_are_summed() {
        let m = parse("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1.5\n1 1 0.5\n2 2 1\n").unwrap();
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn unsupported_field_names_token() {
        let err = parse("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n").unwrap_err();
        assert!(err.to_string().contains("complex"), "{err}");
        let err = parse("%%MatrixMarket matrix coordinate pattern symmetric\n1 1 1\n1 1\n").unwrap_err();
        assert!(err.to_string().contains("pattern"), "{err}");
    }

    #[test]
    fn out_of_range_index_reports_line() {
        let err = parse("%%MatrixMarket matrix coordinate real general\n% c\n2 2 2\n1 1 1\n3 1 1\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn entry_count_checked() {
        assert!(parse("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n").is_err());
        assert!(parse("%%MatrixMarket matrix coordinate real general\n2 2 1\n1 1 1\n2 2 1\n").is_err());
        assert!(parse("garbage\n").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dense = gen_random_spd(10, 1e3, 77).unwrap();
        let m = CsrMatrix::from_dense(&dense);
        let mut buf = Vec::new();
        format_matrix_market(&m, &mut buf).unwrap();
        let back = parse_matrix_market(&buf[..]).unwrap();
        assert_eq!(back.row_ptr(), m.row_ptr());
        assert_eq!(back.col_idx(), m.col_idx());
        for (a, b) in back.values().iter().zip(m.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn writer_refuses_asymmetric() {
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        assert!(format_matrix_market(&m, Vec::new()).is_err());
    }

    #[test]
    fn vector_round_trip() {
        let v = vec![1.0, -0.1, std::f64::consts::PI, 1e-300];
        let mut buf = Vec::new();
        format_vector(&v, &mut buf).unwrap();
        assert_eq!(parse_vector(&buf[..]).unwrap(), v);
        assert!(parse_vector("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n".as_bytes()).is_err());
    }
}
