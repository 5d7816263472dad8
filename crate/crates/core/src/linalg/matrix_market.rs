//! Matrix Market coordinate import/export, the debugging interface for
//! sparse matrices. Symmetric matrices are written as the lower triangle
//! with the `symmetric` qualifier.

use super::{LinAlgError, SparseMatrix};
use std::io::{BufRead, BufReader, Read, Write};

/// Write in coordinate format. With `symmetric = true` only entries with
/// row >= col are emitted and the header declares symmetry; the caller is
/// responsible for the matrix actually being symmetric.
pub fn write_matrix_market<W: Write>(
    w: &mut W,
    a: &SparseMatrix,
    symmetric: bool,
) -> Result<(), LinAlgError> {
    let kind = if symmetric { "symmetric" } else { "general" };
    writeln!(w, "%%MatrixMarket matrix coordinate real {kind}")?;
    let trip = a.triplets();
    let kept: Vec<_> = trip
        .iter()
        .filter(|(r, c, _)| !symmetric || r >= c)
        .collect();
    writeln!(w, "{} {} {}", a.nrows(), a.ncols(), kept.len())?;
    for (r, c, v) in kept {
        writeln!(w, "{} {} {:.17e}", r + 1, c + 1, v)?;
    }
    Ok(())
}

pub fn read_matrix_market<R: Read>(r: R) -> Result<SparseMatrix, LinAlgError> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| LinAlgError::ParseError("empty stream".into()))??;
    let fields: Vec<String> = header.split_whitespace().map(|s| s.to_lowercase()).collect();
    if fields.len() < 5
        || fields[0] != "%%matrixmarket"
        || fields[1] != "matrix"
        || fields[2] != "coordinate"
        || fields[3] != "real"
    {
        return Err(LinAlgError::ParseError(format!("unsupported header: {header}")));
    }
    let symmetric = match fields[4].as_str() {
        "general" => false,
        "symmetric" => true,
        other => {
            return Err(LinAlgError::ParseError(format!(
                "unsupported qualifier: {other}"
            )))
        }
    };
    let mut size_line = None;
    for line in lines.by_ref() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        size_line = Some(line);
        break;
    }
    let size_line =
        size_line.ok_or_else(|| LinAlgError::ParseError("missing size line".into()))?;
    let dims: Vec<usize> = size_line
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| LinAlgError::ParseError(format!("size line: {e}")))?;
    if dims.len() != 3 {
        return Err(LinAlgError::ParseError("size line needs 3 fields".into()));
    }
    let (nrows, ncols, nnz) = (dims[0], dims[1], dims[2]);
    let mut trip = Vec::with_capacity(nnz);
    let mut seen = 0;
    for line in lines {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(LinAlgError::ParseError(format!("bad entry line: {line}")));
        }
        let r: usize = toks[0]
            .parse()
            .map_err(|e| LinAlgError::ParseError(format!("row index: {e}")))?;
        let c: usize = toks[1]
            .parse()
            .map_err(|e| LinAlgError::ParseError(format!("col index: {e}")))?;
        let v: f64 = toks[2]
            .parse()
            .map_err(|e| LinAlgError::ParseError(format!("value: {e}")))?;
        if r == 0 || c == 0 || r > nrows || c > ncols {
            return Err(LinAlgError::ParseError(format!(
                "index ({r}, {c}) outside 1-based {nrows}x{ncols}"
            )));
        }
        trip.push((r - 1, c - 1, v));
        if symmetric && r != c {
            trip.push((c - 1, r - 1, v));
        }
        seen += 1;
    }
    if seen != nnz {
        return Err(LinAlgError::ParseError(format!(
            "expected {nnz} entries, found {seen}"
        )));
    }
    SparseMatrix::from_triplets(nrows, ncols, &trip)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_round_trip_is_exact() {
        let a = SparseMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 4.0),
                (1, 1, 5.0),
                (2, 2, 6.0),
                (0, 1, -1.25e-3),
                (1, 0, -1.25e-3),
                (2, 0, 0.1 + 0.2),
                (0, 2, 0.1 + 0.2),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&mut buf, &a, true).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real symmetric"));
        let b = read_matrix_market(&buf[..]).unwrap();
        assert_eq!(a.to_dense(), b.to_dense());
    }

    #[test]
    fn general_round_trip_is_exact() {
        let a = SparseMatrix::from_triplets(2, 3, &[(0, 2, 1.0 / 3.0), (1, 0, -7.5)]).unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&mut buf, &a, false).unwrap();
        let b = read_matrix_market(&buf[..]).unwrap();
        assert_eq!(a.to_dense(), b.to_dense());
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(read_matrix_market("garbage".as_bytes()).is_err());
        let missing = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n";
        assert!(read_matrix_market(missing.as_bytes()).is_err());
        let bad_index = "%%MatrixMarket matrix coordinate real general\n2 2 1\n3 1 1.0\n";
        assert!(read_matrix_market(bad_index.as_bytes()).is_err());
    }
}
