//! Matrix and label containers.
//!
//! Binary matrix layout: `DSB1MATX` | rows u64 LE | cols u64 LE | rows*cols
//! f32 LE, row-major. Binary labels: `DSB1LABL` | count u64 LE | count i32 LE.
//! Either may instead be CSV: comma-separated decimals, one row per line,
//! with an optional single header line starting with `#`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"DSB1MATX";
pub const LABEL_MAGIC: &[u8; 8] = b"DSB1LABL";
const HEADER_LEN: u64 = 24;
const LABEL_HEADER_LEN: u64 = 16;

fn format_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn peek_magic(path: &Path) -> Result<Option<[u8; 8]>> {
    let mut buf = [0u8; 8];
    let mut f = open(path)?;
    let mut read = 0;
    while read < 8 {
        match f.read(&mut buf[read..]).map_err(|e| Error::io(path, e))? {
            0 => return Ok(None),
            k => read += k,
        }
    }
    Ok(Some(buf))
}

/// Shape of a matrix file without decoding the payload (binary) or after a
/// full parse (CSV). Payload length is checked against the header.
pub fn matrix_shape(path: &Path) -> Result<(usize, usize)> {
    if peek_magic(path)?.as_ref() == Some(MATRIX_MAGIC) {
        let mut r = BufReader::new(open(path)?);
        let (rows, cols) = read_matrix_header(path, &mut r)?;
        check_payload_len(path, HEADER_LEN, rows.checked_mul(cols), 4)?;
        Ok((rows, cols))
    } else {
        let m = read_matrix_csv(path)?;
        Ok(m.dim())
    }
}

/// Number of labels in a label file.
pub fn label_count(path: &Path) -> Result<usize> {
    if peek_magic(path)?.as_ref() == Some(LABEL_MAGIC) {
        let mut r = BufReader::new(open(path)?);
        let mut head = [0u8; 16];
        r.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
        let count = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
        check_payload_len(path, LABEL_HEADER_LEN, Some(count), 4)?;
        Ok(count)
    } else {
        Ok(read_labels_csv(path)?.len())
    }
}

fn check_payload_len(path: &Path, header: u64, count: Option<usize>, width: u64) -> Result<()> {
    let len = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    let expected = count
        .and_then(|c| (c as u64).checked_mul(width))
        .and_then(|b| b.checked_add(header))
        .ok_or_else(|| format_err(path, "declared dimensions overflow"))?;
    if len != expected {
        return Err(Error::shape(
            path.display().to_string(),
            format!(
                "header declares {} values but payload holds {} bytes ({} expected)",
                count.unwrap_or(0),
                len.saturating_sub(header),
                expected - header
            ),
        ));
    }
    Ok(())
}

fn read_matrix_header(path: &Path, r: &mut impl Read) -> Result<(usize, usize)> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    if &head[..8] != MATRIX_MAGIC {
        return Err(format_err(path, "bad matrix magic"));
    }
    let rows = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(head[16..24].try_into().unwrap()) as usize;
    Ok((rows, cols))
}

/// Reads a matrix in either encoding. When `expected` is given the shape
/// must match it exactly. Non-finite entries are rejected.
pub fn read_matrix(path: &Path, expected: Option<(usize, usize)>) -> Result<Array2<f64>> {
    let m = if peek_magic(path)?.as_ref() == Some(MATRIX_MAGIC) {
        read_matrix_binary(path)?
    } else {
        read_matrix_csv(path)?
    };
    if let Some((rows, cols)) = expected {
        if m.dim() != (rows, cols) {
            return Err(Error::shape(
                path.display().to_string(),
                format!(
                    "expected {rows}x{cols}, found {}x{}",
                    m.nrows(),
                    m.ncols()
                ),
            ));
        }
    }
    super::check_finite(m.view())?;
    Ok(m)
}

fn read_matrix_binary(path: &Path) -> Result<Array2<f64>> {
    let mut r = BufReader::new(open(path)?);
    let (rows, cols) = read_matrix_header(path, &mut r)?;
    check_payload_len(path, HEADER_LEN, rows.checked_mul(cols), 4)?;
    let mut bytes = vec![0u8; rows * cols * 4];
    r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| format_err(path, e.to_string()))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(open(path)?))
}

fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (line, record) in csv_reader(path)?.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let width = record.len();
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::shape(
                    path.display().to_string(),
                    format!("row {line} has {width} fields, expected {c}"),
                ))
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| format_err(path, format!("row {line}: '{field}' is not a number")))?;
            values.push(v);
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), values)
        .map_err(|e| format_err(path, e.to_string()))
}

/// Writes the binary container. Values are narrowed to f32.
pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    emit(MATRIX_MAGIC)?;
    emit(&(m.nrows() as u64).to_le_bytes())?;
    emit(&(m.ncols() as u64).to_le_bytes())?;
    for v in m.iter() {
        emit(&(*v as f32).to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the CSV encoding with shortest round-trip decimal formatting.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    writeln!(w, "# {}x{}", m.nrows(), m.ncols()).map_err(|e| Error::io(path, e))?;
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads labels from either encoding. Negative ids are rejected here; the
/// upper range check happens when a dataset is assembled.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let raw = if peek_magic(path)?.as_ref() == Some(LABEL_MAGIC) {
        let count = label_count(path)?;
        let mut r = BufReader::new(open(path)?);
        let mut bytes = vec![0u8; LABEL_HEADER_LEN as usize + count * 4];
        r.read_exact(&mut bytes).map_err(|e| Error::io(path, e))?;
        bytes[LABEL_HEADER_LEN as usize..]
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64)
            .collect()
    } else {
        read_labels_csv(path)?
    };
    raw.into_iter()
        .map(|v| {
            usize::try_from(v).map_err(|_| Error::InvalidLabel {
                label: v,
                classes: 0,
            })
        })
        .collect()
}

fn read_labels_csv(path: &Path) -> Result<Vec<i64>> {
    let mut out = Vec::new();
    for (line, record) in csv_reader(path)?.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        for field in record.iter() {
            out.push(
                field
                    .parse()
                    .map_err(|_| format_err(path, format!("row {line}: '{field}' is not a class id")))?,
            );
        }
    }
    Ok(out)
}

pub fn write_labels(path: &Path, labels: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let mut emit = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    emit(LABEL_MAGIC)?;
    emit(&(labels.len() as u64).to_le_bytes())?;
    for &y in labels {
        let y = i32::try_from(y).map_err(|_| Error::invalid(format!("label {y} exceeds i32")))?;
        emit(&y.to_le_bytes())?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use tempfile::tempdir;

    #[test]
    fn binary_layout_is_documented_one() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.bin");
        let mut bytes = MATRIX_MAGIC.to_vec();
        bytes.extend(2u64.to_le_bytes());
        bytes.extend(2u64.to_le_bytes());
        for v in [1f32, 2.0, 3.0, 4.0] {
            bytes.extend(v.to_le_bytes());
        }
        std::fs::write(&p, bytes).unwrap();
        assert_eq!(read_matrix(&p, Some((2, 2))).unwrap(), array![[1.0, 2.0], [3.0, 4.0]]);

        let c = dir.path().join("m.csv");
        std::fs::write(&c, "1,2\n3,4\n").unwrap();
        assert_eq!(read_matrix(&c, None).unwrap(), read_matrix(&p, None).unwrap());
        std::fs::write(&c, "# a header\n1, 2\n3 ,4\n").unwrap();
        assert_eq!(read_matrix(&c, Some((2, 2))).unwrap(), array![[1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn rejects_nan_and_length_mismatch() {
        let dir = tempdir().unwrap();
        let c = dir.path().join("nan.csv");
        std::fs::write(&c, "1,NaN\n").unwrap();
        assert!(matches!(read_matrix(&c, None), Err(Error::NonFinite { row: 0, col: 1 })));

        let p = dir.path().join("short.bin");
        write_matrix(&p, &array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.extend(5f32.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_matrix(&p, None), Err(Error::Shape { .. })));
        assert!(matches!(matrix_shape(&p), Err(Error::Shape { .. })));

        let ragged = dir.path().join("ragged.csv");
        std::fs::write(&ragged, "1,2\n3\n").unwrap();
        assert!(matches!(read_matrix(&ragged, None), Err(Error::Shape { .. })));
        assert!(matches!(
            read_matrix(&dir.path().join("missing.bin"), None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn expected_shape_is_enforced() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.bin");
        write_matrix(&p, &Array2::zeros((3, 2))).unwrap();
        assert!(read_matrix(&p, Some((3, 2))).is_ok());
        assert!(matches!(read_matrix(&p, Some((2, 3))), Err(Error::Shape { .. })));
    }

    #[test]
    fn labels_in_both_encodings() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("y.bin");
        write_labels(&p, &[0, 2, 1]).unwrap();
        assert_eq!(read_labels(&p).unwrap(), vec![0, 2, 1]);
        assert_eq!(label_count(&p).unwrap(), 3);
        let c = dir.path().join("y.csv");
        std::fs::write(&c, "# labels\n0\n2\n1\n").unwrap();
        assert_eq!(read_labels(&c).unwrap(), vec![0, 2, 1]);
        std::fs::write(&c, "0\n-1\n").unwrap();
        assert!(matches!(read_labels(&c), Err(Error::InvalidLabel { label: -1, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn write_then_read_is_identity(
            rows in 1usize..8, cols in 1usize..8,
            seed in proptest::collection::vec(-1e6f32..1e6, 64),
        ) {
            let m = Array2::from_shape_fn((rows, cols), |(i, j)| seed[i * 8 + j] as f64);
            let dir = tempdir().unwrap();
            let b = dir.path().join("m.bin");
            let c = dir.path().join("m.csv");
            write_matrix(&b, &m).unwrap();
            write_matrix_csv(&c, &m).unwrap();
            prop_assert_eq!(&read_matrix(&b, Some((rows, cols))).unwrap(), &m);
            prop_assert_eq!(&read_matrix(&c, Some((rows, cols))).unwrap(), &m);
        }
    }
}
