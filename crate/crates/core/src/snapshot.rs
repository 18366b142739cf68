//! Field snapshot files.
//!
//! A snapshot is a single JSON header line followed by the cell values in
//! row-major order. The header always carries `dim`, `n` and `l`; it may
//! also carry the field name and time. Two encodings exist:
//!
//! * `f64le`: the header line is followed by raw little-endian `f64`s.
//! * `csv`: the header line is followed by one value per line, printed
//!   with 17 significant digits.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::field::ScalarField;
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    F64le,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub dim: usize,
    pub n: Vec<usize>,
    pub l: Vec<f64>,
    pub encoding: Encoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_field<W: Write>(
    mut w: W,
    field: &ScalarField,
    encoding: Encoding,
    name: Option<&str>,
    t: Option<f64>,
) -> io::Result<()> {
    let g = field.grid();
    let header = SnapshotHeader {
        dim: g.dim(),
        n: g.cells().to_vec(),
        l: g.lengths().to_vec(),
        encoding,
        field: name.map(str::to_owned),
        t,
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    match encoding {
        Encoding::F64le => {
            for v in field.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Encoding::Csv => {
            for &v in field.values() {
                writeln!(w, "{}", fmt_f64(v))?;
            }
        }
    }
    w.flush()
}

pub fn read_field<R: Read>(r: R) -> io::Result<(SnapshotHeader, ScalarField)> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: SnapshotHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    let grid = Grid::new(&header.n, &header.l)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    if grid.dim() != header.dim {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "header dim disagrees with n"));
    }
    let mut values = Vec::with_capacity(grid.len());
    match header.encoding {
        Encoding::F64le => {
            let mut buf = [0u8; 8];
            for _ in 0..grid.len() {
                r.read_exact(&mut buf)?;
                values.push(f64::from_le_bytes(buf));
            }
        }
        Encoding::Csv => {
            for l in r.lines() {
                let l = l?;
                let t = l.trim();
                if t.is_empty() {
                    continue;
                }
                values.push(
                    t.parse::<f64>()
                        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?,
                );
            }
        }
    }
    let field = ScalarField::new(Arc::new(grid), values)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    Ok((header, field))
}

pub fn save(
    path: &Path,
    field: &ScalarField,
    encoding: Encoding,
    name: Option<&str>,
    t: Option<f64>,
) -> io::Result<()> {
    let f = std::fs::File::create(path)?;
    write_field(io::BufWriter::new(f), field, encoding, name, t)
}

pub fn load(path: &Path) -> io::Result<(SnapshotHeader, ScalarField)> {
    read_field(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trips_bit_exactly(
            vals in prop::collection::vec(-1e6f64..1e6, 12),
            csv in any::<bool>(),
        ) {
            let g = Arc::new(Grid::new(&[3, 4], &[1.5, 2.0]).unwrap());
            let f = ScalarField::new(g, vals).unwrap();
            let enc = if csv { Encoding::Csv } else { Encoding::F64le };
            let mut buf = Vec::new();
            write_field(&mut buf, &f, enc, Some("u"), Some(0.25)).unwrap();
            let (h, back) = read_field(&buf[..]).unwrap();
            prop_assert_eq!(h.n, vec![3, 4]);
            prop_assert_eq!(h.field.as_deref(), Some("u"));
            for (a, b) in f.values().iter().zip(back.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn header_is_first_line() {
        let g = Arc::new(Grid::new(&[2], &[1.0]).unwrap());
        let f = ScalarField::new(g, vec![0.5, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_field(&mut buf, &f, Encoding::Csv, None, None).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), r#"{"dim":1,"n":[2],"l":[1.0],"encoding":"csv"}"#);
        assert_eq!(lines.next().unwrap(), "5.0000000000000000e-1");
    }

    #[test]
    fn truncated_binary_is_an_error() {
        let g = Arc::new(Grid::new(&[4], &[1.0]).unwrap());
        let f = ScalarField::constant(g, 1.0);
        let mut buf = Vec::new();
        write_field(&mut buf, &f, Encoding::F64le, None, None).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_field(&buf[..]).is_err());
    }
}
