//! RGF v1: one UTF-8 JSON header line, then `C*H*W` little-endian f32
//! values, channel-major then row-major.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::field::{check_space, GridField, Space};
use crate::error::{Error, Result};

pub const RGF_MAGIC: &str = "RGF1";
pub const RGF_DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFileHeader {
    pub magic: String,
    pub variable: String,
    pub units: String,
    pub dims: [usize; 3],
    pub dtype: String,
    pub space: Space,
}

impl GridFileHeader {
    pub fn new(variable: impl Into<String>, units: impl Into<String>, dims: [usize; 3], space: Space) -> Self {
        Self {
            magic: RGF_MAGIC.to_string(),
            variable: variable.into(),
            units: units.into(),
            dims,
            dtype: RGF_DTYPE.to_string(),
            space,
        }
    }

    pub fn channels(&self) -> usize {
        self.dims[0]
    }

    fn validate(&self) -> Result<()> {
        if self.magic != RGF_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", self.magic)));
        }
        if self.dtype != RGF_DTYPE {
            return Err(Error::Format(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.dims.contains(&0) {
            return Err(Error::Format(format!("dims must be positive, got {:?}", self.dims)));
        }
        Ok(())
    }

    fn payload_len(&self) -> usize {
        self.dims.iter().product::<usize>() * 4
    }
}

pub fn read_grid_file(path: impl AsRef<Path>) -> Result<(GridFileHeader, Vec<GridField>)> {
    let bytes = fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header terminator".into()))?;
    let header_text = std::str::from_utf8(&bytes[..newline])
        .map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;
    let header: GridFileHeader =
        serde_json::from_str(header_text).map_err(|e| Error::Format(format!("header: {e}")))?;
    header.validate()?;

    let payload = &bytes[newline + 1..];
    let expected = header.payload_len();
    if payload.len() < expected {
        return Err(Error::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            payload.len() - expected
        )));
    }

    let [c, h, w] = header.dims;
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    check_space(&values, header.space)?;
    let fields = values
        .chunks_exact(h * w)
        .take(c)
        .map(|chunk| GridField::new(chunk.to_vec(), h, w, header.space))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, fields))
}

pub fn write_grid_file(path: impl AsRef<Path>, header: &GridFileHeader, fields: &[GridField]) -> Result<()> {
    header.validate()?;
    let [c, h, w] = header.dims;
    if fields.len() != c {
        return Err(Error::Shape(format!("header declares {c} channels, got {}", fields.len())));
    }
    for (i, f) in fields.iter().enumerate() {
        if f.dims() != (h, w) {
            return Err(Error::Shape(format!(
                "channel {i} is {}x{}, header declares {h}x{w}",
                f.height(),
                f.width()
            )));
        }
        if f.space() != header.space {
            return Err(Error::Space(format!(
                "channel {i} is {}, header declares {}",
                f.space().as_str(),
                header.space.as_str()
            )));
        }
        check_space(f.values(), header.space)?;
    }

    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut out, header)?;
    out.write_all(b"\n")?;
    for f in fields {
        for v in f.values() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn reads_row_major_payload() {
        let dir = tmp();
        let path = dir.path().join("a.rgf");
        let field = GridField::new(vec![0.0, 1.0, 2.0, 3.0], 2, 2, Space::RawMm).unwrap();
        let header = GridFileHeader::new("precip", "mm", [1, 2, 2], Space::RawMm);
        write_grid_file(&path, &header, &[field]).unwrap();
        let (h, fields) = read_grid_file(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(fields.len(), 1);
        assert_eq!(fields[0].get(0, 1), 1.0);
        assert_eq!(fields[0].get(1, 0), 2.0);
    }

    #[test]
    fn header_line_has_expected_keys() {
        let dir = tmp();
        let path = dir.path().join("a.rgf");
        let header = GridFileHeader::new("precip", "mm", [1, 1, 1], Space::Normalized);
        write_grid_file(&path, &header, &[GridField::zeros(1, 1, Space::Normalized)]).unwrap();
        let bytes = fs::read(&path).unwrap();
        let line = std::str::from_utf8(&bytes[..bytes.len() - 5]).unwrap();
        assert_eq!(
            line,
            r#"{"magic":"RGF1","variable":"precip","units":"mm","dims":[1,1,1],"dtype":"f32le","space":"normalized"}"#
        );
        assert_eq!(bytes[bytes.len() - 5], b'\n');
    }

    #[test]
    fn short_payload_is_truncation() {
        let dir = tmp();
        let path = dir.path().join("a.rgf");
        let mut bytes = br#"{"magic":"RGF1","variable":"p","units":"mm","dims":[1,2,2],"dtype":"f32le","space":"raw_mm"}"#.to_vec();
        bytes.push(b'\n');
        for v in [0.0f32, 1.0, 2.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_grid_file(&path), Err(Error::Truncated { expected: 16, found: 12 })));
    }

    #[test]
    fn malformed_header_is_format_error() {
        let dir = tmp();
        let path = dir.path().join("a.rgf");
        fs::write(&path, b"{\"magic\":\"NOPE\"}\n").unwrap();
        assert!(matches!(read_grid_file(&path), Err(Error::Format(_))));
        let bad_dtype = br#"{"magic":"RGF1","variable":"p","units":"mm","dims":[1,1,1],"dtype":"f64le","space":"raw_mm"}"#;
        fs::write(&path, [bad_dtype.as_slice(), b"\n\0\0\0\0"].concat()).unwrap();
        assert!(matches!(read_grid_file(&path), Err(Error::Format(_))));
        fs::write(&path, b"no newline").unwrap();
        assert!(matches!(read_grid_file(&path), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_payload_is_data_error() {
        let dir = tmp();
        let path = dir.path().join("a.rgf");
        let mut bytes = br#"{"magic":"RGF1","variable":"p","units":"mm","dims":[1,1,1],"dtype":"f32le","space":"raw_mm"}"#.to_vec();
        bytes.push(b'\n');
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_grid_file(&path), Err(Error::Data(_))));
    }

    #[test]
    fn write_rejects_mismatched_dims() {
        let dir = tmp();
        let header = GridFileHeader::new("p", "mm", [2, 2, 2], Space::RawMm);
        let f = GridField::zeros(2, 2, Space::RawMm);
        assert!(matches!(write_grid_file(dir.path().join("x"), &header, std::slice::from_ref(&f)), Err(Error::Shape(_))));
        let g = GridField::zeros(3, 2, Space::RawMm);
        assert!(matches!(write_grid_file(dir.path().join("x"), &header, &[f, g]), Err(Error::Shape(_))));
    }

    #[test]
    fn constant_field_round_trips() {
        let dir = tmp();
        let path = dir.path().join("c.rgf");
        let f = GridField::filled(5.0, 3, 4, Space::RawMm).unwrap();
        let header = GridFileHeader::new("p", "mm", [1, 3, 4], Space::RawMm);
        write_grid_file(&path, &header, std::slice::from_ref(&f)).unwrap();
        assert_eq!(read_grid_file(&path).unwrap().1[0], f);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn random_stacks_round_trip_bit_exactly(
            values in prop::collection::vec(0.0f32..=f32::MAX, 24 * 16 * 16)
        ) {
            let dir = tmp();
            let path = dir.path().join("s.rgf");
            let fields: Vec<GridField> = values
                .chunks(256)
                .map(|c| GridField::new(c.to_vec(), 16, 16, Space::RawMm).unwrap())
                .collect();
            let header = GridFileHeader::new("stack", "mm", [24, 16, 16], Space::RawMm);
            write_grid_file(&path, &header, &fields).unwrap();
            let (_, back) = read_grid_file(&path).unwrap();
            for (a, b) in fields.iter().zip(&back) {
                for (x, y) in a.values().iter().zip(b.values()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
