//! Reading and writing the Middlebury `.flo` flow format.
//!
//! Layout: a 4-byte float magic (202021.25, the bytes "PIEH"), two
//! little-endian i32 dimensions (width then height), then `height * width`
//! interleaved `(u, v)` f32 pairs in row-major order. A 2x2 field is exactly
//! 44 bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::flow::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;

/// Dimensions above this are treated as corruption rather than data.
const MAX_DIM: i32 = 1 << 20;

#[derive(Debug, thiserror::Error)]
pub enum FloError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic {found} (expected {FLO_MAGIC}); not a flow file")]
    BadMagic { found: f32 },
    #[error("implausible dimensions {width}x{height}")]
    BadDims { width: i32, height: i32 },
    #[error("truncated payload: expected {expected} bytes after the header, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{extra} trailing bytes after byte {end}")]
    TrailingBytes { end: usize, extra: usize },
}

pub fn read_flo(path: &Path) -> Result<FlowField, FloError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 12];
    r.read_exact(&mut head)?;
    let magic = f32::from_le_bytes(head[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(FloError::BadMagic { found: magic });
    }
    let width = i32::from_le_bytes(head[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(head[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 || width > MAX_DIM || height > MAX_DIM {
        return Err(FloError::BadDims { width, height });
    }
    let (w, h) = (width as usize, height as usize);
    let expected = 2 * w * h * 4;
    let mut payload = Vec::with_capacity(expected);
    r.read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(FloError::Truncated { expected, found: payload.len() });
    }
    if payload.len() > expected {
        return Err(FloError::TrailingBytes { end: 12 + expected, extra: payload.len() - expected });
    }
    let hw = h * w;
    let mut data = vec![0.0f32; 2 * hw];
    for i in 0..hw {
        let at = 8 * i;
        data[i] = f32::from_le_bytes(payload[at..at + 4].try_into().unwrap());
        data[hw + i] = f32::from_le_bytes(payload[at + 4..at + 8].try_into().unwrap());
    }
    Ok(FlowField::from_planar(h, w, data).expect("sized above"))
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<(), FloError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&FLO_MAGIC.to_le_bytes())?;
    w.write_all(&(flow.width() as i32).to_le_bytes())?;
    w.write_all(&(flow.height() as i32).to_le_bytes())?;
    let (u, v) = (flow.u(), flow.v());
    for i in 0..u.len() {
        w.write_all(&u[i].to_le_bytes())?;
        w.write_all(&v[i].to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_file_is_exactly_44_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.flo");
        write_flo(&p, &FlowField::zeros(2, 2)).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 44);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.flo");
        let f = FlowField::from_fn(3, 5, |x, y| (x * 0.37 - 2.0, y.exp()));
        write_flo(&p, &f).unwrap();
        let back = read_flo(&p).unwrap();
        assert_eq!(f.u(), back.u());
        assert_eq!(f.v(), back.v());
    }

    #[test]
    fn foreign_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.flo");
        std::fs::write(&p, [0u8; 44]).unwrap();
        assert!(matches!(read_flo(&p), Err(FloError::BadMagic { .. })));
    }

    #[test]
    fn truncation_reports_expected_byte_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cut.flo");
        write_flo(&p, &FlowField::zeros(2, 2)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..30]).unwrap();
        match read_flo(&p) {
            Err(FloError::Truncated { expected: 32, found: 18 }) => {}
            other => panic!("expected truncation error, got {other:?}"),
        }
    }
}
