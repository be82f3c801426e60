//! Flat named-array container for model parameters.
//!
//! Layout: `"AFCK"` magic, u32 LE entry count, then per entry a u16 LE name
//! length, the UTF-8 name, a u8 rank, u32 LE dims, and the f32 LE payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::TensorData;
use crate::param::ParamStore;

const MAGIC: &[u8; 4] = b"AFCK";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic; not a checkpoint file")]
    BadMagic,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint does not fit the model: {0}")]
    Incompatible(String),
}

pub fn save_checkpoint(path: &Path, store: &ParamStore<f32>) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&u32::try_from(store.len()).map_err(|_| CheckpointError::Malformed("too many entries".into()))?.to_le_bytes())?;
    for (name, value) in store.iter() {
        let name_len = u16::try_from(name.len())
            .map_err(|_| CheckpointError::Malformed(format!("name too long: {name}")))?;
        let rank = u8::try_from(value.shape().len())
            .map_err(|_| CheckpointError::Malformed(format!("rank too high: {name}")))?;
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[rank])?;
        for &d in value.shape() {
            let d = u32::try_from(d).map_err(|_| CheckpointError::Malformed(format!("dim too large: {name}")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for &v in value.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, TensorData<f32>)>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u16(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::Malformed("non-UTF-8 entry name".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel > (1 << 28) {
            return Err(CheckpointError::Malformed(format!("entry {name} claims {numel} elements")));
        }
        let mut payload = vec![0u8; numel * 4];
        r.read_exact(&mut payload)
            .map_err(|_| CheckpointError::Malformed(format!("truncated payload for {name}")))?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let tensor = TensorData::new(shape, data)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        entries.push((name, tensor));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Malformed("trailing bytes after last entry".into()));
    }
    Ok(entries)
}

/// Loads a checkpoint into an existing store. Every stored entry must exist
/// in the file with a matching shape and vice versa.
pub fn load_checkpoint_into(path: &Path, store: &mut ParamStore<f32>) -> Result<(), CheckpointError> {
    let entries = load_checkpoint(path)?;
    if entries.len() != store.len() {
        return Err(CheckpointError::Incompatible(format!(
            "{} entries in file, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for (name, value) in entries {
        let id = store
            .id_by_name(&name)
            .ok_or_else(|| CheckpointError::Incompatible(format!("unknown parameter {name}")))?;
        let expected = store.get(id).shape().to_vec();
        if expected != value.shape() {
            return Err(CheckpointError::Incompatible(format!(
                "{name}: file shape {:?}, model shape {expected:?}",
                value.shape()
            )));
        }
        store.set(id, value).expect("shape already validated");
    }
    Ok(())
}

fn read_u16(r: &mut impl Read) -> Result<u16, CheckpointError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("enc.w", TensorData::from_fn(vec![2, 3], |i| i as f32 * 0.5));
        s.add("enc.b", TensorData::new(vec![3], vec![-1.0, 0.0, 1.0]).unwrap());
        s
    }

    #[test]
    fn roundtrip_preserves_names_shapes_values() {
        let dir = std::env::temp_dir().join(format!("afck-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rt.ckpt");
        let mut store = sample_store();
        save_checkpoint(&path, &store).unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "enc.w");
        assert_eq!(loaded[0].1.shape(), &[2, 3]);

        // wipe and reload through the validating path
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let shape = store.get(id).shape().to_vec();
            store.set(id, TensorData::zeros(shape)).unwrap();
        }
        load_checkpoint_into(&path, &mut store).unwrap();
        let id = store.id_by_name("enc.b").unwrap();
        assert_eq!(store.get(id).as_slice(), &[-1.0, 0.0, 1.0]);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_foreign_magic() {
        let dir = std::env::temp_dir().join(format!("afck-magic-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"PNG\x00nonsense").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic)));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = std::env::temp_dir().join(format!("afck-trunc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.ckpt");
        save_checkpoint(&path, &sample_store()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::Malformed(_))));
        std::fs::remove_dir_all(&dir).ok();
    }
}
