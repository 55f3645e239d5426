//! Flat binary checkpoints for parameter stores.
//!
//! Layout: magic `BSWM`, version u32, tensor count u32, then per tensor the
//! name (u16 length + bytes), rank u8, dims as u32, and the element bytes.
//! All integers and elements are little-endian.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"BSWM";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes; not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut w: W) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, tensor) in store.iter() {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&[tensor.shape.len() as u8])?;
        for &d in &tensor.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &tensor.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamStore, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let mut len = [0u8; 2];
        r.read_exact(&mut len)?;
        let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Malformed("tensor name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r)? as usize);
        }
        let total: usize = shape.iter().product();
        let mut values = Vec::with_capacity(total);
        let mut buf = [0u8; 8];
        for _ in 0..total {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        store.insert(name, Tensor::from_values(shape, values));
    }
    Ok(store)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn save_checkpoint(store: &ParamStore, path: &Path) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(store, &mut w)?;
    w.flush()
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_store() {
        let mut store = ParamStore::new();
        store.insert(
            "a.weight",
            Tensor::from_values(vec![2, 3], vec![1.5, -2.0, 0.0, 3.25, f64::MIN_POSITIVE, 9.0]),
        );
        store.insert("b.bias", Tensor::from_values(vec![1], vec![-0.125]));
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        assert_eq!(&buf[0..4], MAGIC);
        let loaded = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(loaded, store);
    }

    #[test]
    fn writes_are_byte_identical() {
        let mut store = ParamStore::new();
        store.insert("x", Tensor::from_values(vec![2], vec![0.1, 0.2]));
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_checkpoint(&store, &mut a).unwrap();
        write_checkpoint(&store, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_checkpoint(&b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00"[..]),
            Err(CheckpointError::BadMagic)
        ));
        let mut store = ParamStore::new();
        store.insert("x", Tensor::from_values(vec![2], vec![0.1, 0.2]));
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
