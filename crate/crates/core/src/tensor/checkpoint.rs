//! Flat little-endian parameter checkpoint.
//!
//! ```text
//! magic    8 bytes  "FDETCKPT"
//! version  u32
//! count    u32
//! count × {
//!     name_len u32, name (utf-8),
//!     ndim u32, dims u64 × ndim,
//!     payload f64 × Π dims
//! }
//! crc32    u32      over every preceding byte
//! ```

use std::io::{Read, Write};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FDETCKPT";
pub const CHECKPOINT_VERSION: u32 = 2;

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut out: W) -> Result<()> {
    let mut w = Vec::new();
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, t) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    let crc = crc32fast::hash(&w);
    out.write_all(&w)?;
    out.write_all(&crc.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated checkpoint".into())
    } else {
        Error::Io(e)
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<ParamStore> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    if &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body).to_le_bytes() != crc {
        return Err(Error::Format("checkpoint checksum mismatch (truncated or corrupted)".into()));
    }
    let mut r = body;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        if len > 1 << 16 {
            return Err(Error::Format(format!("implausible name length {len}")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("non-utf8 tensor name".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim > 8 {
            return Err(Error::Format(format!("implausible rank {ndim} for {name}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_bits(read_u64(&mut r)?));
        }
        let t = Tensor::new(shape, data).map_err(|e| Error::Format(format!("{name}: {e}")))?;
        if !t.is_finite() {
            return Err(Error::Format(format!("non-finite values in {name}")));
        }
        store.add(name, t);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = Rng::new(3);
        let mut store = ParamStore::new();
        store.add("a.weight", Tensor::uniform(&[3, 4], 1.0, &mut rng));
        store.add("b", Tensor::scalar(-0.125));
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back, store);
    }

    #[test]
    fn corrupted_checkpoints_are_rejected() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::full(&[2], 1.5));
        let mut buf = Vec::new();
        write_checkpoint(&store, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
        let mut flipped = buf.clone();
        let n = flipped.len();
        flipped[n - 8] ^= 1;
        assert!(read_checkpoint(&flipped[..]).is_err());
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        let mut long = buf.clone();
        long.push(0);
        assert!(read_checkpoint(&long[..]).is_err());
    }
}
