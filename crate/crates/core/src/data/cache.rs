//! Encoded-dataset cache.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "NIDSENC\0"
//! version      u32
//! schema hash  u32 length + UTF-8 hex
//! input key    u32 length + UTF-8 hex
//! train count  u64
//! test count   u64
//! width        u32
//! samples      (train then test) u32 label + width * f64
//! checksum     32 bytes, SHA-256 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use super::encode::EncodedSample;
use super::pipeline::EncodedSplit;
use super::schema::ENCODED_WIDTH;
use super::{hex, DataError};

pub const CACHE_MAGIC: &[u8; 8] = b"NIDSENC\0";
pub const CACHE_VERSION: u32 = 1;

/// Key identifying the inputs a cache was built from: source bytes plus the
/// preprocessing options that change the result.
pub fn input_key(source: &[u8], options: &str) -> String {
    let mut h = Sha256::new();
    h.update((source.len() as u64).to_le_bytes());
    h.update(source);
    h.update(options.as_bytes());
    hex(&h.finalize())
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn write_cache(path: impl AsRef<Path>, data: &EncodedSplit, schema_hash: &str, key: &str) -> Result<(), DataError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    put_str(&mut buf, schema_hash);
    put_str(&mut buf, key);
    buf.extend_from_slice(&(data.train.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(data.test.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(ENCODED_WIDTH as u32).to_le_bytes());
    for s in data.train.iter().chain(&data.test) {
        buf.extend_from_slice(&(s.label as u32).to_le_bytes());
        for v in &s.features {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    std::fs::write(path.as_ref(), buf).map_err(|e| DataError::Io(format!("{}: {e}", path.as_ref().display())))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or_else(|| DataError::Cache("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, DataError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| DataError::Cache("invalid utf-8".into()))
    }
}

/// Reads a cache, returning `(schema hash, input key, data)`.
pub fn read_cache(path: impl AsRef<Path>) -> Result<(String, String, EncodedSplit), DataError> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| DataError::Io(format!("{}: {e}", path.as_ref().display())))?;
    if bytes.len() < CACHE_MAGIC.len() + 32 || &bytes[..8] != CACHE_MAGIC {
        return Err(DataError::Cache("not an encoded-dataset cache".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(DataError::Cache("checksum mismatch".into()));
    }
    let mut c = Cursor { buf: body, pos: 8 };
    let version = c.u32()?;
    if version != CACHE_VERSION {
        return Err(DataError::Cache(format!("version {version}, expected {CACHE_VERSION}")));
    }
    let schema_hash = c.str()?;
    let key = c.str()?;
    let n_train = c.u64()? as usize;
    let n_test = c.u64()? as usize;
    let width = c.u32()? as usize;
    if width != ENCODED_WIDTH {
        return Err(DataError::Cache(format!("width {width}, expected {ENCODED_WIDTH}")));
    }
    let mut read = |n: usize| -> Result<Vec<EncodedSample>, DataError> {
        (0..n)
            .map(|_| {
                let label = c.u32()? as usize;
                let features = (0..width)
                    .map(|_| Ok(f64::from_le_bytes(c.take(8)?.try_into().unwrap())))
                    .collect::<Result<_, DataError>>()?;
                Ok(EncodedSample { features, label })
            })
            .collect()
    };
    let train = read(n_train)?;
    let test = read(n_test)?;
    if c.pos != body.len() {
        return Err(DataError::Cache("trailing bytes".into()));
    }
    Ok((schema_hash, key, EncodedSplit { train, test }))
}
