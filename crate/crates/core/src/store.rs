//! On-disk artifact helpers: atomic writes, JSONL files and checksummed vector blobs.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::embed::Embedding;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"PTVECTRS";
const CRC64: crc::Crc<u64> = crc::Crc::<u64>::new(&crc::CRC_64_XZ);
const HEADER: usize = 8 + 4 + 8;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Json { path: String, line: usize, message: String },
    #[error("{0}: not a vector blob (bad magic)")]
    BadMagic(String),
    #[error("{0}: checksum mismatch or truncated file")]
    Checksum(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.display().to_string(), source }
}

/// Writes through a temporary file in the target directory, then renames over `path`.
///
/// A failure or crash mid-write leaves any previous file at `path` untouched.
pub fn write_atomic<F>(path: &Path, write: F) -> Result<(), StoreError>
where
    F: FnOnce(&mut dyn Write) -> io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        write(&mut out).map_err(io_err(path))?;
        out.flush().map_err(io_err(path))?;
    }
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), StoreError> {
    write_atomic(path, |out| {
        for r in records {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StoreError> {
    write_atomic(path, |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        out.write_all(b"\n")
    })
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Json {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Json {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Encodes vectors as `PTVECTRS | dim:u32 | count:u64 | f64 * dim * count | crc64`, little-endian.
///
/// All vectors must share `dim`.
pub fn encode_vectors<T: Scalar>(dim: usize, vectors: &[Embedding<T>]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER + vectors.len() * dim * 8 + 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(dim as u32).to_le_bytes());
    buf.extend_from_slice(&(vectors.len() as u64).to_le_bytes());
    for v in vectors {
        assert_eq!(v.dim(), dim, "vector blob rows must share one dimension");
        for x in v.values() {
            buf.extend_from_slice(&x.as_f64().to_le_bytes());
        }
    }
    let crc = CRC64.checksum(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

/// Decodes a vector blob into `(dim, vectors)`; vectors are returned as stored, not re-normalized.
pub fn decode_vectors<T: Scalar>(bytes: &[u8], name: &str) -> Result<(usize, Vec<Embedding<T>>), StoreError> {
    if bytes.len() < HEADER + 8 {
        return Err(StoreError::Checksum(name.into()));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 8);
    if CRC64.checksum(body) != u64::from_le_bytes(crc.try_into().expect("8 bytes")) {
        return Err(StoreError::Checksum(name.into()));
    }
    if &body[..8] != MAGIC {
        return Err(StoreError::BadMagic(name.into()));
    }
    let dim = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
    let count = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let floats = &body[HEADER..];
    if floats.len() != dim * count * 8 {
        return Err(StoreError::Checksum(name.into()));
    }
    let vectors = floats
        .chunks_exact(8 * dim.max(1))
        .take(count)
        .map(|row| {
            Embedding::new(
                row.chunks_exact(8)
                    .map(|b| T::of(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                    .collect(),
            )
        })
        .collect();
    Ok((dim, vectors))
}

pub fn save_vectors<T: Scalar>(path: &Path, dim: usize, vectors: &[Embedding<T>]) -> Result<(), StoreError> {
    let bytes = encode_vectors(dim, vectors);
    write_atomic(path, |out| out.write_all(&bytes))
}

pub fn load_vectors<T: Scalar>(path: &Path) -> Result<(usize, Vec<Embedding<T>>), StoreError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    decode_vectors(&bytes, &path.display().to_string())
}
