//! Content-addressed on-disk embedding cache.
//!
//! One append-only data file plus one index file per model. Data records are
//! `key[32] | dim:u32 | f64 * dim | crc64`, index records are `key[32] | offset:u64`, all
//! little-endian. The key is SHA-256 over `model_name`, a NUL byte and the text.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use sha2::{Digest, Sha256};

use super::EmbedError;

pub type CacheKey = [u8; 32];

const CRC64: crc::Crc<u64> = crc::Crc::<u64>::new(&crc::CRC_64_XZ);
const INDEX_RECORD: usize = 40;

pub fn cache_key(model_name: &str, text: &str) -> CacheKey {
    let mut h = Sha256::new();
    h.update(model_name.as_bytes());
    h.update([0u8]);
    h.update(text.as_bytes());
    h.finalize().into()
}

fn file_stem(model_name: &str) -> String {
    let safe: String = model_name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    let digest = Sha256::digest(model_name.as_bytes());
    format!("{safe}-{}", hex::encode(&digest[..4]))
}

fn cache_io(path: &Path) -> impl FnOnce(std::io::Error) -> EmbedError + '_ {
    move |e| EmbedError::Cache(format!("{}: {e}", path.display()))
}

#[derive(Debug)]
pub struct EmbeddingCache {
    data_path: PathBuf,
    index: RwLock<HashMap<CacheKey, u64>>,
    writer: Mutex<(File, File)>,
}

impl EmbeddingCache {
    pub fn open(dir: &Path, model_name: &str) -> Result<Self, EmbedError> {
        fs::create_dir_all(dir).map_err(cache_io(dir))?;
        let stem = file_stem(model_name);
        let data_path = dir.join(format!("{stem}.bin"));
        let index_path = dir.join(format!("{stem}.idx"));

        let mut entries = HashMap::new();
        if index_path.exists() {
            let raw = fs::read(&index_path).map_err(cache_io(&index_path))?;
            // A torn trailing record from an interrupted write is ignored.
            for rec in raw.chunks_exact(INDEX_RECORD) {
                let key: CacheKey = rec[..32].try_into().expect("32-byte key");
                let offset = u64::from_le_bytes(rec[32..].try_into().expect("8-byte offset"));
                entries.insert(key, offset);
            }
        }
        let open = |p: &Path| {
            OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(cache_io(p))
        };
        let data = open(&data_path)?;
        let index = open(&index_path)?;
        Ok(Self {
            data_path,
            index: RwLock::new(entries),
            writer: Mutex::new((data, index)),
        })
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cache index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the cached vector, verifying key, dimension and checksum.
    pub fn get(&self, key: &CacheKey, dim: usize) -> Result<Option<Vec<f64>>, EmbedError> {
        let Some(offset) = self.index.read().expect("cache index lock").get(key).copied() else {
            return Ok(None);
        };
        let corrupt = |msg: &str| EmbedError::Cache(format!("{}: {msg}", self.data_path.display()));
        let mut file = File::open(&self.data_path).map_err(cache_io(&self.data_path))?;
        file.seek(SeekFrom::Start(offset)).map_err(cache_io(&self.data_path))?;
        let mut head = [0u8; 36];
        file.read_exact(&mut head)
            .map_err(|_| corrupt("truncated record header"))?;
        let stored_dim = u32::from_le_bytes(head[32..36].try_into().expect("4 bytes")) as usize;
        let mut body = vec![0u8; stored_dim * 8 + 8];
        file.read_exact(&mut body).map_err(|_| corrupt("truncated record"))?;
        let (floats, crc) = body.split_at(stored_dim * 8);
        let mut digest = CRC64.digest();
        digest.update(&head);
        digest.update(floats);
        if digest.finalize() != u64::from_le_bytes(crc.try_into().expect("8 bytes")) {
            return Err(corrupt("checksum mismatch"));
        }
        if &head[..32] != key {
            return Err(corrupt("index points at a record with a different key"));
        }
        if stored_dim != dim {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                actual: stored_dim,
            });
        }
        Ok(Some(
            floats
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect(),
        ))
    }

    pub fn put(&self, key: &CacheKey, values: &[f64]) -> Result<(), EmbedError> {
        let mut record = Vec::with_capacity(36 + values.len() * 8 + 8);
        record.extend_from_slice(key);
        record.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            record.extend_from_slice(&v.to_le_bytes());
        }
        let crc = CRC64.checksum(&record);
        record.extend_from_slice(&crc.to_le_bytes());

        let mut guard = self.writer.lock().expect("cache writer lock");
        let (data, index) = &mut *guard;
        let offset = data.metadata().map_err(cache_io(&self.data_path))?.len();
        data.write_all(&record).map_err(cache_io(&self.data_path))?;
        data.flush().map_err(cache_io(&self.data_path))?;
        let mut entry = [0u8; INDEX_RECORD];
        entry[..32].copy_from_slice(key);
        entry[32..].copy_from_slice(&offset.to_le_bytes());
        index.write_all(&entry).map_err(cache_io(&self.data_path))?;
        index.flush().map_err(cache_io(&self.data_path))?;
        self.index
            .write()
            .expect("cache index lock")
            .insert(*key, offset);
        Ok(())
    }
}
