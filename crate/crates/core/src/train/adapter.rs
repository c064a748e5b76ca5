use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::embed::{check_dims, Embedding};
use crate::scalar::Scalar;

use super::TrainError;

const MAGIC: &[u8; 8] = b"PTADAPTR";
const CRC64: crc::Crc<u64> = crc::Crc::<u64>::new(&crc::CRC_64_XZ);

/// Square linear map applied before re-normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter<T> {
    weights: Vec<T>,
    dim: usize,
    pub version: u32,
}

impl<T: Scalar> Adapter<T> {
    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![T::zero(); dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = T::one();
        }
        Self {
            weights,
            dim,
            version: 0,
        }
    }

    /// Row-major `dim x dim` weights.
    pub fn from_weights(dim: usize, weights: Vec<T>) -> Result<Self, TrainError> {
        check_dims(dim * dim, weights.len())?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(TrainError::Config("adapter weights must be finite".into()));
        }
        Ok(Self {
            weights,
            dim,
            version: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    /// `W x` without normalization.
    pub fn project(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.dim)
            .map(|row| crate::embed::dot(row, x))
            .collect()
    }

    /// `normalize(W v)`; errors when `W v` is zero.
    pub fn apply(&self, v: &Embedding<T>) -> Result<Embedding<T>, TrainError> {
        check_dims(self.dim, v.dim())?;
        Embedding::normalized(self.project(v.values())).map_err(|_| TrainError::ZeroProjection)
    }

    pub fn cast<U: Scalar>(&self) -> Adapter<U> {
        Adapter {
            weights: self.weights.iter().map(|w| U::of(w.as_f64())).collect(),
            dim: self.dim,
            version: self.version,
        }
    }
}

pub fn adapter_apply<T: Scalar>(adapter: &Adapter<T>, v: &Embedding<T>) -> Result<Embedding<T>, TrainError> {
    adapter.apply(v)
}

/// Serializes as `PTADAPTR | version:u32 | dim:u32 | f64 * dim^2 | crc64`, little-endian.
pub fn write_adapter<T: Scalar, W: Write>(adapter: &Adapter<T>, mut out: W) -> Result<(), TrainError> {
    let mut buf = Vec::with_capacity(16 + adapter.weights.len() * 8 + 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&adapter.version.to_le_bytes());
    buf.extend_from_slice(&(adapter.dim as u32).to_le_bytes());
    for w in &adapter.weights {
        buf.extend_from_slice(&w.as_f64().to_le_bytes());
    }
    let crc = CRC64.checksum(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    out.write_all(&buf)?;
    Ok(())
}

/// Reads an adapter, verifying the checksum and, when given, the expected dimension.
pub fn read_adapter<T: Scalar, R: Read>(
    mut input: R,
    expected_dim: Option<usize>,
) -> Result<Adapter<T>, TrainError> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf)?;
    if buf.len() < 24 {
        return Err(TrainError::Checksum);
    }
    let (body, crc) = buf.split_at(buf.len() - 8);
    if CRC64.checksum(body) != u64::from_le_bytes(crc.try_into().expect("8 bytes")) {
        return Err(TrainError::Checksum);
    }
    if &body[..8] != MAGIC {
        return Err(TrainError::BadMagic);
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    let dim = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let floats = &body[16..];
    if floats.len() != dim * dim * 8 {
        return Err(TrainError::Checksum);
    }
    if let Some(expected) = expected_dim {
        check_dims(expected, dim)?;
    }
    let weights = floats
        .chunks_exact(8)
        .map(|b| T::of(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
        .collect();
    let mut adapter = Adapter::from_weights(dim, weights)?;
    adapter.version = version;
    Ok(adapter)
}

pub fn save_adapter<T: Scalar>(adapter: &Adapter<T>, path: &Path) -> Result<(), TrainError> {
    let mut buf = Vec::new();
    write_adapter(adapter, &mut buf)?;
    crate::store::write_atomic(path, |out| out.write_all(&buf)).map_err(|e| match e {
        crate::store::StoreError::Io { source, .. } => TrainError::Io(source),
        other => TrainError::Io(std::io::Error::other(other.to_string())),
    })
}

pub fn load_adapter<T: Scalar>(path: &Path, expected_dim: Option<usize>) -> Result<Adapter<T>, TrainError> {
    read_adapter(fs::File::open(path)?, expected_dim)
}
