use std::ops::Index;

use crate::scalar::Scalar;

use super::EmbedError;

/// Dense embedding vector of fixed dimension.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Embedding<T> {
    values: Vec<T>,
}

impl<T: Scalar> Embedding<T> {
    /// Wraps raw values as-is.
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    /// Wraps and L2-normalizes `values`; fails on the zero vector.
    pub fn normalized(values: Vec<T>) -> Result<Self, EmbedError> {
        let mut e = Self { values };
        e.normalize()?;
        Ok(e)
    }

    /// Unit vector along axis `axis`.
    pub fn basis(dim: usize, axis: usize) -> Self {
        let mut values = vec![T::zero(); dim];
        values[axis] = T::one();
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn norm(&self) -> T {
        dot(&self.values, &self.values).sqrt()
    }

    pub fn normalize(&mut self) -> Result<(), EmbedError> {
        let norm = self.norm();
        if norm == T::zero() || !norm.is_finite() {
            return Err(EmbedError::ZeroVector);
        }
        for v in &mut self.values {
            *v /= norm;
        }
        Ok(())
    }

    pub fn dot(&self, other: &Self) -> Result<T, EmbedError> {
        check_dims(self.dim(), other.dim())?;
        Ok(dot(&self.values, &other.values))
    }

    /// Converts the scalar type element-wise.
    pub fn cast<U: Scalar>(&self) -> Embedding<U> {
        Embedding {
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

impl<T> Index<usize> for Embedding<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.values[i]
    }
}

pub(crate) fn check_dims(expected: usize, actual: usize) -> Result<(), EmbedError> {
    if expected != actual {
        return Err(EmbedError::DimensionMismatch { expected, actual });
    }
    Ok(())
}

/// Plain dot product over equal-length slices.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine<T: Scalar>(a: &Embedding<T>, b: &Embedding<T>) -> Result<T, EmbedError> {
    check_dims(a.dim(), b.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    if na == T::zero() || nb == T::zero() {
        return Err(EmbedError::ZeroVector);
    }
    let c = dot(&a.values, &b.values) / (na * nb);
    Ok(c.max(-T::one()).min(T::one()))
}
