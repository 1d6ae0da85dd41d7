use crate::error::{check_dim, LfpsError, Result};

/// Append-only host-memory key/value store for one attention head.
///
/// Rows are stored contiguously (row-major) in 64-bit floats. `append` is the
/// only mutator, and it takes `&mut self`, so readers never see a partial row.
#[derive(Debug, Clone, PartialEq)]
pub struct KvStore {
    dim: usize,
    keys: Vec<f64>,
    values: Vec<f64>,
}

impl KvStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            keys: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn with_capacity(dim: usize, rows: usize) -> Self {
        Self {
            dim,
            keys: Vec::with_capacity(rows * dim),
            values: Vec::with_capacity(rows * dim),
        }
    }

    /// Builds a store from row-major 32-bit matrices with `rows` rows.
    pub fn from_f32_rows(dim: usize, keys: &[f32], values: &[f32]) -> Result<Self> {
        check_dim("value matrix", keys.len(), values.len())?;
        if dim == 0 || !keys.len().is_multiple_of(dim) {
            return Err(LfpsError::DimensionMismatch {
                what: "key matrix length (not a multiple of d)",
                expected: dim,
                got: keys.len(),
            });
        }
        Ok(Self {
            dim,
            keys: keys.iter().map(|&x| x as f64).collect(),
            values: values.iter().map(|&x| x as f64).collect(),
        })
    }

    pub fn append(&mut self, key: &[f64], value: &[f64]) -> Result<()> {
        check_dim("key", self.dim, key.len())?;
        check_dim("value", self.dim, value.len())?;
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    #[inline]
    pub fn key(&self, i: usize) -> &[f64] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn keys(&self) -> &[f64] {
        &self.keys
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}
