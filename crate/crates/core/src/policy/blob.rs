use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A row-major f64 array stored as base64 of its little-endian bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Blob {
    pub shape: Vec<usize>,
    pub data: String,
}

impl Blob {
    fn encode(shape: Vec<usize>, values: impl Iterator<Item = f64>) -> Self {
        let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
        Blob {
            shape,
            data: STANDARD.encode(bytes),
        }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Blob::encode(vec![m.nrows(), m.ncols()], m.transpose().iter().copied())
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Blob::encode(vec![v.len()], v.iter().copied())
    }

    fn decode(&self) -> Result<Vec<f64>> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| Error::MalformedSnapshot(format!("bad base64: {e}")))?;
        let expected: usize = self.shape.iter().product();
        if bytes.len() != 8 * expected {
            return Err(Error::MalformedSnapshot(format!(
                "blob of shape {:?} has {} bytes",
                self.shape,
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        match self.shape[..] {
            [r, c] => Ok(DMatrix::from_row_slice(r, c, &self.decode()?)),
            _ => Err(Error::MalformedSnapshot(format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }

    pub fn to_vector(&self) -> Result<DVector<f64>> {
        match self.shape[..] {
            [_] => Ok(DVector::from_vec(self.decode()?)),
            _ => Err(Error::MalformedSnapshot(format!("expected a vector, got shape {:?}", self.shape))),
        }
    }
}
