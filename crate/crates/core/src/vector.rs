//! Dense unit vectors and their on-disk encoding.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Tolerance on unit norm for a stored embedding.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// A dense embedding. Persisted as base64 (standard alphabet, padded) over
/// little-endian `f32` values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Embedding(pub Vec<f32>);

impl Embedding {
    /// L2-normalize `values`. A zero vector stays zero.
    pub fn normalized(values: Vec<f32>) -> Self {
        let norm = values.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Self(values);
        }
        Self(values.into_iter().map(|v| (v as f64 / norm) as f32).collect())
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt()
    }

    pub fn is_unit(&self) -> bool {
        (self.norm() - 1.0).abs() <= NORM_TOLERANCE
    }

    /// Dot product accumulated in `f64`; equals cosine for unit vectors.
    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| *a as f64 * *b as f64).sum()
    }

    pub fn to_base64(&self) -> String {
        let mut bytes = Vec::with_capacity(self.0.len() * 4);
        for v in &self.0 {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        STANDARD.encode(bytes)
    }

    pub fn from_base64(s: &str) -> Result<Self, String> {
        let bytes = STANDARD.decode(s).map_err(|e| e.to_string())?;
        if bytes.len() % 4 != 0 {
            return Err(format!("embedding byte length {} is not a multiple of 4", bytes.len()));
        }
        Ok(Self(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect()))
    }
}

impl Serialize for Embedding {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for Embedding {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Embedding::from_base64(&s).map_err(serde::de::Error::custom)
    }
}
