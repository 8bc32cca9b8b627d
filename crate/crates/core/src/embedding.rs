//! Dense row-major embedding tables and the `NBE1` snapshot format.
//!
//! Snapshot layout (little-endian): magic `NBE1`, `u32` rows, `u32` dim,
//! `u8` measure code (0 = dot, 1 = cosine), then `rows * dim` `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const MAGIC: &[u8; 4] = b"NBE1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    #[default]
    Dot,
    Cosine,
}

impl Measure {
    pub fn code(self) -> u8 {
        match self {
            Measure::Dot => 0,
            Measure::Cosine => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Measure::Dot),
            1 => Ok(Measure::Cosine),
            other => Err(Error::Data(format!("unknown measure code {other}"))),
        }
    }

    /// Similarity of two vectors, accumulated in f64.
    pub fn score(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Measure::Dot => dot(a, b),
            Measure::Cosine => cosine(a, b),
        }
    }
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
    measure: Measure,
}

impl EmbeddingTable {
    pub fn from_values(rows: usize, dim: usize, values: Vec<f32>, measure: Measure) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("embedding dim must be positive".into()));
        }
        if values.len() != rows * dim {
            return Err(Error::Argument(format!(
                "expected {} values for {rows}x{dim}, got {}",
                rows * dim,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite embedding entry at row {}", pos / dim)));
        }
        Ok(EmbeddingTable {
            rows,
            dim,
            values,
            measure,
        })
    }

    pub fn from_rows(rows: &[Vec<f32>], measure: Measure) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Argument("ragged embedding rows".into()));
        }
        Self::from_values(rows.len(), dim, rows.concat(), measure)
    }

    /// Gaussian init with mean 0 and std `1/sqrt(dim)`.
    pub fn init(node_count: usize, dim: usize, measure: Measure, seed: u64) -> Result<Self> {
        if node_count == 0 || dim == 0 {
            return Err(Error::Argument(format!(
                "cannot initialise a {node_count}x{dim} embedding table"
            )));
        }
        let normal = Normal::new(0.0f64, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let mut rng = seed::rng_for(seed, "init_embeddings");
        let values = (0..node_count * dim).map(|_| normal.sample(&mut rng) as f32).collect();
        Ok(EmbeddingTable {
            rows: node_count,
            dim,
            values,
            measure,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn measure(&self) -> Measure {
        self.measure
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.rows {
            Err(Error::Argument(format!("row {i} out of range for {} rows", self.rows)))
        } else {
            Ok(())
        }
    }

    /// Score of the pair under the table's measure.
    pub fn score(&self, a: usize, b: usize) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.measure.score(self.row(a), self.row(b)))
    }

    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        cosine(self.row(a), self.row(b))
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.rows as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        w.write_all(&[self.measure.code()])?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let (rows, dim, measure) = read_header(&mut r)?;
        let values = read_f32s(&mut r, rows * dim)?;
        Self::from_values(rows, dim, values, measure)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_snapshot(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_snapshot(BufReader::new(file))
    }
}

pub(crate) fn read_header<R: Read>(r: &mut R) -> Result<(usize, usize, Measure)> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data(format!("bad snapshot magic {magic:?}")));
    }
    let rows = read_u32(r)? as usize;
    let dim = read_u32(r)? as usize;
    let mut code = [0u8; 1];
    read_exact(r, &mut code)?;
    Ok((rows, dim, Measure::from_code(code[0])?))
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Data(format!("truncated snapshot: {e}")))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    read_exact(r, &mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_shape_and_determinism() {
        let t = EmbeddingTable::init(3, 4, Measure::Dot, 11).unwrap();
        assert_eq!((t.rows(), t.dim()), (3, 4));
        assert!(t.values().iter().all(|v| v.is_finite()));
        assert_eq!(t, EmbeddingTable::init(3, 4, Measure::Dot, 11).unwrap());
        assert_ne!(t, EmbeddingTable::init(3, 4, Measure::Dot, 12).unwrap());
    }

    #[test]
    fn init_std_scales_with_dim() {
        let t = EmbeddingTable::init(1, 768, Measure::Dot, 5).unwrap();
        let row = t.row(0);
        let n = row.len() as f64;
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 1.0 / 768f64.sqrt();
        assert!(
            var.sqrt() > 0.5 * target && var.sqrt() < 1.5 * target,
            "std {}",
            var.sqrt()
        );
    }

    #[test]
    fn init_rejects_zero_shape() {
        assert!(EmbeddingTable::init(0, 4, Measure::Dot, 0).is_err());
        assert!(EmbeddingTable::init(4, 0, Measure::Dot, 0).is_err());
    }

    #[test]
    fn score_cases() {
        let t = EmbeddingTable::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]], Measure::Dot).unwrap();
        assert_eq!(t.score(0, 1).unwrap(), 1.0);
        let t = EmbeddingTable::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]], Measure::Dot).unwrap();
        assert_eq!(t.score(0, 1).unwrap(), 0.0);
        let t = EmbeddingTable::from_rows(&[vec![1.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.0]], Measure::Cosine).unwrap();
        assert!((t.score(0, 1).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert_eq!(t.score(0, 2).unwrap(), 0.0);
        assert!(matches!(t.score(0, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn snapshot_header_and_round_trip() {
        let t = EmbeddingTable::from_rows(&[vec![1.5, -2.0], vec![0.25, 3.0]], Measure::Cosine).unwrap();
        let mut buf = Vec::new();
        t.write_snapshot(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"NBE1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(buf[12], 1);
        assert_eq!(&buf[13..17], &1.5f32.to_le_bytes());
        assert_eq!(buf.len(), 13 + 16);
        assert_eq!(EmbeddingTable::read_snapshot(buf.as_slice()).unwrap(), t);

        assert!(EmbeddingTable::read_snapshot(&buf[..20]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(EmbeddingTable::read_snapshot(bad.as_slice()).is_err());
    }
}
