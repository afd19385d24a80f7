//! The `l×l×c` span score tensor and its binary dump format.
//!
//! Dump layout (`SCOR`): the 4 magic bytes `SCOR`, `u32` length `l`, `u32`
//! category count `c`, then `l·l·c` little-endian `f32` values in row-major
//! `[start][end][category]` order. Category 0 is the non-entity class.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::span::Span;
use crate::tensor::Tensor;

pub const SCOR_MAGIC: &[u8; 4] = b"SCOR";

/// Scores for every ordered (start, end) token pair and category. Only cells
/// with `start <= end` are meaningful; the rest are stored but never read by
/// the decoder or the loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTensor {
    len: usize,
    categories: usize,
    data: Vec<f64>,
}

impl ScoreTensor {
    pub fn new(len: usize, categories: usize, data: Vec<f64>) -> Result<Self> {
        if categories == 0 {
            return Err(Error::Data("score tensor needs at least one category".into()));
        }
        if data.len() != len * len * categories {
            return Err(Error::Data(format!(
                "score tensor {}×{}×{} needs {} values, got {}",
                len,
                len,
                categories,
                len * len * categories,
                data.len()
            )));
        }
        Ok(ScoreTensor {
            len,
            categories,
            data,
        })
    }

    /// All-zero tensor.
    pub fn zeros(len: usize, categories: usize) -> Self {
        assert!(categories > 0);
        ScoreTensor {
            len,
            categories,
            data: vec![0.0; len * len * categories],
        }
    }

    /// View a rank-3 `l×l×c` tensor as span scores.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            &[l, l2, c] if l == l2 => ScoreTensor::new(l, c, t.data().to_vec()),
            shape => Err(Error::Data(format!(
                "expected an l×l×c score tensor, got shape {:?}",
                shape
            ))),
        }
    }

    /// Sentence length `l`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Category count `c`, including the non-entity class.
    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_valid(&self, start: usize, end: usize) -> bool {
        start <= end && end < self.len
    }

    pub fn cell(&self, start: usize, end: usize) -> &[f64] {
        let off = (start * self.len + end) * self.categories;
        &self.data[off..off + self.categories]
    }

    pub fn cell_mut(&mut self, start: usize, end: usize) -> &mut [f64] {
        let off = (start * self.len + end) * self.categories;
        &mut self.data[off..off + self.categories]
    }

    pub fn get(&self, start: usize, end: usize, category: usize) -> f64 {
        self.cell(start, end)[category]
    }

    /// Flat cell index of `(start, end)` in row-major order.
    pub fn cell_index(&self, start: usize, end: usize) -> usize {
        start * self.len + end
    }

    /// Every span with `start <= end`, ordered by start then end.
    pub fn valid_spans(&self) -> impl Iterator<Item = Span> + '_ {
        (0..self.len).flat_map(move |s| (s..self.len).map(move |e| Span::new(s, e)))
    }

    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SCOR_MAGIC)?;
        w.write_all(&dim_u32(self.len)?.to_le_bytes())?;
        w.write_all(&dim_u32(self.categories)?.to_le_bytes())?;
        for &v in &self.data {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::parse_dump(&bytes)
    }

    /// Parse a complete `SCOR` dump. Trailing or missing bytes are errors.
    pub fn parse_dump(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != SCOR_MAGIC {
            return Err(Error::format("SCOR", "missing SCOR header"));
        }
        let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let categories = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if categories == 0 {
            return Err(Error::format("SCOR", "zero categories"));
        }
        let payload = &bytes[12..];
        let expected = len
            .checked_mul(len)
            .and_then(|n| n.checked_mul(categories))
            .and_then(|n| n.checked_mul(4));
        if expected != Some(payload.len()) {
            return Err(Error::format(
                "SCOR",
                format!(
                    "{}×{}×{} tensor does not match {} payload bytes",
                    len,
                    len,
                    categories,
                    payload.len()
                ),
            ));
        }
        let data: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("SCOR", "non-finite score"));
        }
        ScoreTensor::new(len, categories, data)
    }
}

fn dim_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format("SCOR", format!("dimension {} exceeds u32", n)))
}
