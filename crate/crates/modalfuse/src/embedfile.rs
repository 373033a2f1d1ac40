//! Embedding export: magic "MFL1", then samples, channels, and dim as
//! 32-bit little-endian unsigned, an availability bitmap, and f32
//! little-endian vectors in canonical channel order. The bitmap packs
//! bit s * channels + c for sample s and channel c, least significant
//! bit first, padded to a whole byte. Unavailable vectors are written
//! as zeros.

use crate::error::{Error, Result};
use ndarray::Array3;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MFL1";

pub struct EmbeddingSet {
    /// `[samples, channels, dim]`; zero rows where unavailable.
    pub vectors: Array3<f64>,
    /// `availability[s][c]`.
    pub availability: Vec<Vec<bool>>,
}

impl EmbeddingSet {
    pub fn samples(&self) -> usize {
        self.vectors.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.availability.len() != self.samples() {
            return Err(Error::Shape(format!(
                "availability rows {} vs samples {}",
                self.availability.len(),
                self.samples()
            )));
        }
        for (s, row) in self.availability.iter().enumerate() {
            if row.len() != self.channels() {
                return Err(Error::Shape(format!(
                    "availability row {s} has {} flags, expected {}",
                    row.len(),
                    self.channels()
                )));
            }
        }
        Ok(())
    }

    /// Sample indices where both channels are available.
    pub fn co_available(&self, a: usize, b: usize) -> Vec<usize> {
        (0..self.samples())
            .filter(|&s| self.availability[s][a] && self.availability[s][b])
            .collect()
    }

    /// Rows of one channel at the given sample indices.
    pub fn gather(&self, channel: usize, indices: &[usize]) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((indices.len(), self.dim()), |(i, j)| {
            self.vectors[[indices[i], channel, j]]
        })
    }
}

pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    set.validate()?;
    let (samples, channels, dim) = (set.samples(), set.channels(), set.dim());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    for v in [samples, channels, dim] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    let bits = samples * channels;
    let mut bitmap = vec![0u8; bits.div_ceil(8)];
    for s in 0..samples {
        for c in 0..channels {
            if set.availability[s][c] {
                let bit = s * channels + c;
                bitmap[bit / 8] |= 1 << (bit % 8);
            }
        }
    }
    w.write_all(&bitmap)?;
    for s in 0..samples {
        for c in 0..channels {
            let available = set.availability[s][c];
            for j in 0..dim {
                let v = if available { set.vectors[[s, c, j]] } else { 0.0 };
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Load(format!(
            "{} is not an embedding file (bad magic {:?})",
            path.display(),
            magic
        )));
    }
    let mut counts = [0usize; 3];
    for slot in counts.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *slot = u32::from_le_bytes(b) as usize;
    }
    let [samples, channels, dim] = counts;
    let bits = samples * channels;
    let mut bitmap = vec![0u8; bits.div_ceil(8)];
    r.read_exact(&mut bitmap)?;
    let availability: Vec<Vec<bool>> = (0..samples)
        .map(|s| {
            (0..channels)
                .map(|c| {
                    let bit = s * channels + c;
                    bitmap[bit / 8] & (1 << (bit % 8)) != 0
                })
                .collect()
        })
        .collect();
    let mut payload = vec![0u8; samples * channels * dim * 4];
    r.read_exact(&mut payload)?;
    let values: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let vectors = Array3::from_shape_vec((samples, channels, dim), values)
        .map_err(|e| Error::Load(format!("embedding payload: {e}")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Load("trailing bytes after embedding payload".into()));
    }
    Ok(EmbeddingSet { vectors, availability })
}
