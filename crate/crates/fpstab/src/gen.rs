//! Seeded synthetic streams, so every audit can run without external data.

use fpstab_core::convsub::{ChunkStream, Matrix};
use fpstab_core::rng::{normal, seeded, Rng};
use fpstab_core::FloatFormat;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    /// `N(0, scale²)` entries.
    Gaussian,
    /// `unif[-scale, scale]` entries.
    Uniform,
    /// Rows `(-scale, 0, …, 0, scale)` with the two spikes at random
    /// positions.
    Extremal,
    /// Three of every four chunks are loud: standard deviation
    /// `scale · sqrt(65504 / cols)` around an offset of three standard
    /// deviations, so a plain FP16 sum of squares overflows. The fourth chunk
    /// is quiet, at a sixteenth of that spread.
    Adversarial,
}

impl StreamKind {
    pub fn name(&self) -> &'static str {
        match self {
            StreamKind::Gaussian => "gaussian",
            StreamKind::Uniform => "uniform",
            StreamKind::Extremal => "extremal",
            StreamKind::Adversarial => "adversarial",
        }
    }

    pub fn default_scale(&self) -> f64 {
        match self {
            StreamKind::Adversarial => 4.0,
            _ => 1.0,
        }
    }
}

/// Element type of a binary stream block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    F32,
    #[default]
    F64,
}

impl Dtype {
    pub fn size(&self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// `chunks` blocks of `rows × cols` values.
pub fn generate(kind: StreamKind, chunks: usize, rows: usize, cols: usize, scale: f64, seed: u64) -> ChunkStream {
    let mut rng = seeded(seed);
    let loud = scale * (FloatFormat::FP16.max_finite() / cols.max(1) as f64).sqrt();
    let chunks = (0..chunks)
        .map(|c| {
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                match kind {
                    StreamKind::Gaussian => data.extend((0..cols).map(|_| scale * normal(&mut rng))),
                    StreamKind::Uniform => data.extend((0..cols).map(|_| rng.random_range(-scale..=scale))),
                    StreamKind::Extremal => data.extend(extremal_row(&mut rng, cols, scale)),
                    StreamKind::Adversarial => {
                        let (sigma, offset) = if c % 4 == 3 { (loud / 16.0, 0.0) } else { (loud, 3.0 * loud) };
                        data.extend((0..cols).map(|_| offset + sigma * normal(&mut rng)));
                    }
                }
            }
            Matrix { rows, cols, data }
        })
        .collect();
    ChunkStream { chunk_frames: rows, features: cols, chunks }
}

fn extremal_row(rng: &mut impl Rng, cols: usize, scale: f64) -> Vec<f64> {
    let mut row = vec![0.0; cols];
    if cols < 2 {
        return row;
    }
    let i = rng.random_range(0..cols);
    let mut j = rng.random_range(0..cols - 1);
    if j >= i {
        j += 1;
    }
    row[i] = -scale;
    row[j] = scale;
    row
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_determinism() {
        for kind in [StreamKind::Gaussian, StreamKind::Uniform, StreamKind::Extremal, StreamKind::Adversarial] {
            let a = generate(kind, 3, 4, 8, 1.0, 9);
            assert_eq!(a.len(), 3);
            assert!(a.chunks.iter().all(|c| c.rows == 4 && c.cols == 8 && c.data.len() == 32));
            assert_eq!(a, generate(kind, 3, 4, 8, 1.0, 9));
        }
    }

    #[test]
    fn extremal_rows_have_two_spikes() {
        let s = generate(StreamKind::Extremal, 2, 5, 6, 2.5, 1);
        for row in s.chunks.iter().flat_map(|c| c.rows()) {
            assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 2);
            assert_eq!(row.iter().sum::<f64>(), 0.0);
            assert_eq!(row.iter().map(|v| v.abs()).sum::<f64>(), 5.0);
        }
    }

    #[test]
    fn adversarial_loud_chunks_overflow_fp16_squares() {
        let s = generate(StreamKind::Adversarial, 8, 4, 512, 4.0, 2);
        for (c, chunk) in s.chunks.iter().enumerate() {
            for row in chunk.rows() {
                let mean = row.iter().sum::<f64>() / 512.0;
                let sq: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum();
                assert_eq!(sq > 65504.0, c % 4 != 3, "chunk {c}: {sq}");
            }
        }
    }
}
