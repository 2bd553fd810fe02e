//! One module per subcommand. Each returns the files it wrote and the
//! invariant violations it found; the caller maps those to an exit status.

pub mod conv;
pub mod graph;
pub mod layernorm;
pub mod softmax;
pub mod verify;

use std::path::PathBuf;

use fpstab_core::convsub::{ChunkStream, LogHistogram};

use crate::config::RunConfig;
use crate::error::Result;
use crate::gen::generate;
use crate::report::{self, num};
use crate::stream::{encode_binary, encode_csv, read_stream};

/// Chunk count of synthetic streams when `--chunks` is not given.
pub const DEFAULT_CHUNKS: usize = 8;

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Human-readable descriptions of failed checks.
    pub violations: Vec<String>,
}

/// The configured input: a stream file if one is named, otherwise the
/// seeded synthetic stream.
pub fn input_stream(cfg: &RunConfig) -> Result<ChunkStream> {
    let s = &cfg.stream;
    match &s.path {
        Some(path) => {
            let stream = read_stream(path)?;
            Ok(match cfg.chunks {
                Some(n) if n < stream.chunks.len() => ChunkStream::new(stream.chunks[..n].to_vec())?,
                _ => stream,
            })
        }
        None => Ok(generate(
            s.kind,
            cfg.chunks.unwrap_or(DEFAULT_CHUNKS),
            s.rows,
            s.cols,
            s.scale.unwrap_or_else(|| s.kind.default_scale()),
            cfg.seed,
        )),
    }
}

/// `gen-stream`: write the synthetic stream to `out`, or to
/// `<out-dir>/stream.bin` (`stream.csv` in CSV mode).
pub fn gen_stream(cfg: &RunConfig, out: Option<PathBuf>) -> Result<Outcome> {
    let mut synthetic = cfg.clone();
    synthetic.stream.path = None;
    let stream = input_stream(&synthetic)?;
    let (bytes, name) = if cfg.stream.csv {
        (encode_csv(&stream), "stream.csv")
    } else {
        (encode_binary(&stream, cfg.stream.dtype), "stream.bin")
    };
    let path = out.unwrap_or_else(|| cfg.out_path(name));
    report::write_atomic(&path, &bytes)?;
    Ok(Outcome { files: vec![path], violations: vec![] })
}

/// Histogram rows `(label, lo, hi, count)`, with the out-of-range tails
/// first and last so the counts add up to the number of samples.
pub fn histogram_rows(label: &str, h: &LogHistogram) -> Vec<Vec<String>> {
    let lo = 10f64.powi(h.min_decade);
    let hi = 10f64.powi(h.max_decade);
    let mut rows = vec![vec![label.to_string(), num(0.0), num(lo), h.below.to_string()]];
    for (i, c) in h.counts.iter().enumerate() {
        let (a, b) = h.edges(i);
        rows.push(vec![label.to_string(), num(a), num(b), c.to_string()]);
    }
    rows.push(vec![label.to_string(), num(hi), "inf".into(), h.above.to_string()]);
    rows
}

pub const HISTOGRAM_HEADER: [&str; 4] = ["series", "bin_lo", "bin_hi", "count"];
