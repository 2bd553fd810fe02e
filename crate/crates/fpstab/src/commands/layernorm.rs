//! `audit-layernorm`: overflow counts of rounded layernorm over a stream,
//! with and without a pre-normalizer and the √512 upstream multiplier.

use fpstab_core::convsub::{ChunkStream, LogHistogram};
use fpstab_core::prenorm::{layernorm, stabilized_layernorm, LayerNormSpec, PrenormSpec};
use fpstab_core::{OverflowStats, Precision};
use rayon::prelude::*;
use serde::Serialize;

use super::{histogram_rows, input_stream, Outcome, HISTOGRAM_HEADER};
use crate::config::RunConfig;
use crate::error::Result;
use crate::report::{fraction, num, write_csv, write_json};

/// Largest stabilized error accepted under `--check`.
pub const ERROR_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantRow {
    pub config: String,
    pub multiplier: f64,
    pub prenorm: String,
    /// One invocation per stream row.
    pub invocations: u64,
    pub overflow_invocations: u64,
    pub overflow_fraction: f64,
    pub chunks: u64,
    pub overflow_chunks: u64,
    /// Largest `|rounded - f64|` over every output entry; infinite once an
    /// overflow poisons a row.
    pub max_abs_error: f64,
    pub stats: StatsRow,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StatsRow {
    pub total: u64,
    pub rounded: u64,
    pub overflow: u64,
    pub underflow: u64,
}

impl From<OverflowStats> for StatsRow {
    fn from(s: OverflowStats) -> Self {
        StatsRow { total: s.total, rounded: s.rounded, overflow: s.overflow, underflow: s.underflow }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerNormAudit {
    pub format: String,
    pub accumulation: String,
    pub epsilon: f64,
    pub rows_per_chunk: usize,
    pub features: usize,
    pub variants: Vec<VariantRow>,
}

struct Variant {
    multiplier: f64,
    tag: &'static str,
    prenorm: Option<PrenormSpec>,
}

#[derive(Default)]
struct Tally {
    invocations: u64,
    overflow_invocations: u64,
    overflow_chunks: u64,
    max_err: f64,
    stats: OverflowStats,
}

fn worst_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| {
            let d = (u - v).abs();
            if d.is_nan() {
                f64::INFINITY
            } else {
                d
            }
        })
        .fold(0.0, f64::max)
}

fn run_chunk(rows: &[&[f64]], v: &Variant, spec: &LayerNormSpec, precision: Precision) -> Result<Tally> {
    let mut t = Tally::default();
    for row in rows {
        let x: Vec<f64> = row.iter().map(|e| e * v.multiplier).collect();
        let out = stabilized_layernorm(&x, v.prenorm.as_ref(), spec, precision)?;
        let reference = layernorm(&x, spec)?;
        t.invocations += 1;
        if out.stats.has_overflow() {
            t.overflow_invocations += 1;
        }
        t.max_err = t.max_err.max(worst_diff(&out.values, &reference));
        t.stats += out.stats;
    }
    t.overflow_chunks = (t.overflow_invocations > 0) as u64;
    Ok(t)
}

fn audit_variant(stream: &ChunkStream, v: &Variant, spec: &LayerNormSpec, precision: Precision) -> Result<Tally> {
    let parts = stream
        .chunks
        .par_iter()
        .map(|c| run_chunk(&c.rows().collect::<Vec<_>>(), v, spec, precision))
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().fold(Tally::default(), |mut a, b| {
        a.invocations += b.invocations;
        a.overflow_invocations += b.overflow_invocations;
        a.overflow_chunks += b.overflow_chunks;
        a.max_err = a.max_err.max(b.max_err);
        a.stats += b.stats;
        a
    }))
}

/// Audit `stream` without touching the filesystem.
pub fn audit(stream: &ChunkStream, cfg: &RunConfig) -> Result<(LayerNormAudit, Vec<(String, LogHistogram)>)> {
    let precision = cfg.precision()?;
    let spec = cfg.layernorm_spec()?;
    let selected = cfg.prenorm_spec()?;
    let mut variants = Vec::new();
    for (multiplier, tag) in [(1.0, "x1"), (512f64.sqrt(), "x22")] {
        variants.push(Variant { multiplier, tag, prenorm: None });
        if let Some(p) = &selected {
            variants.push(Variant { multiplier, tag, prenorm: Some(*p) });
        }
    }
    let mut rows = Vec::new();
    for v in &variants {
        let t = audit_variant(stream, v, &spec, precision)?;
        let pre = v.prenorm.as_ref().map_or("none", |p| p.name());
        rows.push(VariantRow {
            config: format!("{}-{pre}", v.tag),
            multiplier: v.multiplier,
            prenorm: pre.into(),
            invocations: t.invocations,
            overflow_invocations: t.overflow_invocations,
            overflow_fraction: fraction(t.overflow_invocations, t.invocations),
            chunks: stream.len() as u64,
            overflow_chunks: t.overflow_chunks,
            max_abs_error: t.max_err,
            stats: t.stats.into(),
        });
    }
    let hists = [(1.0, "x1"), (512f64.sqrt(), "x22")]
        .into_iter()
        .map(|(m, tag)| {
            let mut h = LogHistogram::default();
            for c in &stream.chunks {
                for row in c.rows() {
                    h.add(row.iter().fold(0.0, |a, e| a.max((e * m).abs())));
                }
            }
            (tag.to_string(), h)
        })
        .collect();
    let report = LayerNormAudit {
        format: cfg.format.clone(),
        accumulation: cfg.accumulation.name().into(),
        epsilon: cfg.epsilon,
        rows_per_chunk: stream.chunk_frames,
        features: stream.features,
        variants: rows,
    };
    Ok((report, hists))
}

/// Overflowing or inaccurate stabilized variants.
pub fn violations(report: &LayerNormAudit) -> Vec<String> {
    let mut out = Vec::new();
    for r in report.variants.iter().filter(|r| r.prenorm != "none") {
        if r.overflow_invocations > 0 {
            out.push(format!("{}: {} of {} invocations overflowed", r.config, r.overflow_invocations, r.invocations));
        }
        if r.max_abs_error > ERROR_TOLERANCE {
            out.push(format!("{}: max abs error {} exceeds {ERROR_TOLERANCE}", r.config, r.max_abs_error));
        }
    }
    out
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let stream = input_stream(cfg)?;
    let (report, hists) = audit(&stream, cfg)?;
    let json = cfg.out_path("layernorm-audit.json");
    write_json(&json, &report)?;
    let table = cfg.out_path("layernorm-audit.csv");
    let header = [
        "config",
        "multiplier",
        "prenorm",
        "invocations",
        "overflow_invocations",
        "overflow_fraction",
        "max_abs_error",
    ];
    let rows: Vec<Vec<String>> = report
        .variants
        .iter()
        .map(|r| {
            vec![
                r.config.clone(),
                num(r.multiplier),
                r.prenorm.clone(),
                r.invocations.to_string(),
                r.overflow_invocations.to_string(),
                num(r.overflow_fraction),
                num(r.max_abs_error),
            ]
        })
        .collect();
    write_csv(&table, &header, &rows)?;
    let hist = cfg.out_path("layernorm-input-max-hist.csv");
    let hist_rows: Vec<Vec<String>> = hists.iter().flat_map(|(tag, h)| histogram_rows(tag, h)).collect();
    write_csv(&hist, &HISTOGRAM_HEADER, &hist_rows)?;
    Ok(Outcome { files: vec![json, table, hist], violations: violations(&report) })
}
