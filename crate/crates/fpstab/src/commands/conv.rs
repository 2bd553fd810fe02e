//! `profile-conv`: output dynamic range of the subsampling stacks over a
//! stream, and a MAC comparison against the encoder.

use fpstab_core::convsub::{
    mac_breakdown, mac_count_encoder, profile_dynamic_range, ChunkStream, EncoderConfig, RangeProfile,
    SubsamplingConfig,
};
use rayon::prelude::*;
use serde::Serialize;

use super::layernorm::StatsRow;
use super::{histogram_rows, input_stream, Outcome, HISTOGRAM_HEADER};
use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::report::{fraction, num, write_csv, write_json};

/// Published whole-model subsampling shares, shown for comparison only.
pub const REFERENCE_SHARES: [(&str, f64); 2] = [("conv2d6", 0.328), ("dws2d6", 0.040)];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub config: String,
    pub width: usize,
    pub multiplier: f64,
    pub chunks: usize,
    pub overflow_chunks: usize,
    pub overflow_fraction: f64,
    pub max: f64,
    pub stats: StatsRow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvProfile {
    pub format: String,
    pub seed: u64,
    pub chunk_frames: usize,
    pub features: usize,
    pub configs: Vec<ProfileRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacAssumptions {
    pub width: usize,
    pub frames: usize,
    pub features: usize,
    pub encoder_layers: usize,
    pub encoder_dim: usize,
    pub encoder_ffn_dim: usize,
    pub encoder_heads: usize,
    pub encoder_conv_kernel: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacRow {
    pub config: String,
    pub subsampling_layers: Vec<u64>,
    pub subsampling: u64,
    pub encoder_frames: usize,
    pub encoder: u64,
    pub total: u64,
    /// Subsampling MACs over the whole model's.
    pub subsampling_share: f64,
    pub reference_share: Option<f64>,
    pub reference_asserted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MacTable {
    pub assumptions: MacAssumptions,
    pub rows: Vec<MacRow>,
}

pub fn mac_table(cfg: &RunConfig) -> Result<MacTable> {
    let c = &cfg.conv;
    let enc = EncoderConfig::default();
    let width = SubsamplingConfig::FULL_WIDTH;
    let input = (1, c.mac_frames, c.mac_features);
    let mut rows = Vec::new();
    for name in &c.configs {
        let sub = SubsamplingConfig::preset(name, width)?;
        let layers = mac_breakdown(&sub, input)?;
        let (_, frames, _) = sub.output_shape(input)?;
        let subsampling: u64 = layers.iter().sum();
        let encoder = mac_count_encoder(&enc, frames).total;
        let total = subsampling + encoder;
        let base = name.trim_end_matches("x22");
        rows.push(MacRow {
            config: name.clone(),
            subsampling_layers: layers,
            subsampling,
            encoder_frames: frames,
            encoder,
            total,
            subsampling_share: fraction(subsampling, total),
            reference_share: REFERENCE_SHARES.iter().find(|(n, _)| *n == base).map(|r| r.1),
            reference_asserted: false,
        });
    }
    Ok(MacTable {
        assumptions: MacAssumptions {
            width,
            frames: c.mac_frames,
            features: c.mac_features,
            encoder_layers: enc.layers,
            encoder_dim: enc.dim,
            encoder_ffn_dim: enc.ffn_dim,
            encoder_heads: enc.heads,
            encoder_conv_kernel: enc.conv_kernel,
            note: "encoder counts cover feed-forward, attention and convolution modules only; \
                   reference shares are published whole-model figures and are not expected to match"
                .into(),
        },
        rows,
    })
}

/// Separable stacks that cost at least as much as their dense twin.
pub fn mac_violations(table: &MacTable) -> Vec<String> {
    let find = |n: &str| table.rows.iter().find(|r| r.config == n);
    let mut out = Vec::new();
    for (dws, conv) in [("dws2d6", "conv2d6"), ("dws2d6x22", "conv2d6x22")] {
        if let (Some(a), Some(b)) = (find(dws), find(conv)) {
            if a.subsampling >= b.subsampling {
                out.push(format!("{dws} needs {} MACs, not fewer than {conv}'s {}", a.subsampling, b.subsampling));
            }
        }
    }
    out
}

/// Profile every configured stack over `stream`.
pub fn profiles(stream: &ChunkStream, cfg: &RunConfig) -> Result<Vec<RangeProfile>> {
    let precision = cfg.precision()?;
    let configs = cfg
        .conv
        .configs
        .iter()
        .map(|n| SubsamplingConfig::preset(n, cfg.conv.width))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    configs
        .par_iter()
        .map(|c| {
            // Same weights for a stack and its ×22 twin.
            let w = c.random_weights(cfg.seed);
            Ok(profile_dynamic_range(stream, c, &w, precision)?)
        })
        .collect()
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    if cfg.conv.configs.is_empty() {
        return Err(CliError::usage("no conv configs selected"));
    }
    let table = mac_table(cfg)?;
    let stream = input_stream(cfg)?;
    let profs = profiles(&stream, cfg)?;
    let mut files = Vec::new();
    let mut rows = Vec::new();
    let mut hist_rows = Vec::new();
    for (p, name) in profs.iter().zip(&cfg.conv.configs) {
        let path = cfg.out_path(&format!("conv-{name}-chunk-max.csv"));
        let maxima: Vec<Vec<String>> =
            p.per_chunk_max.iter().enumerate().map(|(i, m)| vec![i.to_string(), num(*m)]).collect();
        write_csv(&path, &["chunk", "max_abs"], &maxima)?;
        files.push(path);
        hist_rows.extend(histogram_rows(name, &p.histogram));
        let sub = SubsamplingConfig::preset(name, cfg.conv.width)?;
        rows.push(ProfileRow {
            config: name.clone(),
            width: cfg.conv.width,
            multiplier: sub.output_multiplier,
            chunks: p.per_chunk_max.len(),
            overflow_chunks: p.overflow_chunks,
            overflow_fraction: fraction(p.overflow_chunks as u64, p.per_chunk_max.len() as u64),
            max: p.per_chunk_max.iter().cloned().fold(0.0, f64::max),
            stats: p.stats.into(),
        });
    }
    let hist = cfg.out_path("conv-max-hist.csv");
    write_csv(&hist, &HISTOGRAM_HEADER, &hist_rows)?;
    files.push(hist);
    let summary = cfg.out_path("conv-profile.json");
    write_json(
        &summary,
        &ConvProfile {
            format: cfg.format.clone(),
            seed: cfg.seed,
            chunk_frames: stream.chunk_frames,
            features: stream.features,
            configs: rows,
        },
    )?;
    files.push(summary);
    let mac_json = cfg.out_path("mac-table.json");
    write_json(&mac_json, &table)?;
    let mac_csv = cfg.out_path("mac-table.csv");
    let mac_rows: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|r| {
            vec![
                r.config.clone(),
                r.subsampling.to_string(),
                r.encoder.to_string(),
                r.total.to_string(),
                num(r.subsampling_share),
                r.reference_share.map(num).unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        &mac_csv,
        &["config", "subsampling_macs", "encoder_macs", "total_macs", "subsampling_share", "reference_share"],
        &mac_rows,
    )?;
    files.extend([mac_json, mac_csv]);
    Ok(Outcome { files, violations: mac_violations(&table) })
}
