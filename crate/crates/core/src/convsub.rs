//! Convolutional subsampling front ends, their multiply-accumulate cost and
//! the dynamic range of their outputs.
//!
//! Two stacks are built in, matching the usual Conformer front end and its
//! depthwise-separable replacement:
//!
//! | preset   | layer | channels  | kernel | stride | groups |
//! |----------|-------|-----------|--------|--------|--------|
//! | conv2d6  | 1     | 1 → 512   | (3,3)  | (2,2)  | 1      |
//! |          | 2     | 512 → 512 | (5,5)  | (3,3)  | 1      |
//! | dws2d6   | 1     | 1 → 512   | (3,3)  | (2,2)  | 1      |
//! |          | 2     | 512 → 512 | (5,5)  | (3,3)  | 512    |
//! |          | 3     | 512 → 512 | (1,1)  | (1,1)  | 1      |
//!
//! The `x22` variants multiply the stack output by `sqrt(512) ≈ 22.63`.
//! Convolutions use no padding; a ReLU sits between consecutive layers.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::floatsim::{OverflowStats, Precision};
use crate::rng;

/// Dense `channels × height × width` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            bail!(
                Shape,
                "tensor {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            );
        }
        Ok(Tensor3 { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 { channels, height, width, data: vec![0.0; channels * height * width] }
    }

    /// Single-channel tensor from a `time × feature` matrix.
    pub fn from_matrix(m: &Matrix) -> Self {
        Tensor3 { channels: 1, height: m.rows, width: m.cols, data: m.data.clone() }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(libm::fabs(*v)))
    }
}

/// `rows × cols` matrix, row-major. Rows are time frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            bail!(Shape, "matrix {rows}x{cols} needs {} values, got {}", rows * cols, data.len());
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }
}

/// One grouped 2-D convolution without padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub groups: usize,
}

impl ConvLayerSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        groups: usize,
    ) -> Result<Self> {
        if groups == 0 || !in_channels.is_multiple_of(groups) || !out_channels.is_multiple_of(groups) {
            bail!(Shape, "channels {in_channels}->{out_channels} not divisible by groups {groups}");
        }
        if in_channels == 0 || out_channels == 0 {
            bail!(Shape, "channel counts must be positive");
        }
        if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
            bail!(Shape, "kernel and stride extents must be positive");
        }
        Ok(ConvLayerSpec { in_channels, out_channels, kernel, stride, groups })
    }

    /// Channels seen by each output channel.
    pub fn group_in(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.group_in() * self.kernel.0 * self.kernel.1
    }

    /// `floor((dim - kernel) / stride) + 1` per spatial axis.
    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if height < self.kernel.0 || width < self.kernel.1 {
            bail!(Shape, "input {height}x{width} smaller than kernel {}x{}", self.kernel.0, self.kernel.1);
        }
        Ok(((height - self.kernel.0) / self.stride.0 + 1, (width - self.kernel.1) / self.stride.1 + 1))
    }

    /// `out_positions × out_channels × kh·kw·in_channels/groups`.
    pub fn macs(&self, height: usize, width: usize) -> Result<u64> {
        let (oh, ow) = self.output_dims(height, width)?;
        Ok((oh * ow) as u64 * self.out_channels as u64 * (self.kernel.0 * self.kernel.1 * self.group_in()) as u64)
    }
}

/// Weights `[out][in/groups][kh][kw]` and per-output-channel bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvWeights {
    pub fn new(spec: &ConvLayerSpec, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let w = ConvWeights { weights, bias };
        w.check(spec)?;
        Ok(w)
    }

    pub fn zeros(spec: &ConvLayerSpec) -> Self {
        ConvWeights { weights: vec![0.0; spec.weight_len()], bias: vec![0.0; spec.out_channels] }
    }

    /// Gaussian weights with variance `1 / fan_in`, zero bias.
    pub fn random<R: Rng + ?Sized>(spec: &ConvLayerSpec, rng: &mut R) -> Self {
        let fan_in = (spec.group_in() * spec.kernel.0 * spec.kernel.1) as f64;
        let std = 1.0 / libm::sqrt(fan_in);
        ConvWeights {
            weights: (0..spec.weight_len()).map(|_| std * rng::normal(rng)).collect(),
            bias: vec![0.0; spec.out_channels],
        }
    }

    fn check(&self, spec: &ConvLayerSpec) -> Result<()> {
        if self.weights.len() != spec.weight_len() {
            bail!(Shape, "expected {} weights for {:?}, got {}", spec.weight_len(), spec, self.weights.len());
        }
        if self.bias.len() != spec.out_channels {
            bail!(Shape, "expected {} biases, got {}", spec.out_channels, self.bias.len());
        }
        Ok(())
    }
}

/// Grouped 2-D convolution, accumulated in `f64`.
pub fn conv2d_forward(input: &Tensor3, spec: &ConvLayerSpec, weights: &ConvWeights) -> Result<Tensor3> {
    weights.check(spec)?;
    let (c, h, w) = input.shape();
    if c != spec.in_channels {
        bail!(Shape, "input has {c} channels, layer expects {}", spec.in_channels);
    }
    let (oh, ow) = spec.output_dims(h, w)?;
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let gin = spec.group_in();
    let out_per_group = spec.out_channels / spec.groups;
    let mut out = vec![0.0; spec.out_channels * oh * ow];
    for o in 0..spec.out_channels {
        let first_in = (o / out_per_group) * gin;
        let wbase = o * gin * kh * kw;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for i in 0..gin {
                    let plane = &input.data[(first_in + i) * h * w..(first_in + i + 1) * h * w];
                    let wk = &weights.weights[wbase + i * kh * kw..wbase + (i + 1) * kh * kw];
                    for ky in 0..kh {
                        let row = &plane[(oy * sh + ky) * w + ox * sw..][..kw];
                        let krow = &wk[ky * kw..(ky + 1) * kw];
                        for (a, b) in row.iter().zip(krow) {
                            acc += a * b;
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc + weights.bias[o];
            }
        }
    }
    Tensor3::new(spec.out_channels, oh, ow, out)
}

/// An ordered stack of convolutions followed by a constant output multiplier.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubsamplingConfig {
    pub name: String,
    pub layers: Vec<ConvLayerSpec>,
    pub output_multiplier: f64,
}

impl SubsamplingConfig {
    pub const PRESETS: [&'static str; 4] = ["conv2d6", "dws2d6", "conv2d6x22", "dws2d6x22"];
    pub const FULL_WIDTH: usize = 512;

    pub fn new(name: impl Into<String>, layers: Vec<ConvLayerSpec>, output_multiplier: f64) -> Result<Self> {
        if layers.is_empty() {
            bail!(Shape, "subsampling stack needs at least one layer");
        }
        if !(output_multiplier > 0.0 && output_multiplier.is_finite()) {
            bail!(Domain, "output multiplier must be positive, got {output_multiplier}");
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                bail!(
                    Shape,
                    "layer produces {} channels but next layer expects {}",
                    pair[0].out_channels,
                    pair[1].in_channels
                );
            }
        }
        Ok(SubsamplingConfig { name: name.into(), layers, output_multiplier })
    }

    /// A built-in stack with `width` channels in place of 512.
    pub fn preset(name: &str, width: usize) -> Result<Self> {
        let (base, multiplier) = match name.strip_suffix("x22") {
            Some(base) => (base, libm::sqrt(Self::FULL_WIDTH as f64)),
            None => (name, 1.0),
        };
        let layers = match base {
            "conv2d6" => vec![
                ConvLayerSpec::new(1, width, (3, 3), (2, 2), 1)?,
                ConvLayerSpec::new(width, width, (5, 5), (3, 3), 1)?,
            ],
            "dws2d6" => vec![
                ConvLayerSpec::new(1, width, (3, 3), (2, 2), 1)?,
                ConvLayerSpec::new(width, width, (5, 5), (3, 3), width)?,
                ConvLayerSpec::new(width, width, (1, 1), (1, 1), 1)?,
            ],
            _ => bail!(Domain, "unknown subsampling config '{name}', expected one of {:?}", Self::PRESETS),
        };
        Self::new(name, layers, multiplier)
    }

    pub fn with_multiplier(mut self, multiplier: f64) -> Result<Self> {
        if !(multiplier > 0.0 && multiplier.is_finite()) {
            bail!(Domain, "output multiplier must be positive, got {multiplier}");
        }
        self.output_multiplier = multiplier;
        Ok(self)
    }

    /// Seeded random weights for every layer.
    pub fn random_weights(&self, seed: u64) -> Vec<ConvWeights> {
        let mut rng = rng::seeded(seed);
        self.layers.iter().map(|l| ConvWeights::random(l, &mut rng)).collect()
    }

    /// Shape after every layer, starting from `(channels, height, width)`.
    pub fn output_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        let mut shape = input;
        for layer in &self.layers {
            if shape.0 != layer.in_channels {
                bail!(Shape, "stack input has {} channels, layer expects {}", shape.0, layer.in_channels);
            }
            let (h, w) = layer.output_dims(shape.1, shape.2)?;
            shape = (layer.out_channels, h, w);
        }
        Ok(shape)
    }
}

/// Run the stack on `input` (`1 × time × feature`).
///
/// Each layer accumulates in `f64` and rounds its outputs into `precision`;
/// ReLU is applied between layers and the multiplier after the last one.
pub fn subsample_forward(
    input: &Tensor3,
    config: &SubsamplingConfig,
    weights: &[ConvWeights],
    precision: Precision,
) -> Result<(Tensor3, OverflowStats)> {
    if weights.len() != config.layers.len() {
        bail!(
            Shape,
            "config '{}' has {} layers but {} weight sets were given",
            config.name,
            config.layers.len(),
            weights.len()
        );
    }
    let mut stats = OverflowStats::default();
    let mut x = input.clone();
    precision.round_slice(&mut x.data, &mut stats);
    let last = config.layers.len() - 1;
    for (i, (layer, w)) in config.layers.iter().zip(weights).enumerate() {
        x = conv2d_forward(&x, layer, w)?;
        if i != last {
            x.data.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        precision.round_slice(&mut x.data, &mut stats);
    }
    if config.output_multiplier != 1.0 {
        let m = config.output_multiplier;
        for v in x.data.iter_mut() {
            *v = precision.round(*v * m, &mut stats);
        }
    }
    Ok((x, stats))
}

/// Per-layer MAC counts for an input of shape `(channels, height, width)`.
pub fn mac_breakdown(config: &SubsamplingConfig, input: (usize, usize, usize)) -> Result<Vec<u64>> {
    let mut shape = input;
    let mut out = Vec::with_capacity(config.layers.len());
    for layer in &config.layers {
        if shape.0 != layer.in_channels {
            bail!(Shape, "stack input has {} channels, layer expects {}", shape.0, layer.in_channels);
        }
        out.push(layer.macs(shape.1, shape.2)?);
        let (h, w) = layer.output_dims(shape.1, shape.2)?;
        shape = (layer.out_channels, h, w);
    }
    Ok(out)
}

pub fn mac_count(config: &SubsamplingConfig, input: (usize, usize, usize)) -> Result<u64> {
    Ok(mac_breakdown(config, input)?.iter().sum())
}

/// Conformer encoder dimensions used for whole-model MAC estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderConfig {
    pub layers: usize,
    pub dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    /// Depthwise kernel of the convolution module.
    pub conv_kernel: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { layers: 12, dim: 512, ffn_dim: 2048, heads: 8, conv_kernel: 15 }
    }
}

/// MACs of the encoder blocks, split by component (summed over all layers).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EncoderMacs {
    /// Two half-step feed-forward modules: `4·T·d·d_ff`.
    pub feed_forward: u64,
    /// Q, K, V and output projections: `4·T·d²`.
    pub attention_projections: u64,
    /// Score and context products: `2·T²·d`.
    pub attention_products: u64,
    /// Pointwise `d→2d`, depthwise `K`, pointwise `d→d`: `3·T·d² + T·d·K`.
    pub conv_module: u64,
    pub total: u64,
}

/// Encoder MACs for `seq_len` tokens (after subsampling).
pub fn mac_count_encoder(hyper: &EncoderConfig, seq_len: usize) -> EncoderMacs {
    let t = seq_len as u64;
    let d = hyper.dim as u64;
    let l = hyper.layers as u64;
    let feed_forward = l * 4 * t * d * hyper.ffn_dim as u64;
    let attention_projections = l * 4 * t * d * d;
    let attention_products = l * 2 * t * t * d;
    let conv_module = l * (3 * t * d * d + t * d * hyper.conv_kernel as u64);
    EncoderMacs {
        feed_forward,
        attention_projections,
        attention_products,
        conv_module,
        total: feed_forward + attention_projections + attention_products + conv_module,
    }
}

/// Consecutive `time × feature` chunks of one utterance or a batch of them.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkStream {
    pub chunk_frames: usize,
    pub features: usize,
    pub chunks: Vec<Matrix>,
}

impl ChunkStream {
    pub fn new(chunks: Vec<Matrix>) -> Result<Self> {
        let features = chunks.first().map_or(0, |c| c.cols);
        let chunk_frames = chunks.first().map_or(0, |c| c.rows);
        if let Some(bad) = chunks.iter().find(|c| c.cols != features) {
            bail!(Shape, "chunk with {} features in a {features}-feature stream", bad.cols);
        }
        Ok(ChunkStream { chunk_frames, features, chunks })
    }

    /// Cut `frames` into chunks of `chunk_frames` rows; a trailing partial
    /// chunk is dropped.
    pub fn from_frames(frames: &Matrix, chunk_frames: usize) -> Result<Self> {
        if chunk_frames == 0 {
            bail!(Domain, "chunk size must be positive");
        }
        let per_chunk = chunk_frames * frames.cols;
        let chunks = frames
            .data
            .chunks_exact(per_chunk.max(1))
            .take(frames.rows / chunk_frames)
            .map(|d| Matrix { rows: chunk_frames, cols: frames.cols, data: d.to_vec() })
            .collect();
        Ok(ChunkStream { chunk_frames, features: frames.cols, chunks })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Seeded Gaussian chunks with standard deviation `sigma`.
    pub fn gaussian(chunks: usize, chunk_frames: usize, features: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        let chunks = (0..chunks)
            .map(|_| Matrix {
                rows: chunk_frames,
                cols: features,
                data: (0..chunk_frames * features).map(|_| sigma * rng::normal(&mut rng)).collect(),
            })
            .collect();
        ChunkStream { chunk_frames, features, chunks }
    }
}

/// Histogram over `log10` of positive values with fixed bin edges
/// `10^(k / bins_per_decade)`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogHistogram {
    pub min_decade: i32,
    pub max_decade: i32,
    pub bins_per_decade: u32,
    pub counts: Vec<u64>,
    /// Zero values and values below `10^min_decade`.
    pub below: u64,
    /// Values at or above `10^max_decade`, infinities and NaN.
    pub above: u64,
}

impl LogHistogram {
    pub fn new(min_decade: i32, max_decade: i32, bins_per_decade: u32) -> Result<Self> {
        if min_decade >= max_decade || bins_per_decade == 0 {
            bail!(Domain, "histogram needs min_decade < max_decade and bins_per_decade > 0");
        }
        let bins = (max_decade - min_decade) as usize * bins_per_decade as usize;
        Ok(LogHistogram { min_decade, max_decade, bins_per_decade, counts: vec![0; bins], below: 0, above: 0 })
    }

    pub fn add(&mut self, value: f64) {
        let v = libm::fabs(value);
        if v.is_nan() || v.is_infinite() {
            self.above += 1;
            return;
        }
        if v == 0.0 {
            self.below += 1;
            return;
        }
        let pos = libm::floor(libm::log10(v) * self.bins_per_decade as f64)
            - (self.min_decade as f64) * self.bins_per_decade as f64;
        if pos < 0.0 {
            self.below += 1;
        } else if pos >= self.counts.len() as f64 {
            self.above += 1;
        } else {
            self.counts[pos as usize] += 1;
        }
    }

    /// `(lower, upper)` edges of bin `i`.
    pub fn edges(&self, i: usize) -> (f64, f64) {
        let bpd = self.bins_per_decade as f64;
        let k = self.min_decade as f64 * bpd + i as f64;
        (libm::pow(10.0, k / bpd), libm::pow(10.0, (k + 1.0) / bpd))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }
}

impl Default for LogHistogram {
    /// `1e-3 … 1e6`, four bins per decade.
    fn default() -> Self {
        LogHistogram::new(-3, 6, 4).expect("valid default histogram")
    }
}

/// Per-chunk peak magnitudes of a subsampling stack's output.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeProfile {
    pub config: String,
    pub per_chunk_max: Vec<f64>,
    pub histogram: LogHistogram,
    pub stats: OverflowStats,
    /// Chunks whose output contained at least one overflow.
    pub overflow_chunks: usize,
}

/// Run `config` on every chunk and record the largest output magnitude of
/// each.
pub fn profile_dynamic_range(
    stream: &ChunkStream,
    config: &SubsamplingConfig,
    weights: &[ConvWeights],
    precision: Precision,
) -> Result<RangeProfile> {
    let mut profile = RangeProfile {
        config: config.name.clone(),
        per_chunk_max: Vec::with_capacity(stream.len()),
        histogram: LogHistogram::default(),
        stats: OverflowStats::default(),
        overflow_chunks: 0,
    };
    for chunk in &stream.chunks {
        let (out, stats) = subsample_forward(&Tensor3::from_matrix(chunk), config, weights, precision)?;
        let peak = out.max_abs();
        profile.per_chunk_max.push(peak);
        profile.histogram.add(peak);
        if stats.has_overflow() {
            profile.overflow_chunks += 1;
        }
        profile.stats += stats;
    }
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_kernel_sums_window() {
        let spec = ConvLayerSpec::new(1, 1, (3, 3), (1, 1), 1).unwrap();
        let w = ConvWeights::new(&spec, vec![1.0; 9], vec![0.0]).unwrap();
        let out = conv2d_forward(&Tensor3::new(1, 3, 3, vec![1.0; 9]).unwrap(), &spec, &w).unwrap();
        assert_eq!(out.shape(), (1, 1, 1));
        assert_eq!(out.data(), [9.0]);
    }

    #[test]
    fn depthwise_identity_kernel() {
        let spec = ConvLayerSpec::new(3, 3, (1, 1), (1, 1), 3).unwrap();
        let w = ConvWeights::new(&spec, vec![1.0; 3], vec![0.0; 3]).unwrap();
        let input = Tensor3::new(3, 2, 2, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(conv2d_forward(&input, &spec, &w).unwrap(), input);
    }

    #[test]
    fn spec_and_shape_errors() {
        assert!(ConvLayerSpec::new(3, 4, (1, 1), (1, 1), 2).is_err());
        assert!(ConvLayerSpec::new(4, 4, (1, 1), (1, 1), 0).is_err());
        assert!(ConvLayerSpec::new(4, 4, (0, 1), (1, 1), 1).is_err());
        let spec = ConvLayerSpec::new(1, 1, (3, 3), (1, 1), 1).unwrap();
        assert!(spec.output_dims(2, 5).is_err());
        assert!(ConvWeights::new(&spec, vec![1.0; 8], vec![0.0]).is_err());
        let w = ConvWeights::zeros(&spec);
        assert!(conv2d_forward(&Tensor3::zeros(2, 3, 3), &spec, &w).is_err());
        assert!(Tensor3::new(1, 2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn mac_examples() {
        let single =
            SubsamplingConfig::new("single", vec![ConvLayerSpec::new(1, 512, (3, 3), (2, 2), 1).unwrap()], 1.0)
                .unwrap();
        assert_eq!(mac_count(&single, (1, 100, 80)).unwrap(), 512 * 9 * 49 * 39);
        let pw = ConvLayerSpec::new(6, 6, (1, 1), (1, 1), 1).unwrap();
        assert_eq!(pw.macs(4, 5).unwrap(), 36 * 20);
    }

    #[test]
    fn presets() {
        let conv = SubsamplingConfig::preset("conv2d6", 512).unwrap();
        assert_eq!(conv.layers.len(), 2);
        assert_eq!(conv.output_multiplier, 1.0);
        let dws = SubsamplingConfig::preset("dws2d6x22", 512).unwrap();
        assert_eq!(dws.layers.len(), 3);
        assert_eq!(dws.layers[1].groups, 512);
        assert!((dws.output_multiplier - 22.627_416_997_969_52).abs() < 1e-12);
        assert!(SubsamplingConfig::preset("conv2d8", 512).is_err());
        assert_eq!(conv.output_shape((1, 64, 80)).unwrap(), (512, 9, 12));
        assert!(conv.output_shape((1, 10, 80)).is_err());
        assert!(mac_count(&dws, (1, 100, 80)).unwrap() < mac_count(&conv, (1, 100, 80)).unwrap());
    }

    #[test]
    fn config_validation() {
        let a = ConvLayerSpec::new(1, 4, (1, 1), (1, 1), 1).unwrap();
        let b = ConvLayerSpec::new(3, 4, (1, 1), (1, 1), 1).unwrap();
        assert!(SubsamplingConfig::new("x", vec![a, b], 1.0).is_err());
        assert!(SubsamplingConfig::new("x", vec![], 1.0).is_err());
        assert!(SubsamplingConfig::new("x", vec![a], 0.0).is_err());
    }

    #[test]
    fn encoder_macs_add_up() {
        let m = mac_count_encoder(&EncoderConfig::default(), 15);
        assert_eq!(m.total, m.feed_forward + m.attention_projections + m.attention_products + m.conv_module);
        assert_eq!(m.feed_forward, 12 * 4 * 15 * 512 * 2048);
    }

    #[test]
    fn histogram_bins() {
        let mut h = LogHistogram::new(0, 2, 1).unwrap();
        for v in [0.0, 0.5, 1.0, 9.9, 10.0, 99.0, 100.0, f64::INFINITY] {
            h.add(v);
        }
        assert_eq!(h.counts, [2, 2]);
        assert_eq!(h.below, 2);
        assert_eq!(h.above, 2);
        assert_eq!(h.total(), 8);
        assert_eq!(h.edges(1), (10.0, 100.0));
    }

    #[test]
    fn zero_stream_profile() {
        let config = SubsamplingConfig::preset("dws2d6", 4).unwrap();
        let weights = config.random_weights(3);
        let stream = ChunkStream::new(vec![Matrix::new(16, 12, vec![0.0; 192]).unwrap(); 3]).unwrap();
        let p = profile_dynamic_range(&stream, &config, &weights, Precision::Exact).unwrap();
        assert_eq!(p.per_chunk_max, [0.0; 3]);
        assert_eq!(p.histogram.total(), 3);
    }

    #[test]
    fn from_frames_drops_partial_chunk() {
        let m = Matrix::new(10, 2, vec![1.0; 20]).unwrap();
        let s = ChunkStream::from_frames(&m, 4).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.chunk_frames, 4);
        assert!(ChunkStream::from_frames(&m, 0).is_err());
    }
}
