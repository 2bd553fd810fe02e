//! Run configuration: a TOML document whose every field has a default, with
//! command-line flags layered on top.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fpstab_core::prenorm::{LayerNormSpec, PrenormSpec};
use fpstab_core::softmax::{ExpLut, Interpolation, SoftmaxRescaleSpec};
use fpstab_core::{Accumulation, FloatFormat, Precision};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::gen::{Dtype, StreamKind};

/// Pre-normalizer selection as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PrenormMode {
    None,
    #[default]
    Mad,
    Theorem1,
}

impl PrenormMode {
    pub fn name(&self) -> &'static str {
        match self {
            PrenormMode::None => "none",
            PrenormMode::Mad => "mad",
            PrenormMode::Theorem1 => "theorem1",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSection {
    /// Input stream for the audit and profiling commands.
    pub path: Option<PathBuf>,
    pub kind: StreamKind,
    pub rows: usize,
    pub cols: usize,
    /// Kind-specific magnitude; see [`StreamKind`].
    pub scale: Option<f64>,
    pub dtype: Dtype,
    pub csv: bool,
}

impl Default for StreamSection {
    fn default() -> Self {
        StreamSection {
            path: None,
            kind: StreamKind::Gaussian,
            rows: 16,
            cols: 512,
            scale: None,
            dtype: Dtype::F64,
            csv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftmaxSection {
    pub threshold: f64,
    pub subtract_max: bool,
    pub lut_lo: f64,
    pub lut_hi: f64,
    pub lut_entries: usize,
    pub interpolation: Interpolation,
    /// Table file to load instead of building one.
    pub lut: Option<PathBuf>,
}

impl Default for SoftmaxSection {
    fn default() -> Self {
        SoftmaxSection {
            threshold: SoftmaxRescaleSpec::DEFAULT_THRESHOLD,
            subtract_max: true,
            lut_lo: ExpLut::DEFAULT_LO,
            lut_hi: ExpLut::DEFAULT_HI,
            lut_entries: ExpLut::DEFAULT_ENTRIES,
            interpolation: Interpolation::Linear,
            lut: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvSection {
    pub configs: Vec<String>,
    /// Channel width of the stacks run over the stream. The MAC table always
    /// uses the full width of 512.
    pub width: usize,
    /// Utterance length in frames assumed by the MAC table.
    pub mac_frames: usize,
    pub mac_features: usize,
}

impl Default for ConvSection {
    fn default() -> Self {
        ConvSection {
            configs: ["conv2d6", "dws2d6", "conv2d6x22", "dws2d6x22"].map(String::from).to_vec(),
            width: 32,
            mac_frames: 1000,
            mac_features: 80,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    /// `mha` for the built-in attention block, otherwise a graph JSON file.
    pub source: String,
    pub passes: Vec<String>,
    pub bz: usize,
    pub heads: usize,
    pub dim: usize,
    pub seq: usize,
    pub dot: bool,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection {
            source: "mha".into(),
            passes: vec!["layout".into(), "einsum".into()],
            bz: 1,
            heads: 8,
            dim: 512,
            seq: 64,
            dot: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub n_max: usize,
    pub vectors: usize,
    pub oracle_n_max: usize,
    pub oracle_starts: usize,
    pub oracle_samples: usize,
    pub mc_samples: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            n_max: 512,
            vectors: 100_000,
            oracle_n_max: 6,
            oracle_starts: 10_000,
            oracle_samples: 1_000_000,
            mc_samples: 1_000_000,
        }
    }
}

/// Everything a command needs, after the config file and flags are merged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, the file may only be used with this command.
    pub command: Option<String>,
    pub format: String,
    pub prenorm: PrenormMode,
    pub p: f64,
    pub safety: f64,
    pub accumulation: Accumulation,
    pub epsilon: f64,
    pub seed: u64,
    pub chunks: Option<usize>,
    pub out_dir: PathBuf,
    pub check: bool,
    pub stream: StreamSection,
    pub softmax: SoftmaxSection,
    pub conv: ConvSection,
    pub graph: GraphSection,
    pub verify: VerifySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            format: "fp16".into(),
            prenorm: PrenormMode::Mad,
            p: 2.0,
            safety: 1.0,
            accumulation: Accumulation::default(),
            epsilon: LayerNormSpec::DEFAULT_EPSILON,
            seed: 0,
            chunks: None,
            out_dir: PathBuf::from("fpstab-out"),
            check: false,
            stream: StreamSection::default(),
            softmax: SoftmaxSection::default(),
            conv: ConvSection::default(),
            graph: GraphSection::default(),
            verify: VerifySection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            location: e
                .span()
                .map(|s| format!("line {}", text[..s.start].matches('\n').count() + 1))
                .unwrap_or_else(|| "line 1".into()),
            message: e.message().to_string(),
        })
    }

    /// Simulated arithmetic named by `format`; `exact` selects plain `f64`.
    pub fn precision(&self) -> Result<Precision> {
        parse_precision(&self.format)
    }

    /// The simulated format; `exact` is rejected.
    pub fn float_format(&self) -> Result<FloatFormat> {
        match self.precision()? {
            Precision::Simulated(fmt) => Ok(fmt),
            Precision::Exact => Err(CliError::usage("this command needs a simulated --format")),
        }
    }

    /// Pre-normalizer for the configured mode, `M` taken from the format.
    pub fn prenorm_spec(&self) -> Result<Option<PrenormSpec>> {
        Ok(match self.prenorm {
            PrenormMode::None => None,
            PrenormMode::Mad => Some(PrenormSpec::mad()),
            PrenormMode::Theorem1 => {
                let m = self.float_format()?.max_finite();
                Some(PrenormSpec::theorem1_with_safety(self.p, m, self.safety)?)
            }
        })
    }

    pub fn layernorm_spec(&self) -> Result<LayerNormSpec> {
        Ok(LayerNormSpec::new(self.epsilon)?.with_accumulation(self.accumulation))
    }

    pub fn softmax_spec(&self) -> Result<SoftmaxRescaleSpec> {
        Ok(SoftmaxRescaleSpec::new(self.softmax.threshold)?
            .with_subtract_max(self.softmax.subtract_max)
            .with_accumulation(self.accumulation))
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}

pub fn parse_precision(name: &str) -> Result<Precision> {
    if name == "exact" {
        return Ok(Precision::Exact);
    }
    Ok(Precision::Simulated(FloatFormat::from_str(name)?))
}
