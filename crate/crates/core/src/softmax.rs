//! Softmax for accelerators without a native exponential.
//!
//! The exponential comes from a lookup table. To keep the table small, inputs
//! whose maximum exceeds a threshold (4096 by default, the point above which
//! FP16 values are spaced 4 apart) are first scaled down by
//! `threshold / max(x)`. A positive scale keeps the ordering of the inputs, so
//! the position of the largest probability is unchanged.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::floatsim::{Accumulation, OverflowStats, Precision};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SoftmaxRescaleSpec {
    threshold: f64,
    subtract_max: bool,
    /// Summation order of the normalizing sum under a simulated format.
    #[cfg_attr(feature = "serde", serde(default))]
    accumulation: Accumulation,
}

impl SoftmaxRescaleSpec {
    pub const DEFAULT_THRESHOLD: f64 = 4096.0;

    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            bail!(Domain, "rescale threshold must be positive and finite, got {threshold}");
        }
        Ok(SoftmaxRescaleSpec { threshold, ..Self::default() })
    }

    /// Whether [`softmax_lut`] subtracts the maximum before the table lookup.
    /// Without it the table sees the rescaled inputs directly and must cover
    /// their range.
    pub fn with_subtract_max(mut self, subtract: bool) -> Self {
        self.subtract_max = subtract;
        self
    }

    pub fn with_accumulation(mut self, accumulation: Accumulation) -> Self {
        self.accumulation = accumulation;
        self
    }

    pub fn accumulation(&self) -> Accumulation {
        self.accumulation
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn subtract_max(&self) -> bool {
        self.subtract_max
    }
}

impl Default for SoftmaxRescaleSpec {
    fn default() -> Self {
        SoftmaxRescaleSpec {
            threshold: Self::DEFAULT_THRESHOLD,
            subtract_max: true,
            accumulation: Accumulation::default(),
        }
    }
}

fn max_of(x: &[f64]) -> f64 {
    x.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `x · threshold / max(x)` when `max(x) > threshold`, otherwise `x`
/// unchanged. The maximum is the signed maximum, not the largest magnitude.
pub fn conditional_rescale(x: &[f64], spec: &SoftmaxRescaleSpec) -> Vec<f64> {
    let max = max_of(x);
    if max > spec.threshold {
        // Multiply first so the maximum maps to the threshold exactly.
        x.iter().map(|v| v * spec.threshold / max).collect()
    } else {
        x.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Interpolation {
    Nearest,
    Linear,
}

impl Interpolation {
    pub fn name(&self) -> &'static str {
        match self {
            Interpolation::Nearest => "nearest",
            Interpolation::Linear => "linear",
        }
    }
}

/// Table of `exp` on a uniform grid over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpLut {
    lo: f64,
    hi: f64,
    values: Vec<f64>,
    interpolation: Interpolation,
}

impl ExpLut {
    pub const DEFAULT_LO: f64 = -16.0;
    pub const DEFAULT_HI: f64 = 0.0;
    pub const DEFAULT_ENTRIES: usize = 1024;

    pub fn new(lo: f64, hi: f64, entries: usize, interpolation: Interpolation) -> Result<Self> {
        Self::check_domain(lo, hi, entries)?;
        let step = (hi - lo) / (entries - 1) as f64;
        let values = (0..entries).map(|i| libm::exp(lo + step * i as f64)).collect();
        Ok(ExpLut { lo, hi, values, interpolation })
    }

    /// Wrap an existing table, e.g. one read back from disk.
    pub fn from_table(lo: f64, hi: f64, values: Vec<f64>, interpolation: Interpolation) -> Result<Self> {
        Self::check_domain(lo, hi, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            bail!(Domain, "LUT values must be finite");
        }
        Ok(ExpLut { lo, hi, values, interpolation })
    }

    fn check_domain(lo: f64, hi: f64, entries: usize) -> Result<()> {
        if entries < 2 {
            bail!(Domain, "LUT needs at least 2 entries, got {entries}");
        }
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            bail!(Domain, "LUT domain must satisfy lo < hi, got [{lo}, {hi}]");
        }
        Ok(())
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn entries(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.values.len() - 1) as f64
    }

    /// Table lookup. Below the domain returns 0, above it the last entry.
    pub fn eval(&self, x: f64) -> f64 {
        if x.is_nan() {
            return x;
        }
        if x < self.lo {
            return 0.0;
        }
        let last = self.values.len() - 1;
        if x >= self.hi {
            return self.values[last];
        }
        let t = (x - self.lo) / self.step();
        match self.interpolation {
            Interpolation::Nearest => {
                let i = (libm::round(t) as usize).min(last);
                self.values[i]
            }
            Interpolation::Linear => {
                let i = (libm::floor(t) as usize).min(last - 1);
                let frac = t - i as f64;
                self.values[i] + frac * (self.values[i + 1] - self.values[i])
            }
        }
    }
}

impl Default for ExpLut {
    fn default() -> Self {
        ExpLut::new(Self::DEFAULT_LO, Self::DEFAULT_HI, Self::DEFAULT_ENTRIES, Interpolation::Linear)
            .expect("default LUT parameters are valid")
    }
}

pub fn lut_exp(x: f64, lut: &ExpLut) -> f64 {
    lut.eval(x)
}

/// Max-subtracted softmax in `f64` with the true exponential.
pub fn softmax_exact(x: &[f64]) -> Vec<f64> {
    let max = max_of(x);
    let exps: Vec<f64> = x.iter().map(|v| libm::exp(v - max)).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Rescale spec and exponential table bundled together.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LutSoftmax {
    pub spec: SoftmaxRescaleSpec,
    pub lut: ExpLut,
}

impl LutSoftmax {
    /// Run the table-driven softmax on one row, recording rounding outcomes.
    ///
    /// The conditional rescale acts on the incoming values; from there on
    /// every intermediate is rounded into `precision`: the rescaled inputs,
    /// the max-subtracted differences, the table outputs, every step of the
    /// normalizing sum and each quotient. A row whose exponentials all vanish
    /// yields zeros.
    pub fn apply(&self, x: &[f64], precision: Precision, stats: &mut OverflowStats) -> Vec<f64> {
        if x.is_empty() {
            return Vec::new();
        }
        let mut y = conditional_rescale(x, &self.spec);
        precision.round_slice(&mut y, stats);
        if self.spec.subtract_max {
            let max = max_of(&y);
            for v in y.iter_mut() {
                *v = precision.round(*v - max, stats);
            }
        }
        let exps: Vec<f64> = y.iter().map(|v| precision.round(self.lut.eval(*v), stats)).collect();
        let sum = precision.sum(&exps, self.spec.accumulation, stats);
        if sum == 0.0 {
            return alloc::vec![0.0; x.len()];
        }
        exps.iter().map(|e| precision.round(e / sum, stats)).collect()
    }
}

/// Table-driven softmax; see [`LutSoftmax::apply`].
pub fn softmax_lut(x: &[f64], spec: &SoftmaxRescaleSpec, lut: &ExpLut, precision: Precision) -> Vec<f64> {
    let mut stats = OverflowStats::default();
    LutSoftmax { spec: *spec, lut: lut.clone() }.apply(x, precision, &mut stats)
}

/// Softmax as evaluated inside a graph: exact exponentials in `f64`, the
/// default table-driven pipeline under a simulated format.
pub fn softmax_for(x: &[f64], precision: Precision, table: &LutSoftmax, stats: &mut OverflowStats) -> Vec<f64> {
    match precision {
        Precision::Exact => softmax_exact(x),
        Precision::Simulated(_) => table.apply(x, precision, stats),
    }
}

/// Index of the first largest entry.
pub fn argmax(x: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in x.iter().enumerate() {
        match best {
            Some(b) if x[b] >= *v => {}
            _ => best = Some(i),
        }
    }
    best
}
