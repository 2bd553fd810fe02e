//! Simulation of low-precision binary floating-point formats.
//!
//! Values are carried as `f64` and rounded into a target format with
//! round-to-nearest-even. Any format with at most 52 fraction bits and at most
//! 10 exponent bits is exactly representable inside an `f64`, so rounding is
//! bit-accurate: the returned `f64` is precisely the value the narrow format
//! would hold.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::AddAssign;
use core::str::FromStr;

use crate::error::{bail, Error, Result};

/// A binary interchange-style float format: sign bit, `exponent_bits` of
/// biased exponent and `mantissa_bits` of explicit fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FloatFormat {
    mantissa_bits: u32,
    exponent_bits: u32,
    flush_subnormals: bool,
}

impl FloatFormat {
    /// IEEE 754 binary16.
    pub const FP16: FloatFormat = FloatFormat { mantissa_bits: 10, exponent_bits: 5, flush_subnormals: false };
    /// IEEE 754 binary32.
    pub const FP32: FloatFormat = FloatFormat { mantissa_bits: 23, exponent_bits: 8, flush_subnormals: false };
    /// bfloat16.
    pub const BF16: FloatFormat = FloatFormat { mantissa_bits: 7, exponent_bits: 8, flush_subnormals: false };

    pub fn new(mantissa_bits: u32, exponent_bits: u32) -> Result<Self> {
        if !(1..=52).contains(&mantissa_bits) {
            bail!(Format, "mantissa_bits must be in 1..=52, got {mantissa_bits}");
        }
        if !(2..=10).contains(&exponent_bits) {
            bail!(Format, "exponent_bits must be in 2..=10, got {exponent_bits}");
        }
        Ok(FloatFormat { mantissa_bits, exponent_bits, flush_subnormals: false })
    }

    /// Same format, with results below the normal range flushed to zero.
    pub fn with_flush_subnormals(mut self, flush: bool) -> Self {
        self.flush_subnormals = flush;
        self
    }

    pub fn mantissa_bits(&self) -> u32 {
        self.mantissa_bits
    }

    pub fn exponent_bits(&self) -> u32 {
        self.exponent_bits
    }

    pub fn flushes_subnormals(&self) -> bool {
        self.flush_subnormals
    }

    pub fn total_bits(&self) -> u32 {
        1 + self.exponent_bits + self.mantissa_bits
    }

    /// Canonical name, parseable by [`FromStr`].
    pub fn name(&self) -> String {
        let base = match (self.mantissa_bits, self.exponent_bits) {
            (10, 5) => String::from("fp16"),
            (23, 8) => String::from("fp32"),
            (7, 8) => String::from("bf16"),
            (m, e) => format!("custom:{m},{e}"),
        };
        if self.flush_subnormals {
            format!("{base}+ftz")
        } else {
            base
        }
    }

    /// Largest unbiased exponent of a finite value.
    pub fn max_exponent(&self) -> i32 {
        (1i32 << (self.exponent_bits - 1)) - 1
    }

    /// Unbiased exponent of the smallest normal value.
    pub fn min_exponent(&self) -> i32 {
        1 - self.max_exponent()
    }

    /// Largest finite magnitude, `(2 - 2^-m) * 2^emax`.
    pub fn max_finite(&self) -> f64 {
        let m = self.mantissa_bits as i32;
        libm::ldexp(2.0 - libm::ldexp(1.0, -m), self.max_exponent())
    }

    pub fn min_normal(&self) -> f64 {
        libm::ldexp(1.0, self.min_exponent())
    }

    pub fn min_subnormal(&self) -> f64 {
        libm::ldexp(1.0, self.min_exponent() - self.mantissa_bits as i32)
    }

    /// Round `v` to the nearest representable value (ties to even).
    ///
    /// Results whose magnitude exceeds [`max_finite`](Self::max_finite) after
    /// rounding saturate to a signed infinity and report
    /// [`QuantizeStatus::Overflow`]; infinite inputs report the same. NaN
    /// passes through as exact. A non-zero result below the normal range that
    /// lost information reports [`QuantizeStatus::Underflow`].
    pub fn quantize(&self, v: f64) -> (f64, QuantizeStatus) {
        if v.is_nan() || v == 0.0 {
            return (v, QuantizeStatus::Exact);
        }
        if v.is_infinite() {
            return (v, QuantizeStatus::Overflow);
        }
        let mag = libm::fabs(v);
        let quantum = self.spacing_at(mag);
        // mag / quantum is below 2^(m+1) and the division by a power of two
        // is exact, so rint performs the only rounding step.
        let rounded = libm::rint(mag / quantum) * quantum;
        if rounded > self.max_finite() {
            return (libm::copysign(f64::INFINITY, v), QuantizeStatus::Overflow);
        }
        if rounded < self.min_normal() {
            if self.flush_subnormals {
                return (libm::copysign(0.0, v), QuantizeStatus::Underflow);
            }
            let status = if rounded == mag { QuantizeStatus::Exact } else { QuantizeStatus::Underflow };
            return (libm::copysign(rounded, v), status);
        }
        let status = if rounded == mag { QuantizeStatus::Exact } else { QuantizeStatus::Rounded };
        (libm::copysign(rounded, v), status)
    }

    /// Spacing between adjacent representable values at magnitude `|v|`.
    pub fn ulp(&self, v: f64) -> Result<f64> {
        let mag = libm::fabs(v);
        if mag == 0.0 || !mag.is_finite() || mag > self.max_finite() {
            bail!(Domain, "ulp needs 0 < |v| <= {} for {}, got {v}", self.max_finite(), self.name());
        }
        Ok(self.spacing_at(mag))
    }

    fn spacing_at(&self, mag: f64) -> f64 {
        let exp = binary_exponent(mag).max(self.min_exponent());
        libm::ldexp(1.0, exp - self.mantissa_bits as i32)
    }
}

impl fmt::Display for FloatFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for FloatFormat {
    type Err = Error;

    /// Accepts `fp16`, `fp32`, `bf16` or `custom:<mantissa>,<exponent>`,
    /// optionally suffixed with `+ftz`.
    fn from_str(s: &str) -> Result<Self> {
        let (base, ftz) = match s.strip_suffix("+ftz") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let fmt = match base {
            "fp16" | "f16" | "half" => FloatFormat::FP16,
            "fp32" | "f32" | "single" => FloatFormat::FP32,
            "bf16" => FloatFormat::BF16,
            other => {
                let Some(spec) = other.strip_prefix("custom:") else {
                    bail!(Format, "unknown format '{s}'");
                };
                let mut parts = spec.split(',');
                let (Some(m), Some(e), None) = (parts.next(), parts.next(), parts.next()) else {
                    bail!(Format, "expected custom:<mantissa>,<exponent>, got '{s}'");
                };
                let m = m.trim().parse().map_err(|_| Error::Format(format!("bad mantissa width in '{s}'")))?;
                let e = e.trim().parse().map_err(|_| Error::Format(format!("bad exponent width in '{s}'")))?;
                FloatFormat::new(m, e)?
            }
        };
        Ok(fmt.with_flush_subnormals(ftz))
    }
}

/// `floor(log2(mag))` for positive finite `mag`; f64 subnormals report -1023,
/// which every supported format clamps to its own minimum exponent.
fn binary_exponent(mag: f64) -> i32 {
    let biased = ((mag.to_bits() >> 52) & 0x7ff) as i32;
    if biased == 0 {
        -1023
    } else {
        biased - 1023
    }
}

/// Outcome of rounding one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum QuantizeStatus {
    Exact,
    Rounded,
    Overflow,
    Underflow,
}

/// Running counts of quantization outcomes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OverflowStats {
    pub total: u64,
    pub rounded: u64,
    pub overflow: u64,
    pub underflow: u64,
}

impl OverflowStats {
    pub fn record(&mut self, status: QuantizeStatus) {
        self.total += 1;
        match status {
            QuantizeStatus::Exact => {}
            QuantizeStatus::Rounded => self.rounded += 1,
            QuantizeStatus::Overflow => self.overflow += 1,
            QuantizeStatus::Underflow => self.underflow += 1,
        }
    }

    pub fn has_overflow(&self) -> bool {
        self.overflow > 0
    }
}

impl AddAssign for OverflowStats {
    fn add_assign(&mut self, rhs: Self) {
        self.total += rhs.total;
        self.rounded += rhs.rounded;
        self.overflow += rhs.overflow;
        self.underflow += rhs.underflow;
    }
}

/// Quantize every element of `xs` into `fmt`.
pub fn quantize_tensor(xs: &[f64], fmt: &FloatFormat) -> (Vec<f64>, OverflowStats) {
    let mut stats = OverflowStats::default();
    let out = xs
        .iter()
        .map(|&x| {
            let (q, status) = fmt.quantize(x);
            stats.record(status);
            q
        })
        .collect();
    (out, stats)
}

/// Order in which a reduction adds its terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Accumulation {
    /// Left to right; the rounding error grows with the length.
    Sequential,
    /// Balanced binary tree over the halves (the first half takes the odd
    /// element); the error grows with the depth only.
    Pairwise,
    /// Left to right with a running correction term (Neumaier's variant of
    /// Kahan summation), every operation rounded; the error stays near one
    /// rounding of the total whatever the length.
    #[default]
    Compensated,
}

impl Accumulation {
    pub fn name(&self) -> &'static str {
        match self {
            Accumulation::Sequential => "sequential",
            Accumulation::Pairwise => "pairwise",
            Accumulation::Compensated => "compensated",
        }
    }
}

impl FromStr for Accumulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sequential" => Ok(Accumulation::Sequential),
            "pairwise" => Ok(Accumulation::Pairwise),
            "compensated" => Ok(Accumulation::Compensated),
            _ => bail!(Format, "unknown accumulation order '{s}'"),
        }
    }
}

/// Arithmetic context: either plain `f64` or every result rounded into a
/// simulated format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Precision {
    #[default]
    Exact,
    Simulated(FloatFormat),
}

impl Precision {
    /// Round `v` and record the outcome.
    #[inline]
    pub fn round(&self, v: f64, stats: &mut OverflowStats) -> f64 {
        match self {
            Precision::Exact => v,
            Precision::Simulated(fmt) => {
                let (q, status) = fmt.quantize(v);
                stats.record(status);
                q
            }
        }
    }

    /// Round `v` without bookkeeping.
    #[inline]
    pub fn round_quiet(&self, v: f64) -> f64 {
        match self {
            Precision::Exact => v,
            Precision::Simulated(fmt) => fmt.quantize(v).0,
        }
    }

    pub fn round_slice(&self, xs: &mut [f64], stats: &mut OverflowStats) {
        if let Precision::Simulated(_) = self {
            for x in xs.iter_mut() {
                *x = self.round(*x, stats);
            }
        }
    }

    /// Sum `xs`, rounding every partial sum, in the given order.
    pub fn sum(&self, xs: &[f64], order: Accumulation, stats: &mut OverflowStats) -> f64 {
        match order {
            Accumulation::Sequential => xs.iter().fold(0.0, |acc, v| self.round(acc + v, stats)),
            Accumulation::Pairwise => match xs.len() {
                0 => 0.0,
                1 => xs[0],
                n => {
                    let (lo, hi) = xs.split_at(n.div_ceil(2));
                    let a = self.sum(lo, order, stats);
                    let b = self.sum(hi, order, stats);
                    self.round(a + b, stats)
                }
            },
            Accumulation::Compensated => {
                let (mut sum, mut carry) = (0.0, 0.0);
                for &x in xs {
                    let t = self.round(sum + x, stats);
                    let lost = if libm::fabs(sum) >= libm::fabs(x) {
                        self.round(self.round(sum - t, stats) + x, stats)
                    } else {
                        self.round(self.round(x - t, stats) + sum, stats)
                    };
                    carry = self.round(carry + lost, stats);
                    sum = t;
                }
                self.round(sum + carry, stats)
            }
        }
    }

    /// Storage size of one element.
    pub fn bytes_per_element(&self) -> u64 {
        match self {
            Precision::Exact => 8,
            Precision::Simulated(fmt) => u64::from(fmt.total_bits().div_ceil(8)),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Precision::Exact => String::from("exact"),
            Precision::Simulated(fmt) => fmt.name(),
        }
    }
}

impl From<FloatFormat> for Precision {
    fn from(fmt: FloatFormat) -> Self {
        Precision::Simulated(fmt)
    }
}
