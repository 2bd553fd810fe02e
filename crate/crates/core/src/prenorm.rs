//! Layer normalization and the pre-normalizers that keep its variance
//! computation inside a low-precision range.
//!
//! Layer normalization is invariant to a global shift and a positive global
//! rescale of its input, so a vector can be centered and divided by any
//! positive constant before the sum of squares is formed. For a zero-mean
//! vector with L1 norm `S`, the sum `Σ|x_i|^p` is at most `2^(1-p) S^p`,
//! attained only by `(-S/2, 0, …, 0, S/2)`. Dividing by
//! `½ (2/M)^(1/p) S` therefore caps `Σ|y_i|^p` at exactly `M`, the largest
//! finite value of the target format. The mean-absolute-deviation divisor
//! `(1/n) Σ|x_i|` is a cheaper alternative that maps common activation
//! distributions into a small fixed interval.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{bail, Result};
use crate::floatsim::{Accumulation, OverflowStats, Precision};
use crate::rng;

/// Parameters of `x̂ = (x - μ) / sqrt(σ² + ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerNormSpec {
    epsilon: f64,
    /// Summation order of the mean and the sum of squares under a simulated
    /// format.
    #[cfg_attr(feature = "serde", serde(default))]
    accumulation: Accumulation,
}

impl LayerNormSpec {
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            bail!(Domain, "layernorm epsilon must be positive and finite, got {epsilon}");
        }
        Ok(LayerNormSpec { epsilon, accumulation: Accumulation::default() })
    }

    pub fn with_accumulation(mut self, accumulation: Accumulation) -> Self {
        self.accumulation = accumulation;
        self
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn accumulation(&self) -> Accumulation {
        self.accumulation
    }
}

impl Default for LayerNormSpec {
    fn default() -> Self {
        LayerNormSpec { epsilon: Self::DEFAULT_EPSILON, accumulation: Accumulation::default() }
    }
}

/// Layer normalization in `f64` with the population variance.
pub fn layernorm(x: &[f64], spec: &LayerNormSpec) -> Result<Vec<f64>> {
    if x.is_empty() {
        bail!(Domain, "layernorm of an empty vector");
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = libm::sqrt(var + spec.epsilon);
    Ok(x.iter().map(|v| (v - mean) / denom).collect())
}

fn check_order(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        bail!(Domain, "norm order p must be a finite real >= 1, got {p}");
    }
    Ok(())
}

/// `Σ|x_i|^p`.
pub fn lp_norm_pow(x: &[f64], p: f64) -> Result<f64> {
    check_order(p)?;
    if x.is_empty() {
        bail!(Domain, "norm of an empty vector");
    }
    Ok(x.iter().map(|v| libm::pow(libm::fabs(*v), p)).sum())
}

/// `(Σ|x_i|^p)^(1/p)`.
pub fn lp_norm(x: &[f64], p: f64) -> Result<f64> {
    if p == 1.0 {
        lp_norm_pow(x, 1.0)
    } else {
        lp_norm_pow(x, p).map(|s| libm::pow(s, 1.0 / p))
    }
}

pub fn l1_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| libm::fabs(*v)).sum()
}

/// Upper bound `2^(1-p) S^p` on `Σ|x_i|^p` over zero-mean vectors of L1 norm `S`.
pub fn lemma1_bound(l1: f64, p: f64) -> f64 {
    libm::pow(2.0, 1.0 - p) * libm::pow(l1, p)
}

/// A vector whose entries sum to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ZeroMeanVector(Vec<f64>);

impl ZeroMeanVector {
    /// Accepts `values` if `|Σ x_i| <= 1e-12 · n · max|x_i|`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            bail!(Domain, "zero-mean vector must be non-empty");
        }
        let sum: f64 = values.iter().sum();
        let max_abs = values.iter().fold(0.0f64, |m, v| m.max(libm::fabs(*v)));
        let tol = 1e-12 * values.len() as f64 * max_abs;
        if sum.is_nan() || libm::fabs(sum) > tol {
            bail!(Domain, "vector sum {sum} exceeds zero-mean tolerance {tol}");
        }
        Ok(ZeroMeanVector(values))
    }

    /// Subtract the mean of `values`.
    pub fn centered(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            bail!(Domain, "cannot center an empty vector");
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Ok(ZeroMeanVector(values.iter().map(|v| v - mean).collect()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn l1_norm(&self) -> f64 {
        l1_norm(&self.0)
    }
}

/// `(-S/2, 0, …, 0, S/2)` of length `n`.
pub fn extremal_vector(l1: f64, n: usize) -> Result<ZeroMeanVector> {
    if n < 2 {
        bail!(Domain, "extremal vector needs n >= 2, got {n}");
    }
    if !(l1 >= 0.0 && l1.is_finite()) {
        bail!(Domain, "L1 norm must be finite and non-negative, got {l1}");
    }
    let mut v = vec![0.0; n];
    v[0] = -l1 / 2.0;
    v[n - 1] = l1 / 2.0;
    Ok(ZeroMeanVector(v))
}

/// Coefficient `½ (2/M)^(1/p)` multiplying the L1 norm in the optimal
/// pre-normalizer's denominator.
pub fn theorem1_scale(p: f64, max_value: f64) -> f64 {
    0.5 * libm::pow(2.0 / max_value, 1.0 / p)
}

/// Choice of pre-normalizer.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "mode", rename_all = "snake_case"))]
pub enum PrenormSpec {
    /// Divide by `½ (2/(safety·M))^(1/p) Σ|x_i|`; the worst-case `Σ|y_i|^p`
    /// is `safety · M`.
    Theorem1 { p: f64, max_value: f64, safety: f64 },
    /// Divide by the mean absolute value `(1/n) Σ|x_i|`.
    Mad,
}

impl PrenormSpec {
    pub fn theorem1(p: f64, max_value: f64) -> Result<Self> {
        Self::theorem1_with_safety(p, max_value, 1.0)
    }

    pub fn theorem1_with_safety(p: f64, max_value: f64, safety: f64) -> Result<Self> {
        check_order(p)?;
        if !(max_value > 0.0 && max_value.is_finite()) {
            bail!(Domain, "max value M must be positive and finite, got {max_value}");
        }
        if !(safety > 0.0 && safety <= 1.0) {
            bail!(Domain, "safety fraction must be in (0, 1], got {safety}");
        }
        Ok(PrenormSpec::Theorem1 { p, max_value, safety })
    }

    pub fn mad() -> Self {
        PrenormSpec::Mad
    }

    /// Divisor applied to a centered vector.
    pub fn denominator(&self, x: &[f64]) -> f64 {
        let l1 = l1_norm(x);
        match *self {
            PrenormSpec::Theorem1 { p, max_value, safety } => theorem1_scale(p, safety * max_value) * l1,
            PrenormSpec::Mad => l1 / x.len() as f64,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PrenormSpec::Theorem1 { .. } => "theorem1",
            PrenormSpec::Mad => "mad",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrenormStatus {
    Scaled {
        denominator: f64,
    },
    /// Every entry was zero; the input is returned unchanged.
    AllZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prenormalized {
    pub values: Vec<f64>,
    pub status: PrenormStatus,
}

pub fn prenormalize(x: &ZeroMeanVector, spec: &PrenormSpec) -> Prenormalized {
    let denom = spec.denominator(x.as_slice());
    if denom == 0.0 {
        return Prenormalized { values: x.as_slice().to_vec(), status: PrenormStatus::AllZero };
    }
    Prenormalized {
        values: x.as_slice().iter().map(|v| v / denom).collect(),
        status: PrenormStatus::Scaled { denominator: denom },
    }
}

/// Result of a layer normalization evaluated in simulated precision.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilizedOutput {
    pub values: Vec<f64>,
    pub stats: OverflowStats,
    /// `None` when no pre-normalizer ran.
    pub prenorm: Option<PrenormStatus>,
}

/// Layer normalization as a low-precision device would run it.
///
/// With a pre-normalizer, `x` is centered and divided in `f64` first. The
/// result is then rounded into `precision` and normalized with every
/// elementary step rounded: each partial sum of the mean, the
/// mean, each difference, each square, each partial sum of squares, the
/// variance, `+ε`, the square root and each quotient. Partial sums follow
/// [`LayerNormSpec::accumulation`].
pub fn stabilized_layernorm(
    x: &[f64],
    prenorm: Option<&PrenormSpec>,
    spec: &LayerNormSpec,
    precision: Precision,
) -> Result<StabilizedOutput> {
    if x.is_empty() {
        bail!(Domain, "layernorm of an empty vector");
    }
    let mut stats = OverflowStats::default();
    let (mut values, status) = match prenorm {
        Some(pspec) => {
            let centered = ZeroMeanVector::centered(x)?;
            let pre = prenormalize(&centered, pspec);
            (pre.values, Some(pre.status))
        }
        None => (x.to_vec(), None),
    };
    precision.round_slice(&mut values, &mut stats);
    let values = rounded_layernorm(&values, spec, precision, &mut stats);
    Ok(StabilizedOutput { values, stats, prenorm: status })
}

fn rounded_layernorm(x: &[f64], spec: &LayerNormSpec, precision: Precision, stats: &mut OverflowStats) -> Vec<f64> {
    let n = x.len() as f64;
    let order = spec.accumulation;
    let sum = precision.sum(x, order, stats);
    let mean = precision.round(sum / n, stats);
    let diffs: Vec<f64> = x.iter().map(|v| precision.round(v - mean, stats)).collect();
    let squares: Vec<f64> = diffs.iter().map(|d| precision.round(d * d, stats)).collect();
    let sq_sum = precision.sum(&squares, order, stats);
    let var = precision.round(sq_sum / n, stats);
    let eps = precision.round_quiet(spec.epsilon);
    let shifted = precision.round(var + eps, stats);
    let std = precision.round(libm::sqrt(shifted), stats);
    diffs.iter().map(|d| precision.round(d / std, stats)).collect()
}

/// Search effort for [`lemma1_oracle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleBudget {
    /// Random starting vectors pushed through the merge procedure.
    pub merge_starts: usize,
    /// Random feasible vectors evaluated directly.
    pub samples: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget { merge_starts: 10_000, samples: 1_000_000 }
    }
}

/// Empirical maximum of `Σ|x_i|^p` over zero-mean vectors with L1 norm `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOutcome {
    pub max_value: f64,
    pub argmax: Vec<f64>,
    /// Best value reached by the merge procedure.
    pub merge_max: f64,
    /// Best value among the direct samples.
    pub sample_max: f64,
    pub merge_steps: u64,
    /// Merge steps after which `Σ|x_i|^p` went down.
    pub decreasing_steps: u64,
}

/// Brute-force search for the maximizer of `Σ|x_i|^p` on the zero-mean
/// L1-sphere of radius `l1` in `n` dimensions.
///
/// Two searches run: random feasible starts are driven to a local maximum by
/// repeatedly merging the two largest same-sign entries (which keeps the sum
/// and the L1 norm fixed), and independent random feasible points are
/// evaluated directly.
pub fn lemma1_oracle(n: usize, l1: f64, p: f64, budget: OracleBudget, seed: u64) -> Result<OracleOutcome> {
    check_order(p)?;
    if !(2..=8).contains(&n) {
        bail!(Domain, "oracle supports 2 <= n <= 8, got {n}");
    }
    if !(l1 >= 0.0 && l1.is_finite()) {
        bail!(Domain, "L1 norm must be finite and non-negative, got {l1}");
    }
    let mut rng = rng::seeded(seed);
    let mut buf = vec![0.0; n];
    let mut best = OracleOutcome {
        max_value: f64::NEG_INFINITY,
        argmax: vec![0.0; n],
        merge_max: f64::NEG_INFINITY,
        sample_max: f64::NEG_INFINITY,
        merge_steps: 0,
        decreasing_steps: 0,
    };

    for start in 0..budget.merge_starts {
        random_feasible(&mut rng, &mut buf, l1, start);
        let (steps, decreasing) = merge_to_spikes(&mut buf, p);
        best.merge_steps += steps;
        best.decreasing_steps += decreasing;
        let value = pow_sum(&buf, p);
        best.merge_max = best.merge_max.max(value);
        if value > best.max_value {
            best.max_value = value;
            best.argmax.copy_from_slice(&buf);
        }
    }
    for sample in 0..budget.samples {
        random_feasible(&mut rng, &mut buf, l1, sample);
        let value = pow_sum(&buf, p);
        best.sample_max = best.sample_max.max(value);
        if value > best.max_value {
            best.max_value = value;
            best.argmax.copy_from_slice(&buf);
        }
    }
    Ok(best)
}

fn pow_sum(x: &[f64], p: f64) -> f64 {
    x.iter().map(|v| libm::pow(libm::fabs(*v), p)).sum()
}

/// Fill `buf` with a random zero-mean vector of L1 norm `l1`, cycling through
/// Gaussian, uniform, sparse and heavy-tailed draws.
fn random_feasible<R: Rng>(rng: &mut R, buf: &mut [f64], l1: f64, round: usize) {
    let n = buf.len();
    loop {
        match round % 4 {
            0 => buf.iter_mut().for_each(|v| *v = rng::normal(rng)),
            1 => buf.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0)),
            2 => {
                buf.iter_mut().for_each(|v| *v = 0.0);
                let k = rng.random_range(2..=n);
                for _ in 0..k {
                    let i = rng.random_range(0..n);
                    buf[i] = rng::normal(rng);
                }
            }
            _ => buf.iter_mut().for_each(|v| {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                *v = sign / libm::sqrt(u);
            }),
        }
        let mean = buf.iter().sum::<f64>() / n as f64;
        buf.iter_mut().for_each(|v| *v -= mean);
        let norm = l1_norm(buf);
        if norm > 0.0 {
            buf.iter_mut().for_each(|v| *v *= l1 / norm);
            return;
        }
        if l1 == 0.0 {
            return;
        }
    }
}

/// One replacement step on the entries of one sign: the two largest
/// magnitudes `a >= b > 0` become `a + b` and `0`. Returns `false` when fewer
/// than two non-zero entries of that sign remain.
pub fn merge_step(x: &mut [f64], positive: bool) -> bool {
    let mut first: Option<usize> = None;
    let mut second: Option<usize> = None;
    for (i, &v) in x.iter().enumerate() {
        let hit = if positive { v > 0.0 } else { v < 0.0 };
        if !hit {
            continue;
        }
        let mag = libm::fabs(v);
        match first {
            Some(f) if libm::fabs(x[f]) >= mag => match second {
                Some(s) if libm::fabs(x[s]) >= mag => {}
                _ => second = Some(i),
            },
            _ => {
                second = first;
                first = Some(i);
            }
        }
    }
    match (first, second) {
        (Some(j), Some(k)) => {
            x[j] += x[k];
            x[k] = 0.0;
            true
        }
        _ => false,
    }
}

fn merge_to_spikes(x: &mut [f64], p: f64) -> (u64, u64) {
    let mut steps = 0;
    let mut decreasing = 0;
    let mut current = pow_sum(x, p);
    for positive in [true, false] {
        while merge_step(x, positive) {
            let next = pow_sum(x, p);
            steps += 1;
            if next < current * (1.0 - 1e-12) {
                decreasing += 1;
            }
            current = next;
        }
    }
    (steps, decreasing)
}

/// Sampling distribution for [`mad_monte_carlo`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleDistribution {
    /// `unif[-L, L]`.
    Uniform { half_width: f64 },
    /// `N(0, σ²)`.
    Gaussian { sigma: f64 },
}

impl SampleDistribution {
    /// Limit of the MAD denominator as the sample grows.
    pub fn expected_mean_abs(&self) -> f64 {
        match *self {
            SampleDistribution::Uniform { half_width } => half_width / 2.0,
            SampleDistribution::Gaussian { sigma } => libm::sqrt(2.0 / core::f64::consts::PI) * sigma,
        }
    }

    /// Bound the normalized values are expected to respect: 2 for the uniform
    /// case, and `4·sqrt(π/2) ≈ 5.01` (four standard deviations) for the
    /// Gaussian case.
    pub fn tail_threshold(&self) -> f64 {
        match self {
            SampleDistribution::Uniform { .. } => 2.0,
            SampleDistribution::Gaussian { .. } => 5.01,
        }
    }
}

/// Summary of a MAD normalization Monte-Carlo run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundStats {
    pub samples: usize,
    pub mean_abs: f64,
    pub expected_mean_abs: f64,
    pub max_abs_normalized: f64,
    pub tail_threshold: f64,
    /// Fraction of samples with `|f(x)| > tail_threshold`.
    pub tail_fraction: f64,
}

impl BoundStats {
    pub fn mean_abs_relative_error(&self) -> f64 {
        libm::fabs(self.mean_abs - self.expected_mean_abs) / self.expected_mean_abs
    }
}

/// Draw `samples` values, normalize them by their empirical mean absolute
/// value and summarize the result.
pub fn mad_monte_carlo(dist: SampleDistribution, samples: usize, seed: u64) -> Result<BoundStats> {
    if samples < 10_000 {
        bail!(Domain, "Monte-Carlo run needs at least 10^4 samples, got {samples}");
    }
    let mut rng = rng::seeded(seed);
    let xs: Vec<f64> = match dist {
        SampleDistribution::Uniform { half_width } => {
            if !(half_width > 0.0 && half_width.is_finite()) {
                bail!(Domain, "uniform half-width must be positive, got {half_width}");
            }
            let u = Uniform::new_inclusive(-half_width, half_width)
                .map_err(|e| crate::Error::Domain(alloc::format!("{e}")))?;
            u.sample_iter(&mut rng).take(samples).collect()
        }
        SampleDistribution::Gaussian { sigma } => {
            if !(sigma > 0.0 && sigma.is_finite()) {
                bail!(Domain, "sigma must be positive, got {sigma}");
            }
            let g = Normal::new(0.0, sigma).map_err(|e| crate::Error::Domain(alloc::format!("{e}")))?;
            g.sample_iter(&mut rng).take(samples).collect()
        }
    };
    let mean_abs = l1_norm(&xs) / samples as f64;
    let threshold = dist.tail_threshold();
    let mut max_abs: f64 = 0.0;
    let mut tail = 0usize;
    for x in &xs {
        let f = libm::fabs(x / mean_abs);
        max_abs = max_abs.max(f);
        if f > threshold {
            tail += 1;
        }
    }
    Ok(BoundStats {
        samples,
        mean_abs,
        expected_mean_abs: dist.expected_mean_abs(),
        max_abs_normalized: max_abs,
        tail_threshold: threshold,
        tail_fraction: tail as f64 / samples as f64,
    })
}
