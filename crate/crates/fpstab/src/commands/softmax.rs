//! `audit-softmax`: argmax preservation, normalization and table accuracy
//! of the table-driven softmax over the rows of a stream.

use fpstab_core::softmax::{argmax, conditional_rescale, ExpLut, LutSoftmax, SoftmaxRescaleSpec};
use fpstab_core::{FloatFormat, OverflowStats, Precision};
use rayon::prelude::*;
use serde::Serialize;

use super::{input_stream, Outcome};
use crate::config::RunConfig;
use crate::error::Result;
use crate::lut;
use crate::report::{fraction, write_json};

/// Samples of the table-error scan over its domain.
pub const LUT_SCAN_STEPS: usize = 200_000;
pub const LUT_TOLERANCE: f64 = 1e-3;

/// Allowed `|Σy - 1|` for a row under `precision`.
pub fn sum_tolerance(precision: Precision) -> f64 {
    match precision {
        Precision::Exact => 1e-12,
        Precision::Simulated(f) if f.mantissa_bits() == 10 => 1e-3,
        Precision::Simulated(f) if f.mantissa_bits() == 23 => 1e-6,
        Precision::Simulated(f) => 2f64.powi(1 - f.mantissa_bits() as i32),
    }
}

/// How the output of one row treats the input's largest entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArgmaxClass {
    /// The top two rescaled inputs are within one unit in the last place.
    NotUnique,
    /// The output's first largest entry is the input's.
    Preserved,
    /// Another output entry equals the top one.
    Tied,
    /// Another output entry is larger.
    Overtaken,
}

/// Classify `y = softmax(x)`. Inputs count as having a unique maximum when
/// the rescaled leader beats the runner-up by more than one ulp of `format`
/// at the leader's magnitude.
pub fn classify(x: &[f64], y: &[f64], spec: &SoftmaxRescaleSpec, precision: Precision) -> ArgmaxClass {
    if x.len() < 2 {
        return ArgmaxClass::Preserved;
    }
    let mut r = conditional_rescale(x, spec);
    r.sort_by(|a, b| b.total_cmp(a));
    let gap = match precision {
        Precision::Exact => 0.0,
        Precision::Simulated(f) => unit_at(&f, r[0]),
    };
    if r[0] - r[1] <= gap {
        return ArgmaxClass::NotUnique;
    }
    let top = argmax(x).expect("non-empty");
    if y.iter().any(|v| *v > y[top]) {
        ArgmaxClass::Overtaken
    } else if argmax(y) != Some(top) || y.iter().enumerate().any(|(i, v)| i != top && *v == y[top]) {
        ArgmaxClass::Tied
    } else {
        ArgmaxClass::Preserved
    }
}

fn unit_at(f: &FloatFormat, v: f64) -> f64 {
    let m = v.abs().clamp(f.min_normal(), f.max_finite());
    f.ulp(m).expect("clamped into range")
}

/// Largest relative error of the table against `exp` on an even grid over
/// its domain.
pub fn lut_max_relative_error(table: &ExpLut, steps: usize) -> f64 {
    let (lo, hi) = table.domain();
    (0..=steps)
        .into_par_iter()
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / steps as f64;
            (table.eval(x) - x.exp()).abs() / x.exp()
        })
        .reduce(|| 0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoftmaxAudit {
    pub format: String,
    pub threshold: f64,
    pub subtract_max: bool,
    pub accumulation: String,
    pub lut_domain: [f64; 2],
    pub lut_entries: usize,
    pub lut_interpolation: String,
    pub lut_max_relative_error: f64,
    pub lut_tolerance: f64,
    pub rows: u64,
    pub unique_max_rows: u64,
    pub argmax_preserved: u64,
    pub argmax_preserved_fraction: f64,
    pub argmax_tied: u64,
    pub argmax_overtaken: u64,
    pub sum_tolerance: f64,
    pub max_sum_error: f64,
    pub sum_violations: u64,
    pub overflow: u64,
    pub underflow: u64,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    rows: u64,
    unique: u64,
    preserved: u64,
    tied: u64,
    overtaken: u64,
    max_sum_err: f64,
    sum_bad: u64,
    stats: OverflowStats,
}

impl Tally {
    fn merge(mut self, o: Tally) -> Tally {
        self.rows += o.rows;
        self.unique += o.unique;
        self.preserved += o.preserved;
        self.tied += o.tied;
        self.overtaken += o.overtaken;
        self.max_sum_err = self.max_sum_err.max(o.max_sum_err);
        self.sum_bad += o.sum_bad;
        self.stats += o.stats;
        self
    }
}

/// Table described by the config: loaded from disk when a path is set.
pub fn configured_lut(cfg: &RunConfig) -> Result<ExpLut> {
    let s = &cfg.softmax;
    match &s.lut {
        Some(path) => lut::load(path),
        None => Ok(ExpLut::new(s.lut_lo, s.lut_hi, s.lut_entries, s.interpolation)?),
    }
}

/// Audit `rows` without touching the filesystem.
pub fn audit<'a>(
    rows: impl IntoParallelIterator<Item = &'a [f64]>,
    cfg: &RunConfig,
    table: &ExpLut,
) -> Result<SoftmaxAudit> {
    let precision = cfg.precision()?;
    let spec = cfg.softmax_spec()?;
    let tol = sum_tolerance(precision);
    let sm = LutSoftmax { spec, lut: table.clone() };
    let t = rows
        .into_par_iter()
        .map(|x| {
            let mut t = Tally { rows: 1, ..Tally::default() };
            let y = sm.apply(x, precision, &mut t.stats);
            match classify(x, &y, &spec, precision) {
                ArgmaxClass::NotUnique => {}
                c => {
                    t.unique = 1;
                    match c {
                        ArgmaxClass::Preserved => t.preserved = 1,
                        ArgmaxClass::Tied => t.tied = 1,
                        _ => t.overtaken = 1,
                    }
                }
            }
            let err = (y.iter().sum::<f64>() - 1.0).abs();
            t.max_sum_err = if err.is_nan() { f64::INFINITY } else { err };
            t.sum_bad = (err.is_nan() || err > tol) as u64;
            t
        })
        .reduce(Tally::default, Tally::merge);
    let (lo, hi) = table.domain();
    Ok(SoftmaxAudit {
        format: cfg.format.clone(),
        threshold: spec.threshold(),
        subtract_max: spec.subtract_max(),
        accumulation: spec.accumulation().name().into(),
        lut_domain: [lo, hi],
        lut_entries: table.entries(),
        lut_interpolation: table.interpolation().name().into(),
        lut_max_relative_error: lut_max_relative_error(table, LUT_SCAN_STEPS),
        lut_tolerance: LUT_TOLERANCE,
        rows: t.rows,
        unique_max_rows: t.unique,
        argmax_preserved: t.preserved,
        argmax_preserved_fraction: fraction(t.preserved, t.unique),
        argmax_tied: t.tied,
        argmax_overtaken: t.overtaken,
        sum_tolerance: tol,
        max_sum_error: t.max_sum_err,
        sum_violations: t.sum_bad,
        overflow: t.stats.overflow,
        underflow: t.stats.underflow,
    })
}

/// Overtaken maxima, unnormalized rows and an inaccurate table. Ties are
/// reported but not counted: they come from the output format's resolution.
pub fn violations(a: &SoftmaxAudit) -> Vec<String> {
    let mut out = Vec::new();
    if a.argmax_overtaken > 0 {
        out.push(format!("{} rows had their maximum overtaken", a.argmax_overtaken));
    }
    if a.sum_violations > 0 {
        out.push(format!("{} rows sum further than {} from 1", a.sum_violations, a.sum_tolerance));
    }
    if a.lut_max_relative_error.is_nan() || a.lut_max_relative_error > LUT_TOLERANCE {
        out.push(format!("table relative error {} exceeds {LUT_TOLERANCE}", a.lut_max_relative_error));
    }
    out
}

pub fn run(cfg: &RunConfig, dump_lut: Option<&std::path::Path>) -> Result<Outcome> {
    let stream = input_stream(cfg)?;
    let table = configured_lut(cfg)?;
    let rows: Vec<&[f64]> = stream.chunks.iter().flat_map(|c| c.rows()).collect();
    let report = audit(rows, cfg, &table)?;
    let mut files = Vec::new();
    if let Some(path) = dump_lut {
        lut::save(path, &table)?;
        files.push(path.to_path_buf());
    }
    let json = cfg.out_path("softmax-audit.json");
    write_json(&json, &report)?;
    files.push(json);
    Ok(Outcome { files, violations: violations(&report) })
}
