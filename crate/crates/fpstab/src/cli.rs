//! Command-line definition and dispatch.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, Outcome};
use crate::config::{PrenormMode, RunConfig};
use crate::error::{CliError, Result};
use crate::gen::{Dtype, StreamKind};

#[derive(Debug, Parser)]
#[command(name = "fpstab", version, about = "Low-precision stability audits and attention graph rewrites")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every command; each overrides the config file.
#[derive(Debug, Args, Default)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// fp16, fp32, bf16, custom:<mantissa>,<exponent> (optionally +ftz), or exact.
    #[arg(long, global = true)]
    pub format: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub prenorm: Option<PrenormMode>,
    /// Norm order of the theorem1 pre-normalizer.
    #[arg(long, global = true)]
    pub p: Option<f64>,
    /// Fraction of the format maximum the theorem1 pre-normalizer targets, in (0, 1].
    #[arg(long, global = true)]
    pub safety: Option<f64>,
    /// sequential, pairwise or compensated.
    #[arg(long, global = true)]
    pub accumulation: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub chunks: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Exit with status 1 when an invariant is violated.
    #[arg(long, global = true)]
    pub check: bool,
}

/// Where the audit commands read from.
#[derive(Debug, Args, Default)]
pub struct StreamArgs {
    /// Stream file; a seeded synthetic stream is used without it.
    #[arg(long)]
    pub stream: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<StreamKind>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Brute-force checks of the pre-normalizer bounds.
    VerifyTheory {
        #[arg(long)]
        n_max: Option<usize>,
        #[arg(long)]
        vectors: Option<usize>,
        #[arg(long)]
        oracle_n_max: Option<usize>,
        #[arg(long)]
        oracle_starts: Option<usize>,
        #[arg(long)]
        oracle_samples: Option<usize>,
        #[arg(long)]
        mc_samples: Option<usize>,
        /// Multiply the pre-normalizer scale, as a negative control.
        #[arg(long, hide = true)]
        corrupt_scale: Option<f64>,
    },
    /// Write a seeded synthetic stream.
    GenStream {
        #[arg(long, value_enum)]
        kind: Option<StreamKind>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        #[arg(long)]
        scale: Option<f64>,
        #[arg(long, value_enum)]
        dtype: Option<Dtype>,
        /// Write the CSV form instead of binary blocks.
        #[arg(long)]
        csv: bool,
        /// Output file; defaults to the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Overflow audit of rounded layernorm.
    AuditLayernorm {
        #[command(flatten)]
        input: StreamArgs,
    },
    /// Argmax, normalization and table accuracy of the table-driven softmax.
    AuditSoftmax {
        #[command(flatten)]
        input: StreamArgs,
        #[arg(long)]
        threshold: Option<f64>,
        /// Exponential table to load.
        #[arg(long)]
        lut: Option<PathBuf>,
        #[arg(long)]
        lut_entries: Option<usize>,
        /// Save the table in use to this file.
        #[arg(long)]
        dump_lut: Option<PathBuf>,
    },
    /// Dynamic range of the subsampling stacks and their MAC costs.
    ProfileConv {
        #[command(flatten)]
        input: StreamArgs,
        /// Comma-separated preset names.
        #[arg(long, value_delimiter = ',')]
        configs: Option<Vec<String>>,
        /// Channel width of the profiled stacks.
        #[arg(long)]
        width: Option<usize>,
    },
    /// Rewrite an attention graph.
    RewriteGraph {
        /// `mha` or a graph JSON file.
        #[arg(long)]
        graph: Option<String>,
        /// Comma-separated passes: layout, einsum, chunk:<n>, chunk-query:<n>,
        /// or all. An empty list runs nothing.
        #[arg(long)]
        passes: Option<String>,
        #[arg(long)]
        bz: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        seq: Option<usize>,
        /// Also write Graphviz files.
        #[arg(long)]
        dot: bool,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::VerifyTheory { .. } => "verify-theory",
            Command::GenStream { .. } => "gen-stream",
            Command::AuditLayernorm { .. } => "audit-layernorm",
            Command::AuditSoftmax { .. } => "audit-softmax",
            Command::ProfileConv { .. } => "profile-conv",
            Command::RewriteGraph { .. } => "rewrite-graph",
        }
    }

    /// Whether violations fail the run even without `--check`.
    fn always_checks(&self) -> bool {
        matches!(self, Command::VerifyTheory { .. })
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn apply_stream(cfg: &mut RunConfig, a: &StreamArgs) {
    let s = &mut cfg.stream;
    if a.stream.is_some() {
        s.path = a.stream.clone();
    }
    set(&mut s.kind, a.kind);
    set(&mut s.rows, a.rows);
    set(&mut s.cols, a.cols);
    if a.scale.is_some() {
        s.scale = a.scale;
    }
}

impl Cli {
    /// Merge the config file, global flags and command flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let g = &self.global;
        let mut cfg = match &g.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(cmd) = &cfg.command {
            if cmd != self.command.name() {
                return Err(CliError::usage(format!("config file is for '{cmd}', not '{}'", self.command.name())));
            }
        }
        set(&mut cfg.format, g.format.clone());
        set(&mut cfg.prenorm, g.prenorm);
        set(&mut cfg.p, g.p);
        set(&mut cfg.safety, g.safety);
        if let Some(a) = &g.accumulation {
            cfg.accumulation = a.parse()?;
        }
        set(&mut cfg.seed, g.seed);
        if g.chunks.is_some() {
            cfg.chunks = g.chunks;
        }
        set(&mut cfg.out_dir, g.out_dir.clone());
        cfg.check |= g.check;

        match &self.command {
            Command::VerifyTheory {
                n_max, vectors, oracle_n_max, oracle_starts, oracle_samples, mc_samples, ..
            } => {
                let v = &mut cfg.verify;
                set(&mut v.n_max, *n_max);
                set(&mut v.vectors, *vectors);
                set(&mut v.oracle_n_max, *oracle_n_max);
                set(&mut v.oracle_starts, *oracle_starts);
                set(&mut v.oracle_samples, *oracle_samples);
                set(&mut v.mc_samples, *mc_samples);
            }
            Command::GenStream { kind, rows, cols, scale, dtype, csv, .. } => {
                apply_stream(
                    &mut cfg,
                    &StreamArgs { stream: None, kind: *kind, rows: *rows, cols: *cols, scale: *scale },
                );
                set(&mut cfg.stream.dtype, *dtype);
                cfg.stream.csv |= csv;
            }
            Command::AuditLayernorm { input } => apply_stream(&mut cfg, input),
            Command::AuditSoftmax { input, threshold, lut, lut_entries, .. } => {
                apply_stream(&mut cfg, input);
                set(&mut cfg.softmax.threshold, *threshold);
                if lut.is_some() {
                    cfg.softmax.lut = lut.clone();
                }
                set(&mut cfg.softmax.lut_entries, *lut_entries);
            }
            Command::ProfileConv { input, configs, width } => {
                apply_stream(&mut cfg, input);
                set(&mut cfg.conv.configs, configs.clone());
                set(&mut cfg.conv.width, *width);
            }
            Command::RewriteGraph { graph, passes, bz, heads, dim, seq, dot } => {
                let gs = &mut cfg.graph;
                set(&mut gs.source, graph.clone());
                if let Some(p) = passes {
                    gs.passes = p.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                }
                set(&mut gs.bz, *bz);
                set(&mut gs.heads, *heads);
                set(&mut gs.dim, *dim);
                set(&mut gs.seq, *seq);
                gs.dot |= dot;
            }
        }
        // Fail early on a bad format name.
        cfg.precision()?;
        Ok(cfg)
    }

    /// Run the command. Violations become [`CliError::Violation`] when they
    /// count toward the exit status.
    pub fn run(&self) -> Result<Outcome> {
        let cfg = self.resolve()?;
        let outcome = match &self.command {
            Command::VerifyTheory { corrupt_scale, .. } => {
                commands::verify::run_command(&cfg, corrupt_scale.unwrap_or(1.0))?
            }
            Command::GenStream { out, .. } => commands::gen_stream(&cfg, out.clone())?,
            Command::AuditLayernorm { .. } => commands::layernorm::run(&cfg)?,
            Command::AuditSoftmax { dump_lut, .. } => commands::softmax::run(&cfg, dump_lut.as_deref())?,
            Command::ProfileConv { .. } => commands::conv::run(&cfg)?,
            Command::RewriteGraph { .. } => commands::graph::run(&cfg)?,
        };
        Ok(outcome)
    }

    /// Whether `outcome`'s violations fail this invocation.
    pub fn fails(&self, outcome: &Outcome) -> Result<bool> {
        let check = self.global.check || self.resolve()?.check;
        Ok(!outcome.violations.is_empty() && (check || self.command.always_checks()))
    }
}
