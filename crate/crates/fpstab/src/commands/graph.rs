//! `rewrite-graph`: run rewrite passes over an attention graph and report
//! what they removed.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use fpstab_core::graphir::{
    apply_passes, build_mha_reference, count_interior_ops, count_ops, equivalence, memory_copy_score, random_bindings,
    Graph, MhaParams, OpKind, Pass,
};
use serde::Serialize;

use super::Outcome;
use crate::config::{GraphSection, RunConfig};
use crate::error::{CliError, Result};
use crate::report::{write_atomic, write_json};

/// Largest output difference accepted by `--check`.
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GraphMetrics {
    pub nodes: usize,
    pub memory_copy_score: usize,
    pub interior_transposes: usize,
    pub interior_reshapes: usize,
    pub op_counts: BTreeMap<String, usize>,
}

impl GraphMetrics {
    pub fn of(g: &Graph) -> Self {
        GraphMetrics {
            nodes: g.nodes.len(),
            memory_copy_score: memory_copy_score(g),
            interior_transposes: count_interior_ops(g, &[OpKind::Transpose]),
            interior_reshapes: count_interior_ops(g, &[OpKind::Reshape]),
            op_counts: OpKind::ALL
                .iter()
                .map(|k| (k.name().to_string(), count_ops(g, &[*k])))
                .filter(|(_, c)| *c > 0)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Equivalence {
    pub seed: u64,
    pub max_abs_diff: f64,
    pub tolerance: f64,
    pub equivalent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewriteReport {
    pub source: String,
    pub passes: Vec<String>,
    pub before: GraphMetrics,
    pub after: GraphMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<Equivalence>,
}

/// Expand the configured pass names. `all` stands for the full pipeline
/// with one chunk per head; an empty entry is skipped.
pub fn parse_passes(g: &GraphSection) -> Result<Vec<Pass>> {
    let mut out = Vec::new();
    for name in g.passes.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        if name == "all" {
            out.extend([Pass::Layout, Pass::Einsum]);
            out.push(format!("chunk:{}", g.heads).parse()?);
        } else {
            out.push(name.parse()?);
        }
    }
    Ok(out)
}

/// The configured input graph: the built-in attention block or a JSON file.
pub fn source_graph(g: &GraphSection) -> Result<Graph> {
    if g.source == "mha" {
        return Ok(build_mha_reference(&MhaParams::new(g.bz, g.heads, g.dim, g.seq)?));
    }
    let path = Path::new(&g.source);
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let graph: Graph = serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        location: format!("line {}, column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    graph.validate()?;
    Ok(graph)
}

/// Rewrite without touching the filesystem.
pub fn rewrite(cfg: &RunConfig) -> Result<(Graph, Graph, RewriteReport)> {
    let before = source_graph(&cfg.graph)?;
    let passes = parse_passes(&cfg.graph)?;
    let after = apply_passes(&before, &passes)?;
    let equivalence = if cfg.check {
        let bindings = random_bindings(&before, cfg.seed, 1.0);
        let diff = equivalence(&before, &after, &bindings)?;
        Some(Equivalence {
            seed: cfg.seed,
            max_abs_diff: diff,
            tolerance: EQUIVALENCE_TOLERANCE,
            equivalent: diff <= EQUIVALENCE_TOLERANCE,
        })
    } else {
        None
    };
    let report = RewriteReport {
        source: cfg.graph.source.clone(),
        passes: passes.iter().map(|p| p.to_string()).collect(),
        before: GraphMetrics::of(&before),
        after: GraphMetrics::of(&after),
        equivalence,
    };
    Ok((before, after, report))
}

pub fn run(cfg: &RunConfig) -> Result<Outcome> {
    let (before, after, report) = rewrite(cfg)?;
    let mut files = Vec::new();
    for (name, g) in [("graph-before", &before), ("graph-after", &after)] {
        let path = cfg.out_path(&format!("{name}.json"));
        write_json(&path, g)?;
        files.push(path);
        if cfg.graph.dot {
            let path = cfg.out_path(&format!("{name}.dot"));
            write_atomic(&path, g.to_dot().as_bytes())?;
            files.push(path);
        }
    }
    let metrics = cfg.out_path("graph-metrics.json");
    write_json(&metrics, &report)?;
    files.push(metrics);
    let violations = match &report.equivalence {
        Some(e) if !e.equivalent => {
            vec![format!("rewritten graph differs by {} (tolerance {})", e.max_abs_diff, e.tolerance)]
        }
        _ => Vec::new(),
    };
    Ok(Outcome { files, violations })
}
