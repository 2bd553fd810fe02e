//! Tensor-computation IR for attention blocks, with rewrite passes and a
//! reference interpreter.
//!
//! A [`Graph`] is a topologically ordered list of [`Node`]s; node ids are
//! list positions and edges are [`PortRef`]s into earlier nodes. Passes
//! never mutate their input: each returns a fresh, compacted graph.
//!
//! - [`pass_layout`] moves a `(batch, seq, feature)` graph into the
//!   `(batch, channel, 1, seq)` format, leaving layout adapters only next to
//!   graph inputs and outputs.
//! - [`pass_einsum`] turns batched matmuls into einsums and folds adjacent
//!   transposes and reshapes into them.
//! - [`pass_chunk`] splits the attention core into parallel branches.

mod einsum;
mod exec;
mod passes;
mod tensor;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::str::FromStr;

pub use self::einsum::EinsumEquation;
pub use self::exec::{equivalence, execute, Execution, NodeReport};
pub use self::passes::{apply_passes, pass_chunk, pass_einsum, pass_layout, ChunkAxis, Pass};
pub use self::tensor::Tensor;

use self::tensor::{check_perm, numel};
use crate::error::{bail, Error, Result};
use crate::rng;

/// Named tensors bound to graph inputs and parameters.
pub type Bindings = BTreeMap<String, Tensor>;

/// Physical tensor format of a graph's interior values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Layout {
    /// `(batch, sequence, feature)`.
    #[cfg_attr(feature = "serde", serde(rename = "BSF"))]
    Bsf,
    /// `(batch, channel, 1, sequence)`.
    #[cfg_attr(feature = "serde", serde(rename = "BC1S"))]
    Bc1s,
}

impl Layout {
    pub fn name(&self) -> &'static str {
        match self {
            Layout::Bsf => "BSF",
            Layout::Bc1s => "BC1S",
        }
    }
}

/// Extents and layout tag of one value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub dims: Vec<usize>,
    pub layout: Layout,
}

/// Operation carried by a node.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "op", rename_all = "snake_case"))]
pub enum Op {
    Input {
        name: String,
        dims: Vec<usize>,
    },
    Output {
        name: String,
    },
    /// `y = x Wᵀ + b` over the last axis; `W` is `(out, in)`.
    Linear {
        weight: String,
        bias: Option<String>,
    },
    /// Pointwise convolution on `(B, C, 1, S)`; `W` is `(out, in)`.
    Conv1x1 {
        weight: String,
        bias: Option<String>,
    },
    Reshape {
        dims: Vec<usize>,
    },
    /// Output axis `j` is input axis `perm[j]`.
    Transpose {
        perm: Vec<usize>,
    },
    /// Equal parts along `axis`; output port `k` is part `k`.
    Split {
        axis: usize,
        parts: usize,
    },
    Concat {
        axis: usize,
    },
    /// Matmul over the last two axes with matching leading axes.
    BatchedMatmul {
        transpose_a: bool,
        transpose_b: bool,
    },
    /// Two-operand contraction. Each operand may first be reinterpreted
    /// under a row-major `view`, and the result under `output_view`.
    Einsum {
        equation: EinsumEquation,
        views: [Option<Vec<usize>>; 2],
        output_view: Option<Vec<usize>>,
    },
    Scale {
        factor: f64,
    },
    Softmax {
        axis: usize,
    },
    LayerNorm {
        axis: usize,
        epsilon: f64,
    },
    Add,
}

/// Op discriminant, used for counting and filtering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Input,
    Output,
    Linear,
    Conv1x1,
    Reshape,
    Transpose,
    Split,
    Concat,
    BatchedMatmul,
    Einsum,
    Scale,
    Softmax,
    LayerNorm,
    Add,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::Input,
        OpKind::Output,
        OpKind::Linear,
        OpKind::Conv1x1,
        OpKind::Reshape,
        OpKind::Transpose,
        OpKind::Split,
        OpKind::Concat,
        OpKind::BatchedMatmul,
        OpKind::Einsum,
        OpKind::Scale,
        OpKind::Softmax,
        OpKind::LayerNorm,
        OpKind::Add,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Output => "output",
            OpKind::Linear => "linear",
            OpKind::Conv1x1 => "conv1x1",
            OpKind::Reshape => "reshape",
            OpKind::Transpose => "transpose",
            OpKind::Split => "split",
            OpKind::Concat => "concat",
            OpKind::BatchedMatmul => "batched_matmul",
            OpKind::Einsum => "einsum",
            OpKind::Scale => "scale",
            OpKind::Softmax => "softmax",
            OpKind::LayerNorm => "layernorm",
            OpKind::Add => "add",
        }
    }

    /// Reshape and transpose: ops that only move data.
    pub fn is_memory_op(&self) -> bool {
        matches!(self, OpKind::Reshape | OpKind::Transpose)
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::Graph(format!("unknown op kind '{s}'")))
    }
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Input { .. } => OpKind::Input,
            Op::Output { .. } => OpKind::Output,
            Op::Linear { .. } => OpKind::Linear,
            Op::Conv1x1 { .. } => OpKind::Conv1x1,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::Split { .. } => OpKind::Split,
            Op::Concat { .. } => OpKind::Concat,
            Op::BatchedMatmul { .. } => OpKind::BatchedMatmul,
            Op::Einsum { .. } => OpKind::Einsum,
            Op::Scale { .. } => OpKind::Scale,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Add => OpKind::Add,
        }
    }

    /// Number of output ports.
    pub fn outputs(&self) -> usize {
        match self {
            Op::Output { .. } => 0,
            Op::Split { parts, .. } => *parts,
            _ => 1,
        }
    }

    fn check_arity(&self, n: usize) -> Result<()> {
        let ok = match self {
            Op::Input { .. } => n == 0,
            Op::Concat { .. } => n >= 1,
            Op::BatchedMatmul { .. } | Op::Einsum { .. } | Op::Add => n == 2,
            _ => n == 1,
        };
        if !ok {
            bail!(Graph, "{} node given {n} inputs", self.kind().name());
        }
        Ok(())
    }
}

/// Reference to output `port` of node `node`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PortRef {
    pub node: usize,
    pub port: usize,
}

impl PortRef {
    pub fn of(node: usize) -> Self {
        PortRef { node, port: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Node {
    #[cfg_attr(feature = "serde", serde(flatten))]
    pub op: Op,
    #[cfg_attr(feature = "serde", serde(default))]
    pub inputs: Vec<PortRef>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Graph {
    pub layout: Layout,
    /// Parameter names and extents; values arrive through [`Bindings`].
    pub params: BTreeMap<String, Vec<usize>>,
    pub nodes: Vec<Node>,
}

impl Graph {
    pub fn new(layout: Layout) -> Self {
        Graph { layout, params: BTreeMap::new(), nodes: Vec::new() }
    }

    /// Append a node and return a reference to its first output.
    pub fn push(&mut self, op: Op, inputs: Vec<PortRef>) -> PortRef {
        self.nodes.push(Node { op, inputs });
        PortRef::of(self.nodes.len() - 1)
    }

    pub fn add_param(&mut self, name: impl Into<String>, dims: Vec<usize>) {
        self.params.insert(name.into(), dims);
    }

    /// `(name, dims)` of every input node, in node order.
    pub fn inputs(&self) -> Vec<(&str, &[usize])> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Input { name, dims } => Some((name.as_str(), dims.as_slice())),
                _ => None,
            })
            .collect()
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Output { name } => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// For every port, the `(node, input slot)` pairs that read it.
    pub fn consumers(&self) -> BTreeMap<PortRef, Vec<(usize, usize)>> {
        let mut map: BTreeMap<PortRef, Vec<(usize, usize)>> = BTreeMap::new();
        for (id, n) in self.nodes.iter().enumerate() {
            for (slot, p) in n.inputs.iter().enumerate() {
                map.entry(*p).or_default().push((id, slot));
            }
        }
        map
    }

    /// Drop nodes that no output depends on (inputs are kept) and renumber.
    pub fn compact(&self) -> Graph {
        let mut live = vec![false; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate().rev() {
            if matches!(n.op, Op::Output { .. } | Op::Input { .. }) {
                live[i] = true;
            }
            if live[i] {
                for p in &n.inputs {
                    if p.node < live.len() {
                        live[p.node] = true;
                    }
                }
            }
        }
        let mut remap = vec![usize::MAX; self.nodes.len()];
        let mut nodes = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if live[i] {
                remap[i] = nodes.len();
                nodes.push(Node {
                    op: n.op.clone(),
                    inputs: n.inputs.iter().map(|p| PortRef { node: remap[p.node], port: p.port }).collect(),
                });
            }
        }
        Graph { layout: self.layout, params: self.params.clone(), nodes }
    }

    fn param(&self, name: &str) -> Result<&[usize]> {
        match self.params.get(name) {
            Some(d) => Ok(d),
            None => bail!(Graph, "unknown parameter '{name}'"),
        }
    }

    /// Output specs of every node, checking edges, arity, attributes and
    /// shapes along the way.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<TensorSpec>>> {
        let mut specs: Vec<Vec<TensorSpec>> = Vec::with_capacity(self.nodes.len());
        let mut names = (Vec::new(), Vec::new());
        for (id, node) in self.nodes.iter().enumerate() {
            node.op.check_arity(node.inputs.len())?;
            let mut ins = Vec::with_capacity(node.inputs.len());
            for p in &node.inputs {
                if p.node >= id {
                    bail!(Graph, "node {id} reads node {} which does not precede it", p.node);
                }
                match specs[p.node].get(p.port) {
                    Some(s) => ins.push(s.dims.as_slice()),
                    None => bail!(Graph, "node {id} reads missing port {} of node {}", p.port, p.node),
                }
            }
            match &node.op {
                Op::Input { name, .. } => names.0.push(name.clone()),
                Op::Output { name } => names.1.push(name.clone()),
                _ => {}
            }
            let dims = self
                .node_output_dims(&node.op, &ins)
                .map_err(|e| Error::Graph(format!("node {id} ({}): {e}", node.op.kind().name())))?;
            specs.push(dims.into_iter().map(|dims| TensorSpec { dims, layout: self.layout }).collect());
        }
        for list in [&mut names.0, &mut names.1] {
            list.sort();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                bail!(Graph, "duplicate input or output name '{}'", w[0]);
            }
        }
        Ok(specs)
    }

    fn node_output_dims(&self, op: &Op, ins: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        let one = |d: Vec<usize>| Ok(vec![d]);
        match op {
            Op::Input { dims, .. } => {
                if dims.is_empty() || dims.contains(&0) {
                    bail!(Shape, "input extents must be positive, got {dims:?}");
                }
                one(dims.clone())
            }
            Op::Output { .. } => Ok(Vec::new()),
            Op::Linear { weight, bias } => {
                let x = ins[0];
                let w = self.param(weight)?;
                let last = x.last().copied().unwrap_or(0);
                if w.len() != 2 || w[1] != last {
                    bail!(Shape, "weight {w:?} does not accept input {x:?}");
                }
                self.check_bias(bias, w[0])?;
                let mut d = x.to_vec();
                *d.last_mut().expect("rank checked") = w[0];
                one(d)
            }
            Op::Conv1x1 { weight, bias } => {
                let x = ins[0];
                let w = self.param(weight)?;
                if x.len() != 4 || x[2] != 1 {
                    bail!(Shape, "conv1x1 expects (B, C, 1, S), got {x:?}");
                }
                if w.len() != 2 || w[1] != x[1] {
                    bail!(Shape, "weight {w:?} does not accept input {x:?}");
                }
                self.check_bias(bias, w[0])?;
                one(vec![x[0], w[0], 1, x[3]])
            }
            Op::Reshape { dims } => {
                if dims.contains(&0) || numel(dims) != numel(ins[0]) {
                    bail!(Shape, "cannot reshape {:?} into {dims:?}", ins[0]);
                }
                one(dims.clone())
            }
            Op::Transpose { perm } => {
                check_perm(perm, ins[0].len())?;
                one(perm.iter().map(|&p| ins[0][p]).collect())
            }
            Op::Split { axis, parts } => {
                let x = ins[0];
                if *axis >= x.len() || *parts == 0 || !x[*axis].is_multiple_of(*parts) {
                    bail!(Shape, "cannot split {x:?} into {parts} parts on axis {axis}");
                }
                let mut d = x.to_vec();
                d[*axis] /= parts;
                Ok(vec![d; *parts])
            }
            Op::Concat { axis } => {
                let first = ins[0];
                if *axis >= first.len() {
                    bail!(Shape, "concat axis {axis} out of range for {first:?}");
                }
                let mut d = first.to_vec();
                d[*axis] = 0;
                for x in ins {
                    let same = x.len() == first.len()
                        && x.iter().zip(first.iter()).enumerate().all(|(i, (a, b))| i == *axis || a == b);
                    if !same {
                        bail!(Shape, "cannot concat {x:?} with {first:?} on axis {axis}");
                    }
                    d[*axis] += x[*axis];
                }
                one(d)
            }
            Op::BatchedMatmul { transpose_a, transpose_b } => {
                one(bmm_dims(ins[0], ins[1], *transpose_a, *transpose_b)?)
            }
            Op::Einsum { equation, views, output_view } => {
                let mut dims: [&[usize]; 2] = [ins[0], ins[1]];
                for (i, v) in views.iter().enumerate() {
                    if let Some(v) = v {
                        if numel(v) != numel(ins[i]) || v.contains(&0) {
                            bail!(Shape, "view {v:?} does not fit operand {:?}", ins[i]);
                        }
                        dims[i] = v;
                    }
                }
                let out = equation.output_dims(dims[0], dims[1])?;
                match output_view {
                    Some(v) if numel(v) != numel(&out) || v.contains(&0) => {
                        bail!(Shape, "output view {v:?} does not fit result {out:?}")
                    }
                    Some(v) => one(v.clone()),
                    None => one(out),
                }
            }
            Op::Scale { .. } => one(ins[0].to_vec()),
            Op::Softmax { axis } | Op::LayerNorm { axis, .. } => {
                if *axis >= ins[0].len() {
                    bail!(Shape, "axis {axis} out of range for {:?}", ins[0]);
                }
                if let Op::LayerNorm { epsilon, .. } = op {
                    if !(*epsilon > 0.0 && epsilon.is_finite()) {
                        bail!(Domain, "layernorm epsilon must be positive, got {epsilon}");
                    }
                }
                one(ins[0].to_vec())
            }
            Op::Add => {
                if ins[0] != ins[1] {
                    bail!(Shape, "add of {:?} and {:?}", ins[0], ins[1]);
                }
                one(ins[0].to_vec())
            }
        }
    }

    fn check_bias(&self, bias: &Option<String>, out: usize) -> Result<()> {
        if let Some(b) = bias {
            let d = self.param(b)?;
            if d != [out] {
                bail!(Shape, "bias '{b}' has extents {d:?}, expected [{out}]");
            }
        }
        Ok(())
    }

    /// Full structural check; see [`Graph::infer_shapes`].
    pub fn validate(&self) -> Result<()> {
        self.infer_shapes().map(|_| ())
    }

    /// Graphviz rendering.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph G {\n  rankdir=TB;\n");
        for (id, n) in self.nodes.iter().enumerate() {
            let label = match &n.op {
                Op::Input { name, dims } => format!("input {name} {dims:?}"),
                Op::Reshape { dims } => format!("reshape {dims:?}"),
                Op::Output { name } => format!("output {name}"),
                Op::Transpose { perm } => format!("transpose {perm:?}"),
                Op::Einsum { equation, .. } => format!("einsum {equation}"),
                Op::Softmax { axis } => format!("softmax axis={axis}"),
                Op::Split { axis, parts } => format!("split axis={axis} parts={parts}"),
                Op::Concat { axis } => format!("concat axis={axis}"),
                other => other.kind().name().to_string(),
            };
            let _ = writeln!(s, "  n{id} [label=\"{id}: {label}\"];");
        }
        for (id, n) in self.nodes.iter().enumerate() {
            for p in &n.inputs {
                let _ = writeln!(s, "  n{} -> n{id} [label=\"{}\"];", p.node, p.port);
            }
        }
        s.push_str("}\n");
        s
    }
}

pub(crate) fn bmm_dims(a: &[usize], b: &[usize], ta: bool, tb: bool) -> Result<Vec<usize>> {
    let r = a.len();
    if r < 2 || b.len() != r || a[..r - 2] != b[..r - 2] {
        bail!(Shape, "batched matmul of {a:?} and {b:?}");
    }
    let (m, ka) = if ta { (a[r - 1], a[r - 2]) } else { (a[r - 2], a[r - 1]) };
    let (kb, n) = if tb { (b[r - 1], b[r - 2]) } else { (b[r - 2], b[r - 1]) };
    if ka != kb {
        bail!(Shape, "inner extents {ka} and {kb} differ");
    }
    let mut d = a[..r - 2].to_vec();
    d.push(m);
    d.push(n);
    Ok(d)
}

/// Number of nodes whose kind is in `kinds`.
pub fn count_ops(g: &Graph, kinds: &[OpKind]) -> usize {
    g.nodes.iter().filter(|n| kinds.contains(&n.op.kind())).count()
}

/// Marks memory ops that form the layout adapters at the graph edge: chains
/// of reshapes and transposes hanging directly off an input, or feeding
/// only outputs.
pub fn boundary_nodes(g: &Graph) -> Vec<bool> {
    let mem = |i: usize| g.nodes[i].op.kind().is_memory_op();
    let mut from_input = vec![false; g.nodes.len()];
    for (i, n) in g.nodes.iter().enumerate() {
        if mem(i) {
            let src = n.inputs[0].node;
            from_input[i] = matches!(g.nodes[src].op, Op::Input { .. }) || from_input[src];
        }
    }
    let users = g.consumers();
    let mut to_output = vec![false; g.nodes.len()];
    for i in (0..g.nodes.len()).rev() {
        if mem(i) {
            let readers = users.get(&PortRef::of(i));
            to_output[i] = readers.is_some_and(|r| {
                !r.is_empty() && r.iter().all(|(c, _)| matches!(g.nodes[*c].op, Op::Output { .. }) || to_output[*c])
            });
        }
    }
    from_input.iter().zip(&to_output).map(|(a, b)| *a || *b).collect()
}

/// Interior nodes of the given kinds (layout adapters excluded).
pub fn count_interior_ops(g: &Graph, kinds: &[OpKind]) -> usize {
    let boundary = boundary_nodes(g);
    g.nodes.iter().enumerate().filter(|(i, n)| !boundary[*i] && kinds.contains(&n.op.kind())).count()
}

/// Interior reshapes plus interior transposes.
pub fn memory_copy_score(g: &Graph) -> usize {
    count_interior_ops(g, &[OpKind::Reshape, OpKind::Transpose])
}

/// Size of a multi-head attention block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MhaParams {
    pub bz: usize,
    pub h: usize,
    pub f: usize,
    pub s: usize,
}

impl MhaParams {
    pub fn new(bz: usize, h: usize, f: usize, s: usize) -> Result<Self> {
        if bz == 0 || h == 0 || f == 0 || s == 0 {
            bail!(Domain, "attention sizes must be positive");
        }
        if !f.is_multiple_of(h) {
            bail!(Domain, "feature dim {f} not divisible by {h} heads");
        }
        Ok(MhaParams { bz, h, f, s })
    }

    /// Per-head dimension `f / h`.
    pub fn d(&self) -> usize {
        self.f / self.h
    }
}

/// Standard multi-head attention on a `(bz, S, f)` input named `x`,
/// producing output `y`.
pub fn build_mha_reference(p: &MhaParams) -> Graph {
    let MhaParams { bz, h, f, s } = *p;
    let d = p.d();
    let mut g = Graph::new(Layout::Bsf);
    for w in ["wq", "wk", "wv", "wo"] {
        g.add_param(w, vec![f, f]);
        g.add_param(format!("b{}", &w[1..]), vec![f]);
    }
    let x = g.push(Op::Input { name: "x".into(), dims: vec![bz, s, f] }, vec![]);
    let heads = |g: &mut Graph, w: &str, perm: Vec<usize>| {
        let y = g.push(Op::Linear { weight: w.into(), bias: Some(format!("b{}", &w[1..])) }, vec![x]);
        let r = g.push(Op::Reshape { dims: vec![bz, s, h, d] }, vec![y]);
        g.push(Op::Transpose { perm }, vec![r])
    };
    let q = heads(&mut g, "wq", vec![0, 2, 1, 3]);
    let k = heads(&mut g, "wk", vec![0, 2, 3, 1]);
    let v = heads(&mut g, "wv", vec![0, 2, 1, 3]);
    let scores = g.push(Op::BatchedMatmul { transpose_a: false, transpose_b: false }, vec![q, k]);
    let scaled = g.push(Op::Scale { factor: 1.0 / libm::sqrt(d as f64) }, vec![scores]);
    let attn = g.push(Op::Softmax { axis: 3 }, vec![scaled]);
    let ctx = g.push(Op::BatchedMatmul { transpose_a: false, transpose_b: false }, vec![attn, v]);
    let ctx = g.push(Op::Transpose { perm: vec![0, 2, 1, 3] }, vec![ctx]);
    let ctx = g.push(Op::Reshape { dims: vec![bz, s, f] }, vec![ctx]);
    let y = g.push(Op::Linear { weight: "wo".into(), bias: Some("bo".into()) }, vec![ctx]);
    g.push(Op::Output { name: "y".into() }, vec![y]);
    g
}

/// Seeded Gaussian values for every parameter and input of `g`.
///
/// Matrices get standard deviation `1/sqrt(fan_in)`, vectors `0.1`, and
/// inputs `input_scale`.
pub fn random_bindings(g: &Graph, seed: u64, input_scale: f64) -> Bindings {
    let mut rng = rng::seeded(seed);
    let mut b = Bindings::new();
    let mut fill = |dims: &[usize], std: f64| {
        let data = (0..numel(dims)).map(|_| std * rng::normal(&mut rng)).collect();
        Tensor::new(dims.to_vec(), data).expect("sized to dims")
    };
    for (name, dims) in &g.params {
        let std = match dims.len() {
            1 => 0.1,
            _ => 1.0 / libm::sqrt(*dims.last().expect("non-empty") as f64),
        };
        b.insert(name.clone(), fill(dims, std));
    }
    for (name, dims) in g.inputs() {
        b.insert(name.to_string(), fill(dims, input_scale));
    }
    b
}
