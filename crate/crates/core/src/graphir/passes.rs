use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::einsum::EinsumEquation;
use super::tensor::{numel, strides};
use super::{Graph, Layout, Op, PortRef};
use crate::error::{bail, Error, Result};

/// Axis along which [`pass_chunk`] splits the attention core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ChunkAxis {
    #[default]
    Head,
    Query,
}

/// One step of a rewrite pipeline.
///
/// Text form: `layout`, `einsum`, `chunk:<n>` (per head) or
/// `chunk-query:<n>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pass {
    Layout,
    Einsum,
    Chunk { n: usize, axis: ChunkAxis },
}

impl Pass {
    pub fn apply(&self, g: &Graph) -> Result<Graph> {
        match *self {
            Pass::Layout => pass_layout(g),
            Pass::Einsum => pass_einsum(g),
            Pass::Chunk { n, axis } => pass_chunk(g, n, axis),
        }
    }
}

impl FromStr for Pass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chunk = |axis, n: &str| -> Result<Pass> {
            match n.parse::<usize>() {
                Ok(n) => Ok(Pass::Chunk { n, axis }),
                Err(_) => bail!(Graph, "bad chunk count '{n}' in pass '{s}'"),
            }
        };
        match s {
            "layout" => Ok(Pass::Layout),
            "einsum" => Ok(Pass::Einsum),
            _ => {
                if let Some(n) = s.strip_prefix("chunk-query:") {
                    chunk(ChunkAxis::Query, n)
                } else if let Some(n) = s.strip_prefix("chunk:") {
                    chunk(ChunkAxis::Head, n)
                } else {
                    bail!(Graph, "unknown pass '{s}', expected layout, einsum, chunk:<n> or chunk-query:<n>")
                }
            }
        }
    }
}

impl fmt::Display for Pass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pass::Layout => f.write_str("layout"),
            Pass::Einsum => f.write_str("einsum"),
            Pass::Chunk { n, axis: ChunkAxis::Head } => write!(f, "chunk:{n}"),
            Pass::Chunk { n, axis: ChunkAxis::Query } => write!(f, "chunk-query:{n}"),
        }
    }
}

/// Run `passes` in order.
pub fn apply_passes(g: &Graph, passes: &[Pass]) -> Result<Graph> {
    let mut g = g.clone();
    for p in passes {
        g = p.apply(&g)?;
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Layout

/// Physical axis `i` holds logical axis `form[i]`; `None` is an inserted
/// unit axis.
type Form = Vec<Option<usize>>;

#[derive(Debug, Clone)]
struct Placed {
    port: PortRef,
    logical: Vec<usize>,
    form: Form,
    /// Logical axes that carry the sequence.
    seq: Vec<bool>,
}

impl Placed {
    fn physical(&self) -> Vec<usize> {
        physical_dims(&self.logical, &self.form)
    }

    fn phys_axis(&self, axis: usize) -> Result<usize> {
        match self.form.iter().position(|a| *a == Some(axis)) {
            Some(p) => Ok(p),
            None => bail!(Graph, "logical axis {axis} missing from layout {:?}", self.form),
        }
    }
}

fn physical_dims(logical: &[usize], form: &Form) -> Vec<usize> {
    form.iter().map(|a| a.map_or(1, |a| logical[a])).collect()
}

fn bc1s_form() -> Form {
    vec![Some(0), Some(2), None, Some(1)]
}

/// Logical linear index of every physical element, in physical order.
fn element_order(logical: &[usize], form: &Form) -> Vec<usize> {
    let ls = strides(logical);
    let pdims = physical_dims(logical, form);
    let step: Vec<usize> = form.iter().map(|a| a.map_or(0, |a| ls[a])).collect();
    let n = numel(&pdims);
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; pdims.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for ax in (0..pdims.len()).rev() {
            idx[ax] += 1;
            off += step[ax];
            if idx[ax] < pdims[ax] {
                break;
            }
            off -= step[ax] * pdims[ax];
            idx[ax] = 0;
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Sequence flags of a reshape's output: an axis keeps the flag when it
/// appears unchanged (same extent, same leading product) in the input.
fn reshape_seq(from: &[usize], seq: &[bool], to: &[usize]) -> Vec<bool> {
    (0..to.len())
        .map(|j| {
            to[j] > 1 && (0..from.len()).any(|i| seq[i] && from[i] == to[j] && numel(&from[..i]) == numel(&to[..j]))
        })
        .collect()
}

fn layout_error(op: &Op, why: &str) -> Error {
    Error::Graph(format!("{} has no BC1S equivalent: {why}", op.kind().name()))
}

/// Rewrite a `(batch, seq, feature)` graph so every interior value lives in
/// `(batch, channel, 1, seq)` form.
///
/// Rank-3 inputs and outputs get a transpose/reshape adapter; linear layers
/// become pointwise convolutions; transposes disappear into the tracked
/// layout; reshapes and batched matmuls are re-expressed on the physical
/// tensors. Graphs already in BC1S form are returned unchanged.
pub fn pass_layout(g: &Graph) -> Result<Graph> {
    if g.layout == Layout::Bc1s {
        return Ok(g.clone());
    }
    let specs = g.infer_shapes()?;
    let mut out = Graph { layout: Layout::Bc1s, params: g.params.clone(), nodes: Vec::new() };
    let mut vals: Vec<Vec<Placed>> = Vec::with_capacity(g.nodes.len());
    for (id, node) in g.nodes.iter().enumerate() {
        let ins: Vec<&Placed> = node.inputs.iter().map(|p| &vals[p.node][p.port]).collect();
        let logical_out = |port: usize| specs[id][port].dims.clone();
        let placed: Vec<Placed> = match &node.op {
            Op::Input { dims, .. } => {
                let x = out.push(node.op.clone(), vec![]);
                if dims.len() == 3 {
                    let t = out.push(Op::Transpose { perm: vec![0, 2, 1] }, vec![x]);
                    let form = bc1s_form();
                    let r = out.push(Op::Reshape { dims: physical_dims(dims, &form) }, vec![t]);
                    vec![Placed { port: r, logical: dims.clone(), form, seq: vec![false, true, false] }]
                } else {
                    vec![Placed {
                        port: x,
                        logical: dims.clone(),
                        form: (0..dims.len()).map(Some).collect(),
                        seq: vec![false; dims.len()],
                    }]
                }
            }
            Op::Output { .. } => {
                let v = ins[0];
                let mut port = v.port;
                let kept: Vec<usize> = v.form.iter().filter_map(|a| *a).collect();
                if kept.len() != v.form.len() {
                    let squeezed = kept.iter().map(|a| v.logical[*a]).collect();
                    port = out.push(Op::Reshape { dims: squeezed }, vec![port]);
                }
                let perm: Vec<usize> = (0..kept.len())
                    .map(|j| kept.iter().position(|a| *a == j).expect("form covers every axis"))
                    .collect();
                if perm.iter().enumerate().any(|(i, p)| i != *p) {
                    port = out.push(Op::Transpose { perm }, vec![port]);
                }
                out.push(node.op.clone(), vec![port]);
                Vec::new()
            }
            Op::Linear { weight, bias } => {
                let v =
                    &coerce(&mut out, &node.op, ins[0], &[bc1s_form()], "input is not a (batch, seq, feature) tensor")?;
                let port = out.push(Op::Conv1x1 { weight: weight.clone(), bias: bias.clone() }, vec![v.port]);
                vec![Placed { port, logical: logical_out(0), form: v.form.clone(), seq: v.seq.clone() }]
            }
            Op::Reshape { dims } => vec![place_reshape(&mut out, &node.op, ins[0], dims)?],
            Op::Transpose { perm } => {
                let v = ins[0];
                let mut inv = vec![0; perm.len()];
                for (j, p) in perm.iter().enumerate() {
                    inv[*p] = j;
                }
                vec![Placed {
                    port: v.port,
                    logical: logical_out(0),
                    form: v.form.iter().map(|a| a.map(|a| inv[a])).collect(),
                    seq: perm.iter().map(|p| v.seq[*p]).collect(),
                }]
            }
            Op::Split { axis, parts } => {
                let v = ins[0];
                let s = out.push(Op::Split { axis: v.phys_axis(*axis)?, parts: *parts }, vec![v.port]);
                (0..*parts)
                    .map(|k| Placed {
                        port: PortRef { node: s.node, port: k },
                        logical: logical_out(k),
                        form: v.form.clone(),
                        seq: v.seq.clone(),
                    })
                    .collect()
            }
            Op::Concat { axis } => {
                let v = ins[0];
                if ins.iter().any(|o| o.form != v.form) {
                    return Err(layout_error(&node.op, "operands disagree on layout"));
                }
                let port = out.push(Op::Concat { axis: v.phys_axis(*axis)? }, ins.iter().map(|o| o.port).collect());
                vec![Placed { port, logical: logical_out(0), form: v.form.clone(), seq: v.seq.clone() }]
            }
            Op::Add => {
                if ins[0].form != ins[1].form {
                    return Err(layout_error(&node.op, "operands disagree on layout"));
                }
                let port = out.push(Op::Add, vec![ins[0].port, ins[1].port]);
                vec![Placed { port, ..ins[0].clone() }]
            }
            Op::Scale { factor } => {
                let port = out.push(Op::Scale { factor: *factor }, vec![ins[0].port]);
                vec![Placed { port, ..ins[0].clone() }]
            }
            Op::Softmax { axis } => {
                let port = out.push(Op::Softmax { axis: ins[0].phys_axis(*axis)? }, vec![ins[0].port]);
                vec![Placed { port, ..ins[0].clone() }]
            }
            Op::LayerNorm { axis, epsilon } => {
                let port =
                    out.push(Op::LayerNorm { axis: ins[0].phys_axis(*axis)?, epsilon: *epsilon }, vec![ins[0].port]);
                vec![Placed { port, ..ins[0].clone() }]
            }
            Op::BatchedMatmul { transpose_a, transpose_b } => {
                vec![place_bmm(&mut out, &node.op, ins[0], ins[1], *transpose_a, *transpose_b, logical_out(0))?]
            }
            Op::Einsum { .. } | Op::Conv1x1 { .. } => {
                return Err(layout_error(&node.op, "only valid in an already-converted graph"))
            }
        };
        vals.push(placed);
    }
    let out = out.compact();
    out.validate()?;
    Ok(out)
}

/// `v` re-expressed in the first of `forms` that keeps its element order;
/// costs at most one reshape.
fn coerce(out: &mut Graph, op: &Op, v: &Placed, forms: &[Form], why: &str) -> Result<Placed> {
    if forms.contains(&v.form) {
        return Ok(v.clone());
    }
    let want = element_order(&v.logical, &v.form);
    let Some(form) = forms.iter().find(|f| f.len() == v.form.len() && element_order(&v.logical, f) == want) else {
        return Err(layout_error(op, why));
    };
    let phys = physical_dims(&v.logical, form);
    let port = if phys == v.physical() { v.port } else { out.push(Op::Reshape { dims: phys }, vec![v.port]) };
    Ok(Placed { port, form: form.clone(), ..v.clone() })
}

fn place_reshape(out: &mut Graph, op: &Op, v: &Placed, dims: &[usize]) -> Result<Placed> {
    let seq = reshape_seq(&v.logical, &v.seq, dims);
    let r = dims.len();
    if r > 6 {
        return Err(layout_error(op, "rank above 6"));
    }
    let mut candidates: Vec<Form> = permutations(r)
        .into_iter()
        .map(|p| {
            let mut f: Form = p.into_iter().map(Some).collect();
            if r == 3 {
                f.insert(2, None);
            }
            f
        })
        .collect();
    let seq_last = |f: &Form| f.last().copied().flatten().is_some_and(|a| seq[a]);
    candidates.sort_by_key(|f| (!seq_last(f), *f != bc1s_form()));
    let want = element_order(&v.logical, &v.form);
    let Some(form) = candidates.into_iter().find(|f| element_order(dims, f) == want) else {
        return Err(layout_error(op, "no layout keeps the element order"));
    };
    let phys = physical_dims(dims, &form);
    let port = if phys == v.physical() { v.port } else { out.push(Op::Reshape { dims: phys }, vec![v.port]) };
    Ok(Placed { port, logical: dims.to_vec(), form, seq })
}

fn place_bmm(
    out: &mut Graph,
    op: &Op,
    a: &Placed,
    b: &Placed,
    ta: bool,
    tb: bool,
    logical: Vec<usize>,
) -> Result<Placed> {
    let r = a.logical.len();
    let straight: Form = (0..r).map(Some).collect();
    let mut flipped = straight.clone();
    flipped.swap(r - 2, r - 1);
    let usable = [straight, flipped.clone()];
    let why = "batch axes are not leading";
    let a = &coerce(out, op, a, &usable, why)?;
    let b = &coerce(out, op, b, &usable, why)?;
    let pa = ta ^ (a.form == flipped);
    let pb = tb ^ (b.form == flipped);
    let row_seq = a.seq[if ta { r - 1 } else { r - 2 }];
    let col_seq = b.seq[if tb { r - 2 } else { r - 1 }];
    let mut seq = a.seq[..r - 2].to_vec();
    seq.push(row_seq);
    seq.push(col_seq);
    let mut form: Form = (0..r).map(Some).collect();
    // Keep the sequence axis last: compute the transposed product instead.
    let port = if row_seq && !col_seq {
        form.swap(r - 2, r - 1);
        out.push(Op::BatchedMatmul { transpose_a: !pb, transpose_b: !pa }, vec![b.port, a.port])
    } else {
        out.push(Op::BatchedMatmul { transpose_a: pa, transpose_b: pb }, vec![a.port, b.port])
    };
    Ok(Placed { port, logical, form, seq })
}

// ---------------------------------------------------------------------------
// Einsum

/// Replace every batched matmul by an einsum, then fold single-use
/// transposes and reshapes around each einsum into its subscripts and views
/// until nothing more folds.
pub fn pass_einsum(g: &Graph) -> Result<Graph> {
    let specs = g.infer_shapes()?;
    let mut g = g.clone();
    for (id, node) in g.nodes.iter_mut().enumerate() {
        if let Op::BatchedMatmul { transpose_a, transpose_b } = node.op {
            let rank = specs[id][0].dims.len();
            node.op = Op::Einsum {
                equation: EinsumEquation::batched_matmul(rank - 2, transpose_a, transpose_b)?,
                views: [None, None],
                output_view: None,
            };
        }
    }
    while fold_once(&mut g) {
        g = g.compact();
    }
    g.validate()?;
    Ok(g)
}

fn fold_once(g: &mut Graph) -> bool {
    let users = g.consumers();
    let single = |p: PortRef| users.get(&p).is_some_and(|u| u.len() == 1);
    for id in 0..g.nodes.len() {
        if !matches!(g.nodes[id].op, Op::Einsum { .. }) {
            continue;
        }
        for slot in 0..2 {
            let p = g.nodes[id].inputs[slot];
            if !single(p) {
                continue;
            }
            let producer = g.nodes[p.node].clone();
            let Op::Einsum { equation, views, .. } = &mut g.nodes[id].op else { unreachable!() };
            match producer.op {
                Op::Transpose { perm } if views[slot].is_none() => {
                    let term = equation.operand(slot).to_vec();
                    let mut moved = term.clone();
                    for (j, pj) in perm.iter().enumerate() {
                        moved[*pj] = term[j];
                    }
                    *equation.operand_mut(slot) = moved;
                }
                Op::Reshape { dims } => {
                    if views[slot].is_none() {
                        views[slot] = Some(dims);
                    }
                }
                _ => continue,
            }
            g.nodes[id].inputs[slot] = producer.inputs[0];
            return true;
        }
        let me = PortRef::of(id);
        let Some(readers) = users.get(&me) else { continue };
        if readers.len() != 1 {
            continue;
        }
        let c = readers[0].0;
        let consumer = g.nodes[c].op.clone();
        let Op::Einsum { equation, output_view, .. } = &mut g.nodes[id].op else { unreachable!() };
        match consumer {
            Op::Transpose { perm } if output_view.is_none() => {
                equation.out = perm.iter().map(|p| equation.out[*p]).collect();
            }
            Op::Reshape { dims } => *output_view = Some(dims),
            _ => continue,
        }
        for n in g.nodes.iter_mut() {
            for p in n.inputs.iter_mut() {
                if *p == PortRef::of(c) {
                    *p = me;
                }
            }
        }
        return true;
    }
    false
}

// ---------------------------------------------------------------------------
// Chunking

/// Contraction view of a matmul-like node.
#[derive(Debug, Clone)]
struct Contraction {
    eq: EinsumEquation,
    views: [Option<Vec<usize>>; 2],
    out_view: Option<Vec<usize>>,
}

fn contraction(op: &Op, rank: usize) -> Option<Contraction> {
    match op {
        Op::BatchedMatmul { transpose_a, transpose_b } => Some(Contraction {
            eq: EinsumEquation::batched_matmul(rank - 2, *transpose_a, *transpose_b).ok()?,
            views: [None, None],
            out_view: None,
        }),
        Op::Einsum { equation, views, output_view } => {
            Some(Contraction { eq: equation.clone(), views: views.clone(), out_view: output_view.clone() })
        }
        _ => None,
    }
}

/// The op for a chunk, given new views. Batched matmuls carry no views.
fn with_views(op: &Op, views: [Option<Vec<usize>>; 2], out_view: Option<Vec<usize>>) -> Op {
    match op {
        Op::Einsum { equation, .. } => Op::Einsum { equation: equation.clone(), views, output_view: out_view },
        other => other.clone(),
    }
}

/// `mm1 -> [scale] -> softmax -> mm2`.
#[derive(Debug, Clone)]
struct Core {
    mm1: usize,
    scale: Option<usize>,
    softmax: usize,
    mm2: usize,
    attn_slot: usize,
}

fn find_cores(g: &Graph, specs: &[Vec<super::TensorSpec>]) -> Vec<Core> {
    let users = g.consumers();
    let single = |n: usize| users.get(&PortRef::of(n)).is_some_and(|u| u.len() == 1);
    let mut cores = Vec::new();
    for (mm2, node) in g.nodes.iter().enumerate() {
        if !matches!(node.op, Op::BatchedMatmul { .. } | Op::Einsum { .. }) {
            continue;
        }
        for slot in 0..2 {
            let sm = node.inputs[slot];
            if sm.port != 0 || !matches!(g.nodes[sm.node].op, Op::Softmax { .. }) || !single(sm.node) {
                continue;
            }
            let mut prev = g.nodes[sm.node].inputs[0].node;
            let mut scale = None;
            if matches!(g.nodes[prev].op, Op::Scale { .. }) && single(prev) {
                scale = Some(prev);
                prev = g.nodes[prev].inputs[0].node;
            }
            let is_mm = matches!(g.nodes[prev].op, Op::BatchedMatmul { .. } | Op::Einsum { .. })
                && contraction(&g.nodes[prev].op, specs[prev][0].dims.len()).is_some_and(|c| c.out_view.is_none());
            if is_mm && single(prev) {
                cores.push(Core { mm1: prev, scale, softmax: sm.node, mm2, attn_slot: slot });
                break;
            }
        }
    }
    cores
}

/// Where to cut an operand so that its `letter` axis splits into `n`
/// contiguous parts: `(actual axis, new view)`.
fn cut(
    term: &[u8],
    view: &Option<Vec<usize>>,
    actual: &[usize],
    letter: u8,
    n: usize,
) -> Result<(usize, Option<Vec<usize>>)> {
    let p = term.iter().position(|c| *c == letter).expect("letter present");
    let shaped = view.as_deref().unwrap_or(actual);
    if !shaped[p].is_multiple_of(n) {
        bail!(Graph, "chunked extent {} is not divisible by {n}", shaped[p]);
    }
    let Some(v) = view else {
        return Ok((p, None));
    };
    let lead = numel(&v[..p]);
    let q = (0..actual.len())
        .rev()
        .find(|q| numel(&actual[..*q]) == lead && actual[*q].is_multiple_of(n))
        .ok_or_else(|| Error::Graph(format!("cannot chunk view {v:?} of tensor {actual:?}")))?;
    let mut nv = v.clone();
    nv[p] /= n;
    Ok((q, Some(nv)))
}

/// Split every attention core `mm1 -> [scale] -> softmax -> mm2` into `n`
/// parallel branches along the head axis (or the query axis), joined by a
/// concat. Cores whose operands already come from split nodes are left as
/// they are, so the pass is idempotent. `n = 1` is the identity.
pub fn pass_chunk(g: &Graph, n: usize, axis: ChunkAxis) -> Result<Graph> {
    if n == 0 {
        bail!(Graph, "chunk count must be positive");
    }
    let specs = g.infer_shapes()?;
    let cores = find_cores(g, &specs);
    if cores.is_empty() {
        bail!(Graph, "no attention core (matmul, softmax, matmul) found");
    }
    if n == 1 {
        return Ok(g.clone());
    }
    let from_split = |c: &Core| g.nodes[c.mm1].inputs.iter().any(|p| matches!(g.nodes[p.node].op, Op::Split { .. }));
    let cores: Vec<Core> = cores.into_iter().filter(|c| !from_split(c)).collect();
    if cores.is_empty() {
        return Ok(g.clone());
    }
    let mut skip = vec![false; g.nodes.len()];
    let mut at_mm2 = vec![None; g.nodes.len()];
    for (i, c) in cores.iter().enumerate() {
        skip[c.mm1] = true;
        skip[c.softmax] = true;
        if let Some(s) = c.scale {
            skip[s] = true;
        }
        at_mm2[c.mm2] = Some(i);
    }

    let mut out = Graph { layout: g.layout, params: g.params.clone(), nodes: Vec::new() };
    let mut remap: Vec<Vec<PortRef>> = Vec::with_capacity(g.nodes.len());
    for (id, node) in g.nodes.iter().enumerate() {
        if skip[id] {
            remap.push(Vec::new());
            continue;
        }
        let ports = match at_mm2[id] {
            Some(ci) => vec![emit_chunks(&mut out, g, &specs, &cores[ci], &remap, n, axis)?],
            None => {
                let ins = node.inputs.iter().map(|p| remap[p.node][p.port]).collect();
                let first = out.push(node.op.clone(), ins);
                (0..node.op.outputs()).map(|k| PortRef { node: first.node, port: k }).collect()
            }
        };
        remap.push(ports);
    }
    let out = out.compact();
    out.validate()?;
    Ok(out)
}

fn emit_chunks(
    out: &mut Graph,
    g: &Graph,
    specs: &[Vec<super::TensorSpec>],
    core: &Core,
    remap: &[Vec<PortRef>],
    n: usize,
    axis: ChunkAxis,
) -> Result<PortRef> {
    let dims_of = |p: PortRef| specs[p.node][p.port].dims.clone();
    let n1 = &g.nodes[core.mm1];
    let n2 = &g.nodes[core.mm2];
    let c1 = contraction(&n1.op, dims_of(PortRef::of(core.mm1)).len()).expect("core matmul");
    let c2 = contraction(&n2.op, dims_of(PortRef::of(core.mm2)).len()).expect("core matmul");
    let Op::Softmax { axis: sm_axis } = g.nodes[core.softmax].op else { unreachable!() };

    let batch = c1.eq.batch_letters();
    let key = c1.eq.out[sm_axis];
    let letter = match axis {
        ChunkAxis::Head => match batch.get(1) {
            Some(h) => *h,
            None => bail!(Graph, "attention core has no head axis to chunk"),
        },
        ChunkAxis::Query => {
            let free: Vec<u8> = c1.eq.out.iter().copied().filter(|c| !batch.contains(c) && *c != key).collect();
            match free.as_slice() {
                [q] => *q,
                _ => bail!(Graph, "cannot identify the query axis of the attention core"),
            }
        }
    };
    let pos = c1.eq.out.iter().position(|c| *c == letter).expect("output letter");
    if pos == sm_axis {
        bail!(Graph, "cannot chunk along the softmax axis");
    }
    let letter2 = c2.eq.operand(core.attn_slot)[pos];
    if c2.views[core.attn_slot].is_some() {
        bail!(Graph, "attention weights are reshaped inside the core");
    }
    let other = 1 - core.attn_slot;
    let v_has = c2.eq.operand(other).contains(&letter2);
    if axis == ChunkAxis::Query && v_has {
        bail!(Graph, "query axis also indexes the value operand");
    }

    // Split nodes: operand ports per branch, plus the per-branch views.
    let split_operand = |out: &mut Graph,
                         input: PortRef,
                         term: &[u8],
                         view: &Option<Vec<usize>>,
                         letter: u8|
     -> Result<(Vec<PortRef>, Option<Vec<usize>>)> {
        let (cut_axis, nv) = cut(term, view, &dims_of(input), letter, n)?;
        let s = out.push(Op::Split { axis: cut_axis, parts: n }, vec![remap[input.node][input.port]]);
        Ok(((0..n).map(|k| PortRef { node: s.node, port: k }).collect(), nv))
    };

    let mut mm1_inputs: [Vec<PortRef>; 2] = [Vec::new(), Vec::new()];
    let mut mm1_views = c1.views.clone();
    for slot in 0..2 {
        let input = n1.inputs[slot];
        if c1.eq.operand(slot).contains(&letter) {
            let (ports, nv) = split_operand(out, input, c1.eq.operand(slot), &c1.views[slot], letter)?;
            mm1_inputs[slot] = ports;
            mm1_views[slot] = nv;
        } else {
            mm1_inputs[slot] = vec![remap[input.node][input.port]; n];
        }
    }
    let mut mm2_views = c2.views.clone();
    let v_input = n2.inputs[other];
    let v_ports = if v_has {
        let (ports, nv) = split_operand(out, v_input, c2.eq.operand(other), &c2.views[other], letter2)?;
        mm2_views[other] = nv;
        ports
    } else {
        vec![remap[v_input.node][v_input.port]; n]
    };

    let o2 = c2.eq.out.iter().position(|c| *c == letter2);
    let Some(o2) = o2 else {
        bail!(Graph, "chunked axis is contracted away in the second matmul");
    };
    let full_out: Vec<usize> = {
        let shaped = |slot: usize| c2.views[slot].clone().unwrap_or_else(|| dims_of(n2.inputs[slot]));
        c2.eq.output_dims(&shaped(0), &shaped(1))?
    };
    let (cat_axis, out_view) = match &c2.out_view {
        None => (o2, None),
        Some(w) => {
            let lead = numel(&full_out[..o2]);
            let q = (0..w.len())
                .rev()
                .find(|q| numel(&w[..*q]) == lead && w[*q] % n == 0)
                .ok_or_else(|| Error::Graph(format!("cannot chunk output view {w:?}")))?;
            let mut nw = w.clone();
            nw[q] /= n;
            (q, Some(nw))
        }
    };

    let mut branches = Vec::with_capacity(n);
    for k in 0..n {
        let mut x = out.push(with_views(&n1.op, mm1_views.clone(), None), vec![mm1_inputs[0][k], mm1_inputs[1][k]]);
        if let Some(s) = core.scale {
            x = out.push(g.nodes[s].op.clone(), vec![x]);
        }
        x = out.push(g.nodes[core.softmax].op.clone(), vec![x]);
        let mut ins = [x, x];
        ins[other] = v_ports[k];
        branches.push(out.push(with_views(&n2.op, mm2_views.clone(), out_view.clone()), ins.to_vec()));
    }
    Ok(out.push(Op::Concat { axis: cat_axis }, branches))
}
