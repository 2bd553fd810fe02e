use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{numel, Tensor};
use super::{Bindings, Graph, Op, OpKind};
use crate::error::{bail, Error, Result};
use crate::floatsim::{OverflowStats, Precision};
use crate::prenorm::{layernorm, LayerNormSpec};
use crate::softmax::{softmax_for, LutSoftmax};

/// Rounding outcomes and data volume of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeReport {
    pub id: usize,
    pub kind: OpKind,
    pub stats: OverflowStats,
    /// Bytes read from inputs and parameters at the element width of the
    /// chosen precision.
    pub bytes_in: u64,
    pub bytes_out: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub outputs: BTreeMap<String, Tensor>,
    pub nodes: Vec<NodeReport>,
}

impl Execution {
    pub fn total_stats(&self) -> OverflowStats {
        let mut s = OverflowStats::default();
        for n in &self.nodes {
            s += n.stats;
        }
        s
    }
}

fn binding<'a>(b: &'a Bindings, name: &str, dims: &[usize]) -> Result<&'a Tensor> {
    match b.get(name) {
        Some(t) if t.dims() == dims => Ok(t),
        Some(t) => bail!(Shape, "binding '{name}' has extents {:?}, expected {dims:?}", t.dims()),
        None => bail!(Graph, "no binding for '{name}'"),
    }
}

fn load(g: &Graph, b: &Bindings, name: &str, precision: Precision, stats: &mut OverflowStats) -> Result<Vec<f64>> {
    let dims = g.params.get(name).ok_or_else(|| Error::Graph(format!("unknown parameter '{name}'")))?;
    let mut v = binding(b, name, dims)?.data().to_vec();
    precision.round_slice(&mut v, stats);
    Ok(v)
}

/// `(outer, extent, inner)` split of `dims` around `axis`.
fn around(dims: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&dims[..axis]), dims[axis], numel(&dims[axis + 1..]))
}

fn map_rows(x: &Tensor, axis: usize, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Tensor> {
    let (outer, n, inner) = around(x.dims(), axis);
    let mut out = vec![0.0; x.len()];
    let mut row = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for (k, r) in row.iter_mut().enumerate() {
                *r = x.data()[base + k * inner];
            }
            for (k, v) in f(&row)?.into_iter().enumerate() {
                out[base + k * inner] = v;
            }
        }
    }
    Tensor::new(x.dims().to_vec(), out)
}

fn bmm(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Result<Tensor> {
    let dims = super::bmm_dims(a.dims(), b.dims(), ta, tb)?;
    let r = dims.len();
    let (m, n) = (dims[r - 2], dims[r - 1]);
    let k = if ta { a.dims()[r - 2] } else { a.dims()[r - 1] };
    let batches = numel(&dims[..r - 2]);
    // (row stride, col stride) of op(A) and op(B) inside one batch.
    let (ar, ac) = if ta { (1, m) } else { (k, 1) };
    let (br, bc) = if tb { (1, k) } else { (n, 1) };
    let mut out = Vec::with_capacity(numel(&dims));
    for bt in 0..batches {
        let ab = &a.data()[bt * m * k..(bt + 1) * m * k];
        let bb = &b.data()[bt * k * n..(bt + 1) * k * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += ab[i * ar + t * ac] * bb[t * br + j * bc];
                }
                out.push(acc);
            }
        }
    }
    Tensor::new(dims, out)
}

/// `y[.., o] = Σ_i x[.., i] w[o, i] + b[o]` with the channel on `axis`.
fn pointwise(x: &Tensor, axis: usize, w: &[f64], bias: Option<&[f64]>, out_ch: usize) -> Result<Tensor> {
    let (outer, cin, inner) = around(x.dims(), axis);
    let mut dims = x.dims().to_vec();
    dims[axis] = out_ch;
    let mut out = vec![0.0; outer * out_ch * inner];
    for o in 0..outer {
        for c in 0..out_ch {
            let wr = &w[c * cin..(c + 1) * cin];
            for s in 0..inner {
                let mut acc = 0.0;
                for (i, wv) in wr.iter().enumerate() {
                    acc += x.data()[(o * cin + i) * inner + s] * wv;
                }
                out[(o * out_ch + c) * inner + s] = acc + bias.map_or(0.0, |b| b[c]);
            }
        }
    }
    Tensor::new(dims, out)
}

/// Interpret `g` on `bindings`.
///
/// Under a simulated format, inputs and parameters are rounded as they are
/// loaded and every node's output is rounded before it is consumed. Each
/// produced tensor is checked against the inferred shape.
pub fn execute(g: &Graph, bindings: &Bindings, precision: Precision) -> Result<Execution> {
    let specs = g.infer_shapes()?;
    let table = LutSoftmax::default();
    let width = precision.bytes_per_element();
    let mut values: Vec<Vec<Tensor>> = Vec::with_capacity(g.nodes.len());
    let mut outputs = BTreeMap::new();
    let mut reports = Vec::with_capacity(g.nodes.len());
    for (id, node) in g.nodes.iter().enumerate() {
        let ins: Vec<&Tensor> = node.inputs.iter().map(|p| &values[p.node][p.port]).collect();
        let mut stats = OverflowStats::default();
        let mut bytes_in: u64 = ins.iter().map(|t| t.len() as u64 * width).sum();
        let mut param = |name: &str, stats: &mut OverflowStats| -> Result<Vec<f64>> {
            let v = load(g, bindings, name, precision, stats)?;
            bytes_in += v.len() as u64 * width;
            Ok(v)
        };
        let outs: Vec<Tensor> = match &node.op {
            Op::Input { name, dims } => vec![binding(bindings, name, dims)?.clone()],
            Op::Output { name } => {
                outputs.insert(name.clone(), ins[0].clone());
                Vec::new()
            }
            Op::Linear { weight, bias } | Op::Conv1x1 { weight, bias } => {
                let w = param(weight, &mut stats)?;
                let b = bias.as_ref().map(|b| param(b, &mut stats)).transpose()?;
                let out_ch = g.params[weight][0];
                let axis = match node.op {
                    Op::Linear { .. } => ins[0].dims().len() - 1,
                    _ => 1,
                };
                vec![pointwise(ins[0], axis, &w, b.as_deref(), out_ch)?]
            }
            Op::Reshape { dims } => vec![ins[0].clone().reshape(dims.clone())?],
            Op::Transpose { perm } => vec![ins[0].transpose(perm)?],
            Op::Split { axis, parts } => ins[0].split(*axis, *parts)?,
            Op::Concat { axis } => vec![Tensor::concat(&ins, *axis)?],
            Op::BatchedMatmul { transpose_a, transpose_b } => vec![bmm(ins[0], ins[1], *transpose_a, *transpose_b)?],
            Op::Einsum { equation, views, output_view } => {
                let view = |i: usize| -> Result<Tensor> {
                    match &views[i] {
                        Some(v) => ins[i].clone().reshape(v.clone()),
                        None => Ok(ins[i].clone()),
                    }
                };
                let out = equation.evaluate(&view(0)?, &view(1)?)?;
                vec![match output_view {
                    Some(v) => out.reshape(v.clone())?,
                    None => out,
                }]
            }
            Op::Scale { factor } => {
                let data = ins[0].data().iter().map(|v| v * factor).collect();
                vec![Tensor::new(ins[0].dims().to_vec(), data)?]
            }
            Op::Softmax { axis } => {
                vec![map_rows(ins[0], *axis, |row| Ok(softmax_for(row, precision, &table, &mut stats)))?]
            }
            Op::LayerNorm { axis, epsilon } => {
                let spec = LayerNormSpec::new(*epsilon)?;
                vec![map_rows(ins[0], *axis, |row| layernorm(row, &spec))?]
            }
            Op::Add => {
                let data = ins[0].data().iter().zip(ins[1].data()).map(|(a, b)| a + b).collect();
                vec![Tensor::new(ins[0].dims().to_vec(), data)?]
            }
        };
        let mut outs = outs;
        for (port, t) in outs.iter_mut().enumerate() {
            if t.dims() != specs[id][port].dims.as_slice() {
                bail!(
                    Graph,
                    "node {id} produced {:?} on port {port}, shape inference says {:?}",
                    t.dims(),
                    specs[id][port].dims
                );
            }
            precision.round_slice(t.data_mut(), &mut stats);
        }
        reports.push(NodeReport {
            id,
            kind: node.op.kind(),
            stats,
            bytes_in,
            bytes_out: outs.iter().map(|t| t.len() as u64 * width).sum(),
        });
        values.push(outs);
    }
    Ok(Execution { outputs, nodes: reports })
}

/// Largest absolute output difference between two graphs evaluated exactly
/// on the same bindings. Both graphs must expose the same output names.
pub fn equivalence(a: &Graph, b: &Graph, bindings: &Bindings) -> Result<f64> {
    let ra = execute(a, bindings, Precision::Exact)?;
    let rb = execute(b, bindings, Precision::Exact)?;
    if ra.outputs.keys().ne(rb.outputs.keys()) {
        bail!(Graph, "graphs expose different outputs");
    }
    let mut worst: f64 = 0.0;
    for (name, ta) in &ra.outputs {
        worst = worst.max(ta.max_abs_diff(&rb.outputs[name])?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphir::{build_mha_reference, random_bindings, MhaParams};
    use crate::FloatFormat;

    #[test]
    fn zero_inputs_give_output_bias() {
        let g = build_mha_reference(&MhaParams::new(1, 2, 8, 4).unwrap());
        let mut b = random_bindings(&g, 1, 1.0);
        b.insert("x".into(), Tensor::zeros(vec![1, 4, 8]));
        for w in ["wq", "wk", "wv", "bq", "bk", "bv"] {
            let dims = b[w].dims().to_vec();
            b.insert(w.into(), Tensor::zeros(dims));
        }
        let run = execute(&g, &b, Precision::Exact).unwrap();
        let y = &run.outputs["y"];
        for row in y.data().chunks(8) {
            assert_eq!(row, b["bo"].data());
        }
    }

    #[test]
    fn uniform_softmax_rows_on_zero_logits() {
        let mut g = Graph::new(super::super::Layout::Bsf);
        let x = g.push(Op::Input { name: "x".into(), dims: vec![2, 4] }, vec![]);
        let s = g.push(Op::Softmax { axis: 1 }, vec![x]);
        g.push(Op::Output { name: "y".into() }, vec![s]);
        let mut b = Bindings::new();
        b.insert("x".into(), Tensor::zeros(vec![2, 4]));
        let y = &execute(&g, &b, Precision::Exact).unwrap().outputs["y"];
        assert!(y.data().iter().all(|v| *v == 0.25));
    }

    #[test]
    fn fp16_reports_overflow_per_node() {
        let g = build_mha_reference(&MhaParams::new(1, 2, 8, 4).unwrap());
        let b = random_bindings(&g, 2, 1e4);
        let run = execute(&g, &b, Precision::Simulated(FloatFormat::FP16)).unwrap();
        assert_eq!(run.nodes.len(), g.nodes.len());
        assert!(run.nodes.iter().any(|n| n.stats.overflow > 0));
        assert!(run.nodes.iter().all(|n| n.bytes_out % 2 == 0));
    }

    #[test]
    fn missing_or_misshaped_binding() {
        let g = build_mha_reference(&MhaParams::new(1, 2, 8, 4).unwrap());
        let mut b = random_bindings(&g, 1, 1.0);
        b.insert("x".into(), Tensor::zeros(vec![1, 4, 4]));
        assert!(execute(&g, &b, Precision::Exact).is_err());
        b.remove("x");
        assert!(execute(&g, &b, Precision::Exact).is_err());
    }

    #[test]
    fn bmm_matches_einsum() {
        let a = Tensor::new(vec![2, 2, 3], (0..12).map(|v| v as f64 * 0.5).collect()).unwrap();
        let b = Tensor::new(vec![2, 3, 2], (0..12).map(|v| 1.0 - v as f64).collect()).unwrap();
        let eq = crate::graphir::EinsumEquation::batched_matmul(1, false, false).unwrap();
        assert_eq!(bmm(&a, &b, false, false).unwrap(), eq.evaluate(&a, &b).unwrap());
        let bt = b.transpose(&[0, 2, 1]).unwrap();
        assert_eq!(bmm(&a, &bt, false, true).unwrap(), eq.evaluate(&a, &b).unwrap());
    }
}
