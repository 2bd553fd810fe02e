use fpstab_core::graphir::{
    apply_passes, build_mha_reference, count_interior_ops, count_ops, equivalence, execute, memory_copy_score,
    pass_chunk, pass_einsum, pass_layout, random_bindings, Bindings, ChunkAxis, EinsumEquation, Graph, Layout,
    MhaParams, Op, OpKind, Pass, PortRef, Tensor,
};
use fpstab_core::rng::{seeded, Rng};
use fpstab_core::softmax::softmax_exact;
use fpstab_core::{FloatFormat, Precision};
use proptest::prelude::*;

const PIPELINE: [Pass; 3] = [Pass::Layout, Pass::Einsum, Pass::Chunk { n: 2, axis: ChunkAxis::Head }];

fn mha(bz: usize, h: usize, f: usize, s: usize) -> Graph {
    build_mha_reference(&MhaParams::new(bz, h, f, s).unwrap())
}

/// Same graph with nodes renumbered in order; compares structure only.
fn same_structure(a: &Graph, b: &Graph) -> bool {
    a.compact() == b.compact()
}

fn random_params(rng: &mut impl Rng) -> MhaParams {
    let h = [1, 2, 4, 8][rng.random_range(0..4)];
    let d = rng.random_range(1..=64 / h);
    MhaParams::new(rng.random_range(1..=2), h, h * d, rng.random_range(1..=32)).unwrap()
}

#[test]
fn pipeline_preserves_outputs_on_random_instances() {
    let mut rng = seeded(7);
    for i in 0..100 {
        let p = random_params(&mut rng);
        let g = build_mha_reference(&p);
        let passes = [Pass::Layout, Pass::Einsum, Pass::Chunk { n: p.h, axis: ChunkAxis::Head }];
        let t = apply_passes(&g, &passes).unwrap();
        let b = random_bindings(&g, i, 1.0);
        let diff = equivalence(&g, &t, &b).unwrap();
        assert!(diff <= 1e-9, "{p:?}: diff {diff}");
        assert_eq!(memory_copy_score(&t), 0, "{p:?}");
        assert_eq!(count_ops(&t, &[OpKind::BatchedMatmul]), 0);
        assert!(memory_copy_score(&t) < memory_copy_score(&g));
    }
}

#[test]
fn each_pass_preserves_outputs() {
    let mut rng = seeded(11);
    for i in 0..30 {
        let p = random_params(&mut rng);
        let g = build_mha_reference(&p);
        let b = random_bindings(&g, 100 + i, 1.0);
        let layout = pass_layout(&g).unwrap();
        let einsum = pass_einsum(&g).unwrap();
        let chunk_head = pass_chunk(&g, p.h, ChunkAxis::Head).unwrap();
        let q = (1..=p.s).rev().find(|q| p.s.is_multiple_of(*q) && *q <= 4).unwrap();
        let chunk_query = pass_chunk(&einsum, q, ChunkAxis::Query).unwrap();
        for t in [&layout, &einsum, &chunk_head, &chunk_query] {
            let diff = equivalence(&g, t, &b).unwrap();
            assert!(diff <= 1e-9, "{p:?}: diff {diff}");
        }
    }
}

#[test]
fn layout_removes_interior_transposes() {
    let g = mha(2, 4, 16, 6);
    let t = pass_layout(&g).unwrap();
    assert_eq!(t.layout, Layout::Bc1s);
    assert_eq!(count_interior_ops(&t, &[OpKind::Transpose]), 0);
    assert_eq!(count_ops(&t, &[OpKind::Linear]), 0);
    assert_eq!(count_ops(&t, &[OpKind::Conv1x1]), 4);
    assert_eq!(count_ops(&t, &[OpKind::Transpose]), 2);
}

#[test]
fn layout_of_single_linear() {
    let mut g = Graph::new(Layout::Bsf);
    g.add_param("w", vec![3, 5]);
    let x = g.push(Op::Input { name: "x".into(), dims: vec![2, 4, 5] }, vec![]);
    let y = g.push(Op::Linear { weight: "w".into(), bias: None }, vec![x]);
    g.push(Op::Output { name: "y".into() }, vec![y]);
    let t = pass_layout(&g).unwrap();
    let kinds: Vec<OpKind> = t.nodes.iter().map(|n| n.op.kind()).collect();
    assert_eq!(
        kinds,
        [
            OpKind::Input,
            OpKind::Transpose,
            OpKind::Reshape,
            OpKind::Conv1x1,
            OpKind::Reshape,
            OpKind::Transpose,
            OpKind::Output
        ]
    );
    assert_eq!(memory_copy_score(&t), 0);
    let b = random_bindings(&g, 3, 1.0);
    assert!(equivalence(&g, &t, &b).unwrap() <= 1e-12);
}

#[test]
fn layout_rejects_unsupported_ops() {
    let mut g = Graph::new(Layout::Bsf);
    let x = g.push(Op::Input { name: "x".into(), dims: vec![2, 3] }, vec![]);
    let e = g.push(
        Op::Einsum { equation: "ij,jk->ik".parse().unwrap(), views: [None, Some(vec![3, 2])], output_view: None },
        vec![x, x],
    );
    g.push(Op::Output { name: "y".into() }, vec![e]);
    assert!(pass_layout(&g).is_err());

    let mut g = Graph::new(Layout::Bsf);
    g.add_param("w", vec![4, 4]);
    let x = g.push(Op::Input { name: "x".into(), dims: vec![1, 2, 3, 4] }, vec![]);
    let y = g.push(Op::Linear { weight: "w".into(), bias: None }, vec![x]);
    g.push(Op::Output { name: "y".into() }, vec![y]);
    assert!(pass_layout(&g).is_err());
}

#[test]
fn einsum_replaces_matmuls() {
    let g = mha(1, 2, 8, 4);
    let t = pass_einsum(&g).unwrap();
    assert_eq!(count_ops(&t, &[OpKind::BatchedMatmul]), 0);
    assert_eq!(count_ops(&t, &[OpKind::Einsum]), 2);

    let mut plain = Graph::new(Layout::Bsf);
    let x = plain.push(Op::Input { name: "x".into(), dims: vec![2, 3] }, vec![]);
    let s = plain.push(Op::Softmax { axis: 1 }, vec![x]);
    plain.push(Op::Output { name: "y".into() }, vec![s]);
    assert_eq!(pass_einsum(&plain).unwrap(), plain);
}

#[test]
fn single_matmul_becomes_bik_bkj() {
    let mut g = Graph::new(Layout::Bsf);
    let a = g.push(Op::Input { name: "a".into(), dims: vec![2, 3, 4] }, vec![]);
    let b = g.push(Op::Input { name: "b".into(), dims: vec![2, 4, 5] }, vec![]);
    let m = g.push(Op::BatchedMatmul { transpose_a: false, transpose_b: false }, vec![a, b]);
    g.push(Op::Output { name: "c".into() }, vec![m]);
    let t = pass_einsum(&g).unwrap();
    let Op::Einsum { equation, .. } = &t.nodes[2].op else { panic!("expected einsum, got {:?}", t.nodes[2].op) };
    assert_eq!(*equation, "bik,bkj->bij".parse::<EinsumEquation>().unwrap());
    let bind = random_bindings(&g, 9, 1.0);
    assert!(equivalence(&g, &t, &bind).unwrap() <= 1e-12);
}

#[test]
fn chunk_rules() {
    let g = mha(1, 8, 64, 5);
    assert_eq!(pass_chunk(&g, 1, ChunkAxis::Head).unwrap(), g);
    assert!(pass_chunk(&g, 3, ChunkAxis::Head).is_err());
    assert!(pass_chunk(&g, 0, ChunkAxis::Head).is_err());

    let t = pass_chunk(&g, 8, ChunkAxis::Head).unwrap();
    assert_eq!(count_ops(&t, &[OpKind::Split]), 3);
    assert_eq!(count_ops(&t, &[OpKind::Concat]), 1);
    assert_eq!(count_ops(&t, &[OpKind::Softmax]), 8);
    assert_eq!(count_ops(&t, &[OpKind::BatchedMatmul]), 16);

    let q = pass_chunk(&g, 5, ChunkAxis::Query).unwrap();
    assert_eq!(count_ops(&q, &[OpKind::Split]), 1);
    assert_eq!(count_ops(&q, &[OpKind::Softmax]), 5);

    let mut plain = Graph::new(Layout::Bsf);
    let x = plain.push(Op::Input { name: "x".into(), dims: vec![2] }, vec![]);
    plain.push(Op::Output { name: "y".into() }, vec![x]);
    assert!(pass_chunk(&plain, 2, ChunkAxis::Head).is_err());
}

#[test]
fn passes_are_idempotent() {
    for (h, g) in [(2, mha(1, 2, 8, 4)), (4, mha(2, 4, 16, 3)), (1, mha(1, 1, 4, 1))] {
        let chunk = Pass::Chunk { n: h, axis: ChunkAxis::Head };
        for pass in [Pass::Layout, Pass::Einsum, chunk] {
            let once = pass.apply(&g).unwrap();
            let twice = pass.apply(&once).unwrap();
            assert!(same_structure(&once, &twice), "{pass}");
        }
        let pipeline = [Pass::Layout, Pass::Einsum, chunk];
        let full = apply_passes(&g, &pipeline).unwrap();
        let again = apply_passes(&full, &pipeline).unwrap();
        assert!(same_structure(&full, &again));
    }
}

#[test]
fn table5_size_pipeline_checks() {
    let start = std::time::Instant::now();
    let g = mha(1, 8, 512, 64);
    let t = apply_passes(&g, &[Pass::Layout, Pass::Einsum, Pass::Chunk { n: 8, axis: ChunkAxis::Head }]).unwrap();
    let b = random_bindings(&g, 5, 1.0);
    assert!(equivalence(&g, &t, &b).unwrap() <= 1e-9);
    assert_eq!(memory_copy_score(&t), 0);
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn shape_inference_matches_execution() {
    let g = mha(2, 2, 8, 3);
    for t in [g.clone(), apply_passes(&g, &PIPELINE).unwrap()] {
        // execute() itself checks every produced tensor against inference.
        let run = execute(&t, &random_bindings(&g, 1, 1.0), Precision::Exact).unwrap();
        assert_eq!(run.outputs["y"].dims(), [2, 3, 8]);
    }
}

#[test]
fn graph_softmax_matches_module_softmax() {
    let mut g = Graph::new(Layout::Bsf);
    let x = g.push(Op::Input { name: "x".into(), dims: vec![3, 7] }, vec![]);
    let s = g.push(Op::Softmax { axis: 1 }, vec![x]);
    g.push(Op::Output { name: "y".into() }, vec![s]);
    let b = random_bindings(&g, 4, 3.0);
    let y = &execute(&g, &b, Precision::Exact).unwrap().outputs["y"];
    for (row_in, row_out) in b["x"].data().chunks(7).zip(y.data().chunks(7)) {
        assert_eq!(softmax_exact(row_in), row_out);
    }
    let fp16 = Precision::Simulated(FloatFormat::FP16);
    let y16 = &execute(&g, &b, fp16).unwrap().outputs["y"];
    let table = fpstab_core::softmax::LutSoftmax::default();
    for (row_in, row_out) in b["x"].data().chunks(7).zip(y16.data().chunks(7)) {
        let q: Vec<f64> = row_in.iter().map(|v| fp16.round_quiet(*v)).collect();
        let mut stats = Default::default();
        assert_eq!(table.apply(&q, fp16, &mut stats), row_out);
    }
}

#[test]
fn fp16_overflow_reported_per_node() {
    let g = apply_passes(&mha(1, 2, 16, 8), &PIPELINE).unwrap();
    let b = random_bindings(&g, 8, 1e4);
    let run = execute(&g, &b, Precision::Simulated(FloatFormat::FP16)).unwrap();
    assert!(run.total_stats().overflow > 0);
    assert!(run.nodes.iter().any(|n| n.kind == OpKind::Einsum && n.stats.overflow > 0));
}

#[test]
fn view_folding_matches_manual_reshape() {
    let mut g = Graph::new(Layout::Bsf);
    let a = g.push(Op::Input { name: "a".into(), dims: vec![6, 2] }, vec![]);
    let b = g.push(Op::Input { name: "b".into(), dims: vec![3, 4] }, vec![]);
    let r = g.push(Op::Reshape { dims: vec![3, 4] }, vec![a]);
    let t = g.push(Op::Transpose { perm: vec![1, 0] }, vec![b]);
    let m = g.push(Op::BatchedMatmul { transpose_a: false, transpose_b: false }, vec![r, t]);
    let o = g.push(Op::Transpose { perm: vec![1, 0] }, vec![m]);
    g.push(Op::Output { name: "y".into() }, vec![o]);
    let e = pass_einsum(&g).unwrap();
    assert_eq!(count_ops(&e, &[OpKind::Reshape, OpKind::Transpose]), 0);
    let mut bind = Bindings::new();
    bind.insert("a".into(), Tensor::new(vec![6, 2], (0..12).map(f64::from).collect()).unwrap());
    bind.insert("b".into(), Tensor::new(vec![3, 4], (0..12).map(|v| f64::from(v) - 5.0).collect()).unwrap());
    assert_eq!(equivalence(&g, &e, &bind).unwrap(), 0.0);
}

#[test]
fn rejects_bad_edges() {
    let mut g = Graph::new(Layout::Bsf);
    let x = g.push(Op::Input { name: "x".into(), dims: vec![2] }, vec![]);
    g.push(Op::Output { name: "y".into() }, vec![PortRef { node: x.node, port: 3 }]);
    assert!(g.validate().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pipeline_equivalence_prop(
        bz in 1usize..=2,
        hi in 0usize..4,
        d in 1usize..=8,
        s in 1usize..=12,
        seed in 0u64..1000,
        query in any::<bool>(),
    ) {
        let h = [1, 2, 4, 8][hi];
        let g = mha(bz, h, h * d, s);
        let chunk = if query {
            Pass::Chunk { n: s, axis: ChunkAxis::Query }
        } else {
            Pass::Chunk { n: h, axis: ChunkAxis::Head }
        };
        let t = apply_passes(&g, &[Pass::Layout, Pass::Einsum, chunk]).unwrap();
        let b = random_bindings(&g, seed, 1.0);
        prop_assert!(equivalence(&g, &t, &b).unwrap() <= 1e-9);
        prop_assert_eq!(memory_copy_score(&t), 0);
    }
}
