use fpstab_core::convsub::*;
use fpstab_core::rng::{normal, seeded, Rng};
use fpstab_core::{FloatFormat, Precision};
use proptest::prelude::*;

/// Scatter-form grouped convolution: every input sample is pushed into the
/// outputs whose window covers it.
fn naive_conv(input: &Tensor3, spec: &ConvLayerSpec, w: &ConvWeights) -> Vec<f64> {
    let (c, h, wd) = input.shape();
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let oh = (h - kh) / sh + 1;
    let ow = (wd - kw) / sw + 1;
    let cin_g = c / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let mut out = vec![0.0; spec.out_channels * oh * ow];
    for o in 0..spec.out_channels {
        for v in &mut out[o * oh * ow..(o + 1) * oh * ow] {
            *v = w.bias[o];
        }
    }
    for ci in 0..c {
        let g = ci / cin_g;
        for y in 0..h {
            for x in 0..wd {
                let v = input.get(ci, y, x);
                for ky in 0..kh {
                    for kx in 0..kw {
                        if y < ky || x < kx || (y - ky) % sh != 0 || (x - kx) % sw != 0 {
                            continue;
                        }
                        let (oy, ox) = ((y - ky) / sh, (x - kx) / sw);
                        if oy >= oh || ox >= ow {
                            continue;
                        }
                        for oc in g * cout_g..(g + 1) * cout_g {
                            let widx = ((oc * cin_g + ci % cin_g) * kh + ky) * kw + kx;
                            out[(oc * oh + oy) * ow + ox] += v * w.weights[widx];
                        }
                    }
                }
            }
        }
    }
    out
}

fn random_tensor(rng: &mut impl Rng, c: usize, h: usize, w: usize) -> Tensor3 {
    Tensor3::new(c, h, w, (0..c * h * w).map(|_| normal(rng)).collect()).unwrap()
}

#[test]
fn grouped_conv_matches_scatter_oracle() {
    let mut rng = seeded(61);
    for case in 0..50 {
        let groups = rng.random_range(1..=4);
        let in_ch = groups * rng.random_range(1..=3);
        // Every other case is depthwise: one input channel per group.
        let (in_ch, out_ch, groups) =
            if case % 2 == 0 { (in_ch, groups * rng.random_range(1..=3), groups) } else { (in_ch, in_ch, in_ch) };
        let k = (rng.random_range(1..=4), rng.random_range(1..=4));
        let s = (rng.random_range(1..=3), rng.random_range(1..=3));
        let spec = ConvLayerSpec::new(in_ch, out_ch, k, s, groups).unwrap();
        let h = k.0 + rng.random_range(0..8);
        let w = k.1 + rng.random_range(0..8);
        let input = random_tensor(&mut rng, in_ch, h, w);
        let mut weights = ConvWeights::random(&spec, &mut rng);
        weights.bias.iter_mut().for_each(|b| *b = normal(&mut rng));
        let got = conv2d_forward(&input, &spec, &weights).unwrap();
        let want = naive_conv(&input, &spec, &weights);
        assert_eq!(got.data().len(), want.len());
        for (a, b) in got.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10, "case {case}: {a} vs {b}");
        }
    }
}

#[test]
fn depthwise_then_pointwise_factorizes_a_dense_kernel() {
    // A rank-one dense kernel W[o][i] = P[o][i] * D[i] is exactly a depthwise
    // pass with D followed by a 1x1 pass with P.
    let mut rng = seeded(62);
    let (c, k) = (3, (2, 3));
    let dw = ConvLayerSpec::new(c, c, k, (1, 1), c).unwrap();
    let pw = ConvLayerSpec::new(c, 4, (1, 1), (1, 1), 1).unwrap();
    let dense = ConvLayerSpec::new(c, 4, k, (1, 1), 1).unwrap();
    let dw_w = ConvWeights::random(&dw, &mut rng);
    let pw_w = ConvWeights::random(&pw, &mut rng);
    let mut dense_w = ConvWeights::zeros(&dense);
    for o in 0..4 {
        for i in 0..c {
            for t in 0..k.0 * k.1 {
                dense_w.weights[(o * c + i) * k.0 * k.1 + t] =
                    pw_w.weights[o * c + i] * dw_w.weights[i * k.0 * k.1 + t];
            }
        }
    }
    let x = random_tensor(&mut rng, c, 6, 7);
    let two_step = conv2d_forward(&conv2d_forward(&x, &dw, &dw_w).unwrap(), &pw, &pw_w).unwrap();
    let one_step = conv2d_forward(&x, &dense, &dense_w).unwrap();
    for (a, b) in two_step.data().iter().zip(one_step.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn dws_is_cheaper_for_every_shape() {
    for width in [16, 64, 512] {
        let conv = SubsamplingConfig::preset("conv2d6", width).unwrap();
        let dws = SubsamplingConfig::preset("dws2d6", width).unwrap();
        for t in [11, 16, 50, 100, 400, 1000] {
            for f in [11, 40, 80] {
                let a = mac_count(&dws, (1, t, f)).unwrap();
                let b = mac_count(&conv, (1, t, f)).unwrap();
                assert!(a < b, "width {width} t {t} f {f}: {a} >= {b}");
            }
        }
    }
}

#[test]
fn mac_counts_follow_closed_forms() {
    // Direct count: each output sample costs (in/groups)·kh·kw MACs.
    let conv = SubsamplingConfig::preset("conv2d6", 512).unwrap();
    let (t, f) = (100, 80);
    let (h1, w1) = ((t - 3) / 2 + 1, (f - 3) / 2 + 1);
    let (h2, w2) = ((h1 - 5) / 3 + 1, (w1 - 5) / 3 + 1);
    let l1 = 512 * h1 * w1 * 9;
    let l2 = 512 * h2 * w2 * 512 * 25;
    assert_eq!(mac_breakdown(&conv, (1, t, f)).unwrap(), [l1 as u64, l2 as u64]);

    let dws = SubsamplingConfig::preset("dws2d6", 512).unwrap();
    let l2d = 512 * h2 * w2 * 25;
    let l3 = 512 * h2 * w2 * 512;
    assert_eq!(mac_breakdown(&dws, (1, t, f)).unwrap(), [l1 as u64, l2d as u64, l3 as u64]);
}

#[test]
fn multiplier_scales_chunk_maxima_exactly() {
    let stream = ChunkStream::gaussian(6, 20, 24, 1.0, 63);
    for (base, scaled) in [("conv2d6", "conv2d6x22"), ("dws2d6", "dws2d6x22")] {
        let a = SubsamplingConfig::preset(base, 16).unwrap();
        let b = SubsamplingConfig::preset(scaled, 16).unwrap();
        let wa = a.random_weights(5);
        let wb = b.random_weights(5);
        assert_eq!(wa, wb);
        let pa = profile_dynamic_range(&stream, &a, &wa, Precision::Exact).unwrap();
        let pb = profile_dynamic_range(&stream, &b, &wb, Precision::Exact).unwrap();
        let m = 512f64.sqrt();
        for (x, y) in pa.per_chunk_max.iter().zip(&pb.per_chunk_max) {
            assert!(((y / x) - m).abs() / m < 1e-12);
        }
    }
}

#[test]
fn fp16_profile_reports_overflow_on_loud_input() {
    let stream = ChunkStream::gaussian(4, 20, 24, 2000.0, 64);
    let cfg = SubsamplingConfig::preset("conv2d6x22", 32).unwrap();
    let w = cfg.random_weights(1);
    let prof = profile_dynamic_range(&stream, &cfg, &w, Precision::Simulated(FloatFormat::FP16)).unwrap();
    assert!(prof.overflow_chunks > 0);
    assert_eq!(prof.per_chunk_max.len(), 4);
    assert_eq!(prof.histogram.total(), 4);
}

#[test]
fn encoder_macs_dominate_subsampling() {
    let enc = mac_count_encoder(&EncoderConfig::default(), 25);
    let sub = mac_count(&SubsamplingConfig::preset("conv2d6", 512).unwrap(), (1, 160, 80)).unwrap();
    assert!(enc.total > 0 && sub > 0);
    let d = 512u64;
    assert_eq!(enc.attention_projections, 12 * 4 * 25 * d * d);
    assert_eq!(enc.attention_products, 12 * 2 * 25 * 25 * d);
}

proptest! {
    #[test]
    fn output_dims_formula(h in 1usize..64, w in 1usize..64, kh in 1usize..6, kw in 1usize..6, sh in 1usize..4, sw in 1usize..4) {
        let spec = ConvLayerSpec::new(1, 1, (kh, kw), (sh, sw), 1).unwrap();
        match spec.output_dims(h, w) {
            Ok((oh, ow)) => {
                prop_assert!(h >= kh && w >= kw);
                prop_assert_eq!(oh, (h - kh) / sh + 1);
                prop_assert_eq!(ow, (w - kw) / sw + 1);
            }
            Err(_) => prop_assert!(h < kh || w < kw),
        }
    }

    #[test]
    fn histogram_counts_every_value(vals in prop::collection::vec(-1e7f64..1e7, 0..200)) {
        let mut hist = LogHistogram::default();
        for v in &vals {
            hist.add(*v);
        }
        prop_assert_eq!(hist.total(), vals.len() as u64);
    }
}
