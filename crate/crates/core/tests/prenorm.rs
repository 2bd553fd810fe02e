use fpstab_core::prenorm::*;
use fpstab_core::rng::{normal, seeded, Rng};
use fpstab_core::{FloatFormat, Precision};
use proptest::prelude::*;

const ORDERS: [f64; 4] = [1.0, 1.5, 2.0, 4.0];
const MAXES: [f64; 2] = [1024.0, 65504.0];

fn pow_sum(x: &[f64], p: f64) -> f64 {
    x.iter().map(|v| v.abs().powf(p)).sum()
}

/// Zero-mean vector from one of several shapes: Gaussian, uniform, heavy
/// tailed, sparse.
fn random_zero_mean(rng: &mut impl Rng, n: usize, kind: usize) -> Vec<f64> {
    let mut x: Vec<f64> = (0..n)
        .map(|_| match kind % 4 {
            0 => normal(rng),
            1 => rng.random_range(-1.0..1.0),
            2 => normal(rng) / rng.random_range(0.01f64..1.0).powi(2),
            _ => {
                if rng.random_bool(0.1) {
                    normal(rng) * 100.0
                } else {
                    0.0
                }
            }
        })
        .collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    x
}

#[test]
fn theorem1_caps_power_sum_on_random_vectors() {
    let mut rng = seeded(101);
    for trial in 0..20_000 {
        let n = rng.random_range(2..=512);
        let p = ORDERS[trial % 4];
        let m = MAXES[(trial / 4) % 2];
        let x = random_zero_mean(&mut rng, n, trial / 8);
        let Ok(z) = ZeroMeanVector::new(x) else {
            continue;
        };
        let y = prenormalize(&z, &PrenormSpec::theorem1(p, m).unwrap()).values;
        let s = pow_sum(&y, p);
        assert!(s <= m * (1.0 + 1e-12), "n={n} p={p} M={m}: {s}");
        if p > 1.0 && n > 2 {
            // Three or more non-zero entries are never extremal.
            let nonzero = y.iter().filter(|v| **v != 0.0).count();
            if nonzero > 2 {
                assert!(s < m * (1.0 - 1e-6), "n={n} p={p}: {s} touches {m}");
            }
        }
    }
}

#[test]
fn extremal_vectors_reach_the_cap() {
    for n in [2, 3, 17, 512] {
        for p in ORDERS {
            for m in MAXES {
                for s in [1e-3, 1.0, 7.5, 1e4] {
                    let x = extremal_vector(s, n).unwrap();
                    let y = prenormalize(&x, &PrenormSpec::theorem1(p, m).unwrap()).values;
                    let got = pow_sum(&y, p);
                    assert!((got - m).abs() / m < 1e-6, "n={n} p={p} M={m} S={s}: {got}");
                }
            }
        }
    }
}

#[test]
fn lemma1_bound_closed_form() {
    // Direct evaluation of Σ|x|^p at the extremal point: 2 (S/2)^p.
    for p in [1.0, 1.5, 2.0, 3.0, 7.0] {
        for s in [0.0, 0.5, 2.0, 10.0] {
            let direct = 2.0 * (s / 2.0f64).powf(p);
            assert!((lemma1_bound(s, p) - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }
    assert_eq!(lemma1_bound(2.0, 2.0), 2.0);
    assert_eq!(lemma1_bound(4.0, 3.0), 16.0);
}

#[test]
fn p2_scale_constant() {
    let target = 2f64.sqrt() / 512.0;
    assert!((theorem1_scale(2.0, 65504.0) - target).abs() / target < 1e-3);
    assert!((theorem1_scale(2.0, 65536.0) - target).abs() < 1e-15);
    assert!((theorem1_scale(2.0, 65504.0) - 0.0027629).abs() < 1e-7);
    assert_eq!(theorem1_scale(1.0, 2.0), 0.5);
}

#[test]
fn oracle_agrees_with_bound_on_small_cases() {
    let budget = OracleBudget { merge_starts: 500, samples: 20_000 };
    for n in 2..=6 {
        for p in [1.5, 2.0, 3.0] {
            for s in [1.0, 2.0, 10.0] {
                let out = lemma1_oracle(n, s, p, budget, 5).unwrap();
                let bound = lemma1_bound(s, p);
                assert!((out.max_value - bound).abs() <= 1e-9 * bound, "n={n} p={p} S={s}");
                assert_eq!(out.decreasing_steps, 0);
                let mut mags: Vec<f64> = out.argmax.iter().map(|v| v.abs()).collect();
                mags.sort_by(|a, b| b.total_cmp(a));
                assert!((mags[0] - s / 2.0).abs() < 1e-6 && (mags[1] - s / 2.0).abs() < 1e-6);
                assert!(mags[2..].iter().all(|v| *v < 1e-6));
                assert!(out.sample_max <= bound * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn oracle_at_p1_is_flat() {
    let out = lemma1_oracle(5, 1.0, 1.0, OracleBudget { merge_starts: 200, samples: 5_000 }, 1).unwrap();
    assert!((out.max_value - 1.0).abs() < 1e-12);
    assert!((out.sample_max - 1.0).abs() < 1e-12);
}

#[test]
fn mad_uniform_and_gaussian() {
    let u = mad_monte_carlo(SampleDistribution::Uniform { half_width: 10.0 }, 1_000_000, 3).unwrap();
    assert!(u.mean_abs_relative_error() < 0.01);
    assert!((u.mean_abs - 5.0).abs() < 0.05);
    let slack = 3.0 / (u.samples as f64).sqrt();
    assert!(u.max_abs_normalized <= 2.0 + slack, "{}", u.max_abs_normalized);

    for sigma in [1.0, 3.0] {
        let g = mad_monte_carlo(SampleDistribution::Gaussian { sigma }, 1_000_000, 4).unwrap();
        let expect = (2.0 / std::f64::consts::PI).sqrt() * sigma;
        assert!((g.mean_abs - expect).abs() / expect < 0.01);
        assert!(g.tail_fraction <= 2e-4, "{}", g.tail_fraction);
    }
}

#[test]
fn mad_runs_are_reproducible() {
    let d = SampleDistribution::Gaussian { sigma: 2.0 };
    assert_eq!(mad_monte_carlo(d, 20_000, 9).unwrap(), mad_monte_carlo(d, 20_000, 9).unwrap());
    assert_ne!(mad_monte_carlo(d, 20_000, 9).unwrap(), mad_monte_carlo(d, 20_000, 10).unwrap());
}

#[test]
fn stabilizer_prevents_fp16_overflow() {
    let prec = Precision::Simulated(FloatFormat::FP16);
    let spec = LayerNormSpec::default();
    let mut rng = seeded(55);
    for _ in 0..20 {
        // max |x| about 300 over 512 entries: Σx² is far above 65504.
        let x: Vec<f64> = (0..512).map(|_| 90.0 * normal(&mut rng)).collect();
        assert!(x.iter().map(|v| v * v).sum::<f64>() > 65504.0);
        let naive = stabilized_layernorm(&x, None, &spec, prec).unwrap();
        assert!(naive.stats.overflow >= 1);
        let reference = layernorm(&x, &spec).unwrap();
        for pre in [PrenormSpec::theorem1(2.0, 65504.0).unwrap(), PrenormSpec::mad()] {
            let out = stabilized_layernorm(&x, Some(&pre), &spec, prec).unwrap();
            assert_eq!(out.stats.overflow, 0);
            let err = out.values.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-2, "{}: {err}", pre.name());
        }
    }
}

#[test]
fn tiny_inputs_never_overflow() {
    let prec = Precision::Simulated(FloatFormat::FP16);
    let mut rng = seeded(56);
    let x: Vec<f64> = (0..512).map(|_| 0.05 * normal(&mut rng)).collect();
    let spec = LayerNormSpec::default();
    assert_eq!(stabilized_layernorm(&x, None, &spec, prec).unwrap().stats.overflow, 0);
    let out = stabilized_layernorm(&x, Some(&PrenormSpec::mad()), &spec, prec).unwrap();
    assert_eq!(out.stats.overflow, 0);
}

#[test]
fn fp32_pair_matches_exact() {
    let spec = LayerNormSpec::default();
    let prec = Precision::Simulated(FloatFormat::FP32);
    for pre in [None, Some(PrenormSpec::mad()), Some(PrenormSpec::theorem1(2.0, 65504.0).unwrap())] {
        let out = stabilized_layernorm(&[1.0, -1.0], pre.as_ref(), &spec, prec).unwrap();
        let want = layernorm(&[1.0, -1.0], &spec).unwrap();
        for (a, b) in out.values.iter().zip(&want) {
            assert!((a - b).abs() < 1e-3);
        }
    }
}

proptest! {
    #[test]
    fn layernorm_shift_scale_invariant(
        x in prop::collection::vec(-100.0f64..100.0, 2..64),
        alpha in 0.01f64..100.0,
        beta in -1e3f64..1e3,
    ) {
        let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-2);
        // A tiny epsilon keeps the ε term from breaking scale invariance.
        let spec = LayerNormSpec::new(1e-300).unwrap();
        let base = layernorm(&x, &spec).unwrap();
        let moved: Vec<f64> = x.iter().map(|v| alpha * v + beta).collect();
        let out = layernorm(&moved, &spec).unwrap();
        for (a, b) in out.iter().zip(&base) {
            prop_assert!((a - b).abs() < 1e-9, "{} vs {}", a, b);
        }
    }

    #[test]
    fn prenormalized_layernorm_equals_plain_in_f64(
        x in prop::collection::vec(-1e4f64..1e4, 2..64),
        p in 1.0f64..4.0,
    ) {
        let spec = LayerNormSpec::new(1e-300).unwrap();
        let plain = layernorm(&x, &spec).unwrap();
        let pre = PrenormSpec::theorem1(p, 65504.0).unwrap();
        let out = stabilized_layernorm(&x, Some(&pre), &spec, Precision::Exact).unwrap();
        if let Some(PrenormStatus::Scaled { .. }) = out.prenorm {
            for (a, b) in out.values.iter().zip(&plain) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn merge_step_strictly_increases(
        x in prop::collection::vec(-10.0f64..10.0, 3..8),
        p in 1.01f64..5.0,
        positive in any::<bool>(),
    ) {
        let same_sign = x.iter().filter(|v| if positive { **v > 1e-3 } else { **v < -1e-3 }).count();
        prop_assume!(same_sign >= 2);
        prop_assume!(x.iter().all(|v| v.abs() > 1e-3));
        let mut y = x.clone();
        prop_assert!(merge_step(&mut y, positive));
        prop_assert!(pow_sum(&y, p) > pow_sum(&x, p));
        prop_assert!((y.iter().sum::<f64>() - x.iter().sum::<f64>()).abs() < 1e-9);
        prop_assert!((pow_sum(&y, 1.0) - pow_sum(&x, 1.0)).abs() < 1e-9);
    }

    #[test]
    fn lp_norm_is_homogeneous(x in prop::collection::vec(-50.0f64..50.0, 1..32), p in 1.0f64..6.0, c in 0.1f64..10.0) {
        let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
        let a = lp_norm(&scaled, p).unwrap();
        let b = c * lp_norm(&x, p).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
    }
}

#[test]
fn lp_norm_rejects_small_orders() {
    assert!(lp_norm(&[1.0], 0.5).is_err());
    assert_eq!(lp_norm(&[-3.0, 4.0], 2.0).unwrap(), 5.0);
    assert!((lp_norm(&[1.0; 4], 4.0).unwrap() - 4f64.powf(0.25)).abs() < 1e-15);
}
