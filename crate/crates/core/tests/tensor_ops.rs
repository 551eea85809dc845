use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermoseg::tensor::gradcheck::{check_gradients, max_rel_err, DEFAULT_STEP};
use thermoseg::tensor::linalg;
use thermoseg::{Graph, Tensor};

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Direct nested-loop cross-correlation, the oracle for the im2col path.
fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let [n, ci, h, wd] = x.shape().try_into().unwrap();
    let [co, _, k, _] = w.shape().try_into().unwrap();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * ho * wo];
    for i in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b.data()[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                s += x.data()[((i * ci + c) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * ci + c) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((i * co + o) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    Tensor::new(&[n, co, ho, wo], out).unwrap()
}

#[test]
fn conv_identity_kernel() {
    let g = Graph::new();
    let x = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 * 0.5 - 1.0);
    let xv = g.constant(x.clone());
    let w = g.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.conv2d(xv, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y), x);
}

#[test]
fn conv_window_sums_stride2() {
    let g = Graph::new();
    let x = g.constant(Tensor::full(&[1, 1, 4, 4], 1.0));
    let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let b = g.constant(Tensor::zeros(&[1]));
    let y = g.value(g.conv2d(x, w, b, 2, 1).unwrap());
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    // Valid-window pixel counts at the four output positions.
    assert_eq!(y.data(), &[4.0, 6.0, 6.0, 9.0]);
}

#[test]
fn conv_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 3), (1, 2, 5)] {
        let x = random(&[2, 3, 7, 6], &mut rng);
        let w = random(&[4, 3, k, k], &mut rng);
        let b = random(&[4], &mut rng);
        let g = Graph::new();
        let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let got = g.value(g.conv2d(xv, wv, bv, stride, pad).unwrap());
        let want = naive_conv(&x, &w, &b, stride, pad);
        assert_eq!(got.shape(), want.shape());
        for (a, e) in got.data().iter().zip(want.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }
}

#[test]
fn conv_shape_errors_name_dims() {
    let g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 5, 5]));
    let w = g.constant(Tensor::zeros(&[3, 4, 3, 3]));
    let b = g.constant(Tensor::zeros(&[3]));
    let err = g.conv2d(x, w, b, 1, 1).unwrap_err().to_string();
    assert!(err.contains("2 channels") && err.contains("expects 4"), "{err}");
}

#[test]
fn conv_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[1, 2, 6, 6], &mut rng);
    let w = random(&[3, 2, 3, 3], &mut rng);
    let b = random(&[3], &mut rng);
    for stride in [1, 2] {
        let report = check_gradients(
            |g, v| {
                let y = g.conv2d(v[0], v[1], v[2], stride, 1)?;
                // sum of a nonlinear readout so every grad entry is exercised
                let sq = g.mul(y, y)?;
                Ok(g.sum(sq))
            },
            &[x.clone(), w.clone(), b.clone()],
            &[0, 1, 2],
            DEFAULT_STEP,
            usize::MAX,
            &mut rng,
        )
        .unwrap();
        assert!(max_rel_err(&report) < 1e-5, "{report:?}");
    }
}

#[test]
fn softmax_uniform_and_stable() {
    let g = Graph::new();
    let z = g.constant(Tensor::zeros(&[1, 4, 2, 2]));
    let s = g.value(g.softmax_channels(z).unwrap());
    assert!(s.data().iter().all(|&v| v == 0.25));

    let big = g.constant(Tensor::new(&[1, 2, 1, 1], vec![1000.0, 0.0]).unwrap());
    let s = g.value(g.softmax_channels(big).unwrap());
    assert!(s.is_finite());
    assert!((s.data()[0] - 1.0).abs() < 1e-15 && s.data()[1] < 1e-300);
}

#[test]
fn softmax_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&[2, 3, 4, 4], &mut rng);
    let t = random(&[2, 3, 4, 4], &mut rng);
    let report = check_gradients(
        |g, v| {
            let s = g.softmax_channels(v[0])?;
            let p = g.mul(s, v[1])?;
            Ok(g.sum(p))
        },
        &[x, t],
        &[0],
        DEFAULT_STEP,
        usize::MAX,
        &mut rng,
    )
    .unwrap();
    assert!(max_rel_err(&report) < 1e-5, "{report:?}");
}

#[test]
fn elementwise_examples() {
    let g = Graph::new();
    let x = g.constant(Tensor::scalar(-3.2));
    assert_eq!(g.item(g.max_with_zero(x)), 0.0);
    let v = g.constant(Tensor::new(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    assert_eq!(g.item(g.mean(v)), 2.5);
    assert!(g.add(v, g.constant(Tensor::zeros(&[3]))).is_err());
    let c = g.clamp(v, 1.5, 3.5);
    assert_eq!(g.value(c).data(), &[1.5, 2.0, 3.0, 3.5]);
}

#[test]
fn composite_relu_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // keep a·b + c away from the kink
    let a = Tensor::from_fn(&[12], |_| rng.random_range(0.5..1.5));
    let b = Tensor::from_fn(&[12], |i| if i % 2 == 0 { 1.0 } else { -1.0 } * rng.random_range(0.5..1.5));
    let c = Tensor::from_fn(&[12], |_| rng.random_range(-0.2..0.2));
    let report = check_gradients(
        |g, v| {
            let ab = g.mul(v[0], v[1])?;
            let s = g.add(ab, v[2])?;
            let r = g.relu(s);
            let e = g.exp(r);
            let l = g.log(g.add_scalar(e, 1.0));
            Ok(g.sum(l))
        },
        &[a, b, c],
        &[0, 1, 2],
        DEFAULT_STEP,
        usize::MAX,
        &mut rng,
    )
    .unwrap();
    assert!(max_rel_err(&report) < 1e-5, "{report:?}");
}

#[test]
fn logdet_examples_and_gradcheck() {
    let g = Graph::new();
    let eye = Tensor::from_fn(&[9, 9], |i| if i % 10 == 0 { 1.0 } else { 0.0 });
    let e = g.constant(eye);
    assert_eq!(g.item(g.cholesky_logdet(e).unwrap()), 0.0);
    let d = g.constant(Tensor::new(&[2, 2], vec![2.0, 0.0, 0.0, 2.0]).unwrap());
    assert!((g.item(g.cholesky_logdet(d).unwrap()) - 1.386294).abs() < 1e-6);

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let a = random(&[1, 5, 5], &mut rng);
    let report = check_gradients(
        |g, v| {
            let aat = g.bmm(v[0], v[0], false, true)?;
            let spd = g.add_scaled_identity(aat, 1.0)?;
            let ld = g.cholesky_logdet(spd)?;
            Ok(g.sum(ld))
        },
        &[a],
        &[0],
        DEFAULT_STEP,
        usize::MAX,
        &mut rng,
    )
    .unwrap();
    assert!(max_rel_err(&report) < 1e-4, "{report:?}");
}

#[test]
fn logdet_reports_failing_pivot() {
    let g = Graph::new();
    let m = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, -1.0]).unwrap());
    match g.cholesky_logdet(m).unwrap_err() {
        thermoseg::Error::Singular { pivot, .. } => assert_eq!(pivot, 1),
        e => panic!("{e:?}"),
    }
}

#[test]
fn inverse_and_matmul_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let a = random(&[2, 4, 6], &mut rng);
    let b = random(&[2, 3, 6], &mut rng);
    let report = check_gradients(
        |g, v| {
            let pp = g.bmm(v[0], v[0], false, true)?;
            let inv = g.spd_inverse(g.add_scaled_identity(pp, 0.5)?)?;
            let yp = g.bmm(v[1], v[0], false, true)?; // 3×4
            let t1 = g.bmm(yp, inv, false, false)?; // 3×4
            let t = g.bmm(t1, yp, false, true)?; // 3×3
            let tt = g.bmm(v[1], t1, true, false)?; // (6×3)·(3×4)
            let s = g.add(g.sum(t), g.mul_scalar(g.sum(g.mul(tt, tt)?), 0.1))?;
            Ok(s)
        },
        &[a, b],
        &[0, 1],
        DEFAULT_STEP,
        usize::MAX,
        &mut rng,
    )
    .unwrap();
    assert!(max_rel_err(&report) < 1e-5, "{report:?}");
}

#[test]
fn pooling_unfold_concat_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let x = random(&[1, 2, 6, 6], &mut rng);
    let y = random(&[1, 1, 6, 6], &mut rng);
    let report = check_gradients(
        |g, v| {
            let cat = g.concat_channels(v[0], v[1])?;
            let mp = g.max_pool2(cat)?;
            let up = g.upsample_nearest2(mp)?;
            let ap = g.avg_pool(g.mul(up, cat)?, 2)?;
            let un = g.unfold(ap, 3)?;
            let c = g.center_last(un)?;
            let sq = g.mul(c, c)?;
            let per = g.sum_per_channel(g.reshape(sq, &[1, 3, 9, 1])?)?;
            Ok(g.sum(g.mul(per, per)?))
        },
        &[x, y],
        &[0, 1],
        DEFAULT_STEP,
        usize::MAX,
        &mut rng,
    )
    .unwrap();
    assert!(max_rel_err(&report) < 1e-5, "{report:?}");
}

#[test]
fn backward_scalar_leaf_and_square() {
    let g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    g.backward(x).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 1.0);

    let g = Graph::new();
    let x = g.param(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let l = g.sum(g.mul(x, x).unwrap());
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);
    // a second call accumulates
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[4.0, 8.0, 12.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn backward_rejects_non_scalar() {
    let g = Graph::new();
    let x = g.param(Tensor::zeros(&[2]));
    assert!(g.backward(x).is_err());
}

#[test]
fn two_consumers_sum_contributions() {
    // l = x·3 + x² at x = 2 → dl/dx = 3 + 4
    let g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let a = g.mul_scalar(x, 3.0);
    let b = g.mul(x, x).unwrap();
    let l = g.add(a, b).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().item(), 7.0);
}

#[test]
fn constants_get_no_gradient() {
    let g = Graph::new();
    let x = g.param(Tensor::scalar(2.0));
    let c = g.constant(Tensor::scalar(5.0));
    let l = g.mul(x, c).unwrap();
    g.backward(l).unwrap();
    assert!(g.grad(c).is_none());
    assert_eq!(g.grad(x).unwrap().item(), 5.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_is_a_distribution(vals in proptest::collection::vec(-50.0f64..50.0, 3 * 2 * 2)) {
        let g = Graph::new();
        let x = g.constant(Tensor::new(&[1, 3, 2, 2], vals).unwrap());
        let s = g.value(g.softmax_channels(x).unwrap());
        for p in 0..4 {
            let total: f64 = (0..3).map(|c| s.data()[c * 4 + p]).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
        prop_assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn logdet_of_inverse_cancels(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4;
        let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut spd = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                spd[i * n + j] = (0..n).map(|k| a[i * n + k] * a[j * n + k]).sum::<f64>()
                    + if i == j { 0.5 } else { 0.0 };
            }
        }
        let inv = linalg::spd_inverse(&spd, n).unwrap();
        let total = linalg::spd_logdet(&spd, n).unwrap() + linalg::spd_logdet(&inv, n).unwrap();
        prop_assert!(total.abs() < 1e-8);
    }
}
