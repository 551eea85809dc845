use rand::Rng;
use thermoseg::samcl::*;
use thermoseg::tensor::gradcheck::{check_gradients, max_rel_err, DEFAULT_STEP};
use thermoseg::tensor::{Graph, Tensor};
use thermoseg::{rng, LabelMask};

/// Blocky random mask with every class present.
fn blocks(h: usize, w: usize, c: usize, seed: u64) -> LabelMask {
    let mut r = rng::seeded(seed);
    let mut labels: Vec<u8> = (0..h * w)
        .map(|i| {
            let (row, col) = (i / w, i % w);
            (((row / 2) * 7 + (col / 3) * 3) % c) as u8
        })
        .collect();
    for _ in 0..h {
        let i = r.random_range(0..h * w);
        labels[i] = r.random_range(0..c as u8);
    }
    LabelMask::new(h, w, labels).unwrap()
}

fn saturated(y: &Tensor, scale: f64) -> Tensor {
    Tensor::from_fn(y.shape(), |i| if y.data()[i] == 1.0 { scale } else { -scale })
}

#[test]
fn derangements_have_no_fixed_points() {
    let mut r = rng::seeded(1);
    for c in 2..=6 {
        for _ in 0..500 {
            let p = derangement(c, &mut r).unwrap();
            let mut sorted = p.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, (0..c).collect::<Vec<_>>());
            assert!(p.iter().enumerate().all(|(i, &x)| i != x));
        }
    }
}

#[test]
fn three_class_derangements_are_balanced() {
    let mut r = rng::seeded(2);
    let hits = (0..1000)
        .filter(|_| derangement(3, &mut r).unwrap() == vec![1, 2, 0])
        .count();
    assert!((hits as f64 / 1000.0 - 0.5).abs() <= 0.05, "{hits}");
}

#[test]
fn matching_logits_are_closer_than_uniform() {
    let cfg = LossConfig::default();
    let m = blocks(8, 8, 2, 0);
    let y = one_hot(&[&m], 2).unwrap();
    let g = Graph::new();
    let good = rmi_distance(&g, g.constant(saturated(&y, 10.0)), &y, &cfg).unwrap();
    let flat = rmi_distance(&g, g.constant(Tensor::zeros(y.shape())), &y, &cfg).unwrap();
    assert!(g.item(good) < g.item(flat));
}

#[test]
fn saturated_cross_entropy_vanishes() {
    let cfg = LossConfig {
        lambda_ce: 1.0,
        lambda_mi: 0.0,
        ..LossConfig::default()
    };
    let m = blocks(8, 8, 3, 1);
    let y = one_hot(&[&m], 3).unwrap();
    let g = Graph::new();
    let d = rmi_distance(&g, g.constant(saturated(&y, 10.0)), &y, &cfg).unwrap();
    assert!(g.item(d) < 1e-3, "{}", g.item(d));
}

#[test]
fn rmi_gradient_matches_finite_differences() {
    let cfg = LossConfig::default();
    let m1 = blocks(8, 8, 2, 3);
    let m2 = blocks(8, 8, 2, 4);
    let y = one_hot(&[&m1, &m2], 2).unwrap();
    let mut r = rng::seeded(5);
    let logits = Tensor::from_fn(y.shape(), |_| r.random_range(-2.0..2.0));
    let report = check_gradients(
        |g, v| rmi_distance(g, v[0], &y, &cfg),
        &[logits],
        &[0],
        DEFAULT_STEP,
        usize::MAX,
        &mut r,
    )
    .unwrap();
    assert!(max_rel_err(&report) < 1e-4, "{report:?}");
}

#[test]
fn saturated_aligned_features_are_close() {
    let g = Graph::new();
    let a = g.constant(Tensor::new(&[1, 2, 1, 2], vec![10.0, -10.0, -10.0, 10.0]).unwrap());
    let d = ce_distance(&g, a, a).unwrap();
    assert!(g.item(d) < 1e-6);
}

#[test]
fn cross_entropy_is_asymmetric() {
    let mut r = rng::seeded(8);
    let g = Graph::new();
    let a = g.constant(Tensor::from_fn(&[1, 3, 4, 4], |_| r.random_range(-2.0..2.0)));
    let b = g.constant(Tensor::from_fn(&[1, 3, 4, 4], |_| r.random_range(-2.0..2.0)));
    let (ab, ba) = (ce_distance(&g, a, b).unwrap(), ce_distance(&g, b, a).unwrap());
    assert!((g.item(ab) - g.item(ba)).abs() > 1e-6);
    let c = g.constant(Tensor::zeros(&[1, 3, 2, 2]));
    assert!(ce_distance(&g, a, c).is_err());
}

#[test]
fn identical_anchor_hinge_uses_entropy_floor() {
    let mut r = rng::seeded(9);
    let g = Graph::new();
    let a = g.constant(Tensor::from_fn(&[1, 3, 4, 4], |_| r.random_range(-1.0..1.0)));
    let n = g.constant(Tensor::from_fn(&[1, 3, 4, 4], |_| r.random_range(-3.0..3.0)));
    let floor = g.item(ce_distance(&g, a, a).unwrap());
    let d_an = g.item(ce_distance(&g, a, n).unwrap());
    let t = triplet_term(&g, ce_distance(&g, a, a).unwrap(), ce_distance(&g, a, n).unwrap(), 1.0).unwrap();
    assert_eq!(g.item(t), (1.0 + floor - d_an).max(0.0));
    assert!(floor > 0.0);
}

#[test]
fn aux_passes_are_independent_and_shared() {
    let net = AuxNet::new(3, &mut rng::seeded(1));
    let g = Graph::new();
    let vars = net.params().bind(&g, true);
    let m = blocks(16, 16, 3, 2);
    let y = g.constant(one_hot(&[&m], 3).unwrap());
    let a = net.forward(&g, &vars, y).unwrap();
    let b = net.forward(&g, &vars, y).unwrap();
    for i in 0..3 {
        assert_eq!(g.value(a[i]), g.value(b[i]));
    }
}

fn instance(c: usize, hw: usize, seed: u64) -> (Tensor, SwappedMask) {
    let m = blocks(hw, hw, c, seed);
    let y = one_hot(&[&m], c).unwrap();
    let neg = class_swap(&y, &mut rng::seeded(seed)).unwrap();
    (y, neg)
}

#[test]
fn saturated_correct_logits_with_zero_margin() {
    let cfg = LossConfig {
        margin: 0.0,
        ..LossConfig::default()
    };
    let (y, neg) = instance(2, 8, 4);
    let net = AuxNet::new(2, &mut rng::seeded(3));
    let g = Graph::new();
    let vars = net.params().bind(&g, false);
    let logits = g.constant(saturated(&y, 10.0));
    let terms = samcl_loss(&g, logits, &y, &neg.tensor, &net, &vars, &cfg).unwrap();
    assert!(g.item(terms.total) < 1e-3, "{}", g.item(terms.total));
}

#[test]
fn swapping_positive_and_negative_raises_loss() {
    let cfg = LossConfig::default();
    let (y, neg) = instance(2, 8, 5);
    let net = AuxNet::new(2, &mut rng::seeded(3));
    let g = Graph::new();
    let vars = net.params().bind(&g, false);
    let logits = g.constant(saturated(&y, 10.0));
    let right = samcl_loss(&g, logits, &y, &neg.tensor, &net, &vars, &cfg).unwrap();
    let wrong = samcl_loss(&g, logits, &neg.tensor, &y, &net, &vars, &cfg).unwrap();
    assert!(g.item(wrong.total) > g.item(right.total));
    assert!(g.item(right.total) >= 0.0);
}

/// Aux parameters with nonzero biases keep relu inputs off the kink.
fn jittered_aux(c: usize, seed: u64) -> AuxNet {
    let mut net = AuxNet::new(c, &mut rng::seeded(seed));
    let mut r = rng::seeded(seed ^ 0xabc);
    for t in net.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += r.random_range(-0.3..0.3);
        }
    }
    net
}

#[test]
fn samcl_gradient_matches_finite_differences() {
    let cfg = LossConfig::default();
    for seed in 0..2u64 {
        let (y, neg) = instance(3, 16, seed);
        let net = jittered_aux(3, seed);
        let mut r = rng::seeded(100 + seed);
        let logits = Tensor::from_fn(y.shape(), |_| r.random_range(-1.5..1.5));
        let mut inputs = vec![logits];
        inputs.extend(net.params().tensors().iter().cloned());
        let wrt: Vec<usize> = (0..inputs.len()).collect();
        let report = check_gradients(
            |g, v| Ok(samcl_loss(g, v[0], &y, &neg.tensor, &net, &v[1..], &cfg)?.total),
            &inputs,
            &wrt,
            DEFAULT_STEP,
            64,
            &mut r,
        )
        .unwrap();
        assert!(max_rel_err(&report) < 1e-4, "{report:?}");
    }
}

#[test]
fn descent_on_logits_lowers_the_loss() {
    let cfg = LossConfig::default();
    let (y, neg) = instance(3, 16, 7);
    let net = AuxNet::new(3, &mut rng::seeded(7));
    let mut logits = Tensor::zeros(y.shape());
    let mut prev = f64::INFINITY;
    for step in 0..50 {
        let g = Graph::new();
        let vars = net.params().bind(&g, false);
        let l = g.param(logits.clone());
        let t = samcl_loss(&g, l, &y, &neg.tensor, &net, &vars, &cfg).unwrap();
        let value = g.item(t.total);
        assert!(value < prev, "step {step}: {value} !< {prev}");
        prev = value;
        g.backward(t.total).unwrap();
        let grad = g.grad(l).unwrap();
        for (x, d) in logits.data_mut().iter_mut().zip(grad.data()) {
            *x -= 1.0 * d;
        }
    }
}
