use absgen::nn::{
    build_cnn, build_mlp, loss_bce, loss_contrastive, loss_mse, Architecture, LossKind, Network, OutputConvention,
    PairExample, PairLabel, PairScorer, Params,
};
use absgen::rng;
use absgen::{Error, Graph, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn random_image(seed: u64, shape: &[usize]) -> Tensor {
    let mut r = rng::seeded(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random::<f64>()).collect()).unwrap()
}

fn pair(seed: u64, shape: &[usize], label: PairLabel) -> PairExample {
    PairExample::new(random_image(seed, shape), random_image(seed + 1000, shape), label).unwrap()
}

fn zero_last_layer(net: &mut Network) {
    let last = net.spec.layers.len() - 1;
    for suffix in ["weight", "bias"] {
        let t = net.params.get_mut(&format!("layer{last}.{suffix}")).unwrap();
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn zero_final_layer_gives_neutral_score() {
    let mut signed = Network::pair_mlp(8, OutputConvention::SignedDistance, 1).unwrap();
    let mut prob = Network::pair_mlp(8, OutputConvention::Probability, 1).unwrap();
    zero_last_layer(&mut signed);
    zero_last_layer(&mut prob);
    for s in 0..5 {
        let p = pair(s, &[8], PairLabel::Different);
        assert_eq!(signed.forward_pair(&p).unwrap(), 0.0);
        assert_eq!(prob.forward_pair(&p).unwrap(), 0.5);
    }
}

#[test]
fn fresh_pair_model_is_finite_and_in_range() {
    let net = Network::pair_mlp(784, OutputConvention::SignedDistance, 5).unwrap();
    for s in 0..10 {
        let v = net.forward_pair(&pair(s, &[1, 28, 28], PairLabel::Identical)).unwrap();
        assert!(v.is_finite() && (-1.0..=1.0).contains(&v));
    }
}

#[test]
fn cnn_pair_on_mnist_shape_is_a_probability() {
    let net = Network::pair_cnn(1, (28, 28), 2).unwrap();
    assert_eq!(net.spec, build_cnn(2, (28, 28)).unwrap());
    let v = net.forward_pair(&pair(3, &[1, 28, 28], PairLabel::Different)).unwrap();
    assert!((0.0..=1.0).contains(&v), "{v}");
    let scores = net.scores(&[pair(3, &[28, 28], PairLabel::Different)]).unwrap();
    assert_eq!(scores[0], v);
}

#[test]
fn pair_shape_mismatch_is_dimension_error() {
    let net = Network::pair_mlp(784, OutputConvention::SignedDistance, 5).unwrap();
    let bad = pair(1, &[1, 20, 20], PairLabel::Identical);
    assert!(matches!(net.forward_pair(&bad), Err(Error::Dimension { .. })));
    assert!(matches!(
        PairExample::new(Tensor::zeros(&[3]), Tensor::zeros(&[4]), PairLabel::Identical),
        Err(Error::Dimension { .. })
    ));
    let cnn = Network::pair_cnn(1, (28, 28), 2).unwrap();
    assert!(matches!(cnn.forward_pair(&bad), Err(Error::Dimension { .. })));
}

#[test]
fn siamese_energy_is_zero_on_identical_inputs_and_symmetric() {
    for net in [
        Network::siamese_mlp(784, 1.0, 4).unwrap(),
        Network::siamese_cnn(1, (28, 28), 1.0, 4).unwrap(),
    ] {
        let a = random_image(1, &[1, 28, 28]);
        let b = random_image(2, &[1, 28, 28]);
        let same = PairExample::new(a.clone(), a.clone(), PairLabel::Identical).unwrap();
        assert_eq!(net.forward_siamese(&same).unwrap(), 0.0);
        let ab = net
            .forward_siamese(&PairExample::new(a.clone(), b.clone(), PairLabel::Different).unwrap())
            .unwrap();
        let ba = net.forward_siamese(&PairExample::new(b, a, PairLabel::Different).unwrap()).unwrap();
        assert!(ab > 0.0);
        assert_eq!(ab, ba);
    }
}

#[test]
fn siamese_mlp_branch_is_four_halving_layers() {
    let net = Network::siamese_mlp(784, 1.0, 0).unwrap();
    assert_eq!(net.spec, build_mlp(784).unwrap().branch(4).unwrap());
    assert_eq!(net.spec.output_dim().unwrap(), 49);
}

#[test]
fn siamese_energy_respects_lipschitz_bound() {
    let net = Network::siamese_mlp(64, 1.0, 8).unwrap();
    // Tanh is 1-Lipschitz, so the product of Frobenius norms bounds the branch.
    let lip: f64 = net
        .params
        .iter()
        .filter(|(n, _)| n.ends_with("weight"))
        .map(|(_, w)| w.data().iter().map(|v| v * v).sum::<f64>().sqrt())
        .product();
    let a = random_image(1, &[64]);
    let b = random_image(2, &[64]);
    let base = net.forward_siamese(&PairExample::new(a.clone(), b.clone(), PairLabel::Different).unwrap()).unwrap();
    for (i, scale) in [1e-1, 1e-3, 1e-6].into_iter().enumerate() {
        let delta = random_image(10 + i as u64, &[64]).map(|v| (v - 0.5) * scale);
        let norm = delta.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let moved = Tensor::new(vec![64], a.data().iter().zip(delta.data()).map(|(x, d)| x + d).collect()).unwrap();
        let e = net.forward_siamese(&PairExample::new(moved, b.clone(), PairLabel::Different).unwrap()).unwrap();
        assert!((e - base).abs() <= lip * norm + 1e-12, "{} > {}", (e - base).abs(), lip * norm);
    }
}

#[test]
fn scalar_loss_examples() {
    assert_eq!(loss_mse(0.5, 0.5), 0.0);
    assert_eq!(loss_mse(1.0, -1.0), 4.0);

    let mut g = Graph::new();
    let p = g.leaf(Tensor::from_vec(vec![1.0]), true);
    let l = g.mse(p, Tensor::from_vec(vec![0.0])).unwrap();
    assert_eq!(g.backward(l).unwrap().wrt(p).data(), &[2.0]);

    assert!((loss_bce(0.5, 0.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((loss_bce(0.5, 1.0).unwrap() - 0.693147).abs() < 1e-6);
    assert!((loss_bce(1.0 - 1e-7, 1.0).unwrap() - 1e-7).abs() < 1e-12);
    assert!(matches!(loss_bce(1.5, 1.0), Err(Error::Contract(_))));
    assert!(matches!(loss_bce(-0.1, 0.0), Err(Error::Contract(_))));
    assert!(loss_bce(0.0, 1.0).unwrap().is_finite());

    assert_eq!(loss_contrastive(0.0, 0.0, 1.0).unwrap(), 0.0);
    assert_eq!(loss_contrastive(1.3, 1.0, 1.0).unwrap(), 0.0);
    assert_eq!(loss_contrastive(0.5, 1.0, 1.0).unwrap(), 0.25);
    assert!(matches!(loss_contrastive(-0.1, 1.0, 1.0), Err(Error::Contract(_))));
    assert!(matches!(loss_contrastive(0.1, 1.0, 0.0), Err(Error::Contract(_))));
}

#[test]
fn batched_losses_match_scalar_forms() {
    let pairs: Vec<PairExample> = (0..6)
        .map(|s| pair(s, &[6], PairLabel::from_different(s % 2 == 0)))
        .collect();
    let refs: Vec<&PairExample> = pairs.iter().collect();

    let nets = [
        (Network::pair_mlp(6, OutputConvention::SignedDistance, 1).unwrap(), LossKind::Mse),
        (Network::pair_mlp(6, OutputConvention::Probability, 1).unwrap(), LossKind::Bce),
        (Network::siamese_mlp(6, 1.0, 1).unwrap(), LossKind::Contrastive),
    ];
    for (net, kind) in nets {
        let scores = net.scores(&pairs).unwrap();
        let expected: f64 = scores
            .iter()
            .zip(&pairs)
            .map(|(&s, p)| match kind {
                LossKind::Mse => loss_mse(s, 2.0 * p.label.value() - 1.0),
                LossKind::Bce => loss_bce(s, p.label.value()).unwrap(),
                LossKind::Contrastive => loss_contrastive(s, p.label.value(), 1.0).unwrap(),
            })
            .sum::<f64>()
            / pairs.len() as f64;
        let mut g = Graph::new();
        let pv = net.param_leaves(&mut g, true);
        let l = net.batch_loss(&mut g, &pv, &refs, kind).unwrap();
        assert!((g.value(l).data()[0] - expected).abs() < 1e-12, "{kind:?}");
        assert_eq!(net.default_loss(), kind);
    }
}

#[test]
fn mismatched_loss_is_rejected() {
    let net = Network::pair_mlp(4, OutputConvention::SignedDistance, 1).unwrap();
    let p = pair(0, &[4], PairLabel::Identical);
    let mut g = Graph::new();
    let pv = net.param_leaves(&mut g, true);
    assert!(net.batch_loss(&mut g, &pv, &[&p], LossKind::Bce).is_err());
    assert!(net.batch_loss(&mut g, &pv, &[&p], LossKind::Contrastive).is_err());
}

#[test]
fn thresholds_follow_output_convention() {
    assert_eq!(Network::pair_mlp(4, OutputConvention::SignedDistance, 0).unwrap().threshold(), 0.0);
    assert_eq!(Network::pair_mlp(4, OutputConvention::Probability, 0).unwrap().threshold(), 0.5);
    assert_eq!(Network::siamese_mlp(4, 2.0, 0).unwrap().threshold(), 1.0);
}

#[test]
fn params_must_match_spec() {
    let spec = build_mlp(8).unwrap();
    let other = Params::init(&build_mlp(16).unwrap(), 0).unwrap();
    assert!(matches!(
        Network::new(Architecture::Pair, spec, other),
        Err(Error::Consistency(_))
    ));
}

fn loss_after_step(net: &Network, pairs: &[PairExample], kind: LossKind, lr: f64) -> (f64, f64) {
    let refs: Vec<&PairExample> = pairs.iter().collect();
    let mut g = Graph::new();
    let pv = net.param_leaves(&mut g, true);
    let l = net.batch_loss(&mut g, &pv, &refs, kind).unwrap();
    let before = g.value(l).data()[0];
    let grads = g.backward(l).unwrap();
    let mut stepped = net.clone();
    for (t, v) in stepped.params.tensors_mut().zip(&pv) {
        for (p, d) in t.data_mut().iter_mut().zip(grads.wrt(*v).data()) {
            *p -= lr * d;
        }
    }
    let mut g = Graph::new();
    let pv = stepped.param_leaves(&mut g, false);
    let l = stepped.batch_loss(&mut g, &pv, &refs, kind).unwrap();
    (before, g.value(l).data()[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gradient_step_reduces_loss(seed in 0u64..1000, which in 0usize..3) {
        let pairs: Vec<PairExample> = (0..8)
            .map(|s| pair(seed * 31 + s, &[10], PairLabel::from_different(s % 2 == 1)))
            .collect();
        let (net, kind) = match which {
            0 => (Network::pair_mlp(10, OutputConvention::SignedDistance, seed).unwrap(), LossKind::Mse),
            1 => (Network::pair_mlp(10, OutputConvention::Probability, seed).unwrap(), LossKind::Bce),
            _ => (Network::siamese_mlp(10, 1.0, seed).unwrap(), LossKind::Contrastive),
        };
        let (before, after) = loss_after_step(&net, &pairs, kind, 1e-4);
        prop_assert!(after <= before, "{} -> {}", before, after);
    }

    #[test]
    fn pair_score_is_deterministic(seed in 0u64..1000) {
        let net = Network::pair_mlp(12, OutputConvention::SignedDistance, seed).unwrap();
        let p = pair(seed, &[12], PairLabel::Identical);
        prop_assert_eq!(net.forward_pair(&p).unwrap(), net.forward_pair(&p).unwrap());
    }

    #[test]
    fn siamese_symmetry_holds_for_any_weights(seed in 0u64..1000) {
        let net = Network::siamese_mlp(12, 1.0, seed).unwrap();
        let p = pair(seed, &[12], PairLabel::Different);
        let q = PairExample::new(p.b.clone(), p.a.clone(), p.label).unwrap();
        prop_assert_eq!(net.forward_siamese(&p).unwrap(), net.forward_siamese(&q).unwrap());
    }

    #[test]
    fn bce_is_symmetric_under_flip(p in 0.0f64..=1.0, t in 0u8..2) {
        let t = t as f64;
        let a = loss_bce(p, t).unwrap();
        let b = loss_bce(1.0 - p, 1.0 - t).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }
}
