use absgen::nn::{Architecture, ModelSpec, Network, OutputConvention, PairExample, PairLabel, PairScorer, Params};
use absgen::optim::{adam_step, sgd_step, train, AdamConfig, AdamState, Optimizer, TrainConfig};
use absgen::rng::Rng;
use absgen::{Error, Result, Tensor};
use proptest::prelude::*;
use rand::Rng as _;

fn scalar_params(v: f64) -> Params {
    Params::from_entries(vec![("p".into(), Tensor::from_vec(vec![v]))]).unwrap()
}

fn value(p: &Params) -> f64 {
    p.get("p").unwrap().data()[0]
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = scalar_params(0.0);
    let mut s = AdamState::new(&p, AdamConfig::default());
    adam_step(&mut p, &[Tensor::from_vec(vec![1.0])], &mut s).unwrap();
    // m̂ = 1, v̂ = 1, so the step is lr / (1 + eps).
    assert!((value(&p) + 0.001 / (1.0 + 1e-8)).abs() < 1e-15);
    assert_eq!(s.steps(), 1);
}

#[test]
fn adam_zero_gradient_still_counts_step() {
    let mut p = scalar_params(0.7);
    let mut s = AdamState::new(&p, AdamConfig::default());
    adam_step(&mut p, &[Tensor::from_vec(vec![0.0])], &mut s).unwrap();
    assert_eq!(value(&p), 0.7);
    assert_eq!(s.steps(), 1);
}

#[test]
fn adam_rejects_shape_mismatch() {
    let mut p = scalar_params(0.0);
    let mut s = AdamState::new(&p, AdamConfig::default());
    let r = adam_step(&mut p, &[Tensor::from_vec(vec![1.0, 2.0])], &mut s);
    assert!(matches!(r, Err(Error::Contract(_))));
    assert_eq!(s.steps(), 0);
}

#[test]
fn sgd_examples() {
    let mut p = scalar_params(1.0);
    sgd_step(&mut p, &[Tensor::from_vec(vec![2.0])], 0.1).unwrap();
    assert!((value(&p) - 0.8).abs() < 1e-15);
    sgd_step(&mut p, &[Tensor::from_vec(vec![0.0])], 0.1).unwrap();
    assert!((value(&p) - 0.8).abs() < 1e-15);
    assert!(sgd_step(&mut p, &[Tensor::from_vec(vec![0.0])], 0.0).is_err());
}

proptest! {
    #[test]
    fn adam_first_step_opposes_gradient(g in -1e3f64..1e3, start in -5.0f64..5.0) {
        prop_assume!(g != 0.0);
        let mut p = scalar_params(start);
        let mut s = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &[Tensor::from_vec(vec![g])], &mut s).unwrap();
        prop_assert_eq!((value(&p) - start).signum(), -g.signum());
    }

    #[test]
    fn sgd_steps_compose(g in -10.0f64..10.0, lr1 in 1e-3f64..1.0, lr2 in 1e-3f64..1.0) {
        let mut two = scalar_params(0.5);
        sgd_step(&mut two, &[Tensor::from_vec(vec![g])], lr1).unwrap();
        sgd_step(&mut two, &[Tensor::from_vec(vec![g])], lr2).unwrap();
        let mut one = scalar_params(0.5);
        sgd_step(&mut one, &[Tensor::from_vec(vec![g])], lr1 + lr2).unwrap();
        prop_assert!((value(&one) - value(&two)).abs() < 1e-12);
    }
}

/// Class 0 near (0, 0), class 1 near (1, 1); different pairs are always
/// ordered (class 0, class 1), so the concatenation is linearly separable.
fn separable_pairs(n: usize, rng: &mut Rng) -> Result<Vec<PairExample>> {
    let point = |class: f64, rng: &mut Rng| {
        Tensor::from_vec(vec![
            class + rng.random_range(-0.1..0.1),
            class + rng.random_range(-0.1..0.1),
        ])
    };
    (0..n)
        .map(|i| {
            let different = i % 2 == 1;
            let c = if rng.random::<bool>() { 1.0 } else { 0.0 };
            let (ca, cb) = if different { (0.0, 1.0) } else { (c, c) };
            let a = point(ca, rng);
            let b = point(cb, rng);
            PairExample::new(a, b, PairLabel::from_different(different))
        })
        .collect()
}

fn linear_net(seed: u64) -> Network {
    let spec = ModelSpec::linear(4, OutputConvention::Probability).unwrap();
    Network::init(Architecture::Pair, spec, seed).unwrap()
}

fn cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        pairs_per_epoch: 256,
        batch_size: 32,
        optimizer: Optimizer::Adam(AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        }),
        loss: None,
        seed,
    }
}

#[test]
fn zero_epochs_leave_params_untouched() {
    let mut net = linear_net(1);
    let before = net.params.clone();
    let trace = train(&mut net, &separable_pairs, &cfg(0, 1)).unwrap();
    assert!(trace.is_empty());
    assert_eq!(net.params, before);
    assert_eq!(trace.to_csv(), "epoch,mean_loss\n");
}

#[test]
fn training_is_bit_reproducible() {
    let mut a = linear_net(3);
    let mut b = linear_net(3);
    let ta = train(&mut a, &separable_pairs, &cfg(5, 11)).unwrap();
    let tb = train(&mut b, &separable_pairs, &cfg(5, 11)).unwrap();
    assert_eq!(a.params.to_bytes(), b.params.to_bytes());
    assert_eq!(ta, tb);
    assert_eq!(ta.len(), 5);
    assert!(ta.to_csv().starts_with("epoch,mean_loss\n1,"));
}

#[test]
fn empty_sampler_is_a_contract_error() {
    let empty = |_: usize, _: &mut Rng| -> Result<Vec<PairExample>> { Ok(Vec::new()) };
    let mut net = linear_net(0);
    assert!(matches!(train(&mut net, &empty, &cfg(1, 0)), Err(Error::Contract(_))));
}

#[test]
fn separable_pair_problem_is_learned_within_50_epochs() {
    let mut net = linear_net(7);
    let trace = train(&mut net, &separable_pairs, &cfg(50, 7)).unwrap();
    assert!(trace.epoch_losses.last() < trace.epoch_losses.first());
    let mut rng = absgen::rng::seeded(99);
    let pairs = separable_pairs(1000, &mut rng).unwrap();
    let scores = net.score_pairs(&pairs).unwrap();
    let correct = scores
        .iter()
        .zip(&pairs)
        .filter(|(s, p)| (**s > net.threshold()) == p.label.is_different())
        .count();
    assert!(correct as f64 / 1000.0 >= 0.99, "accuracy {}", correct as f64 / 1000.0);
}
