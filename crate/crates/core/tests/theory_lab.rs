use absgen::data::Split;
use absgen::rng;
use absgen::theory::{
    check_conditions, hyperplane_transfer, hyperplane_transfer_unchecked, model_pairs, GaussianLaw, LatentModel,
    TransferConfig,
};
use absgen::Error;
use proptest::prelude::*;

fn base() -> LatentModel {
    LatentModel::separated(6.0, vec![0.0, 0.0], 0.01)
}

fn std_normal_cdf(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26 on erf, |error| < 1.5e-7
    let z = x.abs() / std::f64::consts::SQRT_2;
    let t = 1.0 / (1.0 + 0.327_591_1 * z);
    let poly = t * (0.254_829_592 + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    let erf = 1.0 - poly * (-z * z).exp();
    if x >= 0.0 { 0.5 * (1.0 + erf) } else { 0.5 * (1.0 - erf) }
}

#[test]
fn validation_rejects_bad_models() {
    let mut m = base();
    m.priors = vec![0.7, 0.7];
    assert!(matches!(m.validate(), Err(Error::Contract(_))));

    let mut m = base();
    m.classes[1].cov = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
    assert!(matches!(m.validate(), Err(Error::Contract(_))));

    let mut m = base();
    m.m2 = vec![vec![1.0], vec![0.0]];
    assert!(matches!(m.validate(), Err(Error::Contract(_))));

    let mut m = base();
    m.classes.pop();
    assert!(m.validate().is_err());
    assert!(base().generate(0, &mut rng::seeded(0)).is_err());
}

#[test]
fn generate_matches_induced_means() {
    let mut m = base();
    m.m1 = vec![vec![2.0, 0.5], vec![-1.0, 1.0]];
    m.offset = vec![0.3, -4.0];
    m.background.mean = vec![1.0, -2.0];
    m.priors = vec![0.3, 0.7];
    let n = 20_000;
    let ds = m.generate(n, &mut rng::seeded(11)).unwrap();
    assert_eq!(ds.split(), Split::Train);
    assert_eq!(ds.sample_shape(), Some(&[2][..]));
    let ones = ds.labels().iter().filter(|&&l| l == 1).count() as f64;
    let p_sigma = (0.3_f64 * 0.7 / n as f64).sqrt();
    assert!((ones / n as f64 - 0.7).abs() < 3.0 * p_sigma);

    for class in 0..2 {
        let (mean, cov) = m.induced(class).unwrap();
        let members: Vec<&[f64]> = (0..ds.len())
            .filter(|&i| ds.labels()[i] == class)
            .map(|i| ds.sample(i).data())
            .collect();
        let k = members.len() as f64;
        for j in 0..2 {
            let sample_mean = members.iter().map(|x| x[j]).sum::<f64>() / k;
            let bound = 3.0 * (cov[(j, j)] / k).sqrt();
            assert!(
                (sample_mean - mean[j]).abs() < bound,
                "class {class} coord {j}: {sample_mean} vs {}",
                mean[j]
            );
        }
    }
}

#[test]
fn degenerate_background_and_priors() {
    let mut m = base();
    m.m2 = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
    m.background.mean = vec![100.0, 100.0];
    let a = m.generate(50, &mut rng::seeded(4)).unwrap();
    m.background = GaussianLaw::isotropic(vec![-7.0, 3.0], 9.0);
    let b = m.generate(50, &mut rng::seeded(4)).unwrap();
    // background draws consume the stream identically, so z1 draws line up
    assert_eq!(a.samples(), b.samples());

    let mut m = base();
    m.priors = vec![1.0, 0.0];
    let ds = m.generate(300, &mut rng::seeded(5)).unwrap();
    assert!(ds.labels().iter().all(|&l| l == 0));
}

#[test]
fn map_boundary_and_means() {
    let m = base();
    // symmetric model: the origin is on the boundary and ties go to pattern 0
    let [s0, s1] = m.class_log_scores(&[0.0, 0.0]).unwrap();
    assert!((s0 - s1).abs() < 1e-12);
    assert_eq!(m.map_classify(&[0.0, 0.0]).unwrap(), 0);
    assert_eq!(m.map_classify(&[1e-9, 5.0]).unwrap(), 1);
    assert_eq!(m.map_classify(&[-1e-9, -5.0]).unwrap(), 0);
    assert_eq!(m.map_classify(&[-3.0, 0.0]).unwrap(), 0);
    assert_eq!(m.map_classify(&[3.0, 0.0]).unwrap(), 1);

    let mut dominated = base();
    dominated.priors = vec![1.0 - 1e-300, 1e-300];
    assert_eq!(dominated.map_classify(&[3.0, 0.0]).unwrap(), 0);

    assert!(matches!(m.map_classify(&[0.0]), Err(Error::Dimension { .. })));
    let mut singular = base();
    singular.m1 = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
    singular.m2 = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
    assert!(matches!(singular.map_classify(&[0.0, 0.0]), Err(Error::Contract(_))));
}

#[test]
fn map_accuracy_matches_closed_form() {
    let m = base();
    let ds = m.generate(20_000, &mut rng::seeded(8)).unwrap();
    let correct = (0..ds.len())
        .filter(|&i| m.map_classify(ds.sample(i).data()).unwrap() == ds.labels()[i])
        .count() as f64
        / ds.len() as f64;
    let expected = std_normal_cdf(3.0 / 1.01_f64.sqrt());
    let sigma = (expected * (1.0 - expected) / ds.len() as f64).sqrt();
    assert!((correct - expected).abs() < 4.0 * sigma, "{correct} vs {expected}");
}

#[test]
fn condition_report() {
    let a = base();
    let same = check_conditions(&a, &a, 1e-9).unwrap();
    assert!(same.satisfied && same.class_laws_equal && same.priors_equal);
    assert_eq!(same.mean_discrepancy, 0.0);
    assert_eq!(same.cov_discrepancy, 0.0);
    assert_eq!(same.prior_discrepancy, 0.0);

    let mut shifted = a.clone();
    shifted.background.mean = vec![5.0, 5.0];
    shifted.m2 = vec![vec![3.0, 1.0], vec![0.0, 2.0]];
    assert!(check_conditions(&a, &shifted, 1e-9).unwrap().satisfied);

    let swapped = check_conditions(&a, &a.with_swapped_means(), 1e-9).unwrap();
    assert!(!swapped.satisfied && !swapped.class_laws_equal && swapped.priors_equal);
    assert_eq!(swapped.mean_discrepancy, 6.0);

    let mut skewed = a.clone();
    skewed.priors = vec![0.4, 0.6];
    let r = check_conditions(&a, &skewed, 1e-9).unwrap();
    assert!(!r.satisfied && !r.priors_equal);
    assert!(check_conditions(&a, &skewed, 0.2).unwrap().satisfied);

    let wide = LatentModel::separated(6.0, vec![0.0, 0.0, 0.0], 0.01);
    assert!(matches!(check_conditions(&a, &wide, 1e-9), Err(Error::Contract(_))));
}

#[test]
fn identical_pair_differences_share_a_law() {
    let cfg = TransferConfig::shifted_background();
    let n = 8000;
    let moments = |model: &LatentModel, seed: u64| {
        let diffs: Vec<[f64; 2]> = model_pairs(model, n, &mut rng::seeded(seed))
            .unwrap()
            .into_iter()
            .filter(|p| !p.label.is_different())
            .map(|p| [p.a.data()[0] - p.b.data()[0], p.a.data()[1] - p.b.data()[1]])
            .collect();
        let k = diffs.len() as f64;
        let mean: Vec<f64> = (0..2).map(|j| diffs.iter().map(|d| d[j]).sum::<f64>() / k).collect();
        let var: Vec<f64> = (0..2)
            .map(|j| diffs.iter().map(|d| (d[j] - mean[j]).powi(2)).sum::<f64>() / k)
            .collect();
        (mean, var, k)
    };
    let (ma, va, ka) = moments(&cfg.a, 1);
    let (mb, vb, kb) = moments(&cfg.b, 2);
    for j in 0..2 {
        let se = (va[j] / ka + vb[j] / kb).sqrt();
        assert!((ma[j] - mb[j]).abs() < 3.0 * se, "mean {j}: {} vs {}", ma[j], mb[j]);
        // variance of a sample variance for Gaussian data is 2σ⁴/n
        let se_var = (2.0 * va[j].powi(2) / ka + 2.0 * vb[j].powi(2) / kb).sqrt();
        assert!((va[j] - vb[j]).abs() < 3.0 * se_var, "var {j}: {} vs {}", va[j], vb[j]);
    }
}

#[test]
fn transfer_requires_conditions() {
    let cfg = TransferConfig::swapped_means();
    assert!(matches!(hyperplane_transfer(&cfg, 0), Err(Error::Contract(_))));
}

#[test]
fn same_model_transfers_within_noise() {
    let mut cfg = TransferConfig::shifted_background();
    cfg.b = cfg.a.clone();
    cfg.n_train = 2000;
    cfg.n_test = 10_000;
    let r = hyperplane_transfer(&cfg, 3).unwrap();
    let p = r.acc_on_a;
    let sigma = (2.0 * p * (1.0 - p) / cfg.n_test as f64).sqrt();
    assert!((r.acc_on_a - r.acc_on_b).abs() < 4.0 * sigma, "{r:?}");
    assert!(r.conditions.satisfied);
}

#[test]
fn swapped_means_counterexample_collapses() {
    let cfg = TransferConfig::swapped_means();
    let r = hyperplane_transfer_unchecked(&cfg, 0).unwrap();
    assert!(!r.conditions.satisfied);
    assert!(r.acc_on_a > 0.95, "{r:?}");
    assert!(r.acc_on_b < 0.5 + 3.0 / (cfg.n_test as f64).sqrt(), "{r:?}");
    assert!(r.normal_angle_deg > 90.0);
}

#[test]
fn transfer_config_round_trips_through_json() {
    let cfg = TransferConfig::shifted_background();
    let text = serde_json::to_string(&cfg).unwrap();
    let back: TransferConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, cfg);
}

proptest! {
    #[test]
    fn map_ignores_common_likelihood_scale(x0 in -8.0..8.0f64, x1 in -8.0..8.0f64, log_c in -50.0..50.0f64) {
        let m = base();
        let [s0, s1] = m.class_log_scores(&[x0, x1]).unwrap();
        let rescaled = usize::from(s1 + log_c > s0 + log_c);
        prop_assert_eq!(m.map_classify(&[x0, x1]).unwrap(), rescaled);
        // the symmetric model decides by the sign of the first coordinate
        prop_assert_eq!(m.map_classify(&[x0, x1]).unwrap(), usize::from(x0 > 0.0));
    }
}
