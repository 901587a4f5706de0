//! Synthetic latent-variable laboratory: two-pattern Gaussian models mixed
//! by an affine map, the distribution-equality conditions for transfer,
//! MAP classification and the linear pair-classifier transfer experiment.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{sample_pairs, LabeledDataset, PairOptions, Split};
use crate::error::{Error, Result};
use crate::nn::{Architecture, ModelSpec, Network, OutputConvention, PairExample, PairScorer};
use crate::optim::{self, AdamConfig, Optimizer, TrainConfig};
use crate::rng::{self, tag, Rng};
use crate::tensor::Tensor;

/// Mean vector and covariance matrix (row-major rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianLaw {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl GaussianLaw {
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Self {
        let d = mean.len();
        let cov = (0..d)
            .map(|i| (0..d).map(|j| if i == j { variance } else { 0.0 }).collect())
            .collect();
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn mean_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }

    fn cov_mat(&self) -> Result<DMatrix<f64>> {
        matrix(&self.cov, self.dim(), self.dim(), "covariance")
    }
}

fn matrix(rows: &[Vec<f64>], r: usize, c: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::contract(format!("{what} must be {r}x{c}")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect())
        .collect()
}

/// `x = M1·z1 + M2·z2 + c` with `z1 | ω_i ~ classes[i]` and `z2 ~ background`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentModel {
    pub classes: Vec<GaussianLaw>,
    pub background: GaussianLaw,
    pub priors: Vec<f64>,
    pub m1: Vec<Vec<f64>>,
    pub m2: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

/// Checked numeric form of a [`LatentModel`].
struct Compiled {
    class_means: Vec<DVector<f64>>,
    class_chol: Vec<DMatrix<f64>>,
    bg_mean: DVector<f64>,
    bg_chol: DMatrix<f64>,
    m1: DMatrix<f64>,
    m2: DMatrix<f64>,
    offset: DVector<f64>,
}

fn cholesky(cov: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    cov.cholesky()
        .map(|c| c.l())
        .ok_or_else(|| Error::contract(format!("{what} covariance is not positive definite")))
}

impl LatentModel {
    /// Two patterns at `(±separation/2, 0)` with unit covariance, identity
    /// mixing, background `N(background_mean, background_var·I)`.
    pub fn separated(separation: f64, background_mean: Vec<f64>, background_var: f64) -> Self {
        let d = background_mean.len().max(2);
        let mut m0 = vec![0.0; d];
        let mut m1 = vec![0.0; d];
        m0[0] = -separation / 2.0;
        m1[0] = separation / 2.0;
        Self {
            classes: vec![GaussianLaw::isotropic(m0, 1.0), GaussianLaw::isotropic(m1, 1.0)],
            background: GaussianLaw::isotropic(background_mean, background_var),
            priors: vec![0.5, 0.5],
            m1: identity(d),
            m2: identity(d),
            offset: vec![0.0; d],
        }
    }

    pub fn z1_dim(&self) -> usize {
        self.classes.first().map_or(0, GaussianLaw::dim)
    }

    pub fn x_dim(&self) -> usize {
        self.m1.len()
    }

    fn compile(&self) -> Result<Compiled> {
        if self.classes.len() != 2 || self.priors.len() != 2 {
            return Err(Error::contract("the latent model has exactly two patterns"));
        }
        if self.priors.iter().any(|p| !(0.0..=1.0).contains(p)) || (self.priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!("priors {:?} must be a distribution", self.priors)));
        }
        let (d1, d2, dx) = (self.z1_dim(), self.background.dim(), self.x_dim());
        if self.classes.iter().any(|c| c.dim() != d1) {
            return Err(Error::contract("class laws disagree on the z1 dimension"));
        }
        if self.offset.len() != dx {
            return Err(Error::contract("offset length must match the sample dimension"));
        }
        Ok(Compiled {
            class_means: self.classes.iter().map(GaussianLaw::mean_vec).collect(),
            class_chol: self
                .classes
                .iter()
                .map(|c| cholesky(c.cov_mat()?, "class"))
                .collect::<Result<_>>()?,
            bg_mean: self.background.mean_vec(),
            bg_chol: cholesky(self.background.cov_mat()?, "background")?,
            m1: matrix(&self.m1, dx, d1, "M1")?,
            m2: matrix(&self.m2, dx, d2, "M2")?,
            offset: DVector::from_column_slice(&self.offset),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.compile().map(|_| ())
    }

    /// Mean and covariance of `x` given pattern `i`.
    pub fn induced(&self, class: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let c = self.compile()?;
        let l = &c.class_chol[class];
        let mean = &c.m1 * &c.class_means[class] + &c.m2 * &c.bg_mean + &c.offset;
        let cov = &c.m1 * (l * l.transpose()) * c.m1.transpose() + &c.m2 * (&c.bg_chol * c.bg_chol.transpose()) * c.m2.transpose();
        Ok((mean, cov))
    }

    /// Draws `n` labelled samples of shape `[x_dim]`.
    pub fn generate(&self, n: usize, rng: &mut Rng) -> Result<LabeledDataset> {
        if n == 0 {
            return Err(Error::contract("generate needs n >= 1"));
        }
        let c = self.compile()?;
        let normal = |d: usize, rng: &mut Rng| DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut samples = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            let class = usize::from(rng.random::<f64>() >= self.priors[0]);
            let z1 = &c.class_means[class] + &c.class_chol[class] * normal(self.z1_dim(), rng);
            let z2 = &c.bg_mean + &c.bg_chol * normal(self.background.dim(), rng);
            let x = &c.m1 * z1 + &c.m2 * z2 + &c.offset;
            samples.push(Tensor::from_vec(x.iter().copied().collect()));
            labels.push(class);
        }
        LabeledDataset::new(samples, labels, vec!["0".into(), "1".into()], Split::Train)
    }

    /// `ln P(ω_i) + ln f(x | ω_i)` for both patterns.
    pub fn class_log_scores(&self, x: &[f64]) -> Result<[f64; 2]> {
        if x.len() != self.x_dim() {
            return Err(Error::Dimension {
                op: "map_classify",
                lhs: vec![x.len()],
                rhs: vec![self.x_dim()],
            });
        }
        let x = DVector::from_column_slice(x);
        let mut out = [0.0; 2];
        for (i, slot) in out.iter_mut().enumerate() {
            let (mean, cov) = self.induced(i)?;
            let chol = cov
                .cholesky()
                .ok_or_else(|| Error::contract("induced covariance is singular; likelihoods are undefined"))?;
            let diff = x.clone() - mean;
            let maha = diff.dot(&chol.solve(&diff));
            let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let d = self.x_dim() as f64;
            *slot = self.priors[i].ln() - 0.5 * (maha + log_det + d * (2.0 * std::f64::consts::PI).ln());
        }
        Ok(out)
    }

    /// Maximum-posterior pattern; pattern 0 wins exact ties.
    pub fn map_classify(&self, x: &[f64]) -> Result<usize> {
        let [s0, s1] = self.class_log_scores(x)?;
        Ok(usize::from(s1 > s0))
    }

    /// The same model with the two class laws exchanged.
    pub fn with_swapped_means(&self) -> Self {
        let mut out = self.clone();
        let (a, b) = (out.classes[0].mean.clone(), out.classes[1].mean.clone());
        out.classes[0].mean = b;
        out.classes[1].mean = a;
        out
    }
}

/// Comparison of the pattern laws and priors of two models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    /// Class-conditional latent laws agree.
    pub class_laws_equal: bool,
    /// Pattern priors agree.
    pub priors_equal: bool,
    /// Largest absolute difference between class mean entries.
    pub mean_discrepancy: f64,
    /// Largest absolute difference between class covariance entries.
    pub cov_discrepancy: f64,
    /// Largest absolute difference between priors.
    pub prior_discrepancy: f64,
    pub satisfied: bool,
}

fn max_abs_diff<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Transfer conditions: equal class-conditional latent laws and equal
/// priors. Background laws and mixing maps are not compared.
pub fn check_conditions(a: &LatentModel, b: &LatentModel, tol: f64) -> Result<ConditionReport> {
    a.validate()?;
    b.validate()?;
    if a.z1_dim() != b.z1_dim() {
        return Err(Error::contract(format!(
            "z1 dimensions differ: {} vs {}",
            a.z1_dim(),
            b.z1_dim()
        )));
    }
    let mean_discrepancy = a
        .classes
        .iter()
        .zip(&b.classes)
        .map(|(x, y)| max_abs_diff(x.mean.iter(), y.mean.iter()))
        .fold(0.0, f64::max);
    let cov_discrepancy = a
        .classes
        .iter()
        .zip(&b.classes)
        .map(|(x, y)| max_abs_diff(x.cov.iter().flatten(), y.cov.iter().flatten()))
        .fold(0.0, f64::max);
    let prior_discrepancy = max_abs_diff(a.priors.iter(), b.priors.iter());
    let class_laws_equal = mean_discrepancy <= tol && cov_discrepancy <= tol;
    let priors_equal = prior_discrepancy <= tol;
    Ok(ConditionReport {
        class_laws_equal,
        priors_equal,
        mean_discrepancy,
        cov_discrepancy,
        prior_discrepancy,
        satisfied: class_laws_equal && priors_equal,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferConfig {
    pub a: LatentModel,
    pub b: LatentModel,
    /// Training pairs drawn from each model.
    pub n_train: usize,
    /// Test pairs drawn from each model.
    pub n_test: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tol: f64,
}

impl TransferConfig {
    /// Patterns 6σ apart; B shifts the background mean by +5 per axis.
    pub fn shifted_background() -> Self {
        Self {
            a: LatentModel::separated(6.0, vec![0.0, 0.0], 0.01),
            b: LatentModel::separated(6.0, vec![5.0, 5.0], 0.01),
            n_train: 4000,
            n_test: 20_000,
            epochs: 300,
            batch_size: 4000,
            lr: 0.1,
            tol: 1e-9,
        }
    }

    /// Like [`Self::shifted_background`] with B's class means exchanged.
    pub fn swapped_means() -> Self {
        let mut cfg = Self::shifted_background();
        cfg.b = cfg.a.with_swapped_means();
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub conditions: ConditionReport,
    pub acc_on_a: f64,
    pub acc_on_b: f64,
    pub normal_angle_deg: f64,
}

/// Pairs from a fresh draw of `model`: identical-pattern pairs are class 0,
/// different-pattern pairs (pattern 0 first) class 1.
pub fn model_pairs(model: &LatentModel, n_pairs: usize, rng: &mut Rng) -> Result<Vec<PairExample>> {
    let ds = model.generate(n_pairs.max(2), rng)?;
    let opts = PairOptions {
        allow_self: false,
        ..PairOptions::default()
    };
    sample_pairs(&ds, n_pairs, &opts, rng)
}

/// Logistic pair classifier on the concatenation `[a, b]`. Features are
/// standardized with training statistics for the fit and the scaling is
/// folded back, so the returned network acts on raw pairs.
pub fn fit_linear(pairs: &[PairExample], dim: usize, cfg: &TransferConfig, seed: u64) -> Result<Network> {
    let n = pairs.len() as f64;
    let width = 2 * dim;
    let feature = |p: &PairExample, j: usize| if j < dim { p.a.data()[j] } else { p.b.data()[j - dim] };
    let mean: Vec<f64> = (0..width).map(|j| pairs.iter().map(|p| feature(p, j)).sum::<f64>() / n).collect();
    let scale: Vec<f64> = (0..width)
        .map(|j| {
            let var = pairs.iter().map(|p| (feature(p, j) - mean[j]).powi(2)).sum::<f64>() / n;
            if var > 0.0 { var.sqrt() } else { 1.0 }
        })
        .collect();
    let standardized = pairs
        .iter()
        .map(|p| {
            let z: Vec<f64> = (0..width).map(|j| (feature(p, j) - mean[j]) / scale[j]).collect();
            PairExample::new(Tensor::from_vec(z[..dim].to_vec()), Tensor::from_vec(z[dim..].to_vec()), p.label)
        })
        .collect::<Result<Vec<_>>>()?;

    let spec = ModelSpec::linear(width, OutputConvention::Probability)?;
    let mut net = Network::init(Architecture::Pair, spec, seed)?;
    let sampler = |_: usize, rng: &mut Rng| -> Result<Vec<PairExample>> {
        let mut epoch = standardized.clone();
        rand::seq::SliceRandom::shuffle(epoch.as_mut_slice(), rng);
        Ok(epoch)
    };
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        pairs_per_epoch: pairs.len(),
        batch_size: cfg.batch_size,
        optimizer: Optimizer::Adam(AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        }),
        loss: None,
        seed,
    };
    optim::train(&mut net, &sampler, &train_cfg)?;

    let weights = net
        .params
        .get_mut("layer0.weight")
        .ok_or_else(|| Error::Consistency("linear model has no layer0.weight".into()))?;
    let mut shift = 0.0;
    for (j, w) in weights.data_mut().iter_mut().enumerate() {
        *w /= scale[j];
        shift += *w * mean[j];
    }
    let bias = net
        .params
        .get_mut("layer0.bias")
        .ok_or_else(|| Error::Consistency("linear model has no layer0.bias".into()))?;
    bias.data_mut()[0] -= shift;
    Ok(net)
}

fn accuracy(net: &Network, pairs: &[PairExample]) -> Result<f64> {
    let scores = net.score_pairs(pairs)?;
    let correct = scores
        .iter()
        .zip(pairs)
        .filter(|(s, p)| (**s > net.threshold()) == p.label.is_different())
        .count();
    Ok(correct as f64 / pairs.len() as f64)
}

fn normal_of(net: &Network) -> Vec<f64> {
    net.params.get("layer0.weight").map(|w| w.data().to_vec()).unwrap_or_default()
}

fn angle_deg(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    (dot / (nu * nv)).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Fits a logistic pair classifier on A, scores it on A and B, and reports
/// the angle between the normals of classifiers fit on A and on B. Fails
/// unless A and B satisfy the transfer conditions.
pub fn hyperplane_transfer(cfg: &TransferConfig, seed: u64) -> Result<TransferReport> {
    let report = check_conditions(&cfg.a, &cfg.b, cfg.tol)?;
    if !report.satisfied {
        return Err(Error::contract(format!(
            "models violate the transfer conditions (mean {:.3e}, cov {:.3e}, prior {:.3e})",
            report.mean_discrepancy, report.cov_discrepancy, report.prior_discrepancy
        )));
    }
    hyperplane_transfer_unchecked(cfg, seed)
}

/// [`hyperplane_transfer`] without the precondition, for counterexamples.
pub fn hyperplane_transfer_unchecked(cfg: &TransferConfig, seed: u64) -> Result<TransferReport> {
    let conditions = check_conditions(&cfg.a, &cfg.b, cfg.tol)?;
    if cfg.a.x_dim() != cfg.b.x_dim() {
        return Err(Error::contract("A and B must share the sample dimension"));
    }
    let dim = cfg.a.x_dim();
    let draw = |model: &LatentModel, which: u64, n: usize| {
        model_pairs(model, n, &mut rng::stream(seed, &[tag::LATENT, which]))
    };
    let train_a = draw(&cfg.a, 0, cfg.n_train)?;
    let train_b = draw(&cfg.b, 1, cfg.n_train)?;
    let test_a = draw(&cfg.a, 2, cfg.n_test)?;
    let test_b = draw(&cfg.b, 3, cfg.n_test)?;
    let net_a = fit_linear(&train_a, dim, cfg, seed)?;
    let net_b = fit_linear(&train_b, dim, cfg, seed)?;
    Ok(TransferReport {
        conditions,
        acc_on_a: accuracy(&net_a, &test_a)?,
        acc_on_b: accuracy(&net_a, &test_b)?,
        normal_angle_deg: angle_deg(&normal_of(&net_a), &normal_of(&net_b)),
    })
}
