//! Parameter updates and the epoch training loop.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LossKind, Network, PairExample, Params};
use crate::rng::{self, tag, Rng};
use crate::tensor::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &Params, hyper: AdamConfig) -> Self {
        let zeros: Vec<Tensor> = params.tensors().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            hyper,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }
}

fn check_grads(params: &Params, grads: &[Tensor]) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::contract(format!(
            "{} gradients for {} parameter tensors",
            grads.len(),
            params.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::contract(format!(
                "gradient shape {:?} does not match {name} {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    Ok(())
}

/// Bias-corrected Adam update.
pub fn adam_step(params: &mut Params, grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    check_grads(params, grads)?;
    if state.m.len() != params.len() || state.m.iter().zip(params.tensors()).any(|(m, p)| m.shape() != p.shape()) {
        return Err(Error::contract("adam moments do not match the parameters"));
    }
    state.t += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.hyper;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

pub fn sgd_step(params: &mut Params, grads: &[Tensor], lr: f64) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::contract(format!("learning rate {lr} must be positive")));
    }
    check_grads(params, grads)?;
    for (p, g) in params.tensors_mut().zip(grads) {
        for (p, &g) in p.data_mut().iter_mut().zip(g.data()) {
            *p -= lr * g;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam(AdamConfig),
    Sgd { lr: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam(AdamConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub pairs_per_epoch: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Defaults to the loss matching the model's output convention.
    #[serde(default)]
    pub loss: Option<LossKind>,
    pub seed: u64,
}

/// Source of training pairs; called once per epoch with that epoch's stream.
pub trait PairSampler {
    fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<PairExample>>;
}

impl<F> PairSampler for F
where
    F: Fn(usize, &mut Rng) -> Result<Vec<PairExample>>,
{
    fn sample(&self, n: usize, rng: &mut Rng) -> Result<Vec<PairExample>> {
        self(n, rng)
    }
}

/// Mean training loss of each epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epoch_losses: Vec<f64>,
}

impl LossTrace {
    pub fn len(&self) -> usize {
        self.epoch_losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epoch_losses.is_empty()
    }

    /// `epoch,mean_loss` with 1-based epochs.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (i, l) in self.epoch_losses.iter().enumerate() {
            writeln!(out, "{},{l}", i + 1).unwrap();
        }
        out
    }
}

/// Gradients of the mean batch loss, in parameter order.
pub fn batch_gradients(net: &Network, batch: &[&PairExample], loss: LossKind) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let vars = net.param_leaves(&mut g, true);
    let l = net.batch_loss(&mut g, &vars, batch, loss)?;
    let value = g.value(l).data()[0];
    let mut grads = g.backward(l)?;
    Ok((value, vars.into_iter().map(|v| grads.take(v)).collect()))
}

/// Trains `net` in place. Pairs are drawn fresh each epoch from a stream
/// keyed by `(seed, epoch)`.
pub fn train(net: &mut Network, sampler: &dyn PairSampler, cfg: &TrainConfig) -> Result<LossTrace> {
    let mut trace = LossTrace::default();
    if cfg.epochs == 0 {
        return Ok(trace);
    }
    if cfg.batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    if cfg.pairs_per_epoch == 0 {
        return Err(Error::contract("pairs per epoch must be positive"));
    }
    let loss = cfg.loss.unwrap_or_else(|| net.default_loss());
    let mut adam = match cfg.optimizer {
        Optimizer::Adam(hyper) => Some(AdamState::new(&net.params, hyper)),
        Optimizer::Sgd { .. } => None,
    };
    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(cfg.seed, &[tag::EPOCH, epoch as u64]);
        let pairs = sampler.sample(cfg.pairs_per_epoch, &mut rng)?;
        if pairs.is_empty() {
            return Err(Error::contract("pair sampler produced no pairs"));
        }
        let mut total = 0.0;
        for chunk in pairs.chunks(cfg.batch_size) {
            let batch: Vec<&PairExample> = chunk.iter().collect();
            let (value, grads) = batch_gradients(net, &batch, loss)?;
            total += value * chunk.len() as f64;
            match (&mut adam, cfg.optimizer) {
                (Some(state), _) => adam_step(&mut net.params, &grads, state)?,
                (None, Optimizer::Sgd { lr }) => sgd_step(&mut net.params, &grads, lr)?,
                (None, Optimizer::Adam(_)) => unreachable!("adam state is created up front"),
            }
        }
        trace.epoch_losses.push(total / pairs.len() as f64);
    }
    Ok(trace)
}
