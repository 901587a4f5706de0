use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::loss::LossKind;
use crate::nn::params::Params;
use crate::nn::spec::{LayerSpec, ModelKind, ModelSpec, OutputConvention};
use crate::tensor::{Graph, Tensor, Var};

pub const DEFAULT_MARGIN: f64 = 1.0;

/// Pairs scored per graph when no gradients are needed.
const SCORE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Identical = 0,
    Different = 1,
}

impl PairLabel {
    pub fn from_different(different: bool) -> Self {
        if different {
            PairLabel::Different
        } else {
            PairLabel::Identical
        }
    }

    pub fn is_different(self) -> bool {
        self == PairLabel::Different
    }

    /// 0 for identical, 1 for different.
    pub fn value(self) -> f64 {
        self as u8 as f64
    }

    fn target(self, output: OutputConvention) -> f64 {
        match output {
            OutputConvention::SignedDistance => 2.0 * self.value() - 1.0,
            _ => self.value(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub a: Tensor,
    pub b: Tensor,
    pub label: PairLabel,
}

impl PairExample {
    pub fn new(a: Tensor, b: Tensor, label: PairLabel) -> Result<Self> {
        if a.shape() != b.shape() {
            return Err(Error::Dimension {
                op: "pair",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        Ok(Self { a, b, label })
    }
}

/// Anything that turns a pair into a score where larger means "different".
pub trait PairScorer {
    fn score_pairs(&self, pairs: &[PairExample]) -> Result<Vec<f64>>;

    /// Scores above this are classified as different.
    fn threshold(&self) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    /// One network on the concatenated pair.
    Pair,
    /// Two weight-shared branches compared by Euclidean distance.
    Siamese { margin: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub architecture: Architecture,
    pub spec: ModelSpec,
    pub params: Params,
}

impl Network {
    pub fn new(architecture: Architecture, spec: ModelSpec, params: Params) -> Result<Self> {
        spec.validate()?;
        params.check_against(&spec)?;
        match architecture {
            Architecture::Pair if spec.output == OutputConvention::Embedding => {
                return Err(Error::contract("a pair model needs a scalar output"));
            }
            Architecture::Pair if spec.input_shape[0] % 2 != 0 => {
                return Err(Error::contract(format!(
                    "pair input {:?} cannot be split into two equal halves",
                    spec.input_shape
                )));
            }
            Architecture::Siamese { margin } if margin <= 0.0 || !margin.is_finite() => {
                return Err(Error::contract("contrastive margin must be positive"));
            }
            _ => {}
        }
        Ok(Self {
            architecture,
            spec,
            params,
        })
    }

    pub fn init(architecture: Architecture, spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = Params::init(&spec, seed)?;
        Self::new(architecture, spec, params)
    }

    /// Halving MLP on the concatenation of two flattened samples.
    pub fn pair_mlp(sample_len: usize, output: OutputConvention, seed: u64) -> Result<Self> {
        let spec = crate::nn::build_mlp(2 * sample_len)?.with_output(output)?;
        Self::init(Architecture::Pair, spec, seed)
    }

    /// Siamese branch made of the first four layers of the halving MLP for
    /// one sample (fewer when the chain is shorter).
    pub fn siamese_mlp(sample_len: usize, margin: f64, seed: u64) -> Result<Self> {
        let full = crate::nn::build_mlp(sample_len)?;
        let depth = full.layers.len().min(4);
        Self::init(Architecture::Siamese { margin }, full.branch(depth)?, seed)
    }

    /// Convolutional pair model on channel-concatenated `[C, H, W]` samples.
    pub fn pair_cnn(channels: usize, hw: (usize, usize), seed: u64) -> Result<Self> {
        Self::init(Architecture::Pair, crate::nn::build_cnn(2 * channels, hw)?, seed)
    }

    /// Siamese CNN: the convolutional model without its scalar head.
    pub fn siamese_cnn(channels: usize, hw: (usize, usize), margin: f64, seed: u64) -> Result<Self> {
        let full = crate::nn::build_cnn(channels, hw)?;
        let depth = full.layers.len() - 1;
        Self::init(Architecture::Siamese { margin }, full.branch(depth)?, seed)
    }

    pub fn is_siamese(&self) -> bool {
        matches!(self.architecture, Architecture::Siamese { .. })
    }

    /// Loss used when the configuration does not name one.
    pub fn default_loss(&self) -> LossKind {
        match (self.architecture, self.spec.output) {
            (Architecture::Siamese { .. }, _) => LossKind::Contrastive,
            (_, OutputConvention::Probability) => LossKind::Bce,
            _ => LossKind::Mse,
        }
    }

    /// Shape of one sample as seen by the network (no batch axis).
    fn sample_shape(&self, sample: &Tensor) -> Result<Vec<usize>> {
        let input = &self.spec.input_shape;
        let halves = if self.is_siamese() { 1 } else { 2 };
        let mismatch = || Error::Dimension {
            op: if halves == 2 { "forward_pair" } else { "forward_siamese" },
            lhs: sample.shape().to_vec(),
            rhs: input.clone(),
        };
        match self.spec.kind {
            ModelKind::Mlp => {
                if sample.len() * halves != input[0] {
                    return Err(mismatch());
                }
                Ok(vec![sample.len()])
            }
            ModelKind::Cnn => {
                let (c, h, w) = (input[0] / halves, input[1], input[2]);
                let s = sample.shape();
                let trailing_ok = s.len() >= 2 && s[s.len() - 2] == h && s[s.len() - 1] == w;
                if !trailing_ok || sample.len() != c * h * w {
                    return Err(mismatch());
                }
                Ok(vec![c, h, w])
            }
        }
    }

    fn batch<'a>(&self, samples: impl Iterator<Item = &'a Tensor>, shape: &[usize]) -> Result<Tensor> {
        let mut data = Vec::new();
        let mut n = 0;
        for s in samples {
            if self.sample_shape(s)? != shape {
                return Err(Error::Dimension {
                    op: "batch",
                    lhs: s.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            data.extend_from_slice(s.data());
            n += 1;
        }
        let mut full = vec![n];
        full.extend_from_slice(shape);
        Tensor::new(full, data)
    }

    /// Adds every parameter as a leaf, in spec order.
    pub fn param_leaves(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params.tensors().map(|t| g.leaf(t.clone(), trainable)).collect()
    }

    /// Runs the layer stack on a batched input.
    fn run_layers(&self, g: &mut Graph, params: &[Var], mut x: Var) -> Result<Var> {
        let mut next = params.iter().copied();
        let mut take = || next.next().ok_or_else(|| Error::contract("too few parameter leaves"));
        for layer in &self.spec.layers {
            x = match *layer {
                LayerSpec::Dense { activation, .. } => {
                    let (w, b) = (take()?, take()?);
                    let z = g.matmul(x, w)?;
                    let z = g.add_bias(z, b, 1)?;
                    g.activation(z, activation)?
                }
                LayerSpec::Conv {
                    stride,
                    padding,
                    activation,
                    ..
                } => {
                    let (k, b) = (take()?, take()?);
                    let z = g.conv2d(x, k, stride, padding)?;
                    let z = g.add_bias(z, b, 1)?;
                    g.activation(z, activation)?
                }
                LayerSpec::MaxPool { window, stride } => g.maxpool2d(x, window, stride)?,
                LayerSpec::Flatten => {
                    let shape = g.value(x).shape();
                    let flat = vec![shape[0], shape[1..].iter().product()];
                    g.reshape(x, &flat)?
                }
            };
        }
        Ok(x)
    }

    /// Scores for a batch: pair-model outputs, or squared branch distances
    /// for a siamese model.
    fn raw_scores(&self, g: &mut Graph, params: &[Var], pairs: &[&PairExample]) -> Result<Var> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::contract("cannot score an empty batch"))?;
        let shape = self.sample_shape(&first.a)?;
        let a = self.batch(pairs.iter().map(|p| &p.a), &shape)?;
        let b = self.batch(pairs.iter().map(|p| &p.b), &shape)?;
        let (a, b) = (g.leaf(a, false), g.leaf(b, false));
        let n = pairs.len();
        match self.architecture {
            Architecture::Pair => {
                let x = g.concat(a, b, 1)?;
                let out = self.run_layers(g, params, x)?;
                g.reshape(out, &[n])
            }
            Architecture::Siamese { .. } => {
                let ea = self.run_layers(g, params, a)?;
                let eb = self.run_layers(g, params, b)?;
                let ea = flatten_rows(g, ea)?;
                let eb = flatten_rows(g, eb)?;
                let d = g.sub(ea, eb)?;
                let sq = g.mul(d, d)?;
                g.sum_last_axis(sq)
            }
        }
    }

    /// Mean loss over `pairs` with parameters bound to `params`.
    pub fn batch_loss(&self, g: &mut Graph, params: &[Var], pairs: &[&PairExample], loss: LossKind) -> Result<Var> {
        let scores = self.raw_scores(g, params, pairs)?;
        let n = pairs.len();
        let targets = |conv| Tensor::new(vec![n], pairs.iter().map(|p| p.label.target(conv)).collect());
        match (loss, self.architecture) {
            (LossKind::Mse, Architecture::Pair) => g.mse(scores, targets(self.spec.output)?),
            (LossKind::Bce, Architecture::Pair) if self.spec.output == OutputConvention::Probability => {
                g.bce(scores, targets(OutputConvention::Probability)?)
            }
            (LossKind::Contrastive, Architecture::Siamese { margin }) => {
                g.contrastive(scores, targets(OutputConvention::Probability)?, margin)
            }
            _ => Err(Error::contract(format!(
                "{loss:?} loss does not fit a {:?} model with {:?} output",
                self.architecture, self.spec.output
            ))),
        }
    }

    fn score_chunk(&self, pairs: &[&PairExample]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let params = self.param_leaves(&mut g, false);
        let s = self.raw_scores(&mut g, &params, pairs)?;
        let values = g.value(s).data();
        Ok(if self.is_siamese() {
            values.iter().map(|v| v.sqrt()).collect()
        } else {
            values.to_vec()
        })
    }

    /// Scores every pair: model output for pair models, energy for siamese.
    pub fn scores(&self, pairs: &[PairExample]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(SCORE_CHUNK) {
            let refs: Vec<&PairExample> = chunk.iter().collect();
            out.extend(self.score_chunk(&refs)?);
        }
        Ok(out)
    }

    pub fn forward_pair(&self, pair: &PairExample) -> Result<f64> {
        if self.is_siamese() {
            return Err(Error::contract("forward_pair called on a siamese model"));
        }
        Ok(self.score_chunk(&[pair])?[0])
    }

    /// Euclidean distance between the two branch embeddings.
    pub fn forward_siamese(&self, pair: &PairExample) -> Result<f64> {
        if !self.is_siamese() {
            return Err(Error::contract("forward_siamese called on a pair model"));
        }
        Ok(self.score_chunk(&[pair])?[0])
    }
}

fn flatten_rows(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.value(x).shape();
    if shape.len() == 2 {
        return Ok(x);
    }
    let flat = vec![shape[0], shape[1..].iter().product()];
    g.reshape(x, &flat)
}

impl PairScorer for Network {
    fn score_pairs(&self, pairs: &[PairExample]) -> Result<Vec<f64>> {
        self.scores(pairs)
    }

    fn threshold(&self) -> f64 {
        match (self.architecture, self.spec.output) {
            (Architecture::Siamese { margin }, _) => margin / 2.0,
            (_, OutputConvention::Probability) => 0.5,
            _ => 0.0,
        }
    }
}
