use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Activation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Cnn,
}

/// How the scalar output of a pair model is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputConvention {
    /// Tanh output in `[-1, 1]`; negative means identical pattern.
    SignedDistance,
    /// Sigmoid output in `[0, 1]`: probability that the pair is different.
    Probability,
    /// Vector output of a siamese branch.
    Embedding,
}

impl OutputConvention {
    fn final_activation(self) -> Option<Activation> {
        match self {
            OutputConvention::SignedDistance => Some(Activation::Tanh),
            OutputConvention::Probability => Some(Activation::Sigmoid),
            OutputConvention::Embedding => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        activation: Activation,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        activation: Activation,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
}

impl LayerSpec {
    /// Parameter shapes as `(suffix, shape)`; weights first.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => {
                vec![("weight", vec![inputs, outputs]), ("bias", vec![outputs])]
            }
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                ("weight", vec![out_channels, in_channels, kernel, kernel]),
                ("bias", vec![out_channels]),
            ],
            LayerSpec::MaxPool { .. } | LayerSpec::Flatten => Vec::new(),
        }
    }

    /// `(fan_in, fan_out)` of the weight tensor.
    pub fn fans(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => Some((inputs, outputs)),
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((in_channels * kernel * kernel, out_channels * kernel * kernel)),
            _ => None,
        }
    }

    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = || Error::Dimension {
            op: "model spec",
            lhs: input.to_vec(),
            rhs: Vec::new(),
        };
        match *self {
            LayerSpec::Dense { inputs, outputs, .. } => match input {
                [d] if *d == inputs => Ok(vec![outputs]),
                _ => Err(bad()),
            },
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => match *input {
                [c, h, w] if c == in_channels && kernel <= h + 2 * padding && kernel <= w + 2 * padding => Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel) / stride + 1,
                    (w + 2 * padding - kernel) / stride + 1,
                ]),
                _ => Err(bad()),
            },
            LayerSpec::MaxPool { window, stride } => match *input {
                [c, h, w] if window <= h && window <= w => {
                    Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
                }
                _ => Err(bad()),
            },
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

/// Architecture description; parameters live in [`crate::nn::Params`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Shape of one network input, without the batch axis.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub output: OutputConvention,
}

/// Fully-connected chain whose width halves (integer floor) at every layer
/// until a single output remains. Tanh throughout; signed-distance output.
pub fn build_mlp(input_dim: usize) -> Result<ModelSpec> {
    if input_dim < 2 {
        return Err(Error::contract(format!("mlp input dimension must be at least 2, got {input_dim}")));
    }
    let mut layers = Vec::new();
    let mut width = input_dim;
    while width > 1 {
        let next = width / 2;
        layers.push(LayerSpec::Dense {
            inputs: width,
            outputs: next,
            activation: Activation::Tanh,
        });
        width = next;
    }
    Ok(ModelSpec {
        kind: ModelKind::Mlp,
        input_shape: vec![input_dim],
        layers,
        output: OutputConvention::SignedDistance,
    })
}

/// Four conv blocks (16, 32, 64, 64 channels; 3×3, stride 1, pad 1, ReLU,
/// 2×2 max pool), a 256-wide ReLU layer and a sigmoid scalar output.
pub fn build_cnn(in_channels: usize, image_hw: (usize, usize)) -> Result<ModelSpec> {
    let (h, w) = image_hw;
    if in_channels == 0 {
        return Err(Error::contract("cnn needs at least one input channel"));
    }
    if h < 16 || w < 16 {
        return Err(Error::contract(format!(
            "cnn input {h}x{w} is too small for four 2x2 poolings (need at least 16x16)"
        )));
    }
    let mut layers = Vec::new();
    let mut channels = in_channels;
    for out in [16, 32, 64, 64] {
        layers.push(LayerSpec::Conv {
            in_channels: channels,
            out_channels: out,
            kernel: 3,
            stride: 1,
            padding: 1,
            activation: Activation::Relu,
        });
        layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
        channels = out;
    }
    let flat = channels * (h >> 4) * (w >> 4);
    layers.push(LayerSpec::Flatten);
    layers.push(LayerSpec::Dense {
        inputs: flat,
        outputs: 256,
        activation: Activation::Relu,
    });
    layers.push(LayerSpec::Dense {
        inputs: 256,
        outputs: 1,
        activation: Activation::Sigmoid,
    });
    let spec = ModelSpec {
        kind: ModelKind::Cnn,
        input_shape: vec![in_channels, h, w],
        layers,
        output: OutputConvention::Probability,
    };
    spec.validate()?;
    Ok(spec)
}

impl ModelSpec {
    /// Single dense layer to one output; used for linear pair classifiers.
    pub fn linear(input_dim: usize, output: OutputConvention) -> Result<ModelSpec> {
        let activation = output
            .final_activation()
            .ok_or_else(|| Error::contract("a linear classifier needs a scalar output convention"))?;
        Ok(ModelSpec {
            kind: ModelKind::Mlp,
            input_shape: vec![input_dim],
            layers: vec![LayerSpec::Dense {
                inputs: input_dim,
                outputs: 1,
                activation,
            }],
            output,
        })
    }

    /// Same layers with the final activation switched to match `output`.
    pub fn with_output(mut self, output: OutputConvention) -> Result<ModelSpec> {
        let act = output
            .final_activation()
            .ok_or_else(|| Error::contract("use `branch` to build an embedding network"))?;
        match self.layers.last_mut() {
            Some(LayerSpec::Dense {
                outputs: 1,
                activation,
                ..
            }) => *activation = act,
            _ => return Err(Error::contract("model has no scalar output layer")),
        }
        self.output = output;
        Ok(self)
    }

    /// The first `n_layers` layers as an embedding network.
    pub fn branch(&self, n_layers: usize) -> Result<ModelSpec> {
        if n_layers == 0 || n_layers > self.layers.len() {
            return Err(Error::contract(format!(
                "branch depth {n_layers} outside 1..={}",
                self.layers.len()
            )));
        }
        Ok(ModelSpec {
            kind: self.kind,
            input_shape: self.input_shape.clone(),
            layers: self.layers[..n_layers].to_vec(),
            output: OutputConvention::Embedding,
        })
    }

    /// Shape produced by each layer, checked against the layer descriptors.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shape = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(&shape)?;
            out.push(shape.clone());
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let shapes = self.shapes()?;
        if self.output != OutputConvention::Embedding {
            let last = shapes.last().ok_or_else(|| Error::contract("model has no layers"))?;
            if last != &[1] {
                return Err(Error::contract(format!("scalar output expected, got {last:?}")));
            }
            let act = match self.layers.last() {
                Some(LayerSpec::Dense { activation, .. }) => Some(*activation),
                _ => None,
            };
            if act != self.output.final_activation() {
                return Err(Error::contract(format!(
                    "{:?} output needs a final {:?} activation",
                    self.output,
                    self.output.final_activation()
                )));
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> Result<usize> {
        Ok(self
            .shapes()?
            .last()
            .map(|s| s.iter().product())
            .unwrap_or_else(|| self.input_shape.iter().product()))
    }

    /// Named parameter shapes in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, layer)| {
                layer
                    .param_shapes()
                    .into_iter()
                    .map(move |(suffix, shape)| (format!("layer{i}.{suffix}"), shape))
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}
