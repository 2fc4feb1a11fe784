//! Multilayer perceptrons for the encoder, decoder and latent generator.
//!
//! A layer computes `x W + b`, optionally batch-normalizes the result, and
//! applies its activation. Weights are stored `fan_in × fan_out` so a batch of
//! row vectors is transformed by a single matrix product.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormState, Graph, NormMode, Var};
use crate::datasets::fingerprint;
use crate::error::{shape_err, Error, Result};
use crate::rng::{self, tag};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    pub batchnorm: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layers: Vec<LayerSpec>,
}

impl MlpSpec {
    /// Chains `input → hidden[0] → … → output`. Hidden layers use
    /// `hidden_activation` and `hidden_batchnorm`; the last layer uses
    /// `final_activation` and never batch-normalizes.
    pub fn chain(
        input: usize,
        hidden: &[usize],
        output: usize,
        hidden_activation: Activation,
        hidden_batchnorm: bool,
        final_activation: Activation,
    ) -> Result<Self> {
        let widths: Vec<usize> = std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(output))
            .collect();
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| LayerSpec {
                input: w[0],
                output: w[1],
                activation: if i == last { final_activation } else { hidden_activation },
                batchnorm: i != last && hidden_batchnorm,
            })
            .collect();
        let spec = Self { layers };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.input == 0 || l.output == 0 {
                return Err(Error::InvalidArgument(format!("layer {i} has a zero width")));
            }
            if i > 0 && self.layers[i - 1].output != l.input {
                return shape_err(format!("layer {i} input {} does not chain", l.input));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output
    }

    /// Closed-form parameter count: weights, biases, and batch-norm scale/shift.
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.input * l.output + l.output + if l.batchnorm { 2 * l.output } else { 0 })
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub state: BatchNormState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub norm: Option<BatchNormLayer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub layers: Vec<Layer>,
}

/// Result of a forward pass: the output and the parameter nodes in
/// [`Mlp::params`] order.
pub struct Forward {
    pub output: Var,
    pub params: Vec<Var>,
}

impl Mlp {
    /// Initializes weights with He normal (`std = √(2/fan_in)`) for ReLU layers
    /// and Xavier normal (`std = √(2/(fan_in + fan_out))`) otherwise. Biases
    /// and shifts start at zero, batch-norm scales at one.
    pub fn init<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let std = match l.activation {
                    Activation::Relu => (2.0 / l.input as f64).sqrt(),
                    _ => (2.0 / (l.input + l.output) as f64).sqrt(),
                };
                let normal = Normal::new(0.0, std).expect("positive std");
                let w = (0..l.input * l.output).map(|_| normal.sample(rng)).collect();
                Layer {
                    weight: Tensor::matrix(l.input, l.output, w).expect("in × out"),
                    bias: Tensor::zeros(&[l.output]),
                    norm: l.batchnorm.then(|| BatchNormLayer {
                        gamma: Tensor::ones(&[l.output]),
                        beta: Tensor::zeros(&[l.output]),
                        state: BatchNormState::new(l.output),
                    }),
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    /// Checks that every stored tensor matches the layer specs.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.layers.len() != self.spec.layers.len() {
            return shape_err(format!(
                "{} layers stored for {} specs",
                self.layers.len(),
                self.spec.layers.len()
            ));
        }
        for (i, (l, s)) in self.layers.iter().zip(&self.spec.layers).enumerate() {
            let bad = |what: &str| shape_err(format!("layer {i}: {what} does not match its spec"));
            if l.weight.shape() != [s.input, s.output] {
                return bad("weight");
            }
            if l.bias.shape() != [s.output] {
                return bad("bias");
            }
            match (&l.norm, s.batchnorm) {
                (None, false) => {}
                (Some(n), true) => {
                    let w = s.output;
                    if n.gamma.shape() != [w]
                        || n.beta.shape() != [w]
                        || n.state.running_mean.len() != w
                        || n.state.running_var.len() != w
                    {
                        return bad("batch norm");
                    }
                }
                _ => return bad("batch norm presence"),
            }
        }
        Ok(())
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| l.norm.is_some())
    }

    /// Trainable tensors: per layer weight, bias, then batch-norm scale and shift.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
            if let Some(n) = &l.norm {
                out.push(&n.gamma);
                out.push(&n.beta);
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
            if let Some(n) = &mut l.norm {
                out.push(&mut n.gamma);
                out.push(&mut n.beta);
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// Hash of every parameter and running statistic.
    pub fn fingerprint(&self) -> u64 {
        let mut all: Vec<f64> = Vec::new();
        for l in &self.layers {
            all.extend_from_slice(l.weight.data());
            all.extend_from_slice(l.bias.data());
            if let Some(n) = &l.norm {
                all.extend_from_slice(n.gamma.data());
                all.extend_from_slice(n.beta.data());
                all.extend_from_slice(&n.state.running_mean);
                all.extend_from_slice(&n.state.running_var);
            }
        }
        fingerprint(&all)
    }

    /// Builds the forward pass on `g`. Parameters become trainable leaves
    /// when `trainable`, constants otherwise. Train mode updates batch-norm
    /// running statistics.
    pub fn forward(&mut self, g: &mut Graph, x: Var, mode: NormMode, trainable: bool) -> Result<Forward> {
        let params: Vec<Var> = self
            .params()
            .into_iter()
            .map(|t| {
                if trainable {
                    g.variable(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        let output = self.forward_with(g, x, &params, mode)?;
        Ok(Forward { output, params })
    }

    /// Forward pass using caller-supplied parameter nodes, one per entry of
    /// [`Mlp::params`] and in that order. Only the batch-norm running
    /// statistics are read from `self`.
    pub fn forward_with(&mut self, g: &mut Graph, x: Var, params: &[Var], mode: NormMode) -> Result<Var> {
        let v = g.value(x);
        if v.ndim() != 2 || v.cols() != self.input_dim() {
            return shape_err(format!(
                "network expects n × {}, got {:?}",
                self.input_dim(),
                v.shape()
            ));
        }
        if params.len() != self.params().len() {
            return Err(Error::InvalidArgument(format!(
                "network has {} parameter tensors, got {}",
                self.params().len(),
                params.len()
            )));
        }
        let mut k = 0;
        let mut h = x;
        for (layer, spec) in self.layers.iter_mut().zip(&self.spec.layers) {
            h = g.matmul(h, params[k])?;
            h = g.add(h, params[k + 1])?;
            k += 2;
            if let Some(norm) = &mut layer.norm {
                h = g.batchnorm(h, params[k], params[k + 1], &mut norm.state, mode)?;
                k += 2;
            }
            h = match spec.activation {
                Activation::Relu => g.relu(h)?,
                Activation::Sigmoid => g.sigmoid(h)?,
                Activation::Tanh => g.tanh(h)?,
                Activation::Linear => h,
            };
        }
        Ok(h)
    }

    /// Eval-mode forward pass without gradients, in chunks of rows.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        const CHUNK: usize = 2048;
        if x.ndim() != 2 || x.cols() != self.input_dim() {
            return shape_err(format!(
                "network expects n × {}, got {:?}",
                self.input_dim(),
                x.shape()
            ));
        }
        let mut scratch = self.clone();
        let mut out: Option<Tensor> = None;
        let n = x.rows();
        let mut start = 0;
        while start < n || (n == 0 && out.is_none()) {
            let end = (start + CHUNK).min(n);
            let idx: Vec<usize> = (start..end).collect();
            let mut g = Graph::new();
            let xv = g.constant(x.select_rows(&idx)?);
            let f = scratch.forward(&mut g, xv, NormMode::Eval, false)?;
            let y = g.value(f.output).clone();
            out = Some(match out {
                None => y,
                Some(acc) => acc.vstack(&y)?,
            });
            if n == 0 {
                break;
            }
            start = end;
        }
        Ok(out.expect("at least one chunk"))
    }
}

/// Widths of the three architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub generator_width: usize,
    pub generator_layers: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden_width: 200,
            hidden_layers: 3,
            generator_width: 512,
            generator_layers: 5,
        }
    }
}

fn init_with(spec: MlpSpec, seed: u64, stream_tag: u64) -> Result<Mlp> {
    Mlp::init(spec, &mut rng::stream(seed, stream_tag))
}

/// `data_dim → 200 → 200 → 200 → latent_dim`, ReLU hidden, linear output.
pub fn build_encoder(data_dim: usize, latent_dim: usize, seed: u64) -> Result<Mlp> {
    build_encoder_with(data_dim, latent_dim, &Architecture::default(), seed)
}

pub fn build_encoder_with(data_dim: usize, latent_dim: usize, arch: &Architecture, seed: u64) -> Result<Mlp> {
    let hidden = vec![arch.hidden_width; arch.hidden_layers];
    let spec = MlpSpec::chain(data_dim, &hidden, latent_dim, Activation::Relu, false, Activation::Linear)?;
    init_with(spec, seed, tag::INIT_ENCODER)
}

/// `latent_dim → 200 → 200 → 200 → data_dim`, ReLU hidden, sigmoid output.
pub fn build_decoder(latent_dim: usize, data_dim: usize, seed: u64) -> Result<Mlp> {
    build_decoder_with(latent_dim, data_dim, Activation::Sigmoid, &Architecture::default(), seed)
}

pub fn build_decoder_with(
    latent_dim: usize,
    data_dim: usize,
    final_activation: Activation,
    arch: &Architecture,
    seed: u64,
) -> Result<Mlp> {
    let hidden = vec![arch.hidden_width; arch.hidden_layers];
    let spec = MlpSpec::chain(latent_dim, &hidden, data_dim, Activation::Relu, false, final_activation)?;
    init_with(spec, seed, tag::INIT_DECODER)
}

/// `noise_dim → 512 × 5 → latent_dim`: hidden layers affine, batch norm,
/// ReLU; the last layer is affine with linear output.
pub fn build_latent_generator(noise_dim: usize, latent_dim: usize, seed: u64) -> Result<Mlp> {
    build_latent_generator_with(noise_dim, latent_dim, &Architecture::default(), seed)
}

pub fn build_latent_generator_with(
    noise_dim: usize,
    latent_dim: usize,
    arch: &Architecture,
    seed: u64,
) -> Result<Mlp> {
    let hidden = vec![arch.generator_width; arch.generator_layers];
    let spec = MlpSpec::chain(noise_dim, &hidden, latent_dim, Activation::Relu, true, Activation::Linear)?;
    init_with(spec, seed, tag::INIT_GENERATOR)
}

/// Encoder, decoder and optional latent generator of one model.
///
/// A direct generator is stored as a bundle without an encoder: its
/// generator and decoder together map noise to data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub encoder: Option<Mlp>,
    pub decoder: Mlp,
    pub generator: Option<Mlp>,
    pub data_dim: usize,
    pub latent_dim: usize,
    pub noise_dim: usize,
    /// Epochs of stage-one training this bundle went through.
    #[serde(default)]
    pub stage1_epochs: usize,
}

impl ModelBundle {
    /// Encoder and decoder; the generator is added in stage two.
    pub fn autoencoder(
        data_dim: usize,
        latent_dim: usize,
        noise_dim: usize,
        final_activation: Activation,
        arch: &Architecture,
        seed: u64,
    ) -> Result<Self> {
        let bundle = Self {
            encoder: Some(build_encoder_with(data_dim, latent_dim, arch, seed)?),
            decoder: build_decoder_with(latent_dim, data_dim, final_activation, arch, seed)?,
            generator: None,
            data_dim,
            latent_dim,
            noise_dim,
            stage1_epochs: 0,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Noise-to-data generator with the latent generator's body and the
    /// decoder's head, trained end to end.
    pub fn direct_generator(
        data_dim: usize,
        latent_dim: usize,
        noise_dim: usize,
        final_activation: Activation,
        arch: &Architecture,
        seed: u64,
    ) -> Result<Self> {
        let bundle = Self {
            encoder: None,
            decoder: build_decoder_with(latent_dim, data_dim, final_activation, arch, seed)?,
            generator: Some(build_latent_generator_with(noise_dim, latent_dim, arch, seed)?),
            data_dim,
            latent_dim,
            noise_dim,
            stage1_epochs: 0,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn encoder(&self) -> Result<&Mlp> {
        self.encoder.as_ref().ok_or(Error::MissingNetwork("encoder"))
    }

    pub fn generator(&self) -> Result<&Mlp> {
        self.generator.as_ref().ok_or(Error::MissingNetwork("latent generator"))
    }

    /// Checks the `E: X → Z`, `D: Z → X`, `LG: Z′ → Z` dimension contract.
    pub fn validate(&self) -> Result<()> {
        for net in [self.encoder.as_ref(), Some(&self.decoder), self.generator.as_ref()]
            .into_iter()
            .flatten()
        {
            net.validate()?;
        }
        let bad = |what: &str, got: usize, want: usize| {
            Err(Error::Incompatible(format!("{what} is {got}, expected {want}")))
        };
        if let Some(e) = &self.encoder {
            if e.input_dim() != self.data_dim {
                return bad("encoder input", e.input_dim(), self.data_dim);
            }
            if e.output_dim() != self.latent_dim {
                return bad("encoder output", e.output_dim(), self.latent_dim);
            }
        }
        if self.decoder.input_dim() != self.latent_dim {
            return bad("decoder input", self.decoder.input_dim(), self.latent_dim);
        }
        if self.decoder.output_dim() != self.data_dim {
            return bad("decoder output", self.decoder.output_dim(), self.data_dim);
        }
        if let Some(lg) = &self.generator {
            if lg.input_dim() != self.noise_dim {
                return bad("generator input", lg.input_dim(), self.noise_dim);
            }
            if lg.output_dim() != self.latent_dim {
                return bad("generator output", lg.output_dim(), self.latent_dim);
            }
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder()?.apply(x)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.apply(z)
    }

    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(x)?)
    }

    /// `LG(z′)` in eval mode.
    pub fn transport(&self, zprime: &Tensor) -> Result<Tensor> {
        self.generator()?.apply(zprime)
    }
}
