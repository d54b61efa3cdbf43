use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::{Layer, LayerSpec};
use crate::exec::Parallelism;
use crate::rng::seeded;
use crate::{Error, Result};

/// Layer stack plus the output shape `(k vectors, p dims each)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub name: String,
    pub input_dim: usize,
    pub layers: Vec<LayerSpec>,
    pub k: usize,
    pub p: usize,
}

impl Architecture {
    /// Dense stack `input_dim -> hidden... -> k*p` with ReLU between layers.
    pub fn mlp(input_dim: usize, hidden: &[usize], k: usize, p: usize) -> Self {
        let widths: Vec<usize> = std::iter::once(input_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(k * p))
            .collect();
        let layers = widths
            .windows(2)
            .map(|w| LayerSpec::Dense {
                inputs: w[0],
                outputs: w[1],
            })
            .collect();
        let name = format!(
            "mlp-{}",
            widths
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join("-")
        );
        Self {
            name,
            input_dim,
            layers,
            k,
            p,
        }
    }

    /// Six 3x3 convolutions for single-channel square images. Strides halve
    /// the resolution four times; each of the final `h x w` positions is one
    /// `p`-dimensional output vector. Hidden widths are `base`, `2 * base`,
    /// `2 * base`, `4 * base`, `4 * base`.
    pub fn conv_six(height: usize, width: usize, base: usize, p: usize) -> Result<Self> {
        if base == 0 {
            return Err(Error::config("conv base width must be at least 1"));
        }
        let b = base;
        let plan = [
            (b, 1),
            (2 * b, 2),
            (2 * b, 1),
            (4 * b, 2),
            (4 * b, 2),
            (p, 2),
        ];
        let (mut c, mut h, mut w) = (1, height, width);
        let mut layers = Vec::with_capacity(plan.len());
        for (out_channels, stride) in plan {
            let spec = LayerSpec::Conv2d {
                in_channels: c,
                height: h,
                width: w,
                out_channels,
                kernel: 3,
                stride,
                padding: 1,
            };
            (h, w) = spec.conv_output_hw();
            c = out_channels;
            layers.push(spec);
        }
        let arch = Self {
            name: "conv6".into(),
            input_dim: height * width,
            layers,
            k: h * w,
            p,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn output_len(&self) -> usize {
        self.k * self.p
    }

    fn ends_in_conv(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::Conv2d { .. }))
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() || self.k == 0 || self.p == 0 {
            return Err(Error::config("architecture needs layers and k, p >= 1"));
        }
        let mut width = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.input_len() != width {
                return Err(Error::config(format!(
                    "layer {i} expects {} inputs but receives {width}",
                    l.input_len()
                )));
            }
            width = l.output_len();
        }
        if width != self.output_len() {
            return Err(Error::config(format!(
                "layers produce {width} outputs, k*p = {}",
                self.output_len()
            )));
        }
        if let Some(LayerSpec::Conv2d { out_channels, .. }) = self.layers.last() {
            if *out_channels != self.p {
                return Err(Error::config("final conv channels must equal p"));
            }
        }
        Ok(())
    }
}

/// Per-feature standardization applied before the first layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl InputNorm {
    /// Mean and standard deviation of each column; zero-variance columns
    /// keep unit scale.
    pub fn fit(x: ArrayView2<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in x.rows() {
            Zip::from(&mut var)
                .and(&row)
                .and(&mean)
                .for_each(|v, &xi, &m| *v += (xi - m).powi(2));
        }
        let std = var.mapv(|v| {
            let s = (v / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        });
        Self {
            mean: mean.to_vec(),
            std: std.to_vec(),
        }
    }

    fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mean = Array1::from(self.mean.clone());
        let std = Array1::from(self.std.clone());
        (&x - &mean) / &std
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub seed: u64,
    /// Multiplier on the Kaiming-uniform bound.
    pub init_scale: f64,
    /// Start the last layer at zero so the initial encodings are all zero.
    pub zero_final_layer: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            init_scale: 1.0,
            zero_final_layer: false,
        }
    }
}

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

/// The encoder `f_theta`. Output rows hold `k` consecutive `p`-vectors.
#[derive(Debug, Clone)]
pub struct Encoder {
    arch: Architecture,
    layers: Vec<Layer>,
    norm: Option<InputNorm>,
    generation: u64,
}

impl PartialEq for Encoder {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.layers == other.layers && self.norm == other.norm
    }
}

/// Activations recorded by [`Encoder::forward`]: the input to every layer.
#[derive(Debug, Clone)]
pub struct Tape {
    generation: u64,
    inputs: Vec<Array2<f64>>,
}

impl Tape {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Gradient w.r.t. every encoder parameter, aligned with the layer list.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<LayerGrad>,
}

impl Gradient {
    pub fn zeros_like(encoder: &Encoder) -> Self {
        Self {
            layers: encoder
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    /// Weights then bias, layer by layer, row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.weight.iter().chain(g.bias.iter()).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|g| g.weight.iter().chain(g.bias.iter()).all(|x| x.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

const EVAL_CHUNK: usize = 256;

impl Encoder {
    pub fn new(arch: Architecture, init: InitConfig) -> Result<Self> {
        arch.validate()?;
        let mut rng = seeded(init.seed);
        let n = arch.layers.len();
        let layers = arch
            .layers
            .iter()
            .enumerate()
            .map(|(i, &spec)| {
                let mut layer = Layer::zeros(spec);
                if !(init.zero_final_layer && i + 1 == n) {
                    let bound = init.init_scale * (6.0 / spec.fan_in() as f64).sqrt();
                    layer
                        .weight
                        .mapv_inplace(|_| rng.random_range(-1.0..1.0) * bound);
                }
                layer
            })
            .collect();
        Ok(Self {
            arch,
            layers,
            norm: None,
            generation: next_generation(),
        })
    }

    pub(crate) fn from_layers(
        arch: Architecture,
        layers: Vec<Layer>,
        norm: Option<InputNorm>,
    ) -> Result<Self> {
        arch.validate()?;
        if layers.len() != arch.layers.len()
            || layers.iter().zip(&arch.layers).any(|(l, s)| {
                l.spec != *s
                    || l.weight.dim() != s.weight_shape()
                    || l.bias.len() != s.weight_shape().0
            })
        {
            return Err(Error::config(
                "layer parameters do not match the architecture",
            ));
        }
        Ok(Self {
            arch,
            layers,
            norm,
            generation: next_generation(),
        })
    }

    pub fn with_input_norm(mut self, norm: Option<InputNorm>) -> Result<Self> {
        if let Some(n) = &norm {
            if n.mean.len() != self.arch.input_dim || n.std.len() != self.arch.input_dim {
                return Err(Error::shape(
                    format!("{} normalization entries", self.arch.input_dim),
                    n.mean.len(),
                ));
            }
        }
        self.norm = norm;
        self.generation = next_generation();
        Ok(self)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_norm(&self) -> Option<&InputNorm> {
        self.norm.as_ref()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable parameter access; invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation = next_generation();
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn k(&self) -> usize {
        self.arch.k
    }

    pub fn p(&self) -> usize {
        self.arch.p
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape(self.num_params(), flat.len()));
        }
        let mut it = flat.iter().copied();
        for l in self.layers_mut() {
            l.weight
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|x| *x = it.next().unwrap());
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|x| x.is_finite()))
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.arch.input_dim {
            return Err(Error::shape(
                format!("{} input features", self.arch.input_dim),
                x.ncols(),
            ));
        }
        Ok(())
    }

    /// Conv stacks produce channel-major `(p, k)`; callers see `(k, p)`.
    fn to_vector_major(&self, out: Array2<f64>) -> Array2<f64> {
        if !self.arch.ends_in_conv() {
            return out;
        }
        let (k, p) = (self.arch.k, self.arch.p);
        Array2::from_shape_fn((out.nrows(), k * p), |(b, i)| out[[b, (i % p) * k + i / p]])
    }

    fn to_channel_major(&self, g: ArrayView2<f64>) -> Array2<f64> {
        if !self.arch.ends_in_conv() {
            return g.to_owned();
        }
        let (k, p) = (self.arch.k, self.arch.p);
        Array2::from_shape_fn((g.nrows(), k * p), |(b, i)| g[[b, (i % k) * p + i / k]])
    }

    fn run(&self, x: ArrayView2<f64>, mut tape: Option<&mut Vec<Array2<f64>>>) -> Array2<f64> {
        let mut h = match &self.norm {
            Some(n) => n.apply(x),
            None => x.to_owned(),
        };
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(h.view());
            if i != last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            if let Some(t) = tape.as_deref_mut() {
                t.push(h);
            }
            h = z;
        }
        self.to_vector_major(h)
    }

    /// Encodes a batch and records what the reverse pass needs.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let out = self.run(x, Some(&mut inputs));
        Ok((
            out,
            Tape {
                generation: self.generation,
                inputs,
            },
        ))
    }

    /// Forward pass without a tape, in fixed-size row chunks.
    pub fn encode(&self, x: ArrayView2<f64>, par: Parallelism) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let width = self.arch.output_len();
        let flat = par.map_chunks(x.nrows(), EVAL_CHUNK, |r| {
            self.run(x.slice(ndarray::s![r, ..]), None)
                .iter()
                .copied()
                .collect()
        });
        Ok(Array2::from_shape_vec((x.nrows(), width), flat).expect("chunk outputs are whole rows"))
    }

    /// Reverse pass: gradient of `sum(upstream * encodings)` w.r.t. parameters.
    pub fn backward(&self, tape: &Tape, upstream: ArrayView2<f64>) -> Result<Gradient> {
        if tape.generation != self.generation {
            return Err(Error::usage(
                "tape was recorded before the parameters changed",
            ));
        }
        let expected = (tape.batch_size(), self.arch.output_len());
        if upstream.dim() != expected {
            return Err(Error::shape(
                format!("{expected:?}"),
                format!("{:?}", upstream.dim()),
            ));
        }
        let mut g = self.to_channel_major(upstream);
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.inputs[i];
            let (dw, db, mut dx) = layer.backward(input.view(), g.view());
            grads.push(LayerGrad {
                weight: dw,
                bias: db,
            });
            if i > 0 {
                Zip::from(&mut dx).and(input).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
            }
            g = dx;
        }
        grads.reverse();
        Ok(Gradient { layers: grads })
    }

    /// Gradient of one output coordinate for one input, flattened like
    /// [`Gradient::flatten`]. This is a row of the network Jacobian.
    pub fn output_jacobian_row(&self, x: &[f64], output_index: usize) -> Result<Vec<f64>> {
        if output_index >= self.arch.output_len() {
            return Err(Error::shape(
                format!("output index < {}", self.arch.output_len()),
                output_index,
            ));
        }
        let xv = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| Error::shape(self.arch.input_dim, e))?;
        let (_, tape) = self.forward(xv)?;
        let mut up = Array2::zeros((1, self.arch.output_len()));
        up[[0, output_index]] = 1.0;
        Ok(self.backward(&tape, up.view())?.flatten())
    }
}
