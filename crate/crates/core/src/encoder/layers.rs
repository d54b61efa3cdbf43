use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Shape of one layer. Conv inputs and outputs are flattened channel-major
/// `(channels, height, width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        height: usize,
        width: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
}

impl LayerSpec {
    pub fn input_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { inputs, .. } => inputs,
            LayerSpec::Conv2d {
                in_channels,
                height,
                width,
                ..
            } => in_channels * height * width,
        }
    }

    pub fn output_len(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv2d { out_channels, .. } => {
                let (h, w) = self.conv_output_hw();
                out_channels * h * w
            }
        }
    }

    /// Output spatial size of a conv layer; `(1, 1)` for dense layers.
    pub fn conv_output_hw(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { .. } => (1, 1),
            LayerSpec::Conv2d {
                height,
                width,
                kernel,
                stride,
                padding,
                ..
            } => (
                (height + 2 * padding - kernel) / stride + 1,
                (width + 2 * padding - kernel) / stride + 1,
            ),
        }
    }

    fn conv_positions(&self) -> usize {
        let (h, w) = self.conv_output_hw();
        h * w
    }

    /// `(rows, cols)` of the weight matrix.
    pub fn weight_shape(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { inputs, outputs } => (outputs, inputs),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels, in_channels * kernel * kernel),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight_shape().1
    }
}

/// A layer's parameters. Dense weights are `outputs x inputs`; conv weights
/// are `out_channels x (in_channels * kernel * kernel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(spec: LayerSpec) -> Self {
        let (r, c) = spec.weight_shape();
        Self {
            spec,
            weight: Array2::zeros((r, c)),
            bias: Array1::zeros(r),
        }
    }

    /// Pre-activation output for a batch (one sample per row).
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        match self.spec {
            LayerSpec::Dense { .. } => {
                let mut z = x.dot(&self.weight.t());
                z += &self.bias;
                z
            }
            LayerSpec::Conv2d { out_channels, .. } => {
                let positions = self.spec.conv_positions();
                let mut y = self.weight.dot(&im2col_batch(&self.spec, x));
                y += &self.bias.view().insert_axis(Axis(1));
                let mut out = Array2::zeros((x.nrows(), out_channels * positions));
                for (b, mut ob) in out.rows_mut().into_iter().enumerate() {
                    let yb = y.slice(s![.., b * positions..(b + 1) * positions]);
                    ob.iter_mut().zip(yb.iter()).for_each(|(o, &v)| *o = v);
                }
                out
            }
        }
    }

    /// Given `d_out` (gradient w.r.t. pre-activations), returns
    /// `(d_weight, d_bias, d_input)`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        d_out: ArrayView2<f64>,
    ) -> (Array2<f64>, Array1<f64>, Array2<f64>) {
        match self.spec {
            LayerSpec::Dense { .. } => {
                let dw = d_out.t().dot(&x).as_standard_layout().into_owned();
                let db = d_out.sum_axis(Axis(0));
                let dx = d_out.dot(&self.weight);
                (dw, db, dx)
            }
            LayerSpec::Conv2d { out_channels, .. } => {
                let positions = self.spec.conv_positions();
                let n = x.nrows();
                let mut g = Array2::zeros((out_channels, n * positions));
                for (b, gb) in d_out.rows().into_iter().enumerate() {
                    let mut dst = g.slice_mut(s![.., b * positions..(b + 1) * positions]);
                    dst.iter_mut().zip(gb.iter()).for_each(|(d, &v)| *d = v);
                }
                let cols = im2col_batch(&self.spec, x);
                let dw = g.dot(&cols.t());
                let db = g.sum_axis(Axis(1));
                let dcols = self.weight.t().dot(&g);
                let mut dx = Array2::zeros(x.raw_dim());
                for (b, mut dxb) in dx.rows_mut().into_iter().enumerate() {
                    let block = dcols.slice(s![.., b * positions..(b + 1) * positions]);
                    col2im_add(
                        &self.spec,
                        block,
                        dxb.as_slice_mut().expect("contiguous row"),
                    );
                }
                (dw, db, dx)
            }
        }
    }
}

/// Unfolds every sample of `x` side by side: sample `b` owns columns
/// `b * positions .. (b + 1) * positions`.
fn im2col_batch(spec: &LayerSpec, x: ArrayView2<f64>) -> Array2<f64> {
    let positions = spec.conv_positions();
    let rows = spec.weight_shape().1;
    let mut cols = Array2::zeros((rows, x.nrows() * positions));
    for (b, xb) in x.rows().into_iter().enumerate() {
        let xb = xb.as_standard_layout();
        let block = im2col(spec, xb.as_slice().expect("standard layout"));
        cols.slice_mut(s![.., b * positions..(b + 1) * positions])
            .assign(&block);
    }
    cols
}

/// Unfolds one sample into a `(in_channels * k * k) x (oh * ow)` matrix.
fn im2col(spec: &LayerSpec, x: &[f64]) -> Array2<f64> {
    let LayerSpec::Conv2d {
        in_channels,
        height,
        width,
        kernel,
        stride,
        padding,
        ..
    } = *spec
    else {
        unreachable!("im2col on a dense layer")
    };
    let (oh, ow) = spec.conv_output_hw();
    let mut cols = Array2::zeros((in_channels * kernel * kernel, oh * ow));
    for c in 0..in_channels {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let mut dst = cols.slice_mut(s![row, ..]);
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - padding as isize;
                    if ii < 0 || ii >= height as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj * stride + kj) as isize - padding as isize;
                        if jj < 0 || jj >= width as isize {
                            continue;
                        }
                        dst[oi * ow + oj] = x[(c * height + ii as usize) * width + jj as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(spec: &LayerSpec, cols: ArrayView2<f64>, dx: &mut [f64]) {
    let LayerSpec::Conv2d {
        in_channels,
        height,
        width,
        kernel,
        stride,
        padding,
        ..
    } = *spec
    else {
        unreachable!("col2im on a dense layer")
    };
    let (oh, ow) = spec.conv_output_hw();
    for c in 0..in_channels {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                for oi in 0..oh {
                    let ii = (oi * stride + ki) as isize - padding as isize;
                    if ii < 0 || ii >= height as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj * stride + kj) as isize - padding as isize;
                        if jj < 0 || jj >= width as isize {
                            continue;
                        }
                        dx[(c * height + ii as usize) * width + jj as usize] +=
                            cols[[row, oi * ow + oj]];
                    }
                }
            }
        }
    }
}
