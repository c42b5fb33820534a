//! Individual layer implementations.
//!
//! Each layer caches whatever its backward pass needs when run in train
//! mode. `backward` consumes the cache, so forward/backward calls must be
//! paired; violating that is a programming error and panics.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn uniform_init(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound).collect()
}

fn shape_error(expected: String, got: &[usize]) -> Error {
    Error::ShapeMismatch {
        expected,
        got: format!("{:?}", got),
    }
}

/// Fully connected layer, `y = x Wᵀ + b`. Weight is `[out, in]` row-major.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
    grad_weight: Tensor,
    grad_bias: Tensor,
    cached_input: Option<Tensor>,
}

impl Linear {
    /// Parameters drawn uniformly from ±1/√fan_in.
    pub fn new(in_features: usize, out_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let weight = Tensor::new(
            vec![out_features, in_features],
            uniform_init(rng, out_features * in_features, bound),
        )
        .expect("consistent init shape");
        let bias = Tensor::new(vec![out_features], uniform_init(rng, out_features, bound))
            .expect("consistent init shape");
        Self {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            cached_input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n_in, n_out) = (self.in_features(), self.out_features());
        if x.shape().len() != 2 || x.shape()[1] != n_in {
            return Err(shape_error(format!("[B, {}]", n_in), x.shape()));
        }
        let batch = x.batch();
        let mut out = vec![0.0; batch * n_out];
        for b in 0..batch {
            let xr = x.row(b);
            let yr = &mut out[b * n_out..(b + 1) * n_out];
            for o in 0..n_out {
                let wr = self.weight.row(o);
                let mut acc = self.bias.data()[o];
                for i in 0..n_in {
                    acc += xr[i] * wr[i];
                }
                yr[o] = acc;
            }
        }
        if mode == Mode::Train {
            self.cached_input = Some(x.clone());
        }
        Tensor::new(vec![batch, n_out], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self
            .cached_input
            .take()
            .expect("linear backward without a train-mode forward");
        let (n_in, n_out) = (self.in_features(), self.out_features());
        assert_eq!(grad_out.shape(), &[x.batch(), n_out], "gradient shape");
        let batch = x.batch();
        let mut grad_in = vec![0.0; batch * n_in];
        for b in 0..batch {
            let xr = x.row(b);
            let gr = grad_out.row(b);
            let gxr = &mut grad_in[b * n_in..(b + 1) * n_in];
            for o in 0..n_out {
                let g = gr[o];
                self.grad_bias.data_mut()[o] += g;
                let wrow = &mut self.grad_weight.data_mut()[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    wrow[i] += g * xr[i];
                }
            }
            for o in 0..n_out {
                let g = gr[o];
                let wr = self.weight.row(o);
                for i in 0..n_in {
                    gxr[i] += g * wr[i];
                }
            }
        }
        Tensor::new(vec![batch, n_in], grad_in).expect("consistent gradient shape")
    }

    pub fn params_mut(&mut self) -> Vec<super::ParamMut<'_>> {
        vec![
            super::ParamMut {
                value: &mut self.weight,
                grad: &mut self.grad_weight,
            },
            super::ParamMut {
                value: &mut self.bias,
                grad: &mut self.grad_bias,
            },
        ]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    cached_input: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        if mode == Mode::Train {
            self.cached_input = Some(x.clone());
        }
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self
            .cached_input
            .take()
            .expect("relu backward without a train-mode forward");
        assert_eq!(grad_out.shape(), x.shape(), "gradient shape");
        let data = x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect();
        Tensor::new(x.shape().to_vec(), data).expect("consistent gradient shape")
    }
}

/// Valid (no padding) stride-1 convolution with square kernels.
#[derive(Debug, Clone)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    weight: Tensor, // [oc, ic, k, k]
    bias: Tensor,   // [oc]
    grad_weight: Tensor,
    grad_bias: Tensor,
    cached_input: Option<Tensor>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Tensor::new(
            vec![out_channels, in_channels, kernel, kernel],
            uniform_init(rng, out_channels * fan_in, bound),
        )
        .expect("consistent init shape");
        let bias = Tensor::new(vec![out_channels], uniform_init(rng, out_channels, bound))
            .expect("consistent init shape");
        Self {
            in_channels,
            out_channels,
            kernel,
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            cached_input: None,
        }
    }

    pub fn output_side(&self, input_side: usize) -> Option<usize> {
        (input_side + 1).checked_sub(self.kernel)
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let k = self.kernel;
        match x.shape() {
            [_, c, h, w] if *c == self.in_channels && *h >= k && *w >= k => {}
            _ => {
                return Err(shape_error(
                    format!("[B, {}, ≥{}, ≥{}]", self.in_channels, k, k),
                    x.shape(),
                ))
            }
        }
        let (batch, ic, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (h - k + 1, w - k + 1);
        let oc = self.out_channels;
        let mut out = vec![0.0; batch * oc * oh * ow];
        let xd = x.data();
        let wd = self.weight.data();
        for b in 0..batch {
            for o in 0..oc {
                let ybase = ((b * oc) + o) * oh * ow;
                let bias = self.bias.data()[o];
                for v in &mut out[ybase..ybase + oh * ow] {
                    *v = bias;
                }
                for c in 0..ic {
                    let xbase = ((b * ic) + c) * h * w;
                    for p in 0..k {
                        for q in 0..k {
                            let wv = wd[(((o * ic) + c) * k + p) * k + q];
                            for i in 0..oh {
                                let xrow = xbase + (i + p) * w + q;
                                let yrow = ybase + i * ow;
                                for j in 0..ow {
                                    out[yrow + j] += wv * xd[xrow + j];
                                }
                            }
                        }
                    }
                }
            }
        }
        if mode == Mode::Train {
            self.cached_input = Some(x.clone());
        }
        Tensor::new(vec![batch, oc, oh, ow], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let x = self
            .cached_input
            .take()
            .expect("conv2d backward without a train-mode forward");
        let k = self.kernel;
        let (batch, ic, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (h - k + 1, w - k + 1);
        let oc = self.out_channels;
        assert_eq!(grad_out.shape(), &[batch, oc, oh, ow], "gradient shape");
        let xd = x.data();
        let gd = grad_out.data();
        let wd = self.weight.data();
        let gw = self.grad_weight.data_mut();
        let mut grad_in = vec![0.0; batch * ic * h * w];
        for b in 0..batch {
            for o in 0..oc {
                let gbase = ((b * oc) + o) * oh * ow;
                let mut gb = 0.0;
                for &g in &gd[gbase..gbase + oh * ow] {
                    gb += g;
                }
                self.grad_bias.data_mut()[o] += gb;
                for c in 0..ic {
                    let xbase = ((b * ic) + c) * h * w;
                    for p in 0..k {
                        for q in 0..k {
                            let widx = (((o * ic) + c) * k + p) * k + q;
                            let wv = wd[widx];
                            let mut acc = 0.0;
                            for i in 0..oh {
                                let xrow = xbase + (i + p) * w + q;
                                let grow = gbase + i * ow;
                                for j in 0..ow {
                                    let g = gd[grow + j];
                                    acc += g * xd[xrow + j];
                                    grad_in[xrow + j] += g * wv;
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
        Tensor::new(vec![batch, ic, h, w], grad_in).expect("consistent gradient shape")
    }

    pub fn params_mut(&mut self) -> Vec<super::ParamMut<'_>> {
        vec![
            super::ParamMut {
                value: &mut self.weight,
                grad: &mut self.grad_weight,
            },
            super::ParamMut {
                value: &mut self.bias,
                grad: &mut self.grad_bias,
            },
        ]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Non-overlapping max pooling; trailing rows/columns that do not fill a
/// window are dropped.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    size: usize,
    cached: Option<(Vec<usize>, Vec<usize>)>, // input shape, argmax flat indices
}

impl MaxPool2d {
    pub fn new(size: usize) -> Self {
        assert!(size >= 1, "pool size must be at least 1");
        Self { size, cached: None }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let s = self.size;
        match x.shape() {
            [_, _, h, w] if *h >= s && *w >= s => {}
            _ => {
                return Err(shape_error(
                    format!("[B, C, ≥{}, ≥{}]", s, s),
                    x.shape(),
                ))
            }
        }
        let (batch, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (h / s, w / s);
        let xd = x.data();
        let mut out = Vec::with_capacity(batch * c * oh * ow);
        let mut argmax = Vec::with_capacity(batch * c * oh * ow);
        for bc in 0..batch * c {
            let base = bc * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best_idx = base + (i * s) * w + j * s;
                    let mut best = xd[best_idx];
                    for p in 0..s {
                        for q in 0..s {
                            let idx = base + (i * s + p) * w + (j * s + q);
                            if xd[idx] > best {
                                best = xd[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
        if mode == Mode::Train {
            self.cached = Some((x.shape().to_vec(), argmax));
        }
        Tensor::new(vec![batch, c, oh, ow], out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let (in_shape, argmax) = self
            .cached
            .take()
            .expect("maxpool backward without a train-mode forward");
        assert_eq!(grad_out.len(), argmax.len(), "gradient shape");
        let mut grad_in = Tensor::zeros(&in_shape);
        let gd = grad_in.data_mut();
        for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
            gd[idx] += g;
        }
        grad_in
    }
}

/// Inverted dropout: kept units are scaled by 1/(1-p) in train mode, eval
/// mode is the identity and never consumes randomness.
#[derive(Debug, Clone)]
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
    mask: Option<Vec<f64>>,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        use rand::SeedableRng;
        assert!((0.0..1.0).contains(&p), "dropout probability in [0, 1)");
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            mask: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Eval || self.p == 0.0 {
            if mode == Mode::Train {
                self.mask = None;
            }
            return Ok(x.clone());
        }
        let keep_scale = 1.0 / (1.0 - self.p);
        let mask: Vec<f64> = (0..x.len())
            .map(|_| {
                if self.rng.random::<f64>() < self.p {
                    0.0
                } else {
                    keep_scale
                }
            })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::new(x.shape().to_vec(), data);
        self.mask = Some(mask);
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        match self.mask.take() {
            Some(mask) => {
                let data = grad_out
                    .data()
                    .iter()
                    .zip(&mask)
                    .map(|(&g, &m)| g * m)
                    .collect();
                Tensor::new(grad_out.shape().to_vec(), data).expect("consistent gradient shape")
            }
            None => grad_out.clone(),
        }
    }
}

/// Collapse everything after the batch dimension into one axis.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    cached_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        if mode == Mode::Train {
            self.cached_shape = Some(x.shape().to_vec());
        }
        x.clone().reshape(vec![x.batch(), x.sample_len()])
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let shape = self
            .cached_shape
            .take()
            .expect("flatten backward without a train-mode forward");
        grad_out
            .clone()
            .reshape(shape)
            .expect("consistent gradient shape")
    }
}
