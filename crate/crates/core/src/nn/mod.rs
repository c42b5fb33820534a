//! Minimal deterministic neural-network substrate: layers, lower-stack
//! builders, cross-entropy loss, and plain SGD.
//!
//! Everything is seeded explicitly; two stacks built from the same seed and
//! driven with the same batches produce bit-identical parameters.

mod layers;
mod loss;

pub use layers::{Conv2d, Dropout, Flatten, Linear, MaxPool2d, Relu};
pub use loss::{cross_entropy_loss, softmax};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Mutable view of one parameter tensor paired with its gradient buffer.
pub struct ParamMut<'a> {
    pub value: &'a mut Tensor,
    pub grad: &'a mut Tensor,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Linear(Linear),
    Relu(Relu),
    Conv2d(Conv2d),
    MaxPool2d(MaxPool2d),
    Dropout(Dropout),
    Flatten(Flatten),
}

impl Layer {
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            Layer::Linear(l) => l.forward(x, mode),
            Layer::Relu(l) => l.forward(x, mode),
            Layer::Conv2d(l) => l.forward(x, mode),
            Layer::MaxPool2d(l) => l.forward(x, mode),
            Layer::Dropout(l) => l.forward(x, mode),
            Layer::Flatten(l) => l.forward(x, mode),
        }
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        match self {
            Layer::Linear(l) => l.backward(grad_out),
            Layer::Relu(l) => l.backward(grad_out),
            Layer::Conv2d(l) => l.backward(grad_out),
            Layer::MaxPool2d(l) => l.backward(grad_out),
            Layer::Dropout(l) => l.backward(grad_out),
            Layer::Flatten(l) => l.backward(grad_out),
        }
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        match self {
            Layer::Linear(l) => l.params_mut(),
            Layer::Conv2d(l) => l.params_mut(),
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Linear(l) => l.param_count(),
            Layer::Conv2d(l) => l.param_count(),
            _ => 0,
        }
    }
}

/// Front portion of an OSR network; a model head is appended on top.
#[derive(Debug, Clone)]
pub struct LowerStack {
    layers: Vec<Layer>,
    n_out_channels: usize,
}

impl LowerStack {
    pub fn new(layers: Vec<Layer>, n_out_channels: usize) -> Self {
        Self {
            layers,
            n_out_channels,
        }
    }

    pub fn n_out_channels(&self) -> usize {
        self.n_out_channels
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &mut self.layers {
            cur = layer.forward(&cur, mode)?;
        }
        Ok(cur)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let mut cur = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            cur = layer.backward(&cur);
        }
        cur
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}

/// Flatten → linear → ReLU over `depth` channels of `img_size`² pixels.
pub fn fc_lower_stack(
    depth: usize,
    img_size: usize,
    n_out_channels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LowerStack> {
    if depth < 1 || img_size < 1 || n_out_channels < 1 {
        return Err(Error::InvalidConfig(
            "fc lower stack: depth, img_size, and n_out_channels must all be ≥ 1".into(),
        ));
    }
    let in_features = depth * img_size * img_size;
    let layers = vec![
        Layer::Flatten(Flatten::new()),
        Layer::Linear(Linear::new(in_features, n_out_channels, rng)),
        Layer::Relu(Relu::new()),
    ];
    Ok(LowerStack::new(layers, n_out_channels))
}

const OSRCI_CONV1_CHANNELS: usize = 32;
const OSRCI_CONV2_CHANNELS: usize = 64;
const OSRCI_KERNEL: usize = 3;
const OSRCI_POOL: usize = 2;
const OSRCI_DROPOUT_P: f64 = 0.25;

/// Two 3×3 convolutions, 2×2 max pooling, dropout, and a linear projection
/// to `n_out_channels`.
pub fn osrci_lower_stack(
    depth: usize,
    img_size: usize,
    n_out_channels: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LowerStack> {
    if depth < 1 || n_out_channels < 1 {
        return Err(Error::InvalidConfig(
            "osrci lower stack: depth and n_out_channels must be ≥ 1".into(),
        ));
    }
    let after_convs = img_size
        .checked_sub(2 * (OSRCI_KERNEL - 1))
        .unwrap_or(0);
    let pooled = after_convs / OSRCI_POOL;
    if pooled == 0 {
        return Err(Error::InvalidConfig(format!(
            "osrci lower stack: img_size {} leaves an empty feature map after \
             two {}×{} convolutions and {}×{} pooling",
            img_size, OSRCI_KERNEL, OSRCI_KERNEL, OSRCI_POOL, OSRCI_POOL,
        )));
    }
    let flat = OSRCI_CONV2_CHANNELS * pooled * pooled;
    let layers = vec![
        Layer::Conv2d(Conv2d::new(depth, OSRCI_CONV1_CHANNELS, OSRCI_KERNEL, rng)),
        Layer::Relu(Relu::new()),
        Layer::Conv2d(Conv2d::new(
            OSRCI_CONV1_CHANNELS,
            OSRCI_CONV2_CHANNELS,
            OSRCI_KERNEL,
            rng,
        )),
        Layer::Relu(Relu::new()),
        Layer::MaxPool2d(MaxPool2d::new(OSRCI_POOL)),
        Layer::Dropout(Dropout::new(OSRCI_DROPOUT_P, rng.random::<u64>())),
        Layer::Flatten(Flatten::new()),
        Layer::Linear(Linear::new(flat, n_out_channels, rng)),
    ];
    Ok(LowerStack::new(layers, n_out_channels))
}

/// One plain SGD update: `p ← p − lr·grad`, then gradients are zeroed.
pub fn sgd_step<'a>(params: impl IntoIterator<Item = ParamMut<'a>>, learning_rate: f64) {
    for p in params {
        for (v, g) in p.value.data_mut().iter_mut().zip(p.grad.data_mut().iter_mut()) {
            *v -= learning_rate * *g;
            *g = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng_from_seed;

    #[test]
    fn fc_stack_maps_batch_to_out_channels() {
        let mut rng = rng_from_seed(7);
        let mut stack = fc_lower_stack(1, 28, 64, &mut rng).unwrap();
        let x = Tensor::zeros(&[3, 1, 28, 28]);
        let y = stack.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[3, 64]);
    }

    #[test]
    fn fc_stack_minimal_shape_is_affine_plus_relu() {
        let mut rng = rng_from_seed(7);
        let mut stack = fc_lower_stack(1, 1, 1, &mut rng).unwrap();
        assert_eq!(stack.param_count(), 2);
        let y = stack
            .forward(&Tensor::zeros(&[1, 1, 1, 1]), Mode::Eval)
            .unwrap();
        assert_eq!(y.shape(), &[1, 1]);
        // zero input leaves only max(bias, 0)
        let bias = stack.params_mut()[1].value.data()[0];
        assert_eq!(y.data()[0], bias.max(0.0));
    }

    #[test]
    fn osrci_stack_feature_arithmetic() {
        // 28 → 26 → 24 → 12 after two 3×3 convolutions and 2×2 pooling.
        let mut rng = rng_from_seed(7);
        let mut stack = osrci_lower_stack(1, 28, 64, &mut rng).unwrap();
        let x = Tensor::zeros(&[2, 1, 28, 28]);
        let y = stack.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[2, 64]);
    }

    #[test]
    fn osrci_stack_rejects_underflowing_image() {
        let mut rng = rng_from_seed(7);
        assert!(osrci_lower_stack(1, 5, 8, &mut rng).is_err());
        assert!(osrci_lower_stack(1, 6, 8, &mut rng).is_ok());
    }

    #[test]
    fn osrci_eval_forward_is_deterministic() {
        let mut rng = rng_from_seed(9);
        let mut stack = osrci_lower_stack(1, 8, 4, &mut rng).unwrap();
        let x = Tensor::new(vec![1, 1, 8, 8], (0..64).map(|i| i as f64 / 64.0).collect()).unwrap();
        let a = stack.forward(&x, Mode::Eval).unwrap();
        let b = stack.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_probability_dropout_matches_eval() {
        let mut d = Dropout::new(0.0, 3);
        let x = Tensor::new(vec![1, 4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let train = d.forward(&x, Mode::Train).unwrap();
        let eval = d.forward(&x, Mode::Eval).unwrap();
        assert_eq!(train, eval);
        assert_eq!(train, x);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut d = Dropout::new(0.6, 3);
        let x = Tensor::new(vec![1, 4], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(d.forward(&x, Mode::Eval).unwrap(), x);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut r = Relu::new();
        let x = Tensor::new(vec![1, 2], vec![-1.0, 2.0]).unwrap();
        let y = r.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let mut rng = rng_from_seed(1);
        let mut l = Linear::new(3, 3, &mut rng);
        {
            let mut params = l.params_mut();
            let w = params[0].value.data_mut();
            w.copy_from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
            params[1].value.data_mut().copy_from_slice(&[0.0; 3]);
        }
        let x = Tensor::new(vec![1, 3], vec![0.3, -0.7, 2.0]).unwrap();
        let y = l.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn sgd_step_applies_learning_rate_and_zeroes_grads() {
        let mut value = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut grad = Tensor::new(vec![1], vec![2.0]).unwrap();
        sgd_step(
            vec![ParamMut {
                value: &mut value,
                grad: &mut grad,
            }],
            0.1,
        );
        assert!((value.data()[0] - 0.8).abs() < 1e-15);
        assert_eq!(grad.data()[0], 0.0);

        let mut grad2 = Tensor::new(vec![1], vec![5.0]).unwrap();
        sgd_step(
            vec![ParamMut {
                value: &mut value,
                grad: &mut grad2,
            }],
            0.0,
        );
        assert!((value.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn forward_rejects_mismatched_input() {
        let mut rng = rng_from_seed(4);
        let mut stack = fc_lower_stack(1, 4, 2, &mut rng).unwrap();
        assert!(stack.forward(&Tensor::zeros(&[1, 1, 5, 5]), Mode::Eval).is_err());
    }
}
