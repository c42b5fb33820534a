//! Central finite-difference checks of every layer's analytic gradients.
//!
//! The probe loss is a fixed random linear functional L(y) = Σ cᵢyᵢ, so the
//! upstream gradient is exactly `c`. Numeric gradients re-run the forward
//! pass on a clone of the stack, which also resets the dropout RNG and
//! keeps the mask identical across probe evaluations.

use osrkit_core::nn::{
    cross_entropy_loss, Conv2d, Dropout, Flatten, Layer, Linear, LowerStack, MaxPool2d, Mode, Relu,
};
use osrkit_core::rng_from_seed;
use osrkit_core::Tensor;
use rand::Rng;

const STEP: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn random_tensor(shape: &[usize], rng: &mut osrkit_core::ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn linear_functional(y: &Tensor, coeffs: &[f64]) -> f64 {
    y.data().iter().zip(coeffs).map(|(a, b)| a * b).sum()
}

fn assert_close(analytic: f64, numeric: f64, what: &str) {
    let scale = analytic.abs().max(numeric.abs()).max(1e-3);
    let rel = (analytic - numeric).abs() / scale;
    assert!(
        rel < TOLERANCE,
        "{}: analytic {:.10e} vs numeric {:.10e} (rel {:.3e})",
        what,
        analytic,
        numeric,
        rel
    );
}

/// Check input and parameter gradients of a stack against central
/// differences of the probe loss.
fn check_stack(stack: &LowerStack, x: &Tensor, seed: u64) {
    let mut rng = rng_from_seed(seed);

    // probe the output shape to size the loss coefficients
    let out = stack.clone().forward(x, Mode::Eval).unwrap();
    let coeffs: Vec<f64> = (0..out.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();

    // analytic pass
    let mut analytic_stack = stack.clone();
    let y = analytic_stack.forward(x, Mode::Train).unwrap();
    let upstream = Tensor::new(y.shape().to_vec(), coeffs.clone()).unwrap();
    let grad_input = analytic_stack.backward(&upstream);

    // input gradient
    for i in 0..x.len() {
        let probe = |delta: f64| {
            let mut data = x.data().to_vec();
            data[i] += delta;
            let xp = Tensor::new(x.shape().to_vec(), data).unwrap();
            let yp = stack.clone().forward(&xp, Mode::Train).unwrap();
            linear_functional(&yp, &coeffs)
        };
        let numeric = (probe(STEP) - probe(-STEP)) / (2.0 * STEP);
        assert_close(grad_input.data()[i], numeric, &format!("input[{}]", i));
    }

    // parameter gradients accumulated by the analytic backward pass
    let grads: Vec<Vec<f64>> = analytic_stack
        .params_mut()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    let param_shapes: Vec<usize> = {
        let mut s = stack.clone();
        s.params_mut().iter().map(|p| p.value.len()).collect()
    };
    for (pi, &plen) in param_shapes.iter().enumerate() {
        for i in 0..plen {
            let probe = |delta: f64| {
                let mut s = stack.clone();
                s.params_mut()[pi].value.data_mut()[i] += delta;
                let yp = s.forward(x, Mode::Train).unwrap();
                linear_functional(&yp, &coeffs)
            };
            let numeric = (probe(STEP) - probe(-STEP)) / (2.0 * STEP);
            assert_close(grads[pi][i], numeric, &format!("param[{}][{}]", pi, i));
        }
    }
}

#[test]
fn linear_layer_gradients() {
    let mut rng = rng_from_seed(101);
    let stack = LowerStack::new(vec![Layer::Linear(Linear::new(5, 4, &mut rng))], 4);
    let x = random_tensor(&[3, 5], &mut rng);
    check_stack(&stack, &x, 1);
}

#[test]
fn relu_gradients() {
    let mut rng = rng_from_seed(102);
    let stack = LowerStack::new(vec![Layer::Relu(Relu::new())], 0);
    let x = random_tensor(&[2, 7], &mut rng);
    check_stack(&stack, &x, 2);
}

#[test]
fn conv2d_gradients() {
    let mut rng = rng_from_seed(103);
    let stack = LowerStack::new(vec![Layer::Conv2d(Conv2d::new(2, 3, 3, &mut rng))], 3);
    let x = random_tensor(&[2, 2, 5, 5], &mut rng);
    check_stack(&stack, &x, 3);
}

#[test]
fn maxpool_gradients() {
    let mut rng = rng_from_seed(104);
    let stack = LowerStack::new(vec![Layer::MaxPool2d(MaxPool2d::new(2))], 0);
    let x = random_tensor(&[2, 2, 4, 4], &mut rng);
    check_stack(&stack, &x, 4);
}

#[test]
fn dropout_gradients_in_train_mode() {
    let mut rng = rng_from_seed(105);
    let stack = LowerStack::new(vec![Layer::Dropout(Dropout::new(0.3, 555))], 0);
    let x = random_tensor(&[2, 6], &mut rng);
    check_stack(&stack, &x, 5);
}

#[test]
fn flatten_gradients() {
    let mut rng = rng_from_seed(106);
    let stack = LowerStack::new(vec![Layer::Flatten(Flatten::new())], 0);
    let x = random_tensor(&[2, 2, 3, 3], &mut rng);
    check_stack(&stack, &x, 6);
}

#[test]
fn random_three_layer_stack_gradients() {
    let mut rng = rng_from_seed(107);
    let stack = LowerStack::new(
        vec![
            Layer::Flatten(Flatten::new()),
            Layer::Linear(Linear::new(12, 8, &mut rng)),
            Layer::Relu(Relu::new()),
        ],
        8,
    );
    let x = random_tensor(&[3, 3, 2, 2], &mut rng);
    check_stack(&stack, &x, 7);
}

#[test]
fn osrci_stack_gradients_end_to_end() {
    let mut rng = rng_from_seed(108);
    let stack = osrkit_core::osrci_lower_stack(1, 7, 3, &mut rng).unwrap();
    let x = random_tensor(&[1, 1, 7, 7], &mut rng);
    check_stack(&stack, &x, 8);
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = rng_from_seed(109);
    let logits = random_tensor(&[4, 5], &mut rng);
    let mut targets = Tensor::zeros(&[4, 5]);
    for b in 0..4 {
        let class = rng.random_range(0..5);
        targets.data_mut()[b * 5 + class] = 1.0;
    }
    let (_, grad) = cross_entropy_loss(&logits, &targets).unwrap();
    for i in 0..logits.len() {
        let probe = |delta: f64| {
            let mut data = logits.data().to_vec();
            data[i] += delta;
            let lp = Tensor::new(logits.shape().to_vec(), data).unwrap();
            cross_entropy_loss(&lp, &targets).unwrap().0
        };
        let numeric = (probe(STEP) - probe(-STEP)) / (2.0 * STEP);
        assert_close(grad.data()[i], numeric, &format!("logit[{}]", i));
    }
}

#[test]
fn identical_seeds_produce_bit_identical_training() {
    use osrkit_core::nn::sgd_step;

    let build = || {
        let mut rng = rng_from_seed(2024);
        osrkit_core::fc_lower_stack(1, 4, 6, &mut rng).unwrap()
    };
    let mut a = build();
    let mut b = build();
    let mut rng = rng_from_seed(31);
    for _ in 0..5 {
        let x = random_tensor(&[4, 1, 4, 4], &mut rng);
        let upstream = random_tensor(&[4, 6], &mut rng);
        for stack in [&mut a, &mut b] {
            stack.forward(&x, Mode::Train).unwrap();
            stack.backward(&upstream);
            sgd_step(stack.params_mut(), 0.01);
        }
    }
    let pa: Vec<Vec<f64>> = {
        let mut s = a;
        s.params_mut().iter().map(|p| p.value.data().to_vec()).collect()
    };
    let pb: Vec<Vec<f64>> = {
        let mut s = b;
        s.params_mut().iter().map(|p| p.value.data().to_vec()).collect()
    };
    assert_eq!(pa, pb, "seeded training diverged");
}
