//! Every differentiable op is checked against central finite differences.

use funit_autodiff::{Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;
const TOLERANCE: f64 = 1e-6;

/// Checks d(sum(f(inputs) * probe))/d(inputs[i]) for every input element.
fn check(inputs: &[Tensor], f: impl for<'t> Fn(&[Var<'t>]) -> Var<'t>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let probe = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|v| tape.constant(v.clone())).collect();
        let shape = f(&vars).shape();
        Tensor::randn(&shape, 1.0, &mut rng)
    };
    let loss = |values: &[Tensor]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = f(&vars).value();
        out.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|v| tape.leaf(v.clone())).collect();
    let out = f(&vars);
    let weighted = (out * tape.constant(probe.clone())).sum();
    let grads = tape.backward(weighted);

    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i]);
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            let a = analytic.data()[j];
            let scale = a.abs().max(numeric.abs()).max(1.0);
            assert!(
                (a - numeric).abs() / scale < TOLERANCE,
                "input {i} element {j}: analytic {a}, numeric {numeric}"
            );
        }
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(shape, 1.0, &mut rng)
}

/// Values bounded away from zero so kinked ops stay differentiable under the
/// finite-difference step.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor {
    random(shape, seed).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

#[test]
fn elementwise_binary() {
    let a = random(&[2, 3], 1);
    let b = random(&[2, 3], 2);
    check(&[a.clone(), b.clone()], |v| v[0] + v[1]);
    check(&[a.clone(), b.clone()], |v| v[0] - v[1]);
    check(&[a, b], |v| v[0] * v[1]);
}

#[test]
fn elementwise_unary() {
    let x = away_from_zero(&[3, 4], 3);
    check(std::slice::from_ref(&x), |v| v[0].scale(-2.5).add_scalar(0.3));
    check(std::slice::from_ref(&x), |v| v[0].relu());
    check(std::slice::from_ref(&x), |v| v[0].leaky_relu(0.2));
    check(std::slice::from_ref(&x), |v| v[0].tanh());
    check(std::slice::from_ref(&x), |v| v[0].sigmoid());
    check(std::slice::from_ref(&x), |v| v[0].softplus());
    check(std::slice::from_ref(&x), |v| v[0].abs());
    check(std::slice::from_ref(&x), |v| v[0].mean());
    check(&[x], |v| v[0].reshape(&[2, 6]));
}

#[test]
fn convolution() {
    for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 4), (1, 2, 5), (2, 0, 1)] {
        let x = random(&[2, 2, 6, 5], 4);
        let w = random(&[3, 2, k, k], 5);
        let b = random(&[3], 6);
        check(&[x.clone(), w.clone(), b], |v| {
            v[0].conv2d(v[1], Some(v[2]), stride, pad)
        });
        check(&[x, w], |v| v[0].conv2d(v[1], None, stride, pad));
    }
}

#[test]
fn linear_layer() {
    let x = random(&[3, 4], 7);
    let w = random(&[5, 4], 8);
    let b = random(&[5], 9);
    check(&[x.clone(), w.clone(), b], |v| v[0].linear(v[1], Some(v[2])));
    check(&[x, w], |v| v[0].linear(v[1], None));
}

#[test]
fn normalization_and_modulation() {
    let x = random(&[2, 3, 3, 4], 10);
    check(std::slice::from_ref(&x), |v| v[0].instance_norm(1e-5));
    let s = random(&[2, 3], 11);
    let b = random(&[2, 3], 12);
    check(&[x, s, b], |v| v[0].instance_norm(1e-5).channel_affine(v[1], v[2]));
}

#[test]
fn pooling_and_indexing() {
    let x = random(&[4, 3, 2, 2], 13);
    check(std::slice::from_ref(&x), |v| v[0].spatial_mean());
    check(std::slice::from_ref(&x), |v| v[0].upsample_nearest(2));
    check(&[x], |v| v[0].group_mean(2));
    let m = random(&[3, 5], 14);
    check(std::slice::from_ref(&m), |v| v[0].select_per_row(&[4, 0, 2]));
    check(&[m], |v| v[0].narrow_columns(1, 3));
}

#[test]
fn constants_receive_no_gradient() {
    let tape = Tape::new();
    let x = tape.leaf(random(&[2, 2], 15));
    let c = tape.constant(random(&[2, 2], 16));
    let y = (x * c).sum();
    let grads = tape.backward(y);
    assert!(grads.get(x).is_some());
    assert!(grads.get(c).is_none());
}

#[test]
fn shared_var_accumulates() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::from_vec(&[2], vec![1.5, -2.0]).unwrap());
    let y = (x * x + x).sum();
    let g = tape.backward(y);
    assert_eq!(g.get(x).unwrap().data(), &[4.0, -3.0]);
}
