//! Central finite-difference checks of every differentiable op.

mod common;

use common::{away_from_zero, max_rel_error, rng, uniform};
use sq2s_core::{Activation, Tape, Tensor, Var};

const TOL64: f64 = 1e-4;
const EPS64: f64 = 1e-6;
const FLOOR: f64 = 1e-2;

fn check64(name: &str, f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var, inputs: &[Tensor<f64>]) {
    let err = max_rel_error(f, inputs, EPS64, FLOOR);
    assert!(err < TOL64, "{name}: max relative error {err:e}");
}

#[test]
fn conv3d_float64() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let x = uniform(&mut r, &[2, 3, 5, 5], -1.0, 1.0);
        let k = uniform(&mut r, &[3, 2, 3, 3, 3], -1.0, 1.0);
        let b = uniform(&mut r, &[3], -1.0, 1.0);
        check64(
            "conv3d",
            &|t, v| t.conv3d(v[0], v[1], Some(v[2]), [1, 2, 1], [1, 1, 0]).unwrap(),
            &[x, k, b],
        );
    }
}

#[test]
fn conv3d_float32_fixed_instance() {
    // 2x3x8x8 input, 4x2x3x3x3 kernel, eps 1e-3 in single precision.
    let mut r = rng(42);
    let x = uniform::<f32>(&mut r, &[2, 3, 8, 8], -1.0, 1.0);
    let k = uniform::<f32>(&mut r, &[4, 2, 3, 3, 3], -1.0, 1.0);
    let err = max_rel_error(
        &|t, v| t.conv3d(v[0], v[1], None, [1, 1, 1], [1, 1, 1]).unwrap(),
        &[x, k],
        1e-3,
        -1.0,
    );
    assert!(err < 1e-3, "f32 conv3d max relative error {err:e}");
}

#[test]
fn conv2d_and_transpose_float64() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let x = uniform(&mut r, &[2, 7, 6], -1.0, 1.0);
        let k = uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        let b = uniform(&mut r, &[3], -1.0, 1.0);
        check64(
            "conv2d",
            &|t, v| t.conv2d(v[0], v[1], Some(v[2]), 2, 1).unwrap(),
            &[x, k, b],
        );
        let x = uniform(&mut r, &[3, 4, 5], -1.0, 1.0);
        let k = uniform(&mut r, &[3, 2, 4, 4], -1.0, 1.0);
        let b = uniform(&mut r, &[2], -1.0, 1.0);
        check64(
            "conv2d_transpose",
            &|t, v| t.conv2d_transpose(v[0], v[1], Some(v[2]), 2, 1).unwrap(),
            &[x, k, b],
        );
    }
}

#[test]
fn conv3d_transpose_float64() {
    for seed in 0..5 {
        let mut r = rng(150 + seed);
        let x = uniform(&mut r, &[2, 3, 3, 4], -1.0, 1.0);
        let k = uniform(&mut r, &[2, 3, 1, 4, 4], -1.0, 1.0);
        let b = uniform(&mut r, &[3], -1.0, 1.0);
        check64(
            "conv3d_transpose",
            &|t, v| t.conv3d_transpose(v[0], v[1], Some(v[2]), [1, 2, 2], [0, 1, 1]).unwrap(),
            &[x, k, b],
        );
    }
}

#[test]
fn pooling_dense_and_pointwise_float64() {
    for seed in 0..5 {
        let mut r = rng(200 + seed);
        let x = uniform(&mut r, &[2, 4, 4, 6], -1.0, 1.0);
        check64("maxpool3d", &|t, v| t.maxpool3d(v[0], [2, 2, 3]).unwrap(), &[x]);

        let x = uniform(&mut r, &[5], -1.0, 1.0);
        let w = uniform(&mut r, &[3, 5], -1.0, 1.0);
        let b = uniform(&mut r, &[3], -1.0, 1.0);
        check64("dense", &|t, v| t.dense(v[0], v[1], v[2]).unwrap(), &[x, w, b]);

        for f in [Activation::Relu, Activation::Sigmoid, Activation::Abs, Activation::Softplus] {
            let x = away_from_zero(&mut r, &[4, 3], 1e-3);
            check64(&format!("{f:?}"), &|t, v| t.pointwise(v[0], f).unwrap(), &[x]);
        }
    }
}

#[test]
fn elementwise_and_structural_float64() {
    let mut r = rng(300);
    let a = uniform(&mut r, &[3, 4], -1.0, 1.0);
    let b = uniform(&mut r, &[3, 4], -1.0, 1.0);
    let pos = uniform(&mut r, &[3, 4], 0.2, 1.0);
    check64("add", &|t, v| t.add(v[0], v[1]).unwrap(), &[a.clone(), b.clone()]);
    check64("sub", &|t, v| t.sub(v[0], v[1]).unwrap(), &[a.clone(), b.clone()]);
    check64("mul", &|t, v| t.mul(v[0], v[1]).unwrap(), &[a.clone(), b.clone()]);
    check64("affine", &|t, v| t.affine(v[0], -0.7, 0.3).unwrap(), &[a.clone()]);
    check64("exp", &|t, v| t.exp(v[0]).unwrap(), &[a.clone()]);
    check64("ln", &|t, v| t.ln_clamped(v[0], 1e-7).unwrap(), &[pos]);
    check64("mean", &|t, v| t.mean(v[0]).unwrap(), &[a.clone()]);
    check64("narrow", &|t, v| t.narrow(v[0], 1, 1, 2).unwrap(), &[a.clone()]);
    check64("concat", &|t, v| t.concat(&[v[0], v[1]], 1).unwrap(), &[a.clone(), b]);
    check64("mean_axis", &|t, v| t.mean_axis(v[0], 0).unwrap(), &[a.clone()]);
    check64("channel_mean", &|t, v| t.channel_mean(v[0]).unwrap(), &[a]);
}

/// dot(conv2d(a, k), b) == dot(a, conv2d_transpose(b, k))
fn adjoint_gap(seed: u64, side: usize, stride: usize) -> f64 {
    let mut r = rng(seed);
    let k = uniform::<f64>(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
    let a = uniform::<f64>(&mut r, &[2, side, side], -1.0, 1.0);
    let mut tape = Tape::new();
    let (kv, av) = (tape.constant(k), tape.constant(a.clone()));
    let ca = tape.conv2d(av, kv, None, stride, 1).unwrap();
    let b = uniform::<f64>(&mut r, tape.shape(ca), -1.0, 1.0);
    let bv = tape.constant(b.clone());
    let tb = tape.conv2d_transpose(bv, kv, None, stride, 1).unwrap();
    assert_eq!(tape.shape(tb), a.shape());
    let lhs = tape.value(ca).dot(&b).unwrap();
    let rhs = a.dot(tape.value(tb)).unwrap();
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs())
}

#[test]
fn transpose_is_adjoint_of_conv2d() {
    for seed in 0..10 {
        assert!(adjoint_gap(400 + seed, 8, 1) < 1e-10);
        assert!(adjoint_gap(500 + seed, 9, 2) < 1e-10);
    }
}
