//! Test-only oracles, independent of the code paths they check.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sq2s_core::{Scalar, Tape, Tensor, Var};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(lo..hi)))
}

/// Builds the scalar `sum(f(inputs) * weights)` so one backward pass checks a
/// random projection of the whole Jacobian.
fn projected<T: Scalar>(
    f: &dyn Fn(&mut Tape<T>, &[Var]) -> Var,
    inputs: &[Tensor<T>],
) -> (Tape<T>, Vec<Var>, Var, Tensor<T>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let n = tape.value(out).len();
    // deterministic, sign-varying projection
    let w = Tensor::from_fn(tape.shape(out), |i| T::of(((i * 7919 + n) % 17) as f64 / 8.0 - 1.0));
    let wv = tape.constant(w.clone());
    let p = tape.mul(out, wv).unwrap();
    let loss = tape.sum(p).unwrap();
    (tape, vars, loss, w)
}

/// Maximum over every input element of |analytic - numeric| / max(|analytic|,
/// |numeric|, floor), with central differences of step `eps`. A negative
/// `floor` means "the largest analytic gradient magnitude", which measures
/// errors against the gradient's overall scale.
pub fn max_rel_error<T: Scalar>(
    f: &dyn Fn(&mut Tape<T>, &[Var]) -> Var,
    inputs: &[Tensor<T>],
    eps: f64,
    floor: f64,
) -> f64 {
    let (mut tape, vars, loss, w) = projected(f, inputs);
    tape.backward(loss).unwrap();
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    // The projection is reduced in f64 here so that outputs unaffected by a
    // perturbation cancel exactly between the two evaluations.
    let eval = |ins: &[Tensor<T>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ins.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out)
            .data()
            .iter()
            .zip(w.data())
            .map(|(o, wv)| o.as_f64() * wv.as_f64())
            .sum()
    };
    let floor = if floor < 0.0 {
        analytic
            .iter()
            .flat_map(|a| a.data().iter().map(|v| v.as_f64().abs()))
            .fold(0.0, f64::max)
    } else {
        floor
    };
    let mut worst = 0.0f64;
    let mut work = inputs.to_vec();
    for (k, a) in analytic.iter().enumerate() {
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + T::of(eps);
            let up = eval(&work);
            work[k].data_mut()[i] = orig - T::of(eps);
            let down = eval(&work);
            work[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let an = a.data()[i].as_f64();
            let rel = (an - numeric).abs() / an.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Random tensors that keep every element at least `gap` away from zero, so
/// finite differences do not straddle a kink.
pub fn away_from_zero<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(gap..1.0);
        T::of(if rng.random_bool(0.5) { m } else { -m })
    })
}

/// Three harmonics of a 150 Hz fundamental with 1 : 0.6 : 0.3 amplitudes and
/// a slow amplitude swell, spanning `cfg.window_len()` samples.
pub fn vowel(cfg: &sq2s_core::dsp::MelConfig) -> sq2s_core::dsp::Waveform<f64> {
    let n = cfg.window_len();
    let sr = cfg.sample_rate as f64;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr;
            let env = 0.6 + 0.4 * (std::f64::consts::PI * i as f64 / n as f64).sin();
            let s: f64 = [(1.0, 1.0), (2.0, 0.6), (3.0, 0.3)]
                .iter()
                .map(|&(h, a)| a * (2.0 * std::f64::consts::PI * 150.0 * h * t).sin())
                .sum();
            0.25 * env * s
        })
        .collect();
    sq2s_core::dsp::Waveform::new(samples, cfg.sample_rate).unwrap()
}
