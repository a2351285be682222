//! Short-time Fourier transform, its least-squares inverse, and Griffin-Lim
//! phase recovery.
//!
//! Frames are not centered: frame `m` covers samples `[m * hop, m * hop + n_fft)`,
//! so a signal of length `L` has `1 + (L - n_fft) / hop` frames.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients<T: Scalar>(self, n: usize) -> Vec<T> {
        match self {
            Window::Hann => (0..n)
                .map(|i| T::of(0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()))
                .collect(),
            Window::Rectangular => vec![T::one(); n],
        }
    }
}

/// A one-sided spectrogram: `bins = n_fft / 2 + 1` rows, `frames` columns,
/// stored frame-major (`data[frame * bins + bin]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram<T> {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn at(&self, bin: usize, frame: usize) -> T {
        self.data[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[T] {
        &self.data[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

pub fn frame_count(len: usize, n_fft: usize, hop: usize) -> Result<usize> {
    if n_fft == 0 || hop == 0 {
        return Err(Error::invalid("n_fft and hop must be positive"));
    }
    if len < n_fft {
        return Err(Error::invalid(format!(
            "waveform of {len} samples is shorter than n_fft = {n_fft}"
        )));
    }
    Ok(1 + (len - n_fft) / hop)
}

struct Plan<T: Scalar> {
    n_fft: usize,
    hop: usize,
    window: Vec<T>,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Scalar> Plan<T> {
    fn new(n_fft: usize, hop: usize, window: Window) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: window.coefficients(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    /// Complex one-sided STFT, frame-major.
    fn analyze(&self, samples: &[T], frames: usize) -> Vec<Complex<T>> {
        let bins = self.bins();
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.n_fft];
        for m in 0..frames {
            let seg = &samples[m * self.hop..m * self.hop + self.n_fft];
            for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&self.window) {
                *b = Complex::new(s * w, T::zero());
            }
            self.forward.process(&mut buf);
            out.extend_from_slice(&buf[..bins]);
        }
        out
    }

    /// Least-squares signal estimate from a (possibly inconsistent) one-sided
    /// STFT: overlap-add of windowed inverse frames divided by the summed
    /// squared window. Samples no window covers are zero.
    fn synthesize(&self, spec: &[Complex<T>], frames: usize) -> Vec<T> {
        let bins = self.bins();
        let len = self.n_fft + (frames - 1) * self.hop;
        let mut acc = vec![T::zero(); len];
        let mut norm = vec![T::zero(); len];
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.n_fft];
        let scale = T::one() / T::of(self.n_fft as f64);
        for m in 0..frames {
            let half = &spec[m * bins..(m + 1) * bins];
            buf[..bins].copy_from_slice(half);
            for k in bins..self.n_fft {
                buf[k] = half[self.n_fft - k].conj();
            }
            // a real signal has real DC and Nyquist bins
            buf[0].im = T::zero();
            if self.n_fft % 2 == 0 {
                buf[self.n_fft / 2].im = T::zero();
            }
            self.inverse.process(&mut buf);
            let start = m * self.hop;
            for (i, (&w, b)) in self.window.iter().zip(&buf).enumerate() {
                acc[start + i] += w * b.re * scale;
                norm[start + i] += w * w;
            }
        }
        let tiny = T::of(1e-10);
        acc.iter()
            .zip(&norm)
            .map(|(&a, &n)| if n > tiny { a / n } else { T::zero() })
            .collect()
    }
}

/// Magnitude STFT of `samples`.
pub fn stft_magnitude<T: Scalar>(
    samples: &[T],
    n_fft: usize,
    hop: usize,
    window: Window,
) -> Result<Spectrogram<T>> {
    let frames = frame_count(samples.len(), n_fft, hop)?;
    let plan = Plan::new(n_fft, hop, window);
    let data = plan.analyze(samples, frames).iter().map(|c| c.norm()).collect();
    Ok(Spectrogram {
        bins: plan.bins(),
        frames,
        data,
    })
}

#[derive(Clone, Debug)]
pub struct GriffinLimOutput<T> {
    pub samples: Vec<T>,
    /// `‖|STFT(x_i)| - target‖ / ‖target‖` after each iteration.
    pub spectral_convergence: Vec<T>,
}

/// Classic Griffin-Lim: start from seeded uniform random phase, then
/// alternate between the least-squares signal estimate and re-imposing the
/// target magnitude.
pub fn griffin_lim<T: Scalar>(
    magnitude: &Spectrogram<T>,
    n_fft: usize,
    hop: usize,
    iters: usize,
    seed: u64,
) -> Result<GriffinLimOutput<T>> {
    if iters == 0 {
        return Err(Error::invalid("griffin_lim needs at least one iteration"));
    }
    if magnitude.bins != n_fft / 2 + 1 || magnitude.frames == 0 {
        return Err(Error::invalid(format!(
            "magnitude has {} bins x {} frames, expected {} bins for n_fft {n_fft}",
            magnitude.bins,
            magnitude.frames,
            n_fft / 2 + 1
        )));
    }
    let plan = Plan::new(n_fft, hop, Window::Hann);
    let frames = magnitude.frames;
    let target_norm = magnitude.frobenius();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec: Vec<Complex<T>> = magnitude
        .data
        .iter()
        .map(|&m| {
            let phase = T::of(rng.random_range(0.0..2.0 * PI));
            Complex::from_polar(m, phase)
        })
        .collect();
    let mut history = Vec::with_capacity(iters);
    let mut samples = Vec::new();
    for _ in 0..iters {
        samples = plan.synthesize(&spec, frames);
        let rebuilt = plan.analyze(&samples, frames);
        let mut err = T::zero();
        for ((s, r), &m) in spec.iter_mut().zip(&rebuilt).zip(&magnitude.data) {
            let mag = r.norm();
            err += (mag - m) * (mag - m);
            *s = if mag > T::zero() {
                *r * (m / mag)
            } else {
                Complex::new(m, T::zero())
            };
        }
        history.push(if target_norm > T::zero() {
            err.sqrt() / target_norm
        } else {
            err.sqrt()
        });
    }
    Ok(GriffinLimOutput {
        samples,
        spectral_convergence: history,
    })
}
