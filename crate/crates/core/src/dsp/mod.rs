//! The waveform / mel-spectrogram bridge.
//!
//! Forward: power STFT, mel filterbank, dB relative to a fixed reference,
//! then an affine map of `[db_floor, db_ceil]` onto `[0, 1]`. Inverse:
//! de-normalize, clamped pseudo-inverse of the filterbank, Griffin-Lim.

pub mod io;
pub mod mel;
pub mod stft;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub use mel::{hz_to_mel, mel_to_hz, MelFilterbank};
pub use stft::{griffin_lim, stft_magnitude, GriffinLimOutput, Spectrogram, Window};

/// Analysis parameters shared by the forward and inverse transforms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    /// Time frames kept in every spectrogram (crop or zero-pad).
    pub width: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub db_floor: f64,
    pub db_ceil: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl MelConfig {
    /// 32 x 32 spectrograms of 2240-sample windows at 8 kHz.
    pub fn desk() -> Self {
        Self {
            sample_rate: 8000,
            n_fft: 256,
            hop: 64,
            n_mels: 32,
            width: 32,
            fmin: 40.0,
            fmax: 4000.0,
            db_floor: -80.0,
            db_ceil: 0.0,
        }
    }

    /// 64 x 64 spectrograms of 21,000-sample windows at 22.05 kHz.
    pub fn paper() -> Self {
        let mut cfg = Self {
            sample_rate: 22050,
            n_fft: 1024,
            hop: 1,
            n_mels: 64,
            width: 64,
            fmin: 40.0,
            fmax: 11025.0,
            db_floor: -80.0,
            db_ceil: 0.0,
        };
        cfg.hop = cfg.hop_for_window(21_000);
        cfg
    }

    /// Largest hop that fits `width` frames into `len` samples.
    pub fn hop_for_window(&self, len: usize) -> usize {
        (len.saturating_sub(self.n_fft) / (self.width.max(2) - 1)).max(1)
    }

    /// Samples spanned by exactly `width` frames.
    pub fn window_len(&self) -> usize {
        self.n_fft + (self.width - 1) * self.hop
    }

    /// Mel power that maps to 0 dB: a full-scale sinusoid on a filter center
    /// seen through the periodic Hann window.
    pub fn ref_power(&self) -> f64 {
        let peak = self.n_fft as f64 / 4.0;
        peak * peak
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 4 || self.hop == 0 || self.n_mels == 0 || self.width == 0 {
            return Err(Error::invalid(format!("degenerate mel config {self:?}")));
        }
        if !(self.db_floor < self.db_ceil) {
            return Err(Error::invalid("db_floor must be below db_ceil"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples
            .iter()
            .position(|v| !v.is_finite() || v.abs() > T::one())
        {
            return Err(Error::invalid(format!(
                "sample {i} is {} (must be finite and within [-1, 1])",
                samples[i]
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let e: f64 = self.samples.iter().map(|v| v.as_f64().powi(2)).sum();
        (e / self.samples.len() as f64).sqrt()
    }
}

/// Normalized log-mel image, `n_mels` rows (mel bands, lowest first) by
/// `width` time frames, every cell in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpec<T> {
    pub n_mels: usize,
    pub width: usize,
    /// Row-major: `values[band * width + frame]`.
    pub values: Vec<T>,
}

impl<T: Scalar> MelSpec<T> {
    pub fn new(n_mels: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if n_mels == 0 || width == 0 || values.len() != n_mels * width {
            return Err(Error::invalid(format!(
                "mel spectrogram {n_mels}x{width} with {} values",
                values.len()
            )));
        }
        if let Some(i) = values
            .iter()
            .position(|v| !(*v >= T::zero() && *v <= T::one()))
        {
            return Err(Error::invalid(format!(
                "mel value {} at index {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(Self {
            n_mels,
            width,
            values,
        })
    }

    pub fn zeros(n_mels: usize, width: usize) -> Self {
        Self {
            n_mels,
            width,
            values: vec![T::zero(); n_mels * width],
        }
    }

    pub fn at(&self, band: usize, frame: usize) -> T {
        self.values[band * self.width + frame]
    }

    /// `[1, n_mels, width]`, the decoder's output layout.
    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor::from_parts(vec![1, self.n_mels, self.width], self.values.clone())
    }

    /// Accepts `[n_mels, width]` or `[1, n_mels, width]`.
    pub fn from_tensor(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = match t.shape() {
            [h, w] | [1, h, w] => (*h, *w),
            s => return Err(Error::invalid(format!("tensor of shape {s:?} is not a spectrogram"))),
        };
        Self::new(h, w, t.data().to_vec())
    }

    pub fn cast<U: Scalar>(&self) -> MelSpec<U> {
        MelSpec {
            n_mels: self.n_mels,
            width: self.width,
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Config plus its filterbank, built once and reused across conversions.
#[derive(Clone, Debug)]
pub struct MelPipeline<T> {
    pub config: MelConfig,
    pub filterbank: MelFilterbank<T>,
}

impl<T: Scalar> MelPipeline<T> {
    pub fn new(config: MelConfig) -> Result<Self> {
        config.validate()?;
        let filterbank = MelFilterbank::new(
            config.sample_rate,
            config.n_fft,
            config.n_mels,
            config.fmin,
            config.fmax,
        )?;
        Ok(Self { config, filterbank })
    }

    /// Waveform to normalized log-mel image.
    pub fn forward(&self, wav: &Waveform<T>) -> Result<MelSpec<T>> {
        let c = &self.config;
        if wav.sample_rate != c.sample_rate {
            return Err(Error::invalid(format!(
                "waveform sample rate {} differs from configured {}",
                wav.sample_rate, c.sample_rate
            )));
        }
        let mag = stft_magnitude(&wav.samples, c.n_fft, c.hop, Window::Hann)?;
        let ref_power = c.ref_power();
        let range = c.db_ceil - c.db_floor;
        let mut spec = MelSpec::zeros(c.n_mels, c.width);
        for f in 0..mag.frames.min(c.width) {
            let power: Vec<T> = mag.frame(f).iter().map(|&m| m * m).collect();
            for (band, e) in self.filterbank.apply(&power).into_iter().enumerate() {
                let ratio = e.as_f64() / ref_power;
                let db = if ratio > 0.0 {
                    (10.0 * ratio.log10()).clamp(c.db_floor, c.db_ceil)
                } else {
                    c.db_floor
                };
                spec.values[band * c.width + f] = T::of((db - c.db_floor) / range);
            }
        }
        Ok(spec)
    }

    /// Linear STFT magnitude implied by a normalized mel image. Cells at 0
    /// (the floor) are treated as silence.
    pub fn magnitude(&self, spec: &MelSpec<T>) -> Result<Spectrogram<T>> {
        let c = &self.config;
        if spec.n_mels != c.n_mels {
            return Err(Error::invalid(format!(
                "spectrogram has {} bands, config expects {}",
                spec.n_mels, c.n_mels
            )));
        }
        let ref_power = c.ref_power();
        let range = c.db_ceil - c.db_floor;
        let bins = self.filterbank.bins;
        let mut data = Vec::with_capacity(bins * spec.width);
        for f in 0..spec.width {
            let mel: Vec<T> = (0..c.n_mels)
                .map(|band| {
                    let v = spec.at(band, f).as_f64();
                    if v <= 0.0 {
                        T::zero()
                    } else {
                        T::of(ref_power * 10f64.powf((v * range + c.db_floor) / 10.0))
                    }
                })
                .collect();
            data.extend(self.filterbank.invert(&mel).into_iter().map(|p| p.sqrt()));
        }
        Ok(Spectrogram {
            bins,
            frames: spec.width,
            data,
        })
    }

    /// Normalized log-mel image back to a waveform of `window_len()` samples.
    pub fn inverse(&self, spec: &MelSpec<T>, gl_iters: usize, seed: u64) -> Result<Waveform<T>> {
        let out = self.inverse_traced(spec, gl_iters, seed)?;
        Ok(out.0)
    }

    /// As [`MelPipeline::inverse`], also returning Griffin-Lim's per-iteration
    /// spectral convergence.
    pub fn inverse_traced(
        &self,
        spec: &MelSpec<T>,
        gl_iters: usize,
        seed: u64,
    ) -> Result<(Waveform<T>, Vec<T>)> {
        let c = &self.config;
        let mag = self.magnitude(spec)?;
        let gl = griffin_lim(&mag, c.n_fft, c.hop, gl_iters, seed)?;
        let samples = gl
            .samples
            .into_iter()
            .map(|v| v.max(-T::one()).min(T::one()))
            .collect();
        Ok((Waveform::new(samples, c.sample_rate)?, gl.spectral_convergence))
    }
}

/// One-shot forward transform.
pub fn wav_to_melspec<T: Scalar>(wav: &Waveform<T>, config: &MelConfig) -> Result<MelSpec<T>> {
    MelPipeline::new(*config)?.forward(wav)
}

/// One-shot inverse transform with a fixed phase seed.
pub fn melspec_to_wav<T: Scalar>(
    spec: &MelSpec<T>,
    config: &MelConfig,
    gl_iters: usize,
) -> Result<Waveform<T>> {
    MelPipeline::new(*config)?.inverse(spec, gl_iters, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, cfg: &MelConfig, amp: f64) -> Waveform<f64> {
        let n = cfg.window_len();
        let sr = cfg.sample_rate as f64;
        Waveform::new(
            (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / sr).sin()).collect(),
            cfg.sample_rate,
        )
        .unwrap()
    }

    #[test]
    fn silence_maps_to_floor() {
        let cfg = MelConfig::desk();
        let w = Waveform::new(vec![0.0f64; cfg.window_len()], cfg.sample_rate).unwrap();
        let s = wav_to_melspec(&w, &cfg).unwrap();
        assert_eq!((s.n_mels, s.width), (32, 32));
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_on_band_center_peaks_in_that_band() {
        let cfg = MelConfig::desk();
        let pipe = MelPipeline::<f64>::new(cfg).unwrap();
        for band in [4, 10, 20, 28] {
            let f0 = pipe.filterbank.centers[band];
            let s = pipe.forward(&tone(f0, &cfg, 0.5)).unwrap();
            for frame in 0..cfg.width {
                let best = (0..cfg.n_mels)
                    .max_by(|&a, &b| s.at(a, frame).total_cmp(&s.at(b, frame)))
                    .unwrap();
                assert_eq!(best, band, "tone {f0:.1} Hz, frame {frame}");
            }
        }
    }

    #[test]
    fn output_shapes_follow_config() {
        let desk = MelConfig::desk();
        assert_eq!(desk.window_len(), 2240);
        let paper = MelConfig::paper();
        assert!(paper.window_len() <= 21_000);
        let s = wav_to_melspec(&tone(440.0, &paper, 0.3), &paper).unwrap();
        assert_eq!((s.n_mels, s.width), (64, 64));
        // longer input is cropped, shorter-than-width input is zero padded
        let mut long = tone(440.0, &desk, 0.3);
        long.samples.extend(vec![0.0; 500]);
        assert_eq!(wav_to_melspec(&long, &desk).unwrap().width, 32);
        let short = Waveform::new(vec![0.1f64; 600], 8000).unwrap();
        let s = wav_to_melspec(&short, &desk).unwrap();
        assert!(s.values.iter().skip(6).step_by(32).all(|&v| v == 0.0));
    }

    #[test]
    fn all_zero_spectrogram_inverts_to_silence() {
        let cfg = MelConfig::desk();
        let w = melspec_to_wav(&MelSpec::<f64>::zeros(32, 32), &cfg, 8).unwrap();
        assert_eq!(w.len(), cfg.window_len());
        assert!(w.rms() < 1e-3);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(Waveform::new(vec![1.5f32], 8000).is_err());
        assert!(Waveform::new(vec![f32::NAN], 8000).is_err());
        assert!(MelSpec::new(2, 2, vec![0.0f32, 0.5, 1.0, 1.1]).is_err());
        let cfg = MelConfig::desk();
        let w = Waveform::new(vec![0.0f64; 100], 8000).unwrap();
        assert!(wav_to_melspec(&w, &cfg).is_err());
        let w = Waveform::new(vec![0.0f64; 4000], 16000).unwrap();
        assert!(wav_to_melspec(&w, &cfg).is_err());
    }
}
