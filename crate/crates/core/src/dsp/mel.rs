//! HTK mel scale and triangular filterbanks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn hz_to_mel(hz: f64) -> Result<f64> {
    if !(hz >= 0.0) || !hz.is_finite() {
        return Err(Error::invalid(format!("frequency must be finite and >= 0, got {hz}")));
    }
    Ok(2595.0 * (1.0 + hz / 700.0).log10())
}

pub fn mel_to_hz(mel: f64) -> Result<f64> {
    if !(mel >= 0.0) || !mel.is_finite() {
        return Err(Error::invalid(format!("mel value must be finite and >= 0, got {mel}")));
    }
    Ok(700.0 * (10f64.powf(mel / 2595.0) - 1.0))
}

/// `n_mels` triangular filters over the `n_fft / 2 + 1` one-sided FFT bins.
/// Filter edges are equally spaced in mel between `fmin` and `fmax`; each
/// filter peaks at 1 on its center frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct MelFilterbank<T> {
    pub n_mels: usize,
    pub bins: usize,
    /// Row-major `n_mels x bins`.
    pub weights: Vec<T>,
    /// Center frequency of each filter in Hz.
    pub centers: Vec<f64>,
    /// Clamped-for-use Moore-Penrose pseudo-inverse, row-major `bins x n_mels`.
    pinv: Vec<T>,
}

impl<T: Scalar> MelFilterbank<T> {
    pub fn new(sample_rate: u32, n_fft: usize, n_mels: usize, fmin: f64, fmax: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_mels == 0 || n_fft < 2 {
            return Err(Error::invalid("filterbank needs n_mels >= 1 and n_fft >= 2"));
        }
        if !(fmin >= 0.0 && fmin < fmax && fmax <= nyquist) {
            return Err(Error::invalid(format!(
                "need 0 <= fmin < fmax <= {nyquist}, got fmin={fmin} fmax={fmax}"
            )));
        }
        let bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin)?, hz_to_mel(fmax)?);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect::<Result<_>>()?;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let mut weights = vec![T::zero(); n_mels * bins];
        for m in 0..n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let rising = (f - left) / (center - left);
                let falling = (right - f) / (right - center);
                let w = rising.min(falling).max(0.0);
                weights[m * bins + k] = T::of(w);
            }
            if weights[m * bins..(m + 1) * bins].iter().all(|&w| w == T::zero()) {
                return Err(Error::invalid(format!(
                    "mel filter {m} ({left:.1}-{right:.1} Hz) covers no FFT bin; \
                     increase n_fft or reduce n_mels"
                )));
            }
        }
        let fb = DMatrix::from_fn(n_mels, bins, |r, c| weights[r * bins + c].as_f64());
        let pinv = fb
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::invalid(format!("filterbank pseudo-inverse: {e}")))?;
        let pinv = (0..bins)
            .flat_map(|r| (0..n_mels).map(move |c| (r, c)))
            .map(|(r, c)| T::of(pinv[(r, c)]))
            .collect();
        Ok(Self {
            n_mels,
            bins,
            weights,
            centers: edges[1..=n_mels].to_vec(),
            pinv,
        })
    }

    pub fn row(&self, m: usize) -> &[T] {
        &self.weights[m * self.bins..(m + 1) * self.bins]
    }

    /// Mel energies of one frame of linear power.
    pub fn apply(&self, power: &[T]) -> Vec<T> {
        (0..self.n_mels)
            .map(|m| self.row(m).iter().zip(power).map(|(&w, &p)| w * p).sum())
            .collect()
    }

    /// Least-norm linear power estimate of one frame, clamped at zero.
    pub fn invert_pinv(&self, mel: &[T]) -> Vec<T> {
        (0..self.bins)
            .map(|k| {
                let row = &self.pinv[k * self.n_mels..(k + 1) * self.n_mels];
                row.iter()
                    .zip(mel)
                    .map(|(&w, &v)| w * v)
                    .sum::<T>()
                    .max(T::zero())
            })
            .collect()
    }

    /// Non-negative power estimate of one frame: the clamped pseudo-inverse
    /// blended with the filter-weighted spread, then refined by
    /// multiplicative updates on the generalized KL divergence between
    /// `mel` and the filterbank image. Bins seen only by silent filters
    /// stay at zero.
    pub fn invert(&self, mel: &[T]) -> Vec<T> {
        let floor = T::of(1e-30);
        let colsum: Vec<T> = (0..self.bins)
            .map(|k| (0..self.n_mels).map(|m| self.weights[m * self.bins + k]).sum())
            .collect();
        let spread: Vec<T> = (0..self.bins)
            .map(|k| {
                if colsum[k] > T::zero() {
                    (0..self.n_mels)
                        .map(|m| self.weights[m * self.bins + k] * mel[m])
                        .sum::<T>()
                        / colsum[k]
                } else {
                    T::zero()
                }
            })
            .collect();
        let mut p: Vec<T> = self
            .invert_pinv(mel)
            .into_iter()
            .zip(&spread)
            .map(|(a, &b)| T::of(0.5) * (a + b))
            .collect();
        for _ in 0..INVERT_ITERS {
            let fit = self.apply(&p);
            let ratio: Vec<T> = mel
                .iter()
                .zip(&fit)
                .map(|(&m, &f)| if f > floor { m / f } else { T::zero() })
                .collect();
            for k in 0..self.bins {
                if colsum[k] > T::zero() {
                    let back: T = (0..self.n_mels)
                        .map(|m| self.weights[m * self.bins + k] * ratio[m])
                        .sum();
                    p[k] *= back / colsum[k];
                }
            }
        }
        p
    }
}

const INVERT_ITERS: usize = 60;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mel_spot_values() {
        assert_eq!(hz_to_mel(0.0).unwrap(), 0.0);
        // 2595 * log10(1 + 1000/700)
        assert!((hz_to_mel(1000.0).unwrap() - 999.985_537_139_624).abs() < 1e-6);
        let back = mel_to_hz(hz_to_mel(440.0).unwrap()).unwrap();
        assert!((back - 440.0).abs() < 1e-6);
        assert!(hz_to_mel(-1.0).is_err());
    }

    #[test]
    fn filters_cover_band_and_vanish_outside() {
        let fb = MelFilterbank::<f64>::new(8000, 256, 32, 40.0, 4000.0).unwrap();
        let bin_hz = 8000.0 / 256.0;
        for m in 0..32 {
            assert!(fb.row(m).iter().sum::<f64>() > 0.0);
        }
        for k in 0..fb.bins {
            let f = k as f64 * bin_hz;
            let total: f64 = (0..32).map(|m| fb.row(m)[k]).sum();
            if f > 40.0 && f < 4000.0 {
                assert!(total > 0.0, "bin {k} ({f} Hz) uncovered");
            } else {
                assert_eq!(total, 0.0, "bin {k} ({f} Hz) outside range");
            }
        }
    }

    #[test]
    fn filters_are_unimodal() {
        let fb = MelFilterbank::<f64>::new(8000, 256, 32, 40.0, 4000.0).unwrap();
        for m in 0..32 {
            let row = fb.row(m);
            let peak = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert!(row[..=peak].windows(2).all(|w| w[0] <= w[1]));
            assert!(row[peak..].windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn too_many_filters_for_resolution_is_rejected() {
        assert!(MelFilterbank::<f64>::new(8000, 64, 64, 0.0, 4000.0).is_err());
        assert!(MelFilterbank::<f64>::new(8000, 256, 32, 100.0, 5000.0).is_err());
    }

    #[test]
    fn inversion_reproduces_mel_energies() {
        let fb = MelFilterbank::<f64>::new(8000, 256, 32, 40.0, 4000.0).unwrap();
        // 60 dB of dynamic range across bands, one silent band
        let mut mel: Vec<f64> = (0..32).map(|m| 10f64.powf(-6.0 * m as f64 / 31.0)).collect();
        mel[20] = 0.0;
        let lin = fb.invert(&mel);
        assert!(lin.iter().all(|&p| p >= 0.0));
        let again = fb.apply(&lin);
        for (m, (a, b)) in mel.iter().zip(&again).enumerate() {
            assert!((a - b).abs() <= 0.02 * a + 1e-9, "band {m}: {a} vs {b}");
        }
        assert!(fb.invert(&[0.0; 32]).iter().all(|&p| p == 0.0));
        assert!(fb.invert_pinv(&mel).iter().all(|&p| p >= 0.0));
    }

    proptest::proptest! {
        #[test]
        fn mel_round_trip(hz in 0.0f64..4000.0) {
            let back = mel_to_hz(hz_to_mel(hz).unwrap()).unwrap();
            proptest::prop_assert!((back - hz).abs() <= 1e-9 * hz.max(1.0));
        }
    }
}
