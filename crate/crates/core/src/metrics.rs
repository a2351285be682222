//! Spectrogram quality metrics and the ablation comparison table.
//!
//! Waveform-domain perceptual scores are not computed; the log-spectral
//! distance (LSD) stands in for them and every report labels it as such.

use std::fmt::Write as _;

use crate::dsp::{MelConfig, MelSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Pearson correlation of two equally sized sequences, accumulated in `f64`.
pub fn pearson<T: Scalar>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape("pearson", &[a.len()], &[b.len()]));
    }
    let n = a.len() as f64;
    let mean = |v: &[T]| v.iter().map(|x| x.as_f64()).sum::<f64>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x.as_f64() - ma, y.as_f64() - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "an input has zero variance",
        ));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// 2-D Pearson correlation of two spectrograms over all cells.
pub fn corr2d<T: Scalar>(a: &MelSpec<T>, b: &MelSpec<T>) -> Result<f64> {
    if (a.n_mels, a.width) != (b.n_mels, b.width) {
        return Err(Error::shape("corr2d", &[a.n_mels, a.width], &[b.n_mels, b.width]));
    }
    pearson(&a.values, &b.values)
}

/// RMS over frames of the per-frame RMS dB difference, after mapping both
/// normalized images back to dB with `config`'s window.
pub fn log_spectral_distance<T: Scalar>(a: &MelSpec<T>, b: &MelSpec<T>, config: &MelConfig) -> Result<f64> {
    if (a.n_mels, a.width) != (b.n_mels, b.width) {
        return Err(Error::shape("log_spectral_distance", &[a.n_mels, a.width], &[b.n_mels, b.width]));
    }
    let range = config.db_ceil - config.db_floor;
    let mut total = 0.0;
    for f in 0..a.width {
        let mut frame = 0.0;
        for band in 0..a.n_mels {
            let d = (a.at(band, f).as_f64() - b.at(band, f).as_f64()) * range;
            frame += d * d;
        }
        total += frame / a.n_mels as f64;
    }
    Ok((total / a.width as f64).sqrt())
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for n = 1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ItemScore {
    pub subject: usize,
    pub class_id: usize,
    pub corr2d: f64,
    pub lsd_db: f64,
}

/// Per-item scores of one evaluation run plus their aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub seed: u64,
    pub items: Vec<ItemScore>,
}

pub const ITEM_CSV_HEADER: &str = "label,seed,subject,class,corr2d,lsd_db";

impl EvalReport {
    pub fn corr2d(&self) -> (f64, f64) {
        mean_std(&self.items.iter().map(|i| i.corr2d).collect::<Vec<_>>())
    }

    pub fn lsd(&self) -> (f64, f64) {
        mean_std(&self.items.iter().map(|i| i.lsd_db).collect::<Vec<_>>())
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{ITEM_CSV_HEADER}\n");
        self.append_csv_rows(&mut out);
        out
    }

    pub fn append_csv_rows(&self, out: &mut String) {
        for i in &self.items {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.9},{:.9}",
                self.label, self.seed, i.subject, i.class_id, i.corr2d, i.lsd_db
            );
        }
    }
}

/// Labels of the ablation grid, in table order.
pub const ABLATION_LABELS: [&str; 4] = ["full", "no_attention", "no_pairwise", "no_gan"];

pub const ABLATION_CSV_HEADER: &str =
    "label,status,n_runs,corr2d_mean,corr2d_std,lsd_db_mean,lsd_db_std";

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    /// Per-run mean Corr2D and LSD; empty when the configuration never ran.
    pub runs: Vec<(f64, f64)>,
}

impl AblationRow {
    pub fn is_present(&self) -> bool {
        !self.runs.is_empty()
    }

    pub fn corr2d(&self) -> (f64, f64) {
        mean_std(&self.runs.iter().map(|r| r.0).collect::<Vec<_>>())
    }

    pub fn lsd(&self) -> (f64, f64) {
        mean_std(&self.runs.iter().map(|r| r.1).collect::<Vec<_>>())
    }
}

/// Table of per-configuration mean ± std over runs (seeds).
#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Groups run reports by label into the fixed four-row grid. Labels
    /// outside the grid are ignored.
    pub fn from_runs(runs: &[EvalReport]) -> Self {
        let rows = ABLATION_LABELS
            .iter()
            .map(|&label| AblationRow {
                label: label.to_string(),
                runs: runs
                    .iter()
                    .filter(|r| r.label == label)
                    .map(|r| (r.corr2d().0, r.lsd().0))
                    .collect(),
            })
            .collect();
        Self { rows }
    }

    pub fn missing(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| !r.is_present())
            .map(|r| r.label.as_str())
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{ABLATION_CSV_HEADER}\n");
        for r in &self.rows {
            if r.is_present() {
                let (cm, cs) = r.corr2d();
                let (lm, ls) = r.lsd();
                let _ = writeln!(
                    out,
                    "{},ok,{},{cm:.9},{cs:.9},{lm:.9},{ls:.9}",
                    r.label,
                    r.runs.len()
                );
            } else {
                let _ = writeln!(out, "{},absent,0,,,,", r.label);
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |d: String| Error::format("ablation csv", d);
        let mut lines = text.lines();
        if lines.next() != Some(ABLATION_CSV_HEADER) {
            return Err(bad("unexpected header".into()));
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("expected 7 fields: {line}")));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}")));
            let runs = match f[1] {
                "absent" => Vec::new(),
                "ok" => {
                    // the table keeps aggregates only, so re-expand to a single
                    // run carrying the means
                    vec![(num(f[3])?, num(f[5])?)]
                }
                other => return Err(bad(format!("unknown status {other}"))),
            };
            rows.push(AblationRow {
                label: f[0].to_string(),
                runs,
            });
        }
        Ok(Self { rows })
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<14} {:>20} {:>24}",
            "method", "Corr2D (mean±std)", "LSD dB (PESQ substitute)"
        );
        for r in &self.rows {
            if r.is_present() {
                let (cm, cs) = r.corr2d();
                let (lm, ls) = r.lsd();
                let _ = writeln!(
                    out,
                    "{:<14} {:>20} {:>24}",
                    r.label,
                    format!("{cm:.3}±{cs:.3}"),
                    format!("{lm:.2}±{ls:.2}")
                );
            } else {
                let _ = writeln!(out, "{:<14} {:>20} {:>24}", r.label, "absent", "absent");
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand::seq::SliceRandom;
    use rand_chacha::ChaCha8Rng;

    fn spec(values: Vec<f64>) -> MelSpec<f64> {
        let n = values.len();
        MelSpec::new(1, n, values).unwrap()
    }

    #[test]
    fn corr2d_spot_values() {
        let a = spec(vec![0.1, 0.4, 0.2, 0.9]);
        assert!((corr2d(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let reflected = spec(a.values.iter().map(|v| 1.0 - v).collect());
        assert!((corr2d(&a, &reflected).unwrap() + 1.0).abs() < 1e-12);
        let scaled: Vec<f64> = a.values.iter().map(|v| 2.0 * v + 0.1).collect();
        assert!((pearson(&a.values, &scaled).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corr2d_errors() {
        let a = spec(vec![0.3; 4]);
        let b = spec(vec![0.1, 0.2, 0.3, 0.4]);
        assert!(matches!(corr2d(&a, &b), Err(Error::UndefinedCorrelation(_))));
        let c = spec(vec![0.1, 0.2]);
        assert!(corr2d(&b, &c).is_err());
    }

    #[test]
    fn shuffled_copy_is_nearly_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..1024).map(|_| rng.random()).collect();
        let mut b = a.clone();
        b.shuffle(&mut rng);
        assert!(pearson(&a, &b).unwrap().abs() < 0.2);
    }

    #[test]
    fn lsd_spot_values() {
        let cfg = MelConfig::desk();
        let a = MelSpec::new(2, 2, vec![0.2, 0.4, 0.6, 0.5]).unwrap();
        assert_eq!(log_spectral_distance(&a, &a, &cfg).unwrap(), 0.0);
        // +6 dB everywhere on an 80 dB window is +0.075 normalized
        let b = MelSpec::new(2, 2, a.values.iter().map(|v| v + 6.0 / 80.0).collect()).unwrap();
        assert!((log_spectral_distance(&a, &b, &cfg).unwrap() - 6.0).abs() < 1e-9);
        let c = MelSpec::new(2, 2, vec![0.1, 0.9, 0.3, 0.0]).unwrap();
        assert_eq!(
            log_spectral_distance(&a, &c, &cfg).unwrap(),
            log_spectral_distance(&c, &a, &cfg).unwrap()
        );
        assert!(log_spectral_distance(&a, &spec(vec![0.0; 4]), &cfg).is_err());
    }

    fn run(label: &str, seed: u64, c: f64) -> EvalReport {
        EvalReport {
            label: label.into(),
            seed,
            items: vec![ItemScore {
                subject: 0,
                class_id: 0,
                corr2d: c,
                lsd_db: 10.0 * c,
            }],
        }
    }

    #[test]
    fn ablation_table_rows_and_std() {
        let mut runs = Vec::new();
        for label in ABLATION_LABELS {
            for seed in 0..3 {
                runs.push(run(label, seed, 0.5 + 0.1 * seed as f64));
            }
        }
        let table = AblationReport::from_runs(&runs);
        assert_eq!(table.rows.len(), 4);
        let (m, s) = table.rows[0].corr2d();
        assert!((m - 0.6).abs() < 1e-12 && (s - 0.1).abs() < 1e-12);
        assert!(table.missing().is_empty());
        assert!(table.to_text().contains("no_attention"));

        let parsed = AblationReport::from_csv(&table.to_csv()).unwrap();
        assert_eq!(parsed.to_csv().lines().count(), 5);
        for (p, r) in parsed.rows.iter().zip(&table.rows) {
            assert_eq!(p.label, r.label);
            let back: f64 = format!("{:.9}", r.corr2d().0).parse().unwrap();
            assert_eq!(p.runs[0].0, back);
        }
    }

    #[test]
    fn absent_rows_are_marked() {
        let table = AblationReport::from_runs(&[run("full", 0, 0.7)]);
        assert_eq!(table.missing(), vec!["no_attention", "no_pairwise", "no_gan"]);
        assert!(table.to_csv().contains("no_gan,absent"));
        let parsed = AblationReport::from_csv(&table.to_csv()).unwrap();
        assert_eq!(parsed.missing().len(), 3);
    }

    proptest::proptest! {
        #[test]
        fn corr2d_is_symmetric_bounded_and_affine_invariant(
            v in proptest::collection::vec(0.0f64..1.0, 2..40),
            scale in 0.05f64..0.5,
            shift in 0.0f64..0.5,
        ) {
            let w: Vec<f64> = v.iter().enumerate().map(|(i, x)| 0.5 + 0.3 * (7.0 * x).sin() * (i as f64).cos()).collect();
            let (a, b) = (spec(v.clone()), spec(w));
            let affine = spec(v.iter().map(|x| scale * x + shift).collect());
            if let (Ok(ab), Ok(ba)) = (corr2d(&a, &b), corr2d(&b, &a)) {
                proptest::prop_assert!((ab - ba).abs() < 1e-12 && ab.abs() <= 1.0 + 1e-12);
                proptest::prop_assert!((corr2d(&affine, &b).unwrap() - ab).abs() < 1e-9);
            }
        }
    }
}
