//! Synthetic paired corpus: tag-textured image sequences with a moving blob
//! that encodes two formant frequencies, and the harmonic audio those
//! formants shape.
//!
//! Every item is a pure function of `(class_id, style seed)`. The blob
//! trajectory depends only on the utterance class; the background texture,
//! blob size (pitch) and blob brightness (loudness) depend only on the
//! subject.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::io::{read_wav, write_wav};
use crate::dsp::{MelConfig, Waveform};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Piecewise-cosine formant trajectories over normalized time `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceTemplate {
    pub class_id: usize,
    /// `(F1, F2)` in Hz at equally spaced keyframes.
    pub keyframes: Vec<(f64, f64)>,
}

impl UtteranceTemplate {
    /// Class 0 and 1 follow "asouk"- and "ageese"-like vowel paths; higher
    /// classes get seeded random paths inside the same formant ranges.
    pub fn for_class(class_id: usize) -> Self {
        let keyframes = match class_id {
            0 => vec![(700.0, 1200.0), (650.0, 1100.0), (350.0, 850.0), (300.0, 800.0), (600.0, 1500.0)],
            1 => vec![(700.0, 1200.0), (550.0, 1500.0), (300.0, 2200.0), (280.0, 2400.0), (320.0, 2300.0)],
            _ => {
                let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + class_id as u64);
                (0..5)
                    .map(|_| (rng.random_range(F1_RANGE.0..F1_RANGE.1), rng.random_range(F2_RANGE.0..F2_RANGE.1)))
                    .collect()
            }
        };
        Self { class_id, keyframes }
    }

    /// `(F1, F2)` at normalized time `u`.
    pub fn formants(&self, u: f64) -> (f64, f64) {
        let n = self.keyframes.len();
        if n == 1 {
            return self.keyframes[0];
        }
        let pos = u.clamp(0.0, 1.0) * (n - 1) as f64;
        let i = (pos.floor() as usize).min(n - 2);
        let w = 0.5 - 0.5 * (PI * (pos - i as f64)).cos();
        let (a, b) = (self.keyframes[i], self.keyframes[i + 1]);
        (a.0 + w * (b.0 - a.0), a.1 + w * (b.1 - a.1))
    }
}

/// Formant ranges mapped linearly onto blob image coordinates.
pub const F1_RANGE: (f64, f64) = (250.0, 900.0);
pub const F2_RANGE: (f64, f64) = (700.0, 2600.0);
pub const PITCH_RANGE: (f64, f64) = (90.0, 200.0);
pub const GAIN_RANGE: (f64, f64) = (0.75, 1.25);
const FORMANT_BANDWIDTH: (f64, f64) = (90.0, 140.0);

#[derive(Clone, Debug, PartialEq)]
pub struct SubjectStyle {
    pub seed: u64,
    pub pitch_base: f64,
    pub gain: f64,
    /// Onset and release ramp, seconds.
    pub attack: f64,
    pub tag_period: f64,
    pub tag_angle: f64,
    pub tag_phase: f64,
    pub tag_contrast: f64,
    pub tag_level: f64,
    /// Static blob-shaped spots, normalized `(x, y)` positions.
    pub spots: Vec<(f64, f64)>,
}

impl SubjectStyle {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            seed,
            pitch_base: rng.random_range(PITCH_RANGE.0..PITCH_RANGE.1),
            gain: rng.random_range(GAIN_RANGE.0..GAIN_RANGE.1),
            attack: rng.random_range(0.01..0.04),
            tag_period: rng.random_range(3.5..7.0),
            tag_angle: rng.random_range(0.0..PI),
            tag_phase: rng.random_range(0.0..2.0 * PI),
            tag_contrast: rng.random_range(0.5..1.0),
            tag_level: rng.random_range(0.25..0.45),
            spots: (0..SPOTS_PER_SUBJECT)
                .map(|_| (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)))
                .collect(),
        }
    }

    /// Blob radius parameter, larger for higher voices.
    pub fn blob_sigma(&self) -> f64 {
        1.2 + 1.8 * (self.pitch_base - PITCH_RANGE.0) / (PITCH_RANGE.1 - PITCH_RANGE.0)
    }

    pub fn blob_level(&self) -> f64 {
        0.6 + 0.4 * (self.gain - GAIN_RANGE.0) / (GAIN_RANGE.1 - GAIN_RANGE.0)
    }
}

/// Two-formant source: partials of `pitch_base` (with a gentle falling
/// contour) plus dense random-phase aspiration, both weighted by Lorentzian
/// resonances on the template's formant tracks. RMS is normalized to
/// `0.2 * gain`.
pub fn render_audio(t: &UtteranceTemplate, s: &SubjectStyle, sample_rate: u32, length: usize) -> Result<Waveform<f32>> {
    if length < 16 {
        return Err(Error::invalid(format!("audio length {length} too short")));
    }
    let sr = sample_rate as f64;
    let top = sr / 2.0 * 0.95;
    let duration = length as f64 / sr;
    let envelope = |f: f64, f1: f64, f2: f64| {
        let (b1, b2) = FORMANT_BANDWIDTH;
        1.0 / (1.0 + ((f - f1) / b1).powi(2)) + 0.35 / (1.0 + ((f - f2) / b2).powi(2)) + 0.002
    };
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed ^ (t.class_id as u64).wrapping_mul(0x9e37_79b9));
    let breath: Vec<(f64, f64)> = (1..)
        .map(|i| i as f64 * BREATH_SPACING)
        .take_while(|&f| f < top)
        .map(|f| (f, rng.random_range(0.0..2.0 * PI)))
        .collect();
    let mut phase = 0.0f64;
    let mut out = Vec::with_capacity(length);
    for i in 0..length {
        let time = i as f64 / sr;
        let u = time / duration;
        let f0 = s.pitch_base * (1.05 - 0.1 * u);
        phase += 2.0 * PI * f0 / sr;
        let (f1, f2) = t.formants(u);
        let mut v = 0.0;
        let mut k = 1;
        while (k as f64) * f0 < top {
            v += envelope(k as f64 * f0, f1, f2) * (k as f64 * phase).sin();
            k += 1;
        }
        for &(f, ph) in &breath {
            v += BREATH_LEVEL * envelope(f, f1, f2) * (2.0 * PI * f * time + ph).sin();
        }
        let ramp = (time / s.attack).min((duration - time) / s.attack).clamp(0.0, 1.0);
        out.push(v * ramp);
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / length as f64).sqrt();
    let scale = if rms > 0.0 { 0.2 * s.gain / rms } else { 0.0 };
    Waveform::new(out.into_iter().map(|v| ((v * scale).clamp(-1.0, 1.0)) as f32).collect(), sample_rate)
}

const BREATH_SPACING: f64 = 10.0;
const BREATH_LEVEL: f64 = 0.4;

/// Static blob-shaped spots per subject, drawn at the moving blob's size and level.
pub const SPOTS_PER_SUBJECT: usize = 3;

/// Tag grid background with static spots, plus a truncated Gaussian blob at the position the
/// formants map to, one frame per equally spaced time step. `[T, H, W]`.
pub fn render_video(t: &UtteranceTemplate, s: &SubjectStyle, height: usize, width: usize, frames: usize) -> Tensor<f32> {
    let (c, sn) = (s.tag_angle.cos(), s.tag_angle.sin());
    let k = 2.0 * PI / s.tag_period;
    let sigma = s.blob_sigma();
    let level = s.blob_level();
    let spots: Vec<(f64, f64)> = s
        .spots
        .iter()
        .map(|&(x, y)| (x * (width as f64 - 1.0), y * (height as f64 - 1.0)))
        .collect();
    let background: Vec<f64> = (0..height * width)
        .map(|i| {
            let (y, x) = ((i / width) as f64, (i % width) as f64);
            let a = (k * (x * c + y * sn) + s.tag_phase).sin();
            let b = (k * (-x * sn + y * c) + s.tag_phase).sin();
            let tags = s.tag_level * (1.0 + 0.5 * s.tag_contrast * (a + b));
            spots.iter().fold(tags, |acc, &p| {
                let g = blob_weight((x, y), p, sigma);
                (1.0 - g) * acc + g * level
            })
        })
        .collect();
    let mut data = Vec::with_capacity(frames * height * width);
    for f in 0..frames {
        let center = blob_center(t, (f as f64 + 0.5) / frames as f64, height, width);
        for (i, &bg) in background.iter().enumerate() {
            let g = blob_weight(((i % width) as f64, (i / width) as f64), center, sigma);
            data.push(((1.0 - g) * bg + g * level).clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::new(vec![frames, height, width], data).expect("finite by construction")
}

/// Gaussian blob weight at pixel `p`, exactly zero beyond 3 sigma.
fn blob_weight(p: (f64, f64), center: (f64, f64), sigma: f64) -> f64 {
    let r2 = (p.0 - center.0).powi(2) + (p.1 - center.1).powi(2);
    if r2 <= (3.0 * sigma).powi(2) {
        (-r2 / (2.0 * sigma * sigma)).exp()
    } else {
        0.0
    }
}

/// Blob center `(x, y)` in pixels: x follows F2, y follows F1, both kept
/// 4 pixels (scaled) away from the border.
pub fn blob_center(t: &UtteranceTemplate, u: f64, height: usize, width: usize) -> (f64, f64) {
    let (f1, f2) = t.formants(u);
    let margin_w = width as f64 / 8.0;
    let margin_h = height as f64 / 8.0;
    let nx = (f2 - F2_RANGE.0) / (F2_RANGE.1 - F2_RANGE.0);
    let ny = (f1 - F1_RANGE.0) / (F1_RANGE.1 - F1_RANGE.0);
    (
        margin_w + nx.clamp(0.0, 1.0) * (width as f64 - 1.0 - 2.0 * margin_w),
        margin_h + ny.clamp(0.0, 1.0) * (height as f64 - 1.0 - 2.0 * margin_h),
    )
}

/// Fixed-length audio crops every `stride` samples, each paired with the
/// whole sequence.
pub fn sliding_window_augment(
    x: &Tensor<f32>,
    y: &Waveform<f32>,
    window: usize,
    stride: usize,
) -> Result<Vec<(Tensor<f32>, Waveform<f32>)>> {
    crop_offsets(y.len(), window, stride)?
        .into_iter()
        .map(|o| Ok((x.clone(), Waveform::new(y.samples[o..o + window].to_vec(), y.sample_rate)?)))
        .collect()
}

pub fn crop_offsets(len: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || window > len {
        return Err(Error::invalid(format!("window {window} does not fit audio of length {len}")));
    }
    if stride == 0 {
        return Err(Error::invalid("crop stride must be >= 1"));
    }
    Ok((0..=(len - window) / stride).map(|i| i * stride).collect())
}

/// Corpus layout parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub subjects: usize,
    pub classes: usize,
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub mel: MelConfig,
    /// Audio beyond one analysis window, in hops, available to crops.
    pub extra_hops: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            subjects: 8,
            classes: 2,
            seed: 0,
            frames: 8,
            height: 32,
            width: 32,
            mel: MelConfig::desk(),
            extra_hops: 3,
        }
    }
}

impl CorpusConfig {
    pub fn audio_len(&self) -> usize {
        self.mel.window_len() + self.extra_hops * self.mel.hop
    }

    /// Style seed of a subject; shared by all its items.
    pub fn subject_seed(&self, subject: usize) -> u64 {
        splitmix(self.seed ^ splitmix(subject as u64 + 1))
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub subject: usize,
    pub class_id: usize,
    pub seed: u64,
    pub seq_path: PathBuf,
    pub wav_path: PathBuf,
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "# subject_id\tclass_id\tseed\tseq_path\twav_path";

/// Rows of a corpus; paths are relative to the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CorpusManifest {
    pub rows: Vec<ManifestRow>,
}

impl CorpusManifest {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.subject,
                r.class_id,
                r.seed,
                r.seq_path.display(),
                r.wav_path.display()
            );
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: Vec<ManifestRow> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |d: &str| Error::format("manifest", format!("line {}: {d}", n + 1));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 tab-separated fields"));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| bad("bad number"));
            let row = ManifestRow {
                subject: num(f[0])? as usize,
                class_id: num(f[1])? as usize,
                seed: num(f[2])?,
                seq_path: PathBuf::from(f[3]),
                wav_path: PathBuf::from(f[4]),
            };
            if rows.iter().any(|r| r.subject == row.subject && r.class_id == row.class_id) {
                return Err(bad("duplicate (subject, class) pair"));
            }
            rows.push(row);
        }
        Ok(Self { rows })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }

    pub fn subjects(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.rows.iter().map(|r| r.subject).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// One loaded item.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusItem {
    pub subject: usize,
    pub class_id: usize,
    pub seed: u64,
    pub sequence: Tensor<f32>,
    pub audio: Waveform<f32>,
}

pub fn render_item(cfg: &CorpusConfig, subject: usize, class_id: usize) -> Result<CorpusItem> {
    let seed = cfg.subject_seed(subject);
    let style = SubjectStyle::from_seed(seed);
    let template = UtteranceTemplate::for_class(class_id);
    Ok(CorpusItem {
        subject,
        class_id,
        seed,
        sequence: render_video(&template, &style, cfg.height, cfg.width, cfg.frames),
        audio: render_audio(&template, &style, cfg.mel.sample_rate, cfg.audio_len())?,
    })
}

/// Every subject records every class once, in memory.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Vec<CorpusItem>> {
    if cfg.subjects == 0 || cfg.classes == 0 {
        return Err(Error::invalid("corpus needs at least one subject and one class"));
    }
    let mut items = Vec::with_capacity(cfg.subjects * cfg.classes);
    for subject in 0..cfg.subjects {
        for class_id in 0..cfg.classes {
            items.push(render_item(cfg, subject, class_id)?);
        }
    }
    Ok(items)
}

/// Writes the corpus files and manifest into `dir` (created if missing).
pub fn make_corpus(cfg: &CorpusConfig, dir: &Path) -> Result<CorpusManifest> {
    let items = generate_corpus(cfg)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = CorpusManifest::default();
    for item in &items {
        let stem = format!("s{:03}_c{:02}", item.subject, item.class_id);
        let seq_path = PathBuf::from(format!("{stem}.sq2t"));
        let wav_path = PathBuf::from(format!("{stem}.wav"));
        let full = dir.join(&seq_path);
        std::fs::write(&full, item.sequence.to_bytes()).map_err(|e| Error::io(&full, e))?;
        write_wav(&dir.join(&wav_path), &item.audio)?;
        manifest.rows.push(ManifestRow {
            subject: item.subject,
            class_id: item.class_id,
            seed: item.seed,
            seq_path,
            wav_path,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_tsv()).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads every item a manifest in `dir` lists.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusItem>> {
    let manifest = CorpusManifest::load(dir)?;
    manifest
        .rows
        .iter()
        .map(|r| {
            let p = dir.join(&r.seq_path);
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let sequence = Tensor::read_from(&mut bytes.as_slice())?;
            if sequence.rank() != 3 {
                return Err(Error::format("sequence", format!("{} has shape {:?}", p.display(), sequence.shape())));
            }
            Ok(CorpusItem {
                subject: r.subject,
                class_id: r.class_id,
                seed: r.seed,
                sequence,
                audio: read_wav(&dir.join(&r.wav_path))?,
            })
        })
        .collect()
}

/// Indices of two items and whether they share an utterance. With
/// probability `p_same` the second item has the first one's class (from a
/// different subject when one exists); otherwise a different class. Only
/// `pool` indices are drawn.
pub fn sample_training_pair(
    items: &[(usize, usize)],
    pool: &[usize],
    p_same: f64,
    rng: &mut impl Rng,
) -> Result<(usize, usize, bool)> {
    if pool.is_empty() {
        return Err(Error::invalid("no items to sample from"));
    }
    let i = pool[rng.random_range(0..pool.len())];
    let (subj, class) = items[i];
    let want_same = rng.random_bool(p_same.clamp(0.0, 1.0));
    let pick = |f: &dyn Fn(usize) -> bool, rng: &mut dyn rand::RngCore| -> Option<usize> {
        let c: Vec<usize> = pool.iter().copied().filter(|&j| f(j)).collect();
        (!c.is_empty()).then(|| c[rng.random_range(0..c.len())])
    };
    let j = if want_same {
        pick(&|j| items[j].1 == class && items[j].0 != subj, rng)
            .or_else(|| pick(&|j| items[j].1 == class && j != i, rng))
            .unwrap_or(i)
    } else {
        pick(&|j| items[j].1 != class, rng)
            .ok_or_else(|| Error::invalid("different-utterance pair requested but the pool has one class"))?
    };
    Ok((i, j, items[j].1 == class))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{hz_to_mel, wav_to_melspec};
    use crate::translator::residual_frames;

    #[test]
    fn audio_is_deterministic_and_well_scaled() {
        let cfg = CorpusConfig::default();
        for subject in 0..8 {
            for class in 0..3 {
                let a = render_item(&cfg, subject, class).unwrap();
                let b = render_item(&cfg, subject, class).unwrap();
                assert_eq!(a, b);
                let rms = a.audio.rms();
                let peak = a.audio.samples.iter().fold(0f32, |m, v| m.max(v.abs()));
                assert!((0.05..=0.9).contains(&rms), "rms {rms}");
                assert!(peak < 1.0, "clipping, peak {peak}");
            }
        }
    }

    #[test]
    fn pitch_stays_in_range() {
        for seed in 0..200 {
            let s = SubjectStyle::from_seed(seed);
            assert!((80.0..=300.0).contains(&s.pitch_base));
        }
    }

    #[test]
    fn first_formant_drives_band_argmax() {
        let cfg = CorpusConfig::default();
        let mel = cfg.mel;
        let centers: Vec<f64> = crate::dsp::MelPipeline::<f64>::new(mel)
            .unwrap()
            .filterbank
            .centers
            .clone();
        let band_of = |hz: f64| {
            let m = hz_to_mel(hz).unwrap();
            (0..centers.len())
                .min_by(|&a, &b| {
                    let da = (hz_to_mel(centers[a]).unwrap() - m).abs();
                    let db = (hz_to_mel(centers[b]).unwrap() - m).abs();
                    da.total_cmp(&db)
                })
                .unwrap()
        };
        for class in 0..4 {
            for subject in 0..8 {
                let item = render_item(&cfg, subject, class).unwrap();
                let spec = wav_to_melspec(&item.audio, &mel).unwrap();
                let t = UtteranceTemplate::for_class(class);
                let mut hits = 0;
                for f in 0..mel.width {
                    let center = (f * mel.hop + mel.n_fft / 2) as f64 / item.audio.len() as f64;
                    let (f1, _) = t.formants(center);
                    let arg = (0..mel.n_mels)
                        .max_by(|&a, &b| spec.at(a, f).total_cmp(&spec.at(b, f)))
                        .unwrap();
                    if arg.abs_diff(band_of(f1)) <= 1 {
                        hits += 1;
                    }
                }
                assert!(hits * 10 >= mel.width * 8, "class {class} subject {subject}: {hits}/{}", mel.width);
            }
        }
    }

    #[test]
    fn only_the_blob_moves() {
        let cfg = CorpusConfig::default();
        let item = render_item(&cfg, 3, 1).unwrap();
        let style = SubjectStyle::from_seed(item.seed);
        let t = UtteranceTemplate::for_class(1);
        let d = residual_frames(&item.sequence).unwrap();
        let reach = 3.0 * style.blob_sigma() + 1.0;
        for f in 0..cfg.frames - 1 {
            let c0 = blob_center(&t, (f as f64 + 0.5) / 8.0, 32, 32);
            let c1 = blob_center(&t, (f as f64 + 1.5) / 8.0, 32, 32);
            for i in 0..32 * 32 {
                let (y, x) = ((i / 32) as f64, (i % 32) as f64);
                let near = |c: (f64, f64)| ((x - c.0).powi(2) + (y - c.1).powi(2)).sqrt() <= reach;
                if !near(c0) && !near(c1) {
                    assert_eq!(d.data()[f * 1024 + i], 0.0);
                }
            }
        }
        assert!(item.sequence.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn same_class_shares_trajectory_not_texture() {
        let t = UtteranceTemplate::for_class(0);
        let (a, b) = (SubjectStyle::from_seed(1), SubjectStyle::from_seed(2));
        let va = render_video(&t, &a, 32, 32, 8);
        let vb = render_video(&t, &b, 32, 32, 8);
        assert_ne!(va, vb);
        // the blob center is style-independent
        for f in 0..8 {
            let u = (f as f64 + 0.5) / 8.0;
            assert_eq!(blob_center(&t, u, 32, 32), blob_center(&t, u, 32, 32));
        }
        // static spots cancel in a frame difference; the blob does not
        let gain = |i: usize| va.data()[2 * 1024 + i] - va.data()[6 * 1024 + i];
        let peak = (0..1024).max_by(|&i, &j| gain(i).total_cmp(&gain(j))).unwrap();
        let (ix, iy) = (peak % 32, peak / 32);
        let c = blob_center(&t, 2.5 / 8.0, 32, 32);
        assert!((ix as f64 - c.0).abs() <= 1.0 && (iy as f64 - c.1).abs() <= 1.0);
    }

    #[test]
    fn crop_arithmetic() {
        assert_eq!(crop_offsets(24_000, 21_000, 1000).unwrap().len(), 4);
        assert_eq!(crop_offsets(21_000, 21_000, 7).unwrap(), vec![0]);
        assert_eq!(crop_offsets(21_990, 21_000, 990 / 99).unwrap().len(), 100);
        assert!(crop_offsets(100, 101, 1).is_err());
        let x = Tensor::<f32>::zeros(&[2, 2, 2]);
        let y = Waveform::new((0..50).map(|i| i as f32 / 100.0).collect(), 8000).unwrap();
        let crops = sliding_window_augment(&x, &y, 50, 3).unwrap();
        assert_eq!(crops.len(), 1);
        assert_eq!(crops[0].1, y);
        assert_eq!(crops[0].0, x);
    }

    #[test]
    fn manifest_round_trip_and_duplicates() {
        let m = CorpusManifest {
            rows: vec![ManifestRow {
                subject: 1,
                class_id: 0,
                seed: 99,
                seq_path: "a.sq2t".into(),
                wav_path: "a.wav".into(),
            }],
        };
        assert_eq!(CorpusManifest::parse(&m.to_tsv()).unwrap(), m);
        let dup = format!("{}{}", m.to_tsv(), m.to_tsv().lines().nth(1).unwrap());
        assert!(CorpusManifest::parse(&dup).is_err());
        assert!(CorpusManifest::parse("1\t2\n").is_err());
    }

    #[test]
    fn pair_sampling_rates() {
        let items: Vec<(usize, usize)> = (0..8).flat_map(|s| (0..2).map(move |c| (s, c))).collect();
        let pool: Vec<usize> = (0..items.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in [0.0, 1.0] {
            for _ in 0..200 {
                let (i, j, same) = sample_training_pair(&items, &pool, p, &mut rng).unwrap();
                assert_eq!(same, p == 1.0);
                if same {
                    assert_ne!(items[i].0, items[j].0);
                }
            }
        }
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| sample_training_pair(&items, &pool, 0.5, &mut rng).unwrap().2)
            .count();
        assert!((hits as f64 / n as f64 - 0.5).abs() < 0.02);
    }

    proptest::proptest! {
        #[test]
        fn crops_tile_the_audio(len in 1usize..5000, window in 1usize..5000, stride in 1usize..700) {
            match crop_offsets(len, window, stride) {
                Err(_) => proptest::prop_assert!(window > len),
                Ok(offs) => {
                    proptest::prop_assert_eq!(offs[0], 0);
                    proptest::prop_assert!(offs.windows(2).all(|w| w[1] - w[0] == stride));
                    let last = *offs.last().unwrap();
                    proptest::prop_assert!(last + window <= len && last + stride + window > len);
                }
            }
        }

        #[test]
        fn manifest_text_round_trips(rows in proptest::collection::btree_set((0usize..50, 0usize..9), 1..12), seed in proptest::prelude::any::<u64>()) {
            let m = CorpusManifest {
                rows: rows
                    .iter()
                    .map(|&(subject, class_id)| ManifestRow {
                        subject,
                        class_id,
                        seed: seed ^ subject as u64,
                        seq_path: format!("s{subject:03}_c{class_id:02}.sq2t").into(),
                        wav_path: format!("s{subject:03}_c{class_id:02}.wav").into(),
                    })
                    .collect(),
            };
            proptest::prop_assert_eq!(CorpusManifest::parse(&m.to_tsv()).unwrap(), m);
        }
    }
}
