//! Joint training of the translator, attention network and discriminator,
//! leave-one-out evaluation, ablation grid and β/λ sweeps.
//!
//! One step: forward both items of a pair through attention and F, take
//! Adam steps on F (reconstruction + KL + adversarial) and A
//! (reconstruction only), then one Adam step on D against detached fakes.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::dsp::{wav_to_melspec, MelConfig, MelSpec};
use crate::error::{Error, Result};
use crate::kv::{join, KvMap};
use crate::metrics::{corr2d, log_spectral_distance, mean_std, AblationReport, EvalReport, ItemScore};
use crate::objectives::{loss_adv, loss_disc, loss_kl, loss_rec, AdvVariant};
use crate::optim::{AdamConfig, AdamState};
use crate::synthdata::{crop_offsets, sample_training_pair, CorpusConfig, CorpusItem};
use crate::tensor::Tensor;
use crate::translator::{discriminate, sample_eps, Checkpoint, ModelConfig, Translator};

/// Model and DSP presets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Scale {
    #[default]
    Desk,
    DeskSmall,
    Paper,
}

impl Scale {
    pub fn model(self) -> ModelConfig {
        match self {
            Self::Desk => ModelConfig::desk(),
            Self::DeskSmall => ModelConfig::desk_small(),
            Self::Paper => ModelConfig::paper(),
        }
    }

    pub fn mel(self) -> MelConfig {
        match self {
            Self::Desk | Self::DeskSmall => MelConfig::desk(),
            Self::Paper => MelConfig::paper(),
        }
    }

    /// Corpus whose items fit this scale's model.
    pub fn corpus(self, subjects: usize, classes: usize, seed: u64) -> CorpusConfig {
        let m = self.model();
        CorpusConfig {
            subjects,
            classes,
            seed,
            frames: m.frames,
            height: m.height,
            width: m.width,
            mel: self.mel(),
            ..CorpusConfig::default()
        }
    }
}

impl std::str::FromStr for Scale {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Self::Desk),
            "desk_small" => Ok(Self::DeskSmall),
            "paper" => Ok(Self::Paper),
            _ => Err(format!("unknown scale {s} (desk, desk_small, paper)")),
        }
    }
}

impl std::fmt::Display for Scale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Desk => "desk",
            Self::DeskSmall => "desk_small",
            Self::Paper => "paper",
        })
    }
}

/// Switched-off components.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_attention: bool,
    pub no_pairwise: bool,
    pub no_gan: bool,
}

impl Ablation {
    /// `full`, or the active flags joined by `+`.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (on, name) in [
            (self.no_attention, "no_attention"),
            (self.no_pairwise, "no_pairwise"),
            (self.no_gan, "no_gan"),
        ] {
            if on {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;

    /// `full`/`none`, or flags separated by `+` or `,`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut a = Self::default();
        for part in s.split(['+', ',']).map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "full" | "none" => {}
                "no_attention" => a.no_attention = true,
                "no_pairwise" => a.no_pairwise = true,
                "no_gan" => a.no_gan = true,
                _ => return Err(format!("unknown ablation flag {part}")),
            }
        }
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr_f: f64,
    pub lr_a: f64,
    pub lr_d: f64,
    pub beta: f64,
    pub lambda: f64,
    pub p_same: f64,
    pub steps: usize,
    /// Pairs per step; gradients are averaged over them.
    pub batch_size: usize,
    pub seed: u64,
    pub scale: Scale,
    pub ablation: Ablation,
    pub adv: AdvVariant,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    /// Samples between audio crops; 0 trains on the evaluation crop only.
    pub crop_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_f: 1e-3,
            lr_a: 1e-3,
            lr_d: 1e-4,
            beta: 0.5,
            lambda: 0.5,
            p_same: 0.5,
            steps: 2000,
            batch_size: 1,
            seed: 0,
            scale: Scale::Desk,
            ablation: Ablation::default(),
            adv: AdvVariant::NonSaturating,
            checkpoint_every: 0,
            crop_stride: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_f", self.lr_f), ("lr_a", self.lr_a), ("lr_d", self.lr_d)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0, got {lr}")));
            }
        }
        for (name, w) in [("beta", self.beta), ("lambda", self.lambda)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {w}")));
            }
        }
        if !(0.0..=1.0).contains(&self.p_same) {
            return Err(Error::invalid(format!("p_same must be in [0, 1], got {}", self.p_same)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> String {
        format!(
            "lr_f={}\nlr_a={}\nlr_d={}\nbeta={}\nlambda={}\np_same={}\nsteps={}\nbatch_size={}\nseed={}\n\
             scale={}\nablate={}\nadv={}\ncheckpoint_every={}\ncrop_stride={}\n",
            self.lr_f,
            self.lr_a,
            self.lr_d,
            self.beta,
            self.lambda,
            self.p_same,
            self.steps,
            self.batch_size,
            self.seed,
            self.scale,
            self.ablation.label(),
            self.adv,
            self.checkpoint_every,
            self.crop_stride
        )
    }

    /// Reads a `key=value` file; absent keys keep their defaults and unknown
    /// keys are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KvMap::parse("train config", text)?;
        let cfg = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }

    pub fn take_from(kv: &mut KvMap) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            lr_f: kv.take("lr_f", d.lr_f)?,
            lr_a: kv.take("lr_a", d.lr_a)?,
            lr_d: kv.take("lr_d", d.lr_d)?,
            beta: kv.take("beta", d.beta)?,
            lambda: kv.take("lambda", d.lambda)?,
            p_same: kv.take("p_same", d.p_same)?,
            steps: kv.take("steps", d.steps)?,
            batch_size: kv.take("batch_size", d.batch_size)?,
            seed: kv.take("seed", d.seed)?,
            scale: kv.take("scale", d.scale)?,
            ablation: kv.take("ablate", d.ablation)?,
            adv: kv.take("adv", d.adv)?,
            checkpoint_every: kv.take("checkpoint_every", d.checkpoint_every)?,
            crop_stride: kv.take("crop_stride", d.crop_stride)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn attention(&self) -> bool {
        !self.ablation.no_attention
    }
}

/// One corpus item prepared for training: the sequence and the normalized
/// mel spectrogram of every audio crop.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub subject: usize,
    pub class_id: usize,
    pub sequence: Tensor<f32>,
    /// `[1, bands, frames]` per crop.
    pub crops: Vec<Tensor<f32>>,
    /// Index into `crops` used for evaluation (the middle crop).
    pub eval_crop: usize,
}

impl TrainItem {
    pub fn eval_target(&self) -> &Tensor<f32> {
        &self.crops[self.eval_crop]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub mel: MelConfig,
    pub items: Vec<TrainItem>,
}

impl Dataset {
    /// Crops every item's audio every `crop_stride` samples (a single middle
    /// crop when 0) and checks the shapes against `model`.
    pub fn new(items: &[CorpusItem], model: &ModelConfig, mel: MelConfig, crop_stride: usize) -> Result<Self> {
        if mel.n_mels != model.spec_bands || mel.width != model.spec_frames {
            return Err(Error::invalid(format!(
                "mel config {}x{} does not match model output {}x{}",
                mel.n_mels, mel.width, model.spec_bands, model.spec_frames
            )));
        }
        let window = mel.window_len();
        let mut out = Vec::with_capacity(items.len());
        for it in items {
            let want = [model.frames, model.height, model.width];
            if it.sequence.shape() != want {
                return Err(Error::invalid(format!(
                    "subject {} class {}: sequence shape {:?}, model expects {want:?}",
                    it.subject,
                    it.class_id,
                    it.sequence.shape()
                )));
            }
            if it.audio.sample_rate != mel.sample_rate {
                return Err(Error::invalid(format!(
                    "subject {} class {}: sample rate {} Hz, expected {}",
                    it.subject, it.class_id, it.audio.sample_rate, mel.sample_rate
                )));
            }
            let offsets = if crop_stride == 0 {
                let all = crop_offsets(it.audio.len(), window, 1)?;
                vec![all[all.len() / 2]]
            } else {
                crop_offsets(it.audio.len(), window, crop_stride)?
            };
            let crops = offsets
                .iter()
                .map(|&o| {
                    let wav = crate::dsp::Waveform::new(it.audio.samples[o..o + window].to_vec(), mel.sample_rate)?;
                    Ok(wav_to_melspec(&wav, &mel)?.to_tensor())
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(TrainItem {
                subject: it.subject,
                class_id: it.class_id,
                sequence: it.sequence.clone(),
                eval_crop: crops.len() / 2,
                crops,
            });
        }
        Ok(Self { mel, items: out })
    }

    pub fn subjects(&self) -> Vec<usize> {
        let s: BTreeSet<usize> = self.items.iter().map(|i| i.subject).collect();
        s.into_iter().collect()
    }

    /// Indices of every item not recorded by `subject`.
    pub fn pool_without(&self, subject: usize) -> Vec<usize> {
        (0..self.items.len()).filter(|&i| self.items[i].subject != subject).collect()
    }

    pub fn indices_of(&self, subject: usize) -> Vec<usize> {
        (0..self.items.len()).filter(|&i| self.items[i].subject == subject).collect()
    }

    fn keys(&self) -> Vec<(usize, usize)> {
        self.items.iter().map(|i| (i.subject, i.class_id)).collect()
    }
}

/// Loss values of one step. Inactive terms are 0.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub rec: f64,
    pub kl: f64,
    pub adv: f64,
    pub disc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub losses: StepLosses,
    /// Seconds since training started.
    pub wall: f64,
}

pub const TRAIN_LOG_HEADER: &str = "step,l_rec,l_kl,l_adv,l_d,wall_s";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRAIN_LOG_HEADER}\n");
        for r in &self.records {
            let l = r.losses;
            let _ = writeln!(
                out,
                "{},{:.9},{:.9},{:.9},{:.9},{:.3}",
                r.step, l.rec, l.kl, l.adv, l.disc, r.wall
            );
        }
        out
    }

    /// Mean reconstruction loss over the first and last `n` records.
    pub fn rec_ends(&self, n: usize) -> (f64, f64) {
        let n = n.clamp(1, self.records.len().max(1));
        let mean = |r: &[StepRecord]| r.iter().map(|s| s.losses.rec).sum::<f64>() / r.len().max(1) as f64;
        (
            mean(&self.records[..n.min(self.records.len())]),
            mean(&self.records[self.records.len().saturating_sub(n)..]),
        )
    }
}

/// Adam states of the three networks.
#[derive(Clone, Debug)]
pub struct Optimizers {
    pub f: AdamState<f32>,
    pub a: AdamState<f32>,
    pub d: AdamState<f32>,
}

impl Optimizers {
    pub fn new(model: &Translator<f32>, cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            f: AdamState::new(AdamConfig::with_lr(cfg.lr_f), model.f.tensors())?,
            a: AdamState::new(AdamConfig::with_lr(cfg.lr_a), model.a.tensors())?,
            d: AdamState::new(AdamConfig::with_lr(cfg.lr_d), model.d.tensors())?,
        })
    }
}

/// A training pair: item indices, crop indices, and whether the two items
/// share an utterance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pair {
    pub items: [usize; 2],
    pub crops: [usize; 2],
    pub same_utterance: bool,
}

fn finite(v: f64, step: usize, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("step {step}: {what}")))
    }
}

fn add_scaled(acc: &mut [Tensor<f32>], g: &[Tensor<f32>], s: f32) {
    for (a, g) in acc.iter_mut().zip(g) {
        for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
            *x += s * y;
        }
    }
}

fn zeros_like(ts: &[Tensor<f32>]) -> Vec<Tensor<f32>> {
    ts.iter().map(|t| Tensor::zeros(t.shape())).collect()
}

/// One optimization step over `pairs` (the batch). Returns the batch-mean
/// losses.
pub fn train_step(
    model: &mut Translator<f32>,
    opt: &mut Optimizers,
    data: &Dataset,
    pairs: &[Pair],
    cfg: &TrainConfig,
    step: usize,
    rng: &mut impl Rng,
) -> Result<StepLosses> {
    let attention = cfg.attention();
    let gan = !cfg.ablation.no_gan;
    let n = pairs.len() as f32;
    let mut grad_f = zeros_like(model.f.tensors());
    let mut grad_a = zeros_like(model.a.tensors());
    let mut fakes: Vec<(Tensor<f32>, Tensor<f32>)> = Vec::new();
    let mut losses = StepLosses::default();

    for pair in pairs {
        let mut tape = Tape::new();
        let h = model.bind(&mut tape, true, attention, false);
        let mut outs = Vec::with_capacity(2);
        let mut recs = Vec::with_capacity(2);
        for k in 0..2 {
            let item = &data.items[pair.items[k]];
            let eps = sample_eps(&[model.config.latent_mu, model.plan.bottleneck[0], model.plan.bottleneck[1]], rng);
            let out = model.forward(&mut tape, &h, &item.sequence, attention, Some(&eps))?;
            let target = item.crops[pair.crops[k]].clone();
            let t = tape.constant(target.clone());
            recs.push(loss_rec(&mut tape, out.spec, t)?);
            fakes.push((tape.value(out.spec).clone(), target));
            outs.push(out);
        }
        let rec_sum = tape.add(recs[0], recs[1])?;
        let rec = tape.scale(rec_sum, 0.5)?;
        losses.rec += finite(tape.value(rec).data()[0] as f64, step, "L_rec")?;
        tape.backward(rec)?;
        add_scaled(&mut grad_f, &model.f.grads(&tape, &h.f), 1.0 / n);
        if attention {
            add_scaled(&mut grad_a, &model.a.grads(&tape, &h.a), 1.0 / n);
        }

        // second pass: terms that reach F only
        let mut extra = None;
        if pair.same_utterance && !cfg.ablation.no_pairwise && cfg.beta > 0.0 {
            let mut pooled = Vec::with_capacity(4);
            for o in &outs {
                pooled.push(tape.channel_mean(o.latent.mu)?);
                pooled.push(tape.channel_mean(o.latent.logvar)?);
            }
            let kl = loss_kl(&mut tape, pooled[0], pooled[1], pooled[2], pooled[3])?;
            losses.kl += finite(tape.value(kl).data()[0] as f64, step, "L_KL")?;
            extra = Some(tape.scale(kl, cfg.beta as f32)?);
        }
        if gan {
            let mut advs = Vec::with_capacity(2);
            for o in &outs {
                let p = discriminate(&mut tape, &model.config, &h.d, o.spec)?;
                advs.push(loss_adv(&mut tape, p, cfg.adv)?);
            }
            let s = tape.add(advs[0], advs[1])?;
            let adv = tape.scale(s, 0.5)?;
            losses.adv += finite(tape.value(adv).data()[0] as f64, step, "L_adv")?;
            let w = tape.scale(adv, cfg.lambda as f32)?;
            extra = Some(match extra {
                Some(e) => tape.add(e, w)?,
                None => w,
            });
        }
        if let Some(e) = extra {
            tape.zero_grad();
            tape.backward(e)?;
            add_scaled(&mut grad_f, &model.f.grads(&tape, &h.f), 1.0 / n);
        }
    }
    for g in grad_f.iter().chain(&grad_a) {
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("step {step}: translator gradient")));
        }
    }
    opt.f.step(model.f.tensors_mut(), &grad_f)?;
    if attention {
        opt.a.step(model.a.tensors_mut(), &grad_a)?;
    }

    if gan {
        let mut tape = Tape::new();
        let d = model.d.bind(&mut tape, true);
        let mut terms = Vec::with_capacity(fakes.len());
        for (fake, real) in &fakes {
            let r = tape.constant(real.clone());
            let f = tape.constant(fake.clone());
            let pr = discriminate(&mut tape, &model.config, &d, r)?;
            let pf = discriminate(&mut tape, &model.config, &d, f)?;
            terms.push(loss_disc(&mut tape, pr, pf)?);
        }
        let mut total = terms[0];
        for &t in &terms[1..] {
            total = tape.add(total, t)?;
        }
        let mean = tape.scale(total, 1.0 / terms.len() as f32)?;
        losses.disc = finite(tape.value(mean).data()[0] as f64, step, "L_D")?;
        tape.backward(mean)?;
        let g = model.d.grads(&tape, &d);
        if g.iter().any(|t| !t.all_finite()) {
            return Err(Error::NonFinite(format!("step {step}: discriminator gradient")));
        }
        opt.d.step(model.d.tensors_mut(), &g)?;
    }
    let per = pairs.len() as f64;
    losses.rec /= per;
    losses.kl /= per;
    losses.adv /= per;
    Ok(losses)
}

/// Result of one training run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: Translator<f32>,
    pub log: TrainLog,
    /// Every item index the pair sampler produced.
    pub seen: BTreeSet<usize>,
}

impl TrainOutput {
    pub fn checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        checkpoint_of(&self.model, cfg)
    }
}

/// Model config plus the training config and an `ablation` label.
pub fn checkpoint_of(model: &Translator<f32>, cfg: &TrainConfig) -> Checkpoint {
    let extra = format!("{}ablation={}\n", cfg.to_kv(), cfg.ablation.label());
    model.to_checkpoint(&extra)
}

/// Training config and whether attention is used, read back from a
/// checkpoint's metadata.
pub fn train_config_of(ckpt: &Checkpoint) -> Result<TrainConfig> {
    let mut kv = KvMap::parse("checkpoint metadata", &ckpt.metadata)?;
    TrainConfig::take_from(&mut kv)
}

/// Trains a fresh model on the items in `pool`. `on_checkpoint` runs every
/// `checkpoint_every` steps.
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    pool: &[usize],
    mut on_checkpoint: impl FnMut(usize, &Translator<f32>) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(Error::invalid("no training items"));
    }
    let mut model = Translator::<f32>::new(cfg.scale.model(), cfg.seed)?;
    let mut opt = Optimizers::new(&model, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(4);
    let keys = data.keys();
    let classes: BTreeSet<usize> = pool.iter().map(|&i| keys[i].1).collect();
    let p_same = if classes.len() < 2 { 1.0 } else { cfg.p_same };
    let mut log = TrainLog::default();
    let mut seen = BTreeSet::new();
    let start = Instant::now();
    for step in 1..=cfg.steps {
        let mut pairs = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let (i, j, same) = sample_training_pair(&keys, pool, p_same, &mut rng)?;
            let crops = [
                rng.random_range(0..data.items[i].crops.len()),
                rng.random_range(0..data.items[j].crops.len()),
            ];
            seen.insert(i);
            seen.insert(j);
            pairs.push(Pair {
                items: [i, j],
                crops,
                same_utterance: same,
            });
        }
        let losses = train_step(&mut model, &mut opt, data, &pairs, cfg, step, &mut rng)?;
        log.records.push(StepRecord {
            step,
            losses,
            wall: start.elapsed().as_secs_f64(),
        });
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            on_checkpoint(step, &model)?;
        }
    }
    Ok(TrainOutput { model, log, seen })
}

/// Scores the model on `indices` against each item's evaluation crop.
pub fn evaluate(
    model: &Translator<f32>,
    data: &Dataset,
    indices: &[usize],
    attention: bool,
    label: &str,
    seed: u64,
) -> Result<EvalReport> {
    let mut items = Vec::with_capacity(indices.len());
    for &i in indices {
        let it = &data.items[i];
        let pred = MelSpec::from_tensor(&model.translate(&it.sequence, attention)?)?;
        let target = MelSpec::from_tensor(it.eval_target())?;
        items.push(ItemScore {
            subject: it.subject,
            class_id: it.class_id,
            corr2d: corr2d(&pred, &target)?,
            lsd_db: log_spectral_distance(&pred, &target, &data.mel)?,
        });
    }
    Ok(EvalReport {
        label: label.to_string(),
        seed,
        items,
    })
}

/// Worker cap from `SQ2S_THREADS`, defaulting to the available cores.
pub fn worker_threads() -> usize {
    std::env::var("SQ2S_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `jobs` on at most `threads` scoped threads; results keep job order.
pub fn run_parallel<J: Sync, R: Send>(jobs: &[J], threads: usize, f: impl Fn(&J) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, jobs.len().max(1));
    if threads == 1 {
        return jobs.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<R>>> = jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                *slots[i].lock().expect("worker panicked") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("worker panicked").expect("every job ran"))
        .collect()
}

/// One held-out fold.
#[derive(Clone, Debug)]
pub struct FoldResult {
    pub held_out: usize,
    pub seed: u64,
    pub report: EvalReport,
    /// Evaluated on the fold's own training items.
    pub train_report: EvalReport,
}

/// Trains without `held_out`'s items and evaluates on them. Fails if the
/// sampler ever produced a held-out item.
pub fn run_fold(cfg: &TrainConfig, data: &Dataset, held_out: usize) -> Result<FoldResult> {
    let pool = data.pool_without(held_out);
    let test = data.indices_of(held_out);
    if test.is_empty() {
        return Err(Error::invalid(format!("subject {held_out} has no items")));
    }
    if pool.is_empty() {
        return Err(Error::invalid("leave-one-out needs at least 2 subjects"));
    }
    let out = train(cfg, data, &pool, |_, _| Ok(()))?;
    if let Some(leak) = test.iter().find(|i| out.seen.contains(i)) {
        return Err(Error::invalid(format!("split leak: held-out item {leak} was sampled for training")));
    }
    let label = cfg.ablation.label();
    Ok(FoldResult {
        held_out,
        seed: cfg.seed,
        report: evaluate(&out.model, data, &test, cfg.attention(), &label, cfg.seed)?,
        train_report: evaluate(&out.model, data, &pool, cfg.attention(), &label, cfg.seed)?,
    })
}

/// Leave-one-out over `subjects` (all when empty) for each seed; one merged
/// holdout report per seed. Folds run on [`worker_threads`] threads.
pub fn leave_one_out_eval(cfg: &TrainConfig, data: &Dataset, seeds: &[u64], subjects: &[usize]) -> Result<Vec<EvalReport>> {
    let all = data.subjects();
    if all.len() < 2 {
        return Err(Error::invalid(format!("leave-one-out needs at least 2 subjects, corpus has {}", all.len())));
    }
    let folds: Vec<usize> = if subjects.is_empty() { all } else { subjects.to_vec() };
    let jobs: Vec<(u64, usize)> = seeds.iter().flat_map(|&s| folds.iter().map(move |&f| (s, f))).collect();
    let results = run_parallel(&jobs, worker_threads(), |&(seed, subject)| {
        run_fold(&TrainConfig { seed, ..cfg.clone() }, data, subject)
    });
    let mut reports: Vec<EvalReport> = seeds
        .iter()
        .map(|&seed| EvalReport {
            label: cfg.ablation.label(),
            seed,
            items: Vec::new(),
        })
        .collect();
    for ((seed, _), r) in jobs.iter().zip(results) {
        let r = r?;
        let k = seeds.iter().position(|s| s == seed).expect("seed from list");
        reports[k].items.extend(r.report.items);
    }
    Ok(reports)
}

/// The four-row ablation grid, each row a leave-one-out over `seeds`.
pub fn ablation_grid(cfg: &TrainConfig, data: &Dataset, seeds: &[u64], subjects: &[usize]) -> Result<(AblationReport, Vec<EvalReport>)> {
    let mut runs = Vec::new();
    for label in crate::metrics::ABLATION_LABELS {
        let ablation: Ablation = label.parse().map_err(Error::invalid)?;
        runs.extend(leave_one_out_eval(&TrainConfig { ablation, ..cfg.clone() }, data, seeds, subjects)?);
    }
    Ok((AblationReport::from_runs(&runs), runs))
}

/// Swept loss weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Beta,
    Lambda,
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Beta => "beta",
            Self::Lambda => "lambda",
        })
    }
}

pub const SWEEP_CSV_HEADER: &str = "param,value,seeds,n_items,corr2d_mean,corr2d_std,lsd_db_mean,lsd_db_std";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub reports: Vec<EvalReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub param: SweepParam,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// One row per swept value in increasing order; statistics pool every
    /// item of every seed.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_CSV_HEADER}\n");
        for r in &self.rows {
            let items: Vec<&ItemScore> = r.reports.iter().flat_map(|e| &e.items).collect();
            let (cm, cs) = mean_std(&items.iter().map(|i| i.corr2d).collect::<Vec<_>>());
            let (lm, ls) = mean_std(&items.iter().map(|i| i.lsd_db).collect::<Vec<_>>());
            let seeds: Vec<u64> = r.reports.iter().map(|e| e.seed).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{cm:.9},{cs:.9},{lm:.9},{ls:.9}",
                self.param,
                r.value,
                join(&seeds).replace(',', ";"),
                items.len()
            );
        }
        out
    }
}

/// `start:stop:step` (inclusive, values rounded to 1e-9) or a comma list.
/// The result must be strictly increasing.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |d: String| Error::invalid(format!("grid {s}: {d}"));
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| bad(format!("bad number {t}")));
    let values: Vec<f64> = if s.contains(':') {
        let p: Vec<&str> = s.split(':').collect();
        if p.len() != 3 {
            return Err(bad("expected start:stop:step".into()));
        }
        let (a, b, st) = (num(p[0])?, num(p[1])?, num(p[2])?);
        if !(st > 0.0) || b < a {
            return Err(bad("need step > 0 and stop >= start".into()));
        }
        let n = ((b - a) / st + 1e-9).floor() as usize;
        (0..=n).map(|i| ((a + i as f64 * st) * 1e9).round() / 1e9).collect()
    } else {
        s.split(',').map(num).collect::<Result<_>>()?
    };
    if values.is_empty() || values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(bad("values must be strictly increasing".into()));
    }
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(bad("values must be finite and >= 0".into()));
    }
    Ok(values)
}

/// Leave-one-out (over `subjects`) at every grid value of one loss weight.
pub fn sweep(
    cfg: &TrainConfig,
    data: &Dataset,
    param: SweepParam,
    values: &[f64],
    seeds: &[u64],
    subjects: &[usize],
) -> Result<SweepReport> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut c = cfg.clone();
        match param {
            SweepParam::Beta => c.beta = value,
            SweepParam::Lambda => c.lambda = value,
        }
        c.validate()?;
        rows.push(SweepRow {
            value,
            reports: leave_one_out_eval(&c, data, seeds, subjects)?,
        });
    }
    Ok(SweepReport { param, rows })
}

#[cfg(test)]
mod tests;
