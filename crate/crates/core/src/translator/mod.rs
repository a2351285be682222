//! Translator F (attention-gated 3-D encoder, latent slice, 2-D decoder),
//! attention network A and discriminator D.
//!
//! Sequences are `[T, H, W]` tensors in `[0, 1]`; spectrograms are
//! `[1, bands, frames]`. Graph builders take a tape plus the bound
//! parameters of the network they evaluate, so the trainer controls which
//! parameters are trainable in each pass.

pub mod checkpoint;
pub mod config;
pub mod params;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Init gain for the attention network's ReLU layers (He-uniform bound).
/// At gain 1 its nine-layer stack produces constant masks.
pub const ATTENTION_HIDDEN_GAIN: f64 = 6.0;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{Dims3, ModelConfig, ShapePlan};
pub use params::{Bound, ParamSet};

/// Channel slices of the bottleneck, each `[C, h, w]`.
#[derive(Clone, Copy, Debug)]
pub struct Latent {
    pub mu: Var,
    pub logvar: Var,
    pub s: Var,
}

/// Every intermediate of one translator pass.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub input: Var,
    /// `[1, T-1, H, W]` masks; absent without attention.
    pub masks: Option<Var>,
    pub attended: Var,
    pub latent: Latent,
    pub u: Var,
    pub spec: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub translator: usize,
    pub attention: usize,
    pub discriminator: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.translator + self.attention + self.discriminator
    }
}

/// Tape handles for all three networks.
#[derive(Clone, Debug)]
pub struct Handles {
    pub f: Bound,
    pub a: Bound,
    pub d: Bound,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Translator<T> {
    pub config: ModelConfig,
    pub plan: ShapePlan,
    /// Encoder and decoder.
    pub f: ParamSet<T>,
    pub a: ParamSet<T>,
    pub d: ParamSet<T>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<T: Scalar> Translator<T> {
    /// Fresh weights, uniform in `±sqrt(1 / fan_in)` with zero biases. The
    /// three networks draw from independent streams of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let plan = config.plan()?;
        let mut f = ParamSet::new();
        let mut rng = stream(seed, 1);
        let mut c_in = 1;
        for (i, &c) in config.enc_channels.iter().enumerate() {
            f.push_weight(format!("enc.{i}.weight"), &[c, c_in, 3, 3, 3], c_in * 27, 1.0, &mut rng);
            f.push_bias(format!("enc.{i}.bias"), c);
            c_in = c;
        }
        c_in = config.latent_mu + config.latent_s;
        for (i, (&c, &s)) in config.dec_channels.iter().zip(&plan.dec_strides).enumerate() {
            let k = if s == 1 { 3 } else { 4 };
            // taps reaching one output of a transposed convolution
            let fan = c_in * (k / s) * (k / s);
            f.push_weight(format!("dec.{i}.weight"), &[c_in, c, k, k], fan, 1.0, &mut rng);
            f.push_bias(format!("dec.{i}.bias"), c);
            c_in = c;
        }
        f.push_weight("dec.out.weight".into(), &[1, c_in, 1, 1], c_in, 1.0, &mut rng);
        f.push_bias("dec.out.bias".into(), 1);

        let mut a = ParamSet::new();
        let mut rng = stream(seed, 2);
        c_in = 1;
        for (i, &c) in config.att_channels.iter().enumerate() {
            a.push_weight(format!("att.down.{i}.weight"), &[c, c_in, 1, 3, 3], c_in * 9, ATTENTION_HIDDEN_GAIN, &mut rng);
            a.push_bias(format!("att.down.{i}.bias"), c);
            c_in = c;
        }
        for (i, c) in attention_up_channels(&config.att_channels).into_iter().enumerate() {
            a.push_weight(format!("att.up.{i}.weight"), &[c_in, c, 1, 4, 4], c_in * 4, ATTENTION_HIDDEN_GAIN, &mut rng);
            a.push_bias(format!("att.up.{i}.bias"), c);
            c_in = c;
        }
        a.push_weight("att.out.weight".into(), &[1, c_in, 1, 1, 1], c_in, 1.0, &mut rng);
        a.push_bias("att.out.bias".into(), 1);

        let mut d = ParamSet::new();
        let mut rng = stream(seed, 3);
        c_in = 1;
        for (i, &c) in config.disc_channels.iter().enumerate() {
            d.push_weight(format!("disc.conv.{i}.weight"), &[c, c_in, 3, 3], c_in * 9, 1.0, &mut rng);
            d.push_bias(format!("disc.conv.{i}.bias"), c);
            c_in = c;
        }
        let h = config.disc_hidden;
        d.push_weight("disc.fc1.weight".into(), &[h, plan.disc_features], plan.disc_features, 1.0, &mut rng);
        d.push_bias("disc.fc1.bias".into(), h);
        d.push_weight("disc.fc2.weight".into(), &[1, h], h, 1.0, &mut rng);
        d.push_bias("disc.fc2.bias".into(), 1);

        Ok(Self { config, plan, f, a, d })
    }

    pub fn param_counts(&self) -> ParamCounts {
        ParamCounts {
            translator: self.f.count(),
            attention: self.a.count(),
            discriminator: self.d.count(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, train_f: bool, train_a: bool, train_d: bool) -> Handles {
        Handles {
            f: self.f.bind(tape, train_f),
            a: self.a.bind(tape, train_a),
            d: self.d.bind(tape, train_d),
        }
    }

    pub fn check_sequence(&self, x: &Tensor<T>) -> Result<()> {
        let want = [self.config.frames, self.config.height, self.config.width];
        if x.shape() != want {
            return Err(Error::shape("translator input", x.shape(), &want));
        }
        Ok(())
    }

    /// Full F on one `[T, H, W]` sequence. `eps` of `None` uses the
    /// posterior mean (`u = mu`).
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        h: &Handles,
        x: &Tensor<T>,
        attention: bool,
        eps: Option<&Tensor<T>>,
    ) -> Result<Forward> {
        self.check_sequence(x)?;
        let shape = x.shape();
        let input = tape.constant(x.reshape(&[1, shape[0], shape[1], shape[2]])?);
        let (attended, masks) = if attention {
            let (xp, m) = attend(tape, &self.config, &h.a, input)?;
            (xp, Some(m))
        } else {
            (input, None)
        };
        let latent = encode(tape, &self.config, &h.f, attended)?;
        let u = reparameterize(tape, latent.mu, latent.logvar, eps)?;
        let spec = decode(tape, &self.config, &self.plan, &h.f, u, latent.s)?;
        Ok(Forward {
            input,
            masks,
            attended,
            latent,
            u,
            spec,
        })
    }

    /// Inference: `eps = 0`, nothing trainable. Returns `[1, bands, frames]`.
    pub fn translate(&self, x: &Tensor<T>, attention: bool) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let h = self.bind(&mut tape, false, false, false);
        let out = self.forward(&mut tape, &h, x, attention, None)?;
        Ok(tape.value(out.spec).clone())
    }

    /// Pooled `(mu, logvar)` of a sequence's latent at inference.
    pub fn pooled_latent(&self, x: &Tensor<T>, attention: bool) -> Result<(Vec<T>, Vec<T>)> {
        let mut tape = Tape::new();
        let h = self.bind(&mut tape, false, false, false);
        let out = self.forward(&mut tape, &h, x, attention, None)?;
        let mu = tape.channel_mean(out.latent.mu)?;
        let lv = tape.channel_mean(out.latent.logvar)?;
        Ok((tape.value(mu).data().to_vec(), tape.value(lv).data().to_vec()))
    }

    /// D's probability that `spec` (`[1, bands, frames]`) is real.
    pub fn discriminate(&self, spec: &Tensor<T>) -> Result<T> {
        let mut tape = Tape::new();
        let d = self.d.bind(&mut tape, false);
        let s = tape.constant(spec.clone());
        let p = discriminate(&mut tape, &self.config, &d, s)?;
        Ok(tape.value(p).data()[0])
    }

    pub fn cast<U: Scalar>(&self) -> Translator<U> {
        let conv = |p: &ParamSet<T>| {
            let mut out = ParamSet::new();
            for (n, t) in p.iter() {
                out.push(n, t.cast());
            }
            out
        };
        Translator {
            config: self.config.clone(),
            plan: self.plan.clone(),
            f: conv(&self.f),
            a: conv(&self.a),
            d: conv(&self.d),
        }
    }
}

fn attention_up_channels(down: &[usize]) -> Vec<usize> {
    let mut up: Vec<usize> = down[..down.len() - 1].iter().rev().copied().collect();
    up.push(down[0]);
    up
}

/// `d_t = |x_t - x_{t-1}|` for `t = 2..T` of a `[T, H, W]` sequence.
pub fn residual_frames<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::shape("residual_frames", s, &[0, 0, 0]));
    }
    let v = tape.constant(x.reshape(&[1, s[0], s[1], s[2]])?);
    let d = residual_frames_on(&mut tape, v)?;
    tape.value(d).reshape(&[s[0] - 1, s[1], s[2]])
}

fn residual_frames_on<T: Scalar>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    let t = tape.shape(x)[1];
    if t < 2 {
        return Err(Error::invalid(format!("residual frames need T >= 2, got {t}")));
    }
    let later = tape.narrow(x, 1, 1, t - 1)?;
    let earlier = tape.narrow(x, 1, 0, t - 1)?;
    let diff = tape.sub(later, earlier)?;
    tape.pointwise(diff, Activation::Abs)
}

/// A on a `[1, N, H, W]` stack of residual frames; each frame is mapped
/// independently (temporal kernel extent 1) to a mask in `(0, 1)`.
pub fn attention_masks<T: Scalar>(tape: &mut Tape<T>, cfg: &ModelConfig, a: &Bound, d: Var) -> Result<Var> {
    let mut h = d;
    for i in 0..cfg.att_channels.len() {
        h = tape.conv3d(
            h,
            a.get(&format!("att.down.{i}.weight")),
            Some(a.get(&format!("att.down.{i}.bias"))),
            [1, 2, 2],
            [0, 1, 1],
        )?;
        h = tape.relu(h)?;
    }
    for i in 0..cfg.att_channels.len() {
        h = tape.conv3d_transpose(
            h,
            a.get(&format!("att.up.{i}.weight")),
            Some(a.get(&format!("att.up.{i}.bias"))),
            [1, 2, 2],
            [0, 1, 1],
        )?;
        h = tape.relu(h)?;
    }
    let logits = tape.conv3d(
        h,
        a.get("att.out.weight"),
        Some(a.get("att.out.bias")),
        [1, 1, 1],
        [0, 0, 0],
    )?;
    tape.sigmoid(logits)
}

/// `x'_1 = x_1` and `x'_t = m_t * x_t` for the remaining frames.
pub fn apply_masks<T: Scalar>(tape: &mut Tape<T>, x: Var, masks: Var) -> Result<Var> {
    let t = tape.shape(x)[1];
    let first = tape.narrow(x, 1, 0, 1)?;
    let rest = tape.narrow(x, 1, 1, t - 1)?;
    let gated = tape.mul(masks, rest)?;
    tape.concat(&[first, gated], 1)
}

/// Attentive sequence and its masks for `x: [1, T, H, W]`.
pub fn attend<T: Scalar>(tape: &mut Tape<T>, cfg: &ModelConfig, a: &Bound, x: Var) -> Result<(Var, Var)> {
    let d = residual_frames_on(tape, x)?;
    let m = attention_masks(tape, cfg, a, d)?;
    Ok((apply_masks(tape, x, m)?, m))
}

/// Encoder on `[1, T, H, W]`: conv blocks (ReLU on all but the last, so the
/// latent keeps its sign), pools, a temporal mean over whatever extent the
/// pools leave, then the channel slice.
pub fn encode<T: Scalar>(tape: &mut Tape<T>, cfg: &ModelConfig, f: &Bound, x: Var) -> Result<Latent> {
    let mut h = x;
    let last = cfg.enc_channels.len() - 1;
    for i in 0..=last {
        h = tape.conv3d(
            h,
            f.get(&format!("enc.{i}.weight")),
            Some(f.get(&format!("enc.{i}.bias"))),
            cfg.enc_stride[i].0,
            [1, 1, 1],
        )?;
        if i < last {
            h = tape.relu(h)?;
        }
        if cfg.enc_pool[i] != Dims3([1, 1, 1]) {
            h = tape.maxpool3d(h, cfg.enc_pool[i].0)?;
        }
    }
    if tape.shape(h)[1] > 1 {
        h = tape.mean_axis(h, 1)?;
    }
    let s = tape.shape(h).to_vec();
    let h = tape.reshape(h, &[s[0], s[2], s[3]])?;
    let (m, r) = (cfg.latent_mu, cfg.latent_s);
    Ok(Latent {
        mu: tape.narrow(h, 0, 0, m)?,
        logvar: tape.narrow(h, 0, m, m)?,
        s: tape.narrow(h, 0, 2 * m, r)?,
    })
}

/// `u = mu + exp(logvar / 2) * eps`; `None` means `eps = 0`.
pub fn reparameterize<T: Scalar>(tape: &mut Tape<T>, mu: Var, logvar: Var, eps: Option<&Tensor<T>>) -> Result<Var> {
    if tape.shape(mu) != tape.shape(logvar) {
        return Err(Error::shape("reparameterize", tape.shape(mu), tape.shape(logvar)));
    }
    let Some(eps) = eps else { return Ok(mu) };
    if eps.shape() != tape.shape(mu) {
        return Err(Error::shape("reparameterize", tape.shape(mu), eps.shape()));
    }
    let half = tape.scale(logvar, T::of(0.5))?;
    let sigma = tape.exp(half)?;
    let e = tape.constant(eps.clone());
    let noise = tape.mul(sigma, e)?;
    tape.add(mu, noise)
}

/// Standard normal draws of `shape`.
pub fn sample_eps<T: Scalar>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.sample::<f64, _>(StandardNormal)))
}

/// Decoder on `u` and `s` (`[C, h, w]` each) to `[1, bands, frames]`.
pub fn decode<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    plan: &ShapePlan,
    f: &Bound,
    u: Var,
    s: Var,
) -> Result<Var> {
    let (su, ss) = (tape.shape(u), tape.shape(s));
    if su.len() != 3 || ss.len() != 3 || su[1..] != ss[1..] {
        return Err(Error::shape("decode", su, ss));
    }
    let mut h = tape.concat(&[u, s], 0)?;
    for (i, &stride) in plan.dec_strides.iter().enumerate().take(cfg.dec_channels.len()) {
        h = tape.conv2d_transpose(
            h,
            f.get(&format!("dec.{i}.weight")),
            Some(f.get(&format!("dec.{i}.bias"))),
            stride,
            1,
        )?;
        h = tape.relu(h)?;
    }
    let logits = tape.conv2d(h, f.get("dec.out.weight"), Some(f.get("dec.out.bias")), 1, 0)?;
    tape.sigmoid(logits)
}

/// D on `[1, bands, frames]` to a `[1]` probability.
pub fn discriminate<T: Scalar>(tape: &mut Tape<T>, cfg: &ModelConfig, d: &Bound, spec: Var) -> Result<Var> {
    let want = [1, cfg.spec_bands, cfg.spec_frames];
    if tape.shape(spec) != want {
        return Err(Error::shape("discriminate", tape.shape(spec), &want));
    }
    let mut h = spec;
    for i in 0..cfg.disc_channels.len() {
        h = tape.conv2d(
            h,
            d.get(&format!("disc.conv.{i}.weight")),
            Some(d.get(&format!("disc.conv.{i}.bias"))),
            2,
            1,
        )?;
        h = tape.relu(h)?;
    }
    let n = tape.value(h).len();
    let flat = tape.reshape(h, &[n])?;
    let hidden = tape.dense(flat, d.get("disc.fc1.weight"), d.get("disc.fc1.bias"))?;
    let hidden = tape.relu(hidden)?;
    let logit = tape.dense(hidden, d.get("disc.fc2.weight"), d.get("disc.fc2.bias"))?;
    tape.sigmoid(logit)
}
