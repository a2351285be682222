//! Layer hyperparameters of the three networks and their shape arithmetic.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::{join, KvMap};

/// `T x H x W` triple written as `2x2x2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims3(pub [usize; 3]);

impl fmt::Display for Dims3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.0[0], self.0[1], self.0[2])
    }
}

impl FromStr for Dims3 {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split('x').collect();
        if parts.len() != 3 {
            return Err(format!("expected AxBxC, got {s}"));
        }
        let mut d = [0; 3];
        for (slot, p) in d.iter_mut().zip(parts) {
            *slot = p.trim().parse().map_err(|e| format!("{s}: {e}"))?;
            if *slot == 0 {
                return Err(format!("{s}: zero extent"));
            }
        }
        Ok(Dims3(d))
    }
}

/// Input/output sizes plus per-layer widths, strides and pools.
///
/// Encoder layers are `3x3x3` convolutions with padding 1; a pool of `1x1x1`
/// means none. The final encoder width must equal `2 * latent_mu + latent_s`.
/// Decoder layers are transposed convolutions: stride 1 (`3x3`, padding 1)
/// first, then as many stride 2 (`4x4`, padding 1) as the upsampling needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub spec_bands: usize,
    pub spec_frames: usize,
    pub enc_channels: Vec<usize>,
    pub enc_stride: Vec<Dims3>,
    pub enc_pool: Vec<Dims3>,
    pub latent_mu: usize,
    pub latent_s: usize,
    pub dec_channels: Vec<usize>,
    pub att_channels: Vec<usize>,
    pub disc_channels: Vec<usize>,
    pub disc_hidden: usize,
}

/// Shapes derived from a validated [`ModelConfig`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapePlan {
    /// `[C, T, H, W]` after each encoder layer (post pool).
    pub encoder: Vec<[usize; 4]>,
    /// Spatial extent of the latent maps.
    pub bottleneck: [usize; 2],
    /// Stride of each decoder layer.
    pub dec_strides: Vec<usize>,
    /// Flattened discriminator features entering the first dense layer.
    pub disc_features: usize,
}

const ONE: Dims3 = Dims3([1, 1, 1]);

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 8 frames of 32x32 to a 32x32 spectrogram.
    pub fn desk() -> Self {
        Self {
            frames: 8,
            height: 32,
            width: 32,
            spec_bands: 32,
            spec_frames: 32,
            enc_channels: vec![16, 32, 64, 128, 128],
            enc_stride: vec![ONE; 5],
            enc_pool: vec![Dims3([2, 2, 2]), Dims3([2, 2, 2]), Dims3([2, 2, 2]), ONE, ONE],
            latent_mu: 14,
            latent_s: 100,
            dec_channels: vec![64, 32, 16, 8],
            att_channels: vec![4, 8, 8, 8],
            disc_channels: vec![8, 16, 16],
            disc_hidden: 32,
        }
    }

    /// Narrow desk variant used by the training experiments on one CPU core.
    pub fn desk_small() -> Self {
        Self {
            enc_channels: vec![4, 8, 16, 32, 128],
            dec_channels: vec![32, 16, 8, 8],
            att_channels: vec![4, 4, 4, 4],
            disc_channels: vec![4, 8, 8],
            disc_hidden: 16,
            ..Self::desk()
        }
    }

    /// 26 frames of 128x128 to a 64x64 spectrogram.
    pub fn paper() -> Self {
        Self {
            frames: 26,
            height: 128,
            width: 128,
            spec_bands: 64,
            spec_frames: 64,
            enc_channels: vec![16, 32, 64, 128, 128],
            enc_stride: vec![Dims3([1, 2, 2]), ONE, ONE, ONE, ONE],
            enc_pool: vec![Dims3([2, 2, 2]), Dims3([1, 2, 2]), Dims3([1, 2, 2]), ONE, ONE],
            latent_mu: 14,
            latent_s: 100,
            dec_channels: vec![64, 32, 16, 8],
            att_channels: vec![8, 16, 16, 16],
            disc_channels: vec![16, 32, 32],
            disc_hidden: 64,
        }
    }

    pub fn latent_channels(&self) -> usize {
        2 * self.latent_mu + self.latent_s
    }

    pub fn plan(&self) -> Result<ShapePlan> {
        let bad = |m: String| Error::invalid(format!("model config: {m}"));
        if self.frames < 2 {
            return Err(bad(format!("need at least 2 frames, got {}", self.frames)));
        }
        let n = self.enc_channels.len();
        if n == 0 || self.enc_stride.len() != n || self.enc_pool.len() != n {
            return Err(bad("encoder channel, stride and pool lists must have equal nonzero length".into()));
        }
        if self.enc_channels[n - 1] != self.latent_channels() {
            return Err(bad(format!(
                "final encoder width {} must equal 2*{} + {}",
                self.enc_channels[n - 1], self.latent_mu, self.latent_s
            )));
        }
        if [self.latent_mu, self.latent_s].contains(&0) {
            return Err(bad("latent slices must be nonempty".into()));
        }
        let mut shape = [1, self.frames, self.height, self.width];
        let mut encoder = Vec::with_capacity(n);
        for i in 0..n {
            let s = self.enc_stride[i].0;
            for d in 0..3 {
                // kernel 3, padding 1
                shape[d + 1] = (shape[d + 1] - 1) / s[d] + 1;
            }
            shape[0] = self.enc_channels[i];
            let p = self.enc_pool[i].0;
            for d in 0..3 {
                if shape[d + 1] % p[d] != 0 {
                    return Err(bad(format!(
                        "encoder layer {i}: extent {} of {shape:?} not divisible by pool {}",
                        shape[d + 1],
                        self.enc_pool[i]
                    )));
                }
                shape[d + 1] /= p[d];
            }
            encoder.push(shape);
        }
        let bottleneck = [shape[2], shape[3]];
        let up_h = self.spec_bands / bottleneck[0];
        let up_w = self.spec_frames / bottleneck[1];
        if up_h * bottleneck[0] != self.spec_bands
            || up_w * bottleneck[1] != self.spec_frames
            || up_h != up_w
            || !up_h.is_power_of_two()
        {
            return Err(bad(format!(
                "bottleneck {bottleneck:?} cannot be upsampled by powers of two to {}x{}",
                self.spec_bands, self.spec_frames
            )));
        }
        let ups = up_h.trailing_zeros() as usize;
        let layers = self.dec_channels.len();
        if ups > layers || layers == 0 {
            return Err(bad(format!("{layers} decoder layers cannot upsample by {up_h}")));
        }
        let dec_strides = (0..layers).map(|i| if i < layers - ups { 1 } else { 2 }).collect();

        let down = 1 << self.att_channels.len();
        if self.att_channels.is_empty() || self.height % down != 0 || self.width % down != 0 {
            return Err(bad(format!(
                "attention needs {}x{} divisible by {down}",
                self.height, self.width
            )));
        }
        if self.disc_channels.is_empty() || self.disc_hidden == 0 {
            return Err(bad("discriminator needs conv and hidden widths".into()));
        }
        let (mut dh, mut dw) = (self.spec_bands, self.spec_frames);
        for _ in &self.disc_channels {
            dh = (dh - 1) / 2 + 1;
            dw = (dw - 1) / 2 + 1;
        }
        Ok(ShapePlan {
            encoder,
            bottleneck,
            dec_strides,
            disc_features: self.disc_channels[self.disc_channels.len() - 1] * dh * dw,
        })
    }

    pub fn to_kv(&self) -> String {
        let dims = |v: &[Dims3]| join(v);
        format!(
            "frames={}\nheight={}\nwidth={}\nspec_bands={}\nspec_frames={}\n\
             enc_channels={}\nenc_stride={}\nenc_pool={}\nlatent_mu={}\nlatent_s={}\n\
             dec_channels={}\natt_channels={}\ndisc_channels={}\ndisc_hidden={}\n",
            self.frames,
            self.height,
            self.width,
            self.spec_bands,
            self.spec_frames,
            join(&self.enc_channels),
            dims(&self.enc_stride),
            dims(&self.enc_pool),
            self.latent_mu,
            self.latent_s,
            join(&self.dec_channels),
            join(&self.att_channels),
            join(&self.disc_channels),
            self.disc_hidden
        )
    }

    /// Reads the keys [`ModelConfig::to_kv`] writes, defaulting each from
    /// `base`, and removes them from `kv`.
    pub fn take_from(kv: &mut KvMap, base: &Self) -> Result<Self> {
        let cfg = Self {
            frames: kv.take("frames", base.frames)?,
            height: kv.take("height", base.height)?,
            width: kv.take("width", base.width)?,
            spec_bands: kv.take("spec_bands", base.spec_bands)?,
            spec_frames: kv.take("spec_frames", base.spec_frames)?,
            enc_channels: kv.take_list("enc_channels", base.enc_channels.clone())?,
            enc_stride: kv.take_list("enc_stride", base.enc_stride.clone())?,
            enc_pool: kv.take_list("enc_pool", base.enc_pool.clone())?,
            latent_mu: kv.take("latent_mu", base.latent_mu)?,
            latent_s: kv.take("latent_s", base.latent_s)?,
            dec_channels: kv.take_list("dec_channels", base.dec_channels.clone())?,
            att_channels: kv.take_list("att_channels", base.att_channels.clone())?,
            disc_channels: kv.take_list("disc_channels", base.disc_channels.clone())?,
            disc_hidden: kv.take("disc_hidden", base.disc_hidden)?,
        };
        cfg.plan()?;
        Ok(cfg)
    }
}
