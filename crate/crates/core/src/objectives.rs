//! Reconstruction, pairwise KL and adversarial losses.
//!
//! Discriminator and adversarial terms use the negated binary cross-entropy
//! so every objective is minimized: D minimizes
//! `-ln D(real) - ln(1 - D(fake))`, the translator minimizes `-ln D(fake)`
//! (or `ln(1 - D(fake))` in the minimax variant).

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probabilities are clamped to at least this before any logarithm.
pub const PROB_FLOOR: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub beta: f64,
    pub lambda: f64,
    /// Whether the pair shares an utterance; the KL weight is 0 otherwise.
    pub beta_active: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta: 0.5,
            lambda: 0.5,
            beta_active: true,
        }
    }
}

impl LossWeights {
    pub fn effective_beta(&self) -> f64 {
        if self.beta_active {
            self.beta
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AdvVariant {
    #[default]
    NonSaturating,
    Minimax,
}

impl std::str::FromStr for AdvVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "nonsaturating" => Ok(Self::NonSaturating),
            "minimax" => Ok(Self::Minimax),
            _ => Err(format!("unknown adversarial variant {s}")),
        }
    }
}

impl std::fmt::Display for AdvVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::NonSaturating => "nonsaturating",
            Self::Minimax => "minimax",
        })
    }
}

/// Mean squared error.
pub fn loss_rec<T: Scalar>(tape: &mut Tape<T>, pred: Var, target: Var) -> Result<Var> {
    if tape.shape(pred) != tape.shape(target) {
        return Err(Error::shape("loss_rec", tape.shape(pred), tape.shape(target)));
    }
    let d = tape.sub(pred, target)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

/// KL divergence of `N(mu1, exp(logvar1))` from `N(mu2, exp(logvar2))`
/// summed over the `M` entries of each `[M]` input:
/// `0.5 * sum(exp(l1 - l2) - (l1 - l2) - 1 + (mu1 - mu2)^2 * exp(-l2))`.
pub fn loss_kl<T: Scalar>(tape: &mut Tape<T>, mu1: Var, logvar1: Var, mu2: Var, logvar2: Var) -> Result<Var> {
    let s = tape.shape(mu1).to_vec();
    for v in [logvar1, mu2, logvar2] {
        if tape.shape(v) != s.as_slice() || s.len() != 1 {
            return Err(Error::shape("loss_kl", &s, tape.shape(v)));
        }
    }
    let m = s[0] as f64;
    let dl = tape.sub(logvar1, logvar2)?;
    let ratio = tape.exp(dl)?;
    let spread = tape.sub(ratio, dl)?;
    let dm = tape.sub(mu1, mu2)?;
    let dm2 = tape.square(dm)?;
    let neg = tape.scale(logvar2, -T::one())?;
    let inv = tape.exp(neg)?;
    let shift = tape.mul(dm2, inv)?;
    let terms = tape.add(spread, shift)?;
    let total = tape.sum(terms)?;
    let kl = tape.affine(total, T::of(0.5), T::of(-0.5 * m))?;
    // exact zero for identical inputs; rounding can only undershoot by ulps
    tape.relu(kl)
}

fn check_probs<T: Scalar>(tape: &Tape<T>, op: &str, v: Var) -> Result<()> {
    if let Some(p) = tape.value(v).data().iter().find(|p| !(**p >= T::zero() && **p <= T::one())) {
        return Err(Error::invalid(format!("{op}: probability {p} outside [0, 1]")));
    }
    Ok(())
}

fn neg_log<T: Scalar>(tape: &mut Tape<T>, p: Var) -> Result<Var> {
    let l = tape.ln_clamped(p, T::of(PROB_FLOOR))?;
    tape.scale(l, -T::one())
}

fn one_minus<T: Scalar>(tape: &mut Tape<T>, p: Var) -> Result<Var> {
    tape.affine(p, -T::one(), T::one())
}

/// Batch mean of `-ln d_real - ln(1 - d_fake)`.
pub fn loss_disc<T: Scalar>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    check_probs(tape, "loss_disc", d_real)?;
    check_probs(tape, "loss_disc", d_fake)?;
    if tape.shape(d_real) != tape.shape(d_fake) {
        return Err(Error::shape("loss_disc", tape.shape(d_real), tape.shape(d_fake)));
    }
    let real = neg_log(tape, d_real)?;
    let q = one_minus(tape, d_fake)?;
    let fake = neg_log(tape, q)?;
    let both = tape.add(real, fake)?;
    tape.mean(both)
}

/// Batch mean of the translator's adversarial term.
pub fn loss_adv<T: Scalar>(tape: &mut Tape<T>, d_fake: Var, variant: AdvVariant) -> Result<Var> {
    check_probs(tape, "loss_adv", d_fake)?;
    let per = match variant {
        AdvVariant::NonSaturating => neg_log(tape, d_fake)?,
        AdvVariant::Minimax => {
            let q = one_minus(tape, d_fake)?;
            tape.ln_clamped(q, T::of(PROB_FLOOR))?
        }
    };
    tape.mean(per)
}

/// `rec + beta_eff * kl + lambda * adv`.
pub fn total_translator_loss(rec: f64, kl: f64, adv: f64, w: &LossWeights) -> f64 {
    rec + w.effective_beta() * kl + w.lambda * adv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn v(tape: &mut Tape<f64>, data: &[f64]) -> Var {
        tape.param(Tensor::new(vec![data.len()], data.to_vec()).unwrap())
    }

    fn kl(a: (&[f64], &[f64]), b: (&[f64], &[f64])) -> f64 {
        let mut t = Tape::new();
        let (m1, l1, m2, l2) = (v(&mut t, a.0), v(&mut t, a.1), v(&mut t, b.0), v(&mut t, b.1));
        let k = loss_kl(&mut t, m1, l1, m2, l2).unwrap();
        t.value(k).item().unwrap()
    }

    fn scalar(f: impl Fn(&mut Tape<f64>, Var, Var) -> Result<Var>, a: f64, b: f64) -> f64 {
        let mut t = Tape::new();
        let (x, y) = (v(&mut t, &[a]), v(&mut t, &[b]));
        let out = f(&mut t, x, y).unwrap();
        t.value(out).item().unwrap()
    }

    #[test]
    fn rec_examples() {
        let mut t = Tape::new();
        let p = v(&mut t, &[0.5, 0.5]);
        let q = v(&mut t, &[0.0, 1.0]);
        let l = loss_rec(&mut t, p, q).unwrap();
        assert_eq!(t.value(l).item().unwrap(), 0.25);
        let same = loss_rec(&mut t, p, p).unwrap();
        assert_eq!(t.value(same).item().unwrap(), 0.0);
        let ones = v(&mut t, &[1.0; 4]);
        let zeros = v(&mut t, &[0.0; 4]);
        let l = loss_rec(&mut t, ones, zeros).unwrap();
        assert_eq!(t.value(l).item().unwrap(), 1.0);
        assert!(loss_rec(&mut t, ones, p).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl((&[0.3, -1.0], &[0.2, 0.7]), (&[0.3, -1.0], &[0.2, 0.7])), 0.0);
        assert!((kl((&[1.0], &[0.0]), (&[0.0], &[0.0])) - 0.5).abs() < 1e-12);
        // sigma1 = 2 -> logvar1 = ln 4
        let want = 2.0 - 0.5 + 0.5f64.ln();
        assert!((kl((&[0.0], &[4f64.ln()]), (&[0.0], &[0.0])) - want).abs() < 1e-12);
        assert!((want - 0.80685).abs() < 1e-5);
        let p = (&[0.2, 0.1][..], &[0.3, -0.4][..]);
        let q = (&[-0.5, 0.6][..], &[1.0, 0.2][..]);
        assert!((kl(p, q) - kl(q, p)).abs() > 1e-3);
        let mut t = Tape::new();
        let (a, b) = (v(&mut t, &[0.0]), v(&mut t, &[0.0, 1.0]));
        assert!(loss_kl(&mut t, a, a, a, b).is_err());
    }

    #[test]
    fn disc_and_adv_spot_values() {
        let d = |r, f| scalar(loss_disc, r, f);
        assert!(d(1.0 - 1e-7, 1e-7) < 1e-6);
        assert!((d(0.5, 0.5) - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!(d(0.6, 0.3) < d(0.5, 0.3));

        let adv = |p, var| scalar(move |t, x, _| loss_adv(t, x, var), p, 0.0);
        assert!((adv(0.5, AdvVariant::NonSaturating) - 2f64.ln()).abs() < 1e-12);
        assert!(adv(1.0 - 1e-9, AdvVariant::NonSaturating) < 1e-6);
        for var in [AdvVariant::NonSaturating, AdvVariant::Minimax] {
            let grid: Vec<f64> = (1..20).map(|i| adv(i as f64 / 20.0, var)).collect();
            assert!(grid.windows(2).all(|w| w[1] < w[0]), "{var} not decreasing");
        }
    }

    #[test]
    fn out_of_range_probability_is_an_error() {
        let mut t = Tape::new();
        let (a, b) = (v(&mut t, &[1.5]), v(&mut t, &[0.3]));
        assert!(loss_disc(&mut t, a, b).is_err());
        assert!(loss_adv(&mut t, a, AdvVariant::Minimax).is_err());
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert_eq!((w.beta, w.lambda), (0.5, 0.5));
        assert_eq!(total_translator_loss(1.0, 2.0, 3.0, &w), 3.5);
        let off = LossWeights {
            beta_active: false,
            ..w
        };
        assert_eq!(
            total_translator_loss(1.0, 2.0, 3.0, &off),
            total_translator_loss(1.0, 99.0, 3.0, &off)
        );
    }

    proptest::proptest! {
        #[test]
        fn kl_is_non_negative(
            a in proptest::collection::vec(-2.0f64..2.0, 4),
            b in proptest::collection::vec(-2.0f64..2.0, 4),
        ) {
            let k = kl((&a[..2], &a[2..]), (&b[..2], &b[2..]));
            proptest::prop_assert!(k >= 0.0);
            proptest::prop_assert_eq!(kl((&a[..2], &a[2..]), (&a[..2], &a[2..])), 0.0);
        }
    }
}
