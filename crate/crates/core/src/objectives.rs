//! GAN losses, the two correspondence regularizers, and the per-player
//! objectives built from them.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Taps, DISC_FEATURES, GEN_FIRST_LAYER};
use crate::tensor::{Graph, Tensor, Var};

/// Weights of the generator regularizer (λ), the discriminator regularizer
/// (β) and the source classifier loss (γ).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 0.1,
            beta: 0.004,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Same weights with both regularizers switched off.
    pub fn unregularized(self) -> Self {
        LossWeights {
            lambda: 0.0,
            beta: 0.0,
            ..self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossVariant {
    /// Log-loss on pre-sigmoid scores, non-saturating generator term.
    #[default]
    Standard,
    LeastSquares,
}

impl LossVariant {
    /// Adam learning rate used with this variant.
    pub fn default_lr(self) -> f64 {
        match self {
            LossVariant::Standard => 0.0002,
            LossVariant::LeastSquares => 0.0005,
        }
    }
}

impl fmt::Display for LossVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossVariant::Standard => "standard",
            LossVariant::LeastSquares => "least_squares",
        })
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(LossVariant::Standard),
            "least_squares" => Ok(LossVariant::LeastSquares),
            other => Err(Error::Config(format!("unknown loss variant {other:?}"))),
        }
    }
}

fn check_scores(g: &Graph, s: Var, op: &'static str) -> Result<()> {
    let shape = g.shape(s);
    if shape.rank() != 2 || shape.dim(1) != 1 {
        return Err(Error::InvalidShape(format!("{op}: scores must be b×1, got {shape}")));
    }
    Ok(())
}

/// mean ½(s − target)²
fn half_mse(g: &mut Graph, s: Var, target: f64) -> Result<Var> {
    let t = g.constant(Tensor::full(g.shape(s).dims(), target)?);
    let diff = g.sub(s, t)?;
    let sq = g.mul(diff, diff)?;
    let m = g.mean(sq);
    Ok(g.scale(m, 0.5))
}

/// Discriminator adversarial loss on one domain's real and fake scores.
pub fn gan_d_loss(g: &mut Graph, variant: LossVariant, real: Var, fake: Var) -> Result<Var> {
    check_scores(g, real, "gan_d_loss")?;
    check_scores(g, fake, "gan_d_loss")?;
    match variant {
        LossVariant::Standard => {
            // −log σ(s) = softplus(−s), −log(1 − σ(s)) = softplus(s)
            let nr = g.neg(real);
            let lr = g.softplus(nr);
            let lf = g.softplus(fake);
            let (mr, mf) = (g.mean(lr), g.mean(lf));
            g.add(mr, mf)
        }
        LossVariant::LeastSquares => {
            let lr = half_mse(g, real, 1.0)?;
            let lf = half_mse(g, fake, 0.0)?;
            g.add(lr, lf)
        }
    }
}

/// Generator adversarial loss on one domain's fake scores.
pub fn gan_g_loss(g: &mut Graph, variant: LossVariant, fake: Var) -> Result<Var> {
    check_scores(g, fake, "gan_g_loss")?;
    match variant {
        LossVariant::Standard => {
            let nf = g.neg(fake);
            let l = g.softplus(nf);
            Ok(g.mean(l))
        }
        LossVariant::LeastSquares => half_mse(g, fake, 1.0),
    }
}

fn paired_distance(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let batch = g.shape(a).dims().first().copied().unwrap_or(1);
    let total = g.squared_l2(a, b)?;
    Ok(g.scale(total, 1.0 / batch as f64))
}

/// Batch mean of ‖G_h0(z|0) − G_h0(z|1)‖².
pub fn reg_g(g: &mut Graph, h0_d0: Var, h0_d1: Var) -> Result<Var> {
    paired_distance(g, h0_d0, h0_d1)
}

/// Batch mean of ‖D_hi(G(z|0)) − D_hi(G(z|1))‖². Positive; the
/// discriminator minimizes `+β` times this value.
pub fn reg_d(g: &mut Graph, hi_d0: Var, hi_d1: Var) -> Result<Var> {
    paired_distance(g, hi_d0, hi_d1)
}

/// Mean softmax cross-entropy.
pub fn cls_loss(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    g.softmax_cross_entropy(logits, labels)
}

/// A composed objective and the unweighted terms it was built from.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub gan: Var,
    pub reg: Option<Var>,
    pub cls: Option<Var>,
}

/// Graph handles feeding the discriminator objective.
pub struct DiscInputs<'a> {
    /// Scores of real samples per domain.
    pub real: [Var; 2],
    /// Scores of generated samples per domain; must come from detached
    /// generator outputs.
    pub fake: [Var; 2],
    /// Taps of the fake forwards, carrying `D_hi`.
    pub fake_taps: Option<[&'a Taps; 2]>,
    /// Classifier logits on labeled source reals, with their labels.
    pub labeled: Option<(Var, &'a [usize])>,
}

fn weighted_sum(g: &mut Graph, base: Var, terms: &[(Option<Var>, f64)]) -> Result<Var> {
    let mut total = base;
    for &(term, w) in terms {
        if let Some(t) = term {
            let s = g.scale(t, w);
            total = g.add(total, s)?;
        }
    }
    Ok(total)
}

/// Discriminator (and classifier) objective:
/// mean over domains of `gan_d_loss` + β·reg_d + γ·cls_loss.
pub fn compose_d_loss(g: &mut Graph, variant: LossVariant, w: &LossWeights, inp: &DiscInputs) -> Result<LossParts> {
    let l0 = gan_d_loss(g, variant, inp.real[0], inp.fake[0])?;
    let l1 = gan_d_loss(g, variant, inp.real[1], inp.fake[1])?;
    let sum = g.add(l0, l1)?;
    let gan = g.scale(sum, 0.5);
    let reg = match inp.fake_taps {
        Some([t0, t1]) => {
            let (a, b) = (t0.require(DISC_FEATURES)?, t1.require(DISC_FEATURES)?);
            Some(reg_d(g, a, b)?)
        }
        None if w.beta > 0.0 => return Err(Error::MissingTaps(DISC_FEATURES)),
        None => None,
    };
    let cls = match inp.labeled {
        Some((logits, labels)) => Some(cls_loss(g, logits, labels)?),
        None => None,
    };
    let total = weighted_sum(g, gan, &[(reg, w.beta), (cls, w.gamma)])?;
    Ok(LossParts { total, gan, reg, cls })
}

/// Generator objective: mean over domains of `gan_g_loss` + λ·reg_g.
pub fn compose_g_loss(
    g: &mut Graph,
    variant: LossVariant,
    w: &LossWeights,
    fake: [Var; 2],
    taps: [&Taps; 2],
) -> Result<LossParts> {
    let l0 = gan_g_loss(g, variant, fake[0])?;
    let l1 = gan_g_loss(g, variant, fake[1])?;
    let sum = g.add(l0, l1)?;
    let gan = g.scale(sum, 0.5);
    let (a, b) = (taps[0].require(GEN_FIRST_LAYER)?, taps[1].require(GEN_FIRST_LAYER)?);
    let reg = Some(reg_g(g, a, b)?);
    let total = weighted_sum(g, gan, &[(reg, w.lambda)])?;
    Ok(LossParts {
        total,
        gan,
        reg,
        cls: None,
    })
}
