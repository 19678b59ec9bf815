//! White-box l∞ attacks: FGSM and PGD.
//!
//! Both use the sign of the input gradient of the batch-mean cross-entropy.
//! Row-separable losses make the mean's per-row sign pattern identical to the
//! per-example gradient's, so attacking a batch equals attacking each example.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::MaskedNetwork;
use crate::rng::{streams, SeededRng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttackKind {
    None,
    Fgsm,
    Pgd,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AttackKind::None),
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            other => Err(Error::InvalidArgument(format!("unknown attack '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// l∞ radius.
    pub eps: f64,
    /// PGD step size.
    pub alpha: f64,
    /// PGD iterations.
    pub steps: usize,
    pub clip_min: f64,
    pub clip_max: f64,
    /// Seed for a uniform random start inside the ball (PGD only). `None`
    /// starts from the natural example.
    pub random_start: Option<u64>,
}

impl AttackConfig {
    pub fn none() -> Self {
        AttackConfig {
            kind: AttackKind::None,
            eps: 0.0,
            alpha: 0.0,
            steps: 0,
            clip_min: 0.0,
            clip_max: 1.0,
            random_start: None,
        }
    }

    pub fn fgsm(eps: f64) -> Self {
        AttackConfig {
            kind: AttackKind::Fgsm,
            eps,
            ..Self::none()
        }
    }

    pub fn pgd(eps: f64, alpha: f64, steps: usize) -> Self {
        AttackConfig {
            kind: AttackKind::Pgd,
            eps,
            alpha,
            steps,
            ..Self::none()
        }
    }

    /// ε = 0.3 FGSM.
    pub fn default_fgsm() -> Self {
        Self::fgsm(0.3)
    }

    /// ε = 0.3, α = 0.05, 10 steps.
    pub fn default_pgd() -> Self {
        Self::pgd(0.3, 0.05, 10)
    }

    /// Default settings for a given kind.
    pub fn default_for(kind: AttackKind) -> Self {
        match kind {
            AttackKind::None => Self::none(),
            AttackKind::Fgsm => Self::default_fgsm(),
            AttackKind::Pgd => Self::default_pgd(),
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == AttackKind::None
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.clip_min <= self.clip_max) {
            return bad(format!("clip range [{}, {}] is empty", self.clip_min, self.clip_max));
        }
        match self.kind {
            AttackKind::None => Ok(()),
            _ if !(self.eps >= 0.0 && self.eps.is_finite()) => bad(format!("eps must be >= 0, got {}", self.eps)),
            AttackKind::Fgsm => Ok(()),
            AttackKind::Pgd if !(self.alpha > 0.0 && self.alpha.is_finite()) => {
                bad(format!("pgd alpha must be > 0, got {}", self.alpha))
            }
            AttackKind::Pgd if self.steps == 0 => bad("pgd needs at least one step".into()),
            AttackKind::Pgd => Ok(()),
        }
    }
}

/// `sign` with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adversarial counterpart of `x` under `cfg`; a copy of `x` for `none`.
pub fn perturb(net: &MaskedNetwork, x: &Tensor, y: &Tensor, cfg: &AttackConfig) -> Result<Tensor> {
    match cfg.kind {
        AttackKind::None => Ok(x.clone()),
        AttackKind::Fgsm => fgsm(net, x, y, cfg),
        AttackKind::Pgd => pgd(net, x, y, cfg),
    }
}

/// `clip(x + ε·sign(∇ₓJ), clip_min, clip_max)`.
pub fn fgsm(net: &MaskedNetwork, x: &Tensor, y: &Tensor, cfg: &AttackConfig) -> Result<Tensor> {
    cfg.validate()?;
    let grad = net.input_gradient(x, y)?;
    let mut adv = x.clone();
    for (a, &g) in adv.data_mut().iter_mut().zip(grad.data()) {
        *a = (*a + cfg.eps * sign(g)).clamp(cfg.clip_min, cfg.clip_max);
    }
    Ok(adv)
}

/// Iterated sign steps of size `α`, each projected onto the ε-ball around
/// the original `x` and clipped to the valid range.
pub fn pgd(net: &MaskedNetwork, x: &Tensor, y: &Tensor, cfg: &AttackConfig) -> Result<Tensor> {
    cfg.validate()?;
    let project = |v: f64, origin: f64| {
        v.clamp(origin - cfg.eps, origin + cfg.eps)
            .clamp(cfg.clip_min, cfg.clip_max)
    };
    let mut adv = x.clone();
    if let Some(seed) = cfg.random_start {
        let mut rng = SeededRng::with_stream(seed, streams::ATTACK);
        for (a, &o) in adv.data_mut().iter_mut().zip(x.data()) {
            *a = project(o + rng.uniform_in(-cfg.eps, cfg.eps), o);
        }
    }
    for _ in 0..cfg.steps {
        let grad = net.input_gradient(&adv, y)?;
        for ((a, &g), &o) in adv.data_mut().iter_mut().zip(grad.data()).zip(x.data()) {
            *a = project(*a + cfg.alpha * sign(g), o);
        }
    }
    Ok(adv)
}
