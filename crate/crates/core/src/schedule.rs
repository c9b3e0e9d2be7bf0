//! Variance-exploding noise schedule on `R³ × SO(3)` and forward perturbation.

use crate::error::{Error, Result};
use crate::igso3::{gauss_score, igso3_sample, igso3_score, quantize_eps};
use crate::lie::{compose, Pose, UnitQuat, Vec3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Lower bound on training times, bounding the `1/σ_t²` target magnitude.
pub const T_MIN: f64 = 1e-3;

/// Relaxation rate per unit time `β_x(t)/σ_x²(t)` of the default sampler rates.
pub const DEFAULT_RELAXATION: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    P,
    Q,
}

/// `σ_t² = α_p t`, `ε_t = α_q t / 2`, `β_x(t) = ½ a_x² t^{α_t}`.
///
/// `alpha_p` / `alpha_q` set the perturbation kernels. `rate_p` / `rate_q`
/// are the `a_x` of the sampler rate `β_x`; they are kept separate from the
/// kernel concentrations because `α_p` is an m² quantity while `β_p` must
/// scale like `σ²` per unit time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSchedule {
    pub alpha_p: f64,
    pub alpha_q: f64,
    pub alpha_t: f64,
    pub rate_p: f64,
    pub rate_q: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::new(0.09, 4.0, 1.0)
    }
}

impl NoiseSchedule {
    /// Kernel concentrations with sampler rates giving [`DEFAULT_RELAXATION`].
    pub fn new(alpha_p: f64, alpha_q: f64, alpha_t: f64) -> Self {
        Self::with_relaxation(alpha_p, alpha_q, alpha_t, DEFAULT_RELAXATION)
    }

    /// With `α_t = 1`, `β_x/σ_x² = a_x²/(2α_x)`, so `a_x = √(2 α_x κ)`.
    /// The rotational variance per axis is `2ε_t = α_q t`.
    pub fn with_relaxation(alpha_p: f64, alpha_q: f64, alpha_t: f64, kappa: f64) -> Self {
        Self {
            alpha_p,
            alpha_q,
            alpha_t,
            rate_p: (2.0 * alpha_p * kappa).sqrt(),
            rate_q: (2.0 * alpha_q * kappa).sqrt(),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("alpha_p", self.alpha_p),
            ("alpha_q", self.alpha_q),
            ("alpha_t", self.alpha_t),
            ("rate_p", self.rate_p),
            ("rate_q", self.rate_q),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("schedule.{name} must be positive and finite (got {v})"));
            }
        }
        errs
    }

    pub fn sigma_t(&self, t: f64) -> f64 {
        (self.alpha_p * t).sqrt()
    }

    pub fn eps_t(&self, t: f64) -> f64 {
        0.5 * self.alpha_q * t
    }

    pub fn beta_x(&self, t: f64, channel: Channel) -> f64 {
        let a = match channel {
            Channel::P => self.rate_p,
            Channel::Q => self.rate_q,
        };
        0.5 * a * a * t.powf(self.alpha_t)
    }

    /// `g_x² = dσ_x²/dt`: squared diffusion coefficient of the forward process
    /// that produces the perturbation kernels (per-axis variance rate).
    pub fn diffusion_sq(&self, channel: Channel) -> f64 {
        match channel {
            Channel::P => self.alpha_p,
            Channel::Q => self.alpha_q,
        }
    }

    /// Per-axis kernel variance: `σ_t²` for translation, `2ε_t` for rotation.
    pub fn kernel_var(&self, t: f64, channel: Channel) -> f64 {
        match channel {
            Channel::P => self.alpha_p * t,
            Channel::Q => 2.0 * self.eps_t(t),
        }
    }

    /// Prior at `t = 1`: `p ~ N(0, α_p I)`, `q ~ IGSO(3)(α_q/2)`, about the identity.
    pub fn sample_prior<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Pose> {
        let p = gaussian_vec(rng) * self.sigma_t(1.0);
        let q = igso3_sample(self.eps_t(1.0), rng)?;
        Ok(Pose::new(p, q))
    }
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    Vec3::new(StandardNormal.sample(rng), StandardNormal.sample(rng), StandardNormal.sample(rng))
}

/// A perturbed pose with its closed-form score targets.
#[derive(Debug, Clone, Copy)]
pub struct PerturbSample {
    pub g_t: Pose,
    pub t: f64,
    pub target_score_p: Vec3,
    pub target_score_q: Vec3,
    pub dp: Vec3,
    pub dq: UnitQuat,
    /// Concentration actually used for the rotational draw (quantized `ε_t`).
    pub eps: f64,
}

/// Draws `Δp ~ N(0, σ_t² I)`, `Δq ~ IGSO(3)(ε_t)` and composes them onto `g0`
/// in the body frame. `ε_t` is snapped to the shared table bins.
pub fn perturb<R: Rng + ?Sized>(g0: &Pose, t: f64, sched: &NoiseSchedule, rng: &mut R) -> Result<PerturbSample> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::InvalidArgument(format!("perturbation time must lie in (0, 1], got {t}")));
    }
    let sigma = sched.sigma_t(t);
    let eps = quantize_eps(sched.eps_t(t));
    let dp = gaussian_vec(rng) * sigma;
    let dq = igso3_sample(eps, rng)?;
    let g_t = compose(*g0, Pose::new(dp, dq));
    Ok(PerturbSample {
        g_t,
        t,
        target_score_p: gauss_score(dp, sigma)?,
        target_score_q: igso3_score(dq, eps)?,
        dp,
        dq,
        eps,
    })
}
