//! Score matching on SE(3): training pairs and the reverse-time SDE sampler.

use crate::error::{Error, Result};
use crate::guidance::{guided_field, GuidanceConfig};
use crate::lie::{compose, exp_so3, pose_inverse_increment, Pose};
use crate::net::{ConditionBundle, FieldModel};
use crate::schedule::{gaussian_vec, perturb, Channel, NoiseSchedule, PerturbSample, T_MIN};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Discretization of the reverse dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdeRule {
    /// Euler–Maruyama on the reverse-time SDE of the perturbation process:
    /// `Δx = g² ŝ Δt + g √Δt z` with `g² = dσ²/dt`.
    #[default]
    ReverseSde,
    /// Annealed Langevin with the schedule rate: `Δx = β_x(t) ŝ Δt + √(2 β_x(t) Δt) z`.
    Langevin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSamplerConfig {
    #[serde(default)]
    pub rule: SdeRule,
    pub steps: usize,
    pub schedule: NoiseSchedule,
    pub stochasticity_scale: f64,
    pub guidance: Option<GuidanceConfig>,
    pub cfg_weight: f64,
    /// Extra noise-free step at `t_min`.
    pub final_denoise: bool,
}

impl Default for SdeSamplerConfig {
    fn default() -> Self {
        Self {
            rule: SdeRule::ReverseSde,
            steps: 100,
            schedule: NoiseSchedule::default(),
            stochasticity_scale: 1.0,
            guidance: None,
            cfg_weight: 2.0,
            final_denoise: true,
        }
    }
}

impl SdeSamplerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.schedule.validate();
        if self.steps == 0 {
            errs.push("sampler.steps must be at least 1".into());
        }
        if !(self.stochasticity_scale >= 0.0 && self.stochasticity_scale.is_finite()) {
            errs.push("sampler.stochasticity_scale must be non-negative".into());
        }
        if !self.cfg_weight.is_finite() {
            errs.push("sampler.cfg_weight must be finite".into());
        }
        if let Some(g) = &self.guidance {
            errs.extend(g.validate());
        }
        errs
    }
}

/// Perturbs a ground-truth grasp at `t ~ U(t_min, 1)`; the sample carries the
/// closed-form score targets.
pub fn score_training_pair<R: Rng + ?Sized>(g1: &Pose, sched: &NoiseSchedule, rng: &mut R) -> Result<PerturbSample> {
    let t = rng.random_range(T_MIN..=1.0);
    perturb(g1, t, sched, rng)
}

#[derive(Clone, Copy)]
enum Step {
    Stochastic { dt: f64 },
    /// Noise-free posterior-mean step `x + var_x(t) ŝ`.
    Denoise,
}

/// One reverse step for every trajectory. The drift and noise form the
/// forward-time increment `Δx` from `g_{t−Δt}` to `g_t` with its sign flipped;
/// composing `g_t` with the inverse increment moves each pose up the score.
fn reverse_step<M, R>(
    model: &M,
    cond: &ConditionBundle,
    cfg: &SdeSamplerConfig,
    poses: &mut [Pose],
    rngs: &mut [R],
    t: f64,
    step: Step,
) -> Result<()>
where
    M: FieldModel + ?Sized,
    R: Rng,
{
    let field = guided_field(model, poses, t, cond, cfg.guidance.as_ref(), cfg.cfg_weight)?;
    let s = &cfg.schedule;
    // (drift gain, noise std) per channel
    let coeffs = |ch: Channel| match (step, cfg.rule) {
        (Step::Denoise, _) => (s.kernel_var(t, ch), 0.0),
        (Step::Stochastic { dt }, SdeRule::ReverseSde) => {
            let g2 = s.diffusion_sq(ch);
            (g2 * dt, cfg.stochasticity_scale * (g2 * dt).sqrt())
        }
        (Step::Stochastic { dt }, SdeRule::Langevin) => {
            let b = s.beta_x(t, ch);
            (b * dt, cfg.stochasticity_scale * (2.0 * b * dt).sqrt())
        }
    };
    let (kp, np) = coeffs(Channel::P);
    let (kq, nq) = coeffs(Channel::Q);
    for ((g, (sp, sq)), rng) in poses.iter_mut().zip(field).zip(rngs.iter_mut()) {
        let mut d_p = -(sp * kp);
        let mut d_q = -(sq * kq);
        if np > 0.0 || nq > 0.0 {
            d_p = d_p - gaussian_vec(rng) * np;
            d_q = d_q - gaussian_vec(rng) * nq;
        }
        let next = compose(*g, pose_inverse_increment(Pose::new(d_p, exp_so3(d_q))));
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("reverse SDE produced a non-finite pose at t={t}")));
        }
        *g = next;
    }
    Ok(())
}

/// Runs one trajectory per rng in lockstep, sharing batched model queries.
pub fn sample_reverse_sde_batch<M, R>(model: &M, cond: &ConditionBundle, cfg: &SdeSamplerConfig, rngs: &mut [R]) -> Result<Vec<Pose>>
where
    M: FieldModel + ?Sized,
    R: Rng,
{
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    let mut poses = rngs.iter_mut().map(|r| cfg.schedule.sample_prior(r)).collect::<Result<Vec<_>>>()?;
    if poses.is_empty() {
        return Ok(poses);
    }
    let dt = (1.0 - T_MIN) / cfg.steps as f64;
    for k in 0..cfg.steps {
        let t = 1.0 - k as f64 * dt;
        reverse_step(model, cond, cfg, &mut poses, rngs, t, Step::Stochastic { dt })?;
    }
    if cfg.final_denoise {
        reverse_step(model, cond, cfg, &mut poses, rngs, T_MIN, Step::Denoise)?;
    }
    Ok(poses)
}

pub fn sample_reverse_sde<M, R>(model: &M, cond: &ConditionBundle, cfg: &SdeSamplerConfig, rng: &mut R) -> Result<Pose>
where
    M: FieldModel + ?Sized,
    R: Rng,
{
    Ok(sample_reverse_sde_batch(model, cond, cfg, std::slice::from_mut(rng))?[0])
}
