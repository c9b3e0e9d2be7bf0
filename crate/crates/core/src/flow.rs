//! Flow matching on `R³ × SO(3)`: decoupled geodesic targets, the
//! interpolation path, and Euler / RK4 integrators.

use crate::error::{Error, Result};
use crate::guidance::{guided_field, GuidanceConfig};
use crate::lie::{exp_so3, log_so3, right_jacobian_inverse, Pose, Vec3};
use crate::net::{ConditionBundle, FieldModel};
use crate::schedule::NoiseSchedule;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowPair {
    pub g0: Pose,
    pub g1: Pose,
    pub t: f64,
    pub g_t: Pose,
    /// `R_{q0}ᵀ (p1 − p0)`.
    pub dp: Vec3,
    /// `Log(q0⁻¹ q1)`.
    pub dphi: Vec3,
}

impl FlowPair {
    /// Regression targets for the network at `g_t`. The translational
    /// velocity is expressed in the frame of `q_t`, the frame the sampler
    /// uses to map `u_p` back to the world.
    pub fn velocity_target(&self) -> (Vec3, Vec3) {
        (self.g_t.q.inverse().rotate(self.g1.p - self.g0.p), self.dphi)
    }
}

pub fn flow_targets(g0: &Pose, g1: &Pose) -> (Vec3, Vec3) {
    let dp = g0.q.inverse().rotate(g1.p - g0.p);
    let dphi = log_so3(g0.q.inverse() * g1.q);
    (dp, dphi)
}

/// `p_t = p0 + t R_{q0} dp`, `q_t = q0 Exp(t dphi)`.
pub fn path_point(g0: &Pose, dp: Vec3, dphi: Vec3, t: f64) -> Pose {
    Pose::new(g0.p + g0.q.rotate(dp) * t, g0.q * exp_so3(dphi * t))
}

/// Prior draw from the `t = 1` kernels, `t ~ U(0, 1)`, and the path point.
pub fn flow_training_pair<R: Rng + ?Sized>(g1: &Pose, sched: &NoiseSchedule, rng: &mut R) -> Result<FlowPair> {
    let g0 = sched.sample_prior(rng)?;
    let t: f64 = rng.random_range(0.0..1.0);
    let (dp, dphi) = flow_targets(&g0, g1);
    Ok(FlowPair { g0, g1: *g1, t, g_t: path_point(&g0, dp, dphi, t), dp, dphi })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Euler,
    Rk4,
}

impl std::str::FromStr for Solver {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Solver::Euler),
            "rk4" => Ok(Solver::Rk4),
            other => Err(Error::Parse(format!("unknown solver '{other}', expected euler or rk4"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeSamplerConfig {
    pub steps: usize,
    pub solver: Solver,
    /// Prior kernels (`t = 1` of the noise schedule).
    pub schedule: NoiseSchedule,
    pub guidance: Option<GuidanceConfig>,
    pub cfg_weight: f64,
}

impl Default for OdeSamplerConfig {
    fn default() -> Self {
        Self { steps: 40, solver: Solver::Euler, schedule: NoiseSchedule::default(), guidance: None, cfg_weight: 2.0 }
    }
}

impl OdeSamplerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.schedule.validate();
        if self.steps == 0 {
            errs.push("sampler.steps must be at least 1".into());
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

fn check_finite(poses: &[Pose], t: f64) -> Result<()> {
    if poses.iter().all(Pose::is_finite) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("flow integration produced a non-finite pose at t={t}")))
    }
}

fn euler<M: FieldModel + ?Sized>(model: &M, cond: &ConditionBundle, cfg: &OdeSamplerConfig, poses: &mut [Pose]) -> Result<()> {
    let dt = 1.0 / cfg.steps as f64;
    for k in 0..cfg.steps {
        let t = k as f64 * dt;
        let field = guided_field(model, poses, t, cond, cfg.guidance.as_ref(), cfg.cfg_weight)?;
        for (g, (up, uq)) in poses.iter_mut().zip(field) {
            *g = Pose::new(g.p + g.q.rotate(up) * dt, g.q * exp_so3(uq * dt));
        }
        check_finite(poses, t)?;
    }
    Ok(())
}

/// Runge–Kutta–Munthe-Kaas: stages live in the tangent space at the step's
/// base rotation, `θ' = J_r⁻¹(θ) u_q`, with `p` integrated in world
/// coordinates; the combined increment is retracted with `q Exp(θ)`.
fn rk4<M: FieldModel + ?Sized>(model: &M, cond: &ConditionBundle, cfg: &OdeSamplerConfig, poses: &mut [Pose]) -> Result<()> {
    let h = 1.0 / cfg.steps as f64;
    let n = poses.len();
    let eval = |base: &[Pose], dp: &[Vec3], dth: &[Vec3], t: f64| -> Result<Vec<(Vec3, Vec3)>> {
        let stage: Vec<Pose> = (0..n).map(|i| Pose::new(base[i].p + dp[i], base[i].q * exp_so3(dth[i]))).collect();
        let field = guided_field(model, &stage, t, cond, cfg.guidance.as_ref(), cfg.cfg_weight)?;
        Ok(field
            .into_iter()
            .zip(&stage)
            .zip(dth)
            .map(|(((up, uq), g), th)| (g.q.rotate(up), right_jacobian_inverse(*th).mul_vec(uq)))
            .collect())
    };
    let zeros = vec![Vec3::ZERO; n];
    for k in 0..cfg.steps {
        let t = k as f64 * h;
        let k1 = eval(poses, &zeros, &zeros, t)?;
        let half = |ks: &[(Vec3, Vec3)], s: f64| -> (Vec<Vec3>, Vec<Vec3>) {
            (ks.iter().map(|k| k.0 * s).collect(), ks.iter().map(|k| k.1 * s).collect())
        };
        let (a, b) = half(&k1, 0.5 * h);
        let k2 = eval(poses, &a, &b, t + 0.5 * h)?;
        let (a, b) = half(&k2, 0.5 * h);
        let k3 = eval(poses, &a, &b, t + 0.5 * h)?;
        let (a, b) = half(&k3, h);
        let k4 = eval(poses, &a, &b, t + h)?;
        for i in 0..n {
            let vp = (k1[i].0 + k2[i].0 * 2.0 + k3[i].0 * 2.0 + k4[i].0) * (h / 6.0);
            let vq = (k1[i].1 + k2[i].1 * 2.0 + k3[i].1 * 2.0 + k4[i].1) * (h / 6.0);
            poses[i] = Pose::new(poses[i].p + vp, poses[i].q * exp_so3(vq));
        }
        check_finite(poses, t)?;
    }
    Ok(())
}

/// Integrates from caller-supplied starting poses.
pub fn integrate_from<M: FieldModel + ?Sized>(model: &M, cond: &ConditionBundle, cfg: &OdeSamplerConfig, poses: &mut [Pose]) -> Result<()> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    if poses.is_empty() {
        return Ok(());
    }
    match cfg.solver {
        Solver::Euler => euler(model, cond, cfg, poses),
        Solver::Rk4 => rk4(model, cond, cfg, poses),
    }
}

/// One trajectory per rng, starting from the prior, integrated in lockstep.
pub fn sample_flow_batch<M, R>(model: &M, cond: &ConditionBundle, cfg: &OdeSamplerConfig, rngs: &mut [R]) -> Result<Vec<Pose>>
where
    M: FieldModel + ?Sized,
    R: Rng,
{
    let mut poses = rngs.iter_mut().map(|r| cfg.schedule.sample_prior(r)).collect::<Result<Vec<_>>>()?;
    integrate_from(model, cond, cfg, &mut poses)?;
    Ok(poses)
}

pub fn sample_euler<M, R>(model: &M, cond: &ConditionBundle, cfg: &OdeSamplerConfig, rng: &mut R) -> Result<Pose>
where
    M: FieldModel + ?Sized,
    R: Rng,
{
    let cfg = OdeSamplerConfig { solver: Solver::Euler, ..*cfg };
    Ok(sample_flow_batch(model, cond, &cfg, std::slice::from_mut(rng))?[0])
}

pub fn sample_rk4<M, R>(model: &M, cond: &ConditionBundle, cfg: &OdeSamplerConfig, rng: &mut R) -> Result<Pose>
where
    M: FieldModel + ?Sized,
    R: Rng,
{
    let cfg = OdeSamplerConfig { solver: Solver::Rk4, ..*cfg };
    Ok(sample_flow_batch(model, cond, &cfg, std::slice::from_mut(rng))?[0])
}

/// Marginal velocity of the path towards a single known pose:
/// `u_p = R_{q_t}ᵀ (p1 − p_t)/(1 − t)`, `u_q = Log(q_t⁻¹ q1)/(1 − t)`.
pub fn dirac_velocity(target: &Pose, g: &Pose, t: f64) -> (Vec3, Vec3) {
    let s = 1.0 / (1.0 - t).max(1e-9);
    (g.q.inverse().rotate(target.p - g.p) * s, log_so3(g.q.inverse() * target.q) * s)
}
