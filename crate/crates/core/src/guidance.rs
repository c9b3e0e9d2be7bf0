//! Palm-axis alignment guidance on the rotational field and classifier-free
//! guidance mixing.

use crate::error::{Error, Result};
use crate::lie::{Pose, UnitQuat, Vec3};
use crate::net::{ConditionBundle, FieldModel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceOrder {
    /// Guidance is added to the conditional field, then CFG mixes.
    #[default]
    BeforeCfg,
    /// CFG mixes first, then guidance is added to the mixed field.
    AfterCfg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    pub e_app: Vec3,
    pub theta_thr: f64,
    pub lambda_gd: f64,
    /// Body axis of the grasp frame that should align with `e_app` (0=x, 1=y, 2=z).
    pub gripper_axis_index: usize,
    #[serde(default)]
    pub order: GuidanceOrder,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { e_app: Vec3::Y, theta_thr: 0.8, lambda_gd: 1e-3, gripper_axis_index: 1, order: GuidanceOrder::BeforeCfg }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !self.e_app.is_finite() || (self.e_app.norm() - 1.0).abs() > 1e-9 {
            errs.push(format!("guidance.e_app must be a unit vector (norm {})", self.e_app.norm()));
        }
        if !(-1.0..=1.0).contains(&self.theta_thr) {
            errs.push(format!("guidance.theta_thr must lie in [-1, 1] (got {})", self.theta_thr));
        }
        if !(self.lambda_gd >= 0.0 && self.lambda_gd.is_finite()) {
            errs.push(format!("guidance.lambda_gd must be non-negative (got {})", self.lambda_gd));
        }
        if self.gripper_axis_index > 2 {
            errs.push(format!("guidance.gripper_axis_index must be 0, 1 or 2 (got {})", self.gripper_axis_index));
        }
        errs
    }

    pub fn axis(&self) -> Vec3 {
        Vec3::basis(self.gripper_axis_index)
    }
}

/// `c = ⟨R_q a, e_app⟩`.
pub fn alignment(q: UnitQuat, cfg: &GuidanceConfig) -> f64 {
    q.rotate(cfg.axis()).dot(cfg.e_app).clamp(-1.0, 1.0)
}

/// Body-frame gradient of the alignment, gated to zero once `c ≥ θ_thr`.
///
/// `d/ds c(q Exp(s e_i)) = ⟨R_q (e_i × a), e⟩ = ⟨e_i, a × R_qᵀ e⟩`.
pub fn guidance_term(q: UnitQuat, cfg: &GuidanceConfig) -> Vec3 {
    if alignment(q, cfg) >= cfg.theta_thr {
        return Vec3::ZERO;
    }
    cfg.axis().cross(q.inverse().rotate(cfg.e_app))
}

pub fn apply_guidance(field_q: Vec3, xi: Vec3, lambda_gd: f64) -> Vec3 {
    field_q + xi * lambda_gd
}

/// `uncond + w (cond − uncond)` on both channels.
pub fn cfg_mix(cond: (Vec3, Vec3), uncond: (Vec3, Vec3), w: f64) -> (Vec3, Vec3) {
    (uncond.0 + (cond.0 - uncond.0) * w, uncond.1 + (cond.1 - uncond.1) * w)
}

fn add_guidance(poses: &[Pose], field: &mut [(Vec3, Vec3)], g: &GuidanceConfig) {
    if g.lambda_gd == 0.0 {
        return;
    }
    for (pose, f) in poses.iter().zip(field.iter_mut()) {
        f.1 = apply_guidance(f.1, guidance_term(pose.q, g), g.lambda_gd);
    }
}

/// The field a sampler integrates: model output with guidance and CFG applied.
/// The unconditional pass is skipped when `cfg_weight == 1` or the condition
/// is already null.
pub fn guided_field<M: FieldModel + ?Sized>(
    model: &M,
    poses: &[Pose],
    t: f64,
    cond: &ConditionBundle,
    guidance: Option<&GuidanceConfig>,
    cfg_weight: f64,
) -> Result<Vec<(Vec3, Vec3)>> {
    let mut field = model.eval(poses, t, cond)?;
    if field.len() != poses.len() {
        return Err(Error::Shape(format!("model returned {} fields for {} poses", field.len(), poses.len())));
    }
    let order = guidance.map(|g| g.order).unwrap_or_default();
    if let (Some(g), GuidanceOrder::BeforeCfg) = (guidance, order) {
        add_guidance(poses, &mut field, g);
    }
    if cfg_weight != 1.0 && !cond.null_flag {
        let uncond = model.eval(poses, t, &cond.as_null())?;
        for (f, u) in field.iter_mut().zip(uncond) {
            *f = cfg_mix(*f, u, cfg_weight);
        }
    }
    if let (Some(g), GuidanceOrder::AfterCfg) = (guidance, order) {
        add_guidance(poses, &mut field, g);
    }
    if let Some(i) = field.iter().position(|(p, q)| !(p.is_finite() && q.is_finite())) {
        return Err(Error::NonFinite(format!("model field is non-finite at t={t} (trajectory {i})")));
    }
    Ok(field)
}
