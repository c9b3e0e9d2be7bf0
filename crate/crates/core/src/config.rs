//! Run configuration as read from TOML. Every section is optional and falls
//! back to its defaults; unknown keys are rejected.

use crate::datagen::DatasetSpec;
use crate::diff::{SdeRule, SdeSamplerConfig};
use crate::error::{Error, Result};
use crate::eval::{EvalConfig, SamplerConfig};
use crate::flow::{OdeSamplerConfig, Solver};
use crate::guidance::GuidanceConfig;
use crate::net::checkpoint::GenMode;
use crate::net::NetConfig;
use crate::register::IcpConfig;
use crate::schedule::NoiseSchedule;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Sampler settings shared by both modes. Fields that only apply to one
/// mode are ignored by the other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    /// Integration steps; unset means 100 for score and 40 for flow.
    pub steps: Option<usize>,
    pub cfg_weight: f64,
    pub solver: Solver,
    pub rule: SdeRule,
    pub stochasticity_scale: f64,
    pub final_denoise: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let sde = SdeSamplerConfig::default();
        Self {
            steps: None,
            cfg_weight: sde.cfg_weight,
            solver: Solver::Euler,
            rule: sde.rule,
            stochasticity_scale: sde.stochasticity_scale,
            final_denoise: sde.final_denoise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub mode: GenMode,
    pub seed: u64,
    /// Dataset file used by `train` and `eval`.
    pub dataset_path: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub schedule: NoiseSchedule,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub sampler: SamplerSection,
    pub guidance: Option<GuidanceConfig>,
    pub eval: EvalConfig,
    pub icp: IcpConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: GenMode::Flow,
            seed: 0,
            dataset_path: None,
            output_dir: None,
            dataset: DatasetSpec::default(),
            schedule: NoiseSchedule::default(),
            net: NetConfig::default(),
            train: TrainConfig::default(),
            sampler: SamplerSection::default(),
            guidance: None,
            eval: EvalConfig::default(),
            icp: IcpConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs.join("; ")));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.dataset.validate();
        errs.extend(self.schedule.validate());
        errs.extend(self.net.validate());
        errs.extend(self.train.validate());
        errs.extend(self.eval.validate());
        if self.sampler.steps == Some(0) {
            errs.push("sampler.steps must be at least 1".into());
        }
        if !self.sampler.cfg_weight.is_finite() {
            errs.push("sampler.cfg_weight must be finite".into());
        }
        if !(self.sampler.stochasticity_scale >= 0.0 && self.sampler.stochasticity_scale.is_finite()) {
            errs.push("sampler.stochasticity_scale must be non-negative".into());
        }
        if let Some(g) = &self.guidance {
            errs.extend(g.validate());
        }
        let icp = &self.icp;
        if !(icp.max_offset > 0.0 && icp.reject_dist > 0.0 && icp.tol > 0.0) || icp.iters == 0 {
            errs.push("icp.max_offset, icp.reject_dist, icp.tol and icp.iters must be positive".into());
        }
        if self.net.cond_dim != crate::datagen::FEATURE_DIM {
            errs.push(format!(
                "net.cond_dim must equal the dataset feature size {} (got {})",
                crate::datagen::FEATURE_DIM,
                self.net.cond_dim
            ));
        }
        errs
    }

    pub fn sampler_config(&self, mode: GenMode) -> SamplerConfig {
        let s = &self.sampler;
        match mode {
            GenMode::Score => SamplerConfig::Score(SdeSamplerConfig {
                rule: s.rule,
                steps: s.steps.unwrap_or(100),
                schedule: self.schedule,
                stochasticity_scale: s.stochasticity_scale,
                guidance: self.guidance,
                cfg_weight: s.cfg_weight,
                final_denoise: s.final_denoise,
            }),
            GenMode::Flow => SamplerConfig::Flow(OdeSamplerConfig {
                steps: s.steps.unwrap_or(40),
                solver: s.solver,
                schedule: self.schedule,
                guidance: self.guidance,
                cfg_weight: s.cfg_weight,
            }),
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form. The
    /// output directory does not take part.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&RunConfig { output_dir: None, ..self.clone() }).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_is_default_and_roundtrips() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        let back = RunConfig::from_toml_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }

    #[test]
    fn partial_sections_and_sampler_defaults() {
        let c = RunConfig::from_toml_str(
            "mode = \"score\"\nseed = 7\n[train]\nsteps = 10\n[train.optim]\nlr = 0.002\n[guidance]\nlambda_gd = 0.01\n",
        )
        .unwrap();
        assert_eq!(c.mode, GenMode::Score);
        assert_eq!(c.train.steps, 10);
        assert_eq!(c.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(c.train.optim.lr, 0.002);
        assert_eq!(c.guidance.unwrap().theta_thr, 0.8);
        match c.sampler_config(GenMode::Score) {
            SamplerConfig::Score(s) => assert_eq!(s.steps, 100),
            _ => unreachable!(),
        }
        match c.sampler_config(GenMode::Flow) {
            SamplerConfig::Flow(s) => assert_eq!((s.steps, s.cfg_weight), (40, 2.0)),
            _ => unreachable!(),
        }
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_and_all_errors_reported() {
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
        assert!(RunConfig::from_toml_str("[train]\nstepz = 3").is_err());
        let mut c = RunConfig::default();
        c.train.steps = 0;
        c.sampler.steps = Some(0);
        c.eval.samples_per_scene = 0;
        c.net.cond_dim = 3;
        let errs = c.validate();
        assert!(errs.len() >= 4, "{errs:?}");
        let msg = RunConfig::from_toml_str("[train]\nsteps = 0\n[eval]\nsamples_per_scene = 0").unwrap_err().to_string();
        assert!(msg.contains("train.steps") && msg.contains("samples_per_scene"), "{msg}");
    }
}
