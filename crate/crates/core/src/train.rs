//! Mini-batch training for either generative mode.

use crate::datagen::GraspDataset;
use crate::diff::score_training_pair;
use crate::error::{Error, Result};
use crate::flow::flow_training_pair;
use crate::lie::{Pose, Vec3};
use crate::net::adam::{adam_step, AdamConfig, AdamState};
use crate::net::checkpoint::GenMode;
use crate::net::{loss_and_grad, ConditionBundle, LossBreakdown, LossWeights, ModelParams, TrainItem};
use crate::rng::{domain, stream_rng};
use crate::schedule::NoiseSchedule;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Probability of replacing the condition by the null token.
    pub cond_dropout: f64,
    /// Cosine decay from `optim.lr` down to `optim.lr * lr_final_frac`.
    pub lr_final_frac: f64,
    pub optim: AdamConfig,
    pub loss: LossWeights,
    /// Record the loss every this many steps (the last step is always recorded).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 128,
            cond_dropout: 0.1,
            lr_final_frac: 0.1,
            optim: AdamConfig::default(),
            loss: LossWeights::default(),
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.optim.validate();
        if self.steps == 0 {
            errs.push("train.steps must be at least 1".into());
        }
        if self.batch_size == 0 {
            errs.push("train.batch_size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.cond_dropout) {
            errs.push(format!("train.cond_dropout must lie in [0, 1) (got {})", self.cond_dropout));
        }
        if !(self.lr_final_frac > 0.0 && self.lr_final_frac <= 1.0) {
            errs.push(format!("train.lr_final_frac must lie in (0, 1] (got {})", self.lr_final_frac));
        }
        let w = &self.loss;
        if [w.cls, w.cont, w.gen, w.contact_pos_weight].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            errs.push("train.loss weights must be non-negative".into());
        }
        if self.log_every == 0 {
            errs.push("train.log_every must be at least 1".into());
        }
        errs
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let frac = step as f64 / self.steps.max(1) as f64;
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        self.optim.lr * (self.lr_final_frac + (1.0 - self.lr_final_frac) * cos)
    }
}

/// Conditions with their ground-truth grasp sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub conditions: Vec<ConditionBundle>,
    pub grasps: Vec<Vec<Pose>>,
}

impl TrainingSet {
    pub fn new(conditions: Vec<ConditionBundle>, grasps: Vec<Vec<Pose>>) -> Result<Self> {
        if conditions.is_empty() || conditions.len() != grasps.len() {
            return Err(Error::Shape(format!("{} conditions vs {} grasp sets", conditions.len(), grasps.len())));
        }
        if grasps.iter().any(|g| g.is_empty()) {
            return Err(Error::Empty("every condition needs at least one grasp".into()));
        }
        Ok(Self { conditions, grasps })
    }

    pub fn from_dataset(ds: &GraspDataset) -> Result<Self> {
        let conditions = ds.scenes.iter().map(|s| s.condition.clone()).collect();
        let grasps = ds.scenes.iter().map(|s| s.grasp_poses()).collect::<Result<Vec<_>>>()?;
        Self::new(conditions, grasps)
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub lr: f64,
    pub total: f64,
    pub gen: f64,
    pub cls: f64,
    pub cont: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub mode: &'static str,
    pub steps: usize,
    pub history: Vec<StepLog>,
}

/// One training example: a draw from the set and its regression target.
#[derive(Debug, Clone, Copy)]
struct Example {
    scene: usize,
    g_t: Pose,
    t: f64,
    target: (Vec3, Vec3),
    drop: bool,
}

fn draw_example<R: Rng>(set: &TrainingSet, mode: GenMode, sched: &NoiseSchedule, dropout: f64, rng: &mut R) -> Result<Example> {
    let scene = rng.random_range(0..set.len());
    let g1 = set.grasps[scene][rng.random_range(0..set.grasps[scene].len())];
    let drop = dropout > 0.0 && rng.random::<f64>() < dropout;
    Ok(match mode {
        GenMode::Score => {
            let s = score_training_pair(&g1, sched, rng)?;
            Example { scene, g_t: s.g_t, t: s.t, target: (s.target_score_p, s.target_score_q), drop }
        }
        GenMode::Flow => {
            let f = flow_training_pair(&g1, sched, rng)?;
            Example { scene, g_t: f.g_t, t: f.t, target: f.velocity_target(), drop }
        }
    })
}

/// Trains `params` in place. Example `i` of step `k` is drawn from its own
/// rng stream, so the run is reproducible for a given seed.
pub fn train(
    params: &mut ModelParams,
    set: &TrainingSet,
    mode: GenMode,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    let mut errs = cfg.validate();
    errs.extend(sched.validate());
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    for c in &set.conditions {
        c.validate(&params.config)?;
    }
    let mut state = AdamState::new(params);
    let mut history = Vec::new();
    for step in 0..cfg.steps {
        let examples = (0..cfg.batch_size)
            .map(|i| {
                let mut rng = stream_rng(seed, domain::TRAIN, (step * cfg.batch_size + i) as u64);
                draw_example(set, mode, sched, cfg.cond_dropout, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        let batch: Vec<TrainItem<'_>> = examples
            .iter()
            .map(|e| TrainItem {
                g_t: e.g_t,
                t: e.t,
                target_p: e.target.0,
                target_q: e.target.1,
                cond: &set.conditions[e.scene],
                drop_condition: e.drop,
            })
            .collect();
        let (loss, grads): (LossBreakdown, ModelParams) = loss_and_grad(params, &batch, &cfg.loss)?;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite(format!("training loss is {} at step {step}", loss.total)));
        }
        let lr = cfg.lr_at(step);
        let opt = AdamConfig { lr, ..cfg.optim };
        let grad_norm = adam_step(params, &grads, &mut state, &opt)?;
        if step % cfg.log_every == 0 || step + 1 == cfg.steps {
            history.push(StepLog { step, lr, total: loss.total, gen: loss.gen, cls: loss.cls, cont: loss.cont, grad_norm });
        }
    }
    Ok(TrainReport { mode: mode.as_str(), steps: cfg.steps, history })
}
