//! Sampling a trained model over a dataset and scoring it: EMD per scene,
//! taxonomy and contact accuracy, overall and per class.

use crate::datagen::{GraspClass, GraspDataset};
use crate::diff::{sample_reverse_sde_batch, SdeSamplerConfig};
use crate::error::{Error, Result};
use crate::flow::{sample_flow_batch, OdeSamplerConfig};
use crate::lie::Pose;
use crate::metrics::{assignment_emd, assignment_emd_subsampled, contact_accuracy, taxonomy_accuracy, GraspSet, SetSource, DEFAULT_LAMBDA_ROT};
use crate::net::{ConditionBundle, FieldModel, ModelParams};
use crate::rng::{domain, mix64, stream_rng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SamplerConfig {
    Score(SdeSamplerConfig),
    Flow(OdeSamplerConfig),
}

impl SamplerConfig {
    pub fn validate(&self) -> Vec<String> {
        match self {
            SamplerConfig::Score(c) => c.validate(),
            SamplerConfig::Flow(c) => c.validate(),
        }
    }
}

/// Per-sample rng: sample `k` of stream `stream` (typically the scene id).
pub fn sample_rngs(seed: u64, stream: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n).map(|k| stream_rng(seed, domain::SAMPLE, (stream << 20) | k as u64)).collect()
}

pub fn sample_grasps<M: FieldModel + ?Sized>(
    model: &M,
    cond: &ConditionBundle,
    sampler: &SamplerConfig,
    n: usize,
    seed: u64,
    stream: u64,
) -> Result<Vec<Pose>> {
    let mut rngs = sample_rngs(seed, stream, n);
    match sampler {
        SamplerConfig::Score(c) => sample_reverse_sde_batch(model, cond, c, &mut rngs),
        SamplerConfig::Flow(c) => sample_flow_batch(model, cond, c, &mut rngs),
    }
}

/// `n` samples for every scene, scenes in parallel; scene `i` uses stream `scene_id`.
pub fn sample_dataset<M: FieldModel + ?Sized>(
    model: &M,
    ds: &GraspDataset,
    sampler: &SamplerConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<Pose>>> {
    ds.scenes
        .par_iter()
        .map(|s| sample_grasps(model, &s.condition, sampler, n, seed, s.scene_id as u64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub samples_per_scene: usize,
    pub lambda_rot: f64,
    pub contact_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { samples_per_scene: 100, lambda_rot: DEFAULT_LAMBDA_ROT, contact_threshold: 0.5 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.samples_per_scene == 0 {
            errs.push("eval.samples_per_scene must be at least 1".into());
        }
        if !(self.lambda_rot >= 0.0 && self.lambda_rot.is_finite()) {
            errs.push("eval.lambda_rot must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.contact_threshold) {
            errs.push("eval.contact_threshold must lie in [0, 1]".into());
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneEval {
    pub scene_id: usize,
    pub class_label: usize,
    pub class_name: String,
    pub emd: f64,
    pub predicted_class: usize,
    /// Percent of regions whose thresholded prediction matches the target.
    pub contact_acc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub scenes: usize,
    pub emd_mean: f64,
    /// Standard deviation of the per-scene EMD.
    pub emd_std: f64,
    pub ta: f64,
    pub ca: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub class_label: usize,
    pub class_name: String,
    #[serde(flatten)]
    pub summary: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub label: String,
    pub overall: Summary,
    pub per_class: Vec<ClassSummary>,
    pub scenes: Vec<SceneEval>,
}

fn summarize(rows: &[&SceneEval]) -> Summary {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.emd).sum::<f64>() / n;
    let var = rows.iter().map(|r| (r.emd - mean).powi(2)).sum::<f64>() / n;
    Summary {
        scenes: rows.len(),
        emd_mean: mean,
        emd_std: var.sqrt(),
        ta: 100.0 * rows.iter().filter(|r| r.predicted_class == r.class_label).count() as f64 / n,
        ca: rows.iter().map(|r| r.contact_acc).sum::<f64>() / n,
    }
}

fn class_name(label: usize) -> String {
    GraspClass::from_taxonomy_index(label).map(|c| c.name().to_string()).unwrap_or_else(|| format!("class_{label}"))
}

/// Scores `samples[i]` against scene `i` of `ds`. When the sets differ in
/// size the larger one is subsampled with a per-scene seed.
pub fn evaluate(
    label: &str,
    model: &ModelParams,
    ds: &GraspDataset,
    samples: &[Vec<Pose>],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<EvalReport> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    if samples.len() != ds.scenes.len() {
        return Err(Error::Shape(format!("{} sample sets for {} scenes", samples.len(), ds.scenes.len())));
    }
    let rows = ds
        .scenes
        .par_iter()
        .zip(samples)
        .map(|(s, gen)| {
            let gt = GraspSet::new(s.grasp_poses()?, SetSource::GroundTruth)?;
            let gen = GraspSet::new(gen.clone(), SetSource::Generated)?;
            let emd = if gt.len() == gen.len() {
                assignment_emd(&gen, &gt, cfg.lambda_rot)?
            } else {
                assignment_emd_subsampled(&gen, &gt, cfg.lambda_rot, mix64(seed ^ s.scene_id as u64))?
            };
            let (_, _, cls, contact) = model.forward(&gt.poses[0], 0.0, &s.condition)?;
            let probs: Vec<f64> = contact.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect();
            let ta = taxonomy_accuracy(std::slice::from_ref(&cls), &[s.class_label])?;
            let ca = contact_accuracy(&[probs], std::slice::from_ref(&s.condition.contact_target), cfg.contact_threshold)?;
            let predicted_class = if ta > 0.0 { s.class_label } else { argmax(&cls) };
            Ok(SceneEval {
                scene_id: s.scene_id,
                class_label: s.class_label,
                class_name: class_name(s.class_label),
                emd,
                predicted_class,
                contact_acc: ca,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::Empty("nothing to evaluate".into()));
    }
    let overall = summarize(&rows.iter().collect::<Vec<_>>());
    let mut by_class: BTreeMap<usize, Vec<&SceneEval>> = BTreeMap::new();
    for r in &rows {
        by_class.entry(r.class_label).or_default().push(r);
    }
    let per_class = by_class
        .into_iter()
        .map(|(k, v)| ClassSummary { class_label: k, class_name: class_name(k), summary: summarize(&v) })
        .collect();
    Ok(EvalReport { label: label.to_string(), overall, per_class, scenes: rows })
}

fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |b, (i, &x)| if x > v[b] { i } else { b })
}

/// Writes `scene_id,sample,px,py,pz,qw,qx,qy,qz` rows, preceded by a
/// `# key=value ...` line when `meta` is non-empty.
pub fn write_samples_csv<W: std::io::Write>(mut w: W, meta: &[(&str, String)], scene_ids: &[usize], samples: &[Vec<Pose>]) -> Result<()> {
    if !meta.is_empty() {
        let line: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
        writeln!(w, "# {}", line.join(" "))?;
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["scene_id", "sample", "px", "py", "pz", "qw", "qx", "qy", "qz"])?;
    for (id, set) in scene_ids.iter().zip(samples) {
        for (k, g) in set.iter().enumerate() {
            let mut rec = vec![id.to_string(), k.to_string()];
            rec.extend(g.to_array().iter().map(|v| format!("{v:?}")));
            wr.write_record(&rec)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads the CSV written by [`write_samples_csv`], grouped per scene id in
/// first-seen order. `#` lines are skipped.
pub fn read_samples_csv<R: std::io::Read>(r: R) -> Result<Vec<(usize, Vec<Pose>)>> {
    let mut rd = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let mut out: Vec<(usize, Vec<Pose>)> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 9 {
            return Err(Error::Parse(format!("samples line {line}: expected 9 columns, got {}", rec.len())));
        }
        let bad = |e: String| Error::Parse(format!("samples line {line}: {e}"));
        let id: usize = rec[0].parse().map_err(|e| bad(format!("{e}")))?;
        let mut a = [0.0; 7];
        for k in 0..7 {
            a[k] = rec[k + 2].parse().map_err(|e| bad(format!("{e}")))?;
        }
        let g = Pose::from_array(a).ok_or_else(|| bad("invalid pose".into()))?;
        match out.last_mut() {
            Some((last, v)) if *last == id => v.push(g),
            _ => out.push((id, vec![g])),
        }
    }
    Ok(out)
}
