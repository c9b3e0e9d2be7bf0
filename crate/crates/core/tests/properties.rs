use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use se3grasp::datagen::{build_dataset, DatasetSpec, GraspDataset};
use se3grasp::diff::SdeSamplerConfig;
use se3grasp::eval::{evaluate, sample_dataset, sample_grasps, EvalConfig, SamplerConfig};
use se3grasp::flow::OdeSamplerConfig;
use se3grasp::lie::exp_so3;
use se3grasp::metrics::{contact_accuracy, taxonomy_accuracy};
use se3grasp::net::adam::AdamConfig;
use se3grasp::schedule::{gaussian_vec, NoiseSchedule};
use se3grasp::train::{train, TrainConfig, TrainingSet};
use se3grasp::{Checkpoint, ConditionBundle, GenMode, ModelParams, NetConfig, Pose};

fn tc(steps: usize, lr: f64) -> TrainConfig {
    TrainConfig { steps, batch_size: 128, optim: AdamConfig { lr, ..Default::default() }, log_every: steps, ..Default::default() }
}

#[test]
fn auxiliary_heads_fit_a_separable_set() {
    let cfg = NetConfig { hidden: vec![32, 32], cond_dim: 8, aux_hidden: 16, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let labels = [1, 2, 8, 13, 15, 21, 25, 28];
    let conds: Vec<ConditionBundle> = (0..32)
        .map(|i| {
            let k = i % 8;
            let mut feature: Vec<f64> = (0..8).map(|_| rng.random_range(-0.1..0.1)).collect();
            feature[k] += 1.0;
            ConditionBundle {
                feature,
                class_label: labels[k],
                contact_target: (0..16).map(|r| if (r + k) % 3 == 0 { 1.0 } else { 0.0 }).collect(),
                null_flag: false,
            }
        })
        .collect();
    let grasps = (0..32).map(|_| vec![Pose::new(gaussian_vec(&mut rng) * 0.05, exp_so3(gaussian_vec(&mut rng)))]).collect();
    let set = TrainingSet::new(conds.clone(), grasps).unwrap();
    let mut p = ModelParams::new(cfg, &mut rng).unwrap();
    train(&mut p, &set, GenMode::Flow, &NoiseSchedule::default(), &tc(400, 3e-3), 0).unwrap();
    let (mut logits, mut probs) = (Vec::new(), Vec::new());
    for c in &conds {
        let (_, _, cls, contact) = p.forward(&Pose::IDENTITY, 0.5, c).unwrap();
        logits.push(cls);
        probs.push(contact.iter().map(|z| 1.0 / (1.0 + (-z).exp())).collect());
    }
    let lab: Vec<usize> = conds.iter().map(|c| c.class_label).collect();
    let targets: Vec<Vec<f64>> = conds.iter().map(|c| c.contact_target.clone()).collect();
    let ta = taxonomy_accuracy(&logits, &lab).unwrap();
    let ca = contact_accuracy(&probs, &targets, 0.5).unwrap();
    assert!(ta > 95.0 && ca > 95.0, "TA {ta} CA {ca}");
}

fn benchmark_subset() -> GraspDataset {
    build_dataset(&DatasetSpec { num_scenes: 16, ..Default::default() }, 0).unwrap()
}

#[test]
fn score_sampler_is_stable_when_steps_double() {
    let ds = benchmark_subset();
    let set = TrainingSet::from_dataset(&ds).unwrap();
    let mut p = ModelParams::new(NetConfig { hidden: vec![128; 3], ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    train(&mut p, &set, GenMode::Score, &NoiseSchedule::default(), &tc(3000, 2e-3), 2).unwrap();
    let emd = |steps: usize| {
        let s = SamplerConfig::Score(SdeSamplerConfig { steps, ..Default::default() });
        let samples = sample_dataset(&p, &ds, &s, 100, 4).unwrap();
        evaluate("sm", &p, &ds, &samples, &EvalConfig::default(), 4).unwrap().overall.emd_mean
    };
    let (e100, e200) = (emd(100), emd(200));
    assert!(e200 <= 1.05 * e100, "100 steps {e100}, 200 steps {e200}");
}

#[test]
fn checkpoint_file_reproduces_samples() {
    let ds = build_dataset(&DatasetSpec { num_scenes: 4, grasps_per_scene: 20, min_grasps: 10, ..Default::default() }, 5).unwrap();
    let set = TrainingSet::from_dataset(&ds).unwrap();
    let mut p = ModelParams::new(NetConfig { hidden: vec![24, 24], ..Default::default() }, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    train(&mut p, &set, GenMode::Flow, &NoiseSchedule::default(), &tc(30, 1e-3), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ck = Checkpoint { params: p.clone(), schedule: NoiseSchedule::default(), mode: GenMode::Flow, meta: serde_json::json!({"seed": 3}) };
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    let s = SamplerConfig::Flow(OdeSamplerConfig::default());
    let cond = &ds.scenes[0].condition;
    let a = sample_grasps(&p, cond, &s, 16, 9, 0).unwrap();
    let b = sample_grasps(&back.params, cond, &s, 16, 9, 0).unwrap();
    assert_eq!(a, b);

    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 40] ^= 1;
    std::fs::write(&path, &bytes).unwrap();
    assert!(Checkpoint::load(&path).is_err());
    assert!(Checkpoint::load(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn dataset_file_roundtrip_is_lossless() {
    let ds = build_dataset(&DatasetSpec { num_scenes: 6, ..Default::default() }, 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    ds.save(&path).unwrap();
    let back = GraspDataset::load(&path).unwrap();
    assert_eq!(back.header, ds.header);
    for (a, b) in back.scenes.iter().zip(&ds.scenes) {
        assert_eq!(a.grasps, b.grasps);
        assert_eq!(a.condition, b.condition);
    }
    let rep = back.revalidate();
    assert_eq!(rep.passed, rep.grasps);
}
