//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use se3grasp::lie::exp_so3;
use se3grasp::schedule::gaussian_vec;
use se3grasp::{ConditionBundle, NetConfig, Pose};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn poses(n: usize, seed: u64) -> Vec<Pose> {
    let mut r = rng(seed);
    (0..n).map(|_| Pose::new(gaussian_vec(&mut r) * 0.1, exp_so3(gaussian_vec(&mut r)))).collect()
}

pub fn condition(cfg: &NetConfig) -> ConditionBundle {
    ConditionBundle {
        feature: (0..cfg.cond_dim).map(|i| (i as f64 * 0.37).sin()).collect(),
        class_label: 2,
        contact_target: (0..cfg.num_regions).map(|i| (i % 3 == 0) as u8 as f64).collect(),
        null_flag: false,
    }
}
