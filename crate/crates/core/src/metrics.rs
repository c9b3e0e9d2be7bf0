//! Set-level evaluation: earth mover's distance between grasp sets under the
//! weighted SE(3) geodesic, taxonomy accuracy and contact accuracy.

use crate::error::{Error, Result};
use crate::lie::{geodesic_dist, Pose};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Rotation weight of the EMD ground cost, m/rad.
pub const DEFAULT_LAMBDA_ROT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetSource {
    Generated,
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspSet {
    pub poses: Vec<Pose>,
    pub source: SetSource,
}

impl GraspSet {
    pub fn new(poses: Vec<Pose>, source: SetSource) -> Result<Self> {
        if poses.is_empty() {
            return Err(Error::Empty("grasp set must contain at least one pose".into()));
        }
        Ok(Self { poses, source })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// `C[i][j] = geodesic_dist(a_i, b_j, λ_rot)`.
pub fn cost_matrix(a: &GraspSet, b: &GraspSet, lambda_rot: f64) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = a
        .poses
        .par_iter()
        .map(|pa| b.poses.iter().map(|pb| geodesic_dist(pa, pb, lambda_rot)).collect())
        .collect();
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| rows[i][j])
}

/// Minimum-cost assignment of every row to a distinct column (`rows ≤ cols`)
/// by shortest augmenting paths with dual potentials, O(n² m).
/// Returns the column of each row.
pub fn hungarian(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let (n, m) = cost.dim();
    if n == 0 {
        return Ok(Vec::new());
    }
    if n > m {
        return Err(Error::Shape(format!("assignment needs rows ≤ cols, got {n}×{m}")));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost matrix has non-finite entries".into()));
    }
    // 1-based rows/cols; index 0 is the virtual source column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    Ok(assign)
}

/// Mean matched cost of the minimum-cost perfect matching between equal-size sets.
pub fn assignment_emd(a: &GraspSet, b: &GraspSet, lambda_rot: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("EMD needs non-empty sets".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "EMD needs equal-size sets ({} vs {}); use assignment_emd_subsampled",
            a.len(),
            b.len()
        )));
    }
    let c = cost_matrix(a, b, lambda_rot);
    let assign = hungarian(&c)?;
    Ok(assign.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>() / a.len() as f64)
}

/// As [`assignment_emd`], first subsampling the larger set to the smaller
/// size without replacement (seeded; order-preserving).
pub fn assignment_emd_subsampled(a: &GraspSet, b: &GraspSet, lambda_rot: f64, seed: u64) -> Result<f64> {
    let n = a.len().min(b.len());
    let shrink = |s: &GraspSet, rng: &mut ChaCha8Rng| -> GraspSet {
        if s.len() == n {
            return s.clone();
        }
        let mut idx = sample(rng, s.len(), n).into_vec();
        idx.sort_unstable();
        GraspSet { poses: idx.into_iter().map(|i| s.poses[i]).collect(), source: s.source }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a2 = shrink(a, &mut rng);
    let b2 = shrink(b, &mut rng);
    assignment_emd(&a2, &b2, lambda_rot)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Top-1 match rate in percent.
pub fn taxonomy_accuracy(pred_logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if pred_logits.is_empty() {
        return Err(Error::Empty("taxonomy accuracy needs at least one prediction".into()));
    }
    if pred_logits.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions vs {} labels", pred_logits.len(), labels.len())));
    }
    let hits = pred_logits.iter().zip(labels).filter(|(l, &y)| argmax(l) == y).count();
    Ok(100.0 * hits as f64 / labels.len() as f64)
}

/// Mean per-region binary agreement in percent; both predictions and targets
/// are thresholded.
pub fn contact_accuracy(pred_probs: &[Vec<f64>], targets: &[Vec<f64>], threshold: f64) -> Result<f64> {
    if pred_probs.is_empty() {
        return Err(Error::Empty("contact accuracy needs at least one prediction".into()));
    }
    if pred_probs.len() != targets.len() {
        return Err(Error::Shape(format!("{} predictions vs {} targets", pred_probs.len(), targets.len())));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, t) in pred_probs.iter().zip(targets) {
        if p.len() != t.len() {
            return Err(Error::Shape(format!("{} region probabilities vs {} targets", p.len(), t.len())));
        }
        for (a, b) in p.iter().zip(t) {
            hits += usize::from((*a >= threshold) == (*b >= threshold));
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("contact accuracy needs at least one region".into()));
    }
    Ok(100.0 * hits as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{apply_global, exp_so3, Vec3};
    use crate::schedule::gaussian_vec;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn rand_pose(rng: &mut ChaCha8Rng) -> Pose {
        Pose::new(gaussian_vec(rng) * 0.1, exp_so3(gaussian_vec(rng)))
    }

    fn rand_set(rng: &mut ChaCha8Rng, n: usize) -> GraspSet {
        GraspSet::new((0..n).map(|_| rand_pose(rng)).collect(), SetSource::Generated).unwrap()
    }

    /// Minimum over all permutations, by Heap's algorithm.
    pub(crate) fn brute_force_min(c: &Array2<f64>) -> f64 {
        let n = c.nrows();
        let mut perm: Vec<usize> = (0..n).collect();
        let eval = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum::<f64>();
        let mut best = eval(&perm);
        let mut stack = vec![0usize; n];
        let mut i = 1;
        while i < n {
            if stack[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(stack[i], i);
                }
                best = best.min(eval(&perm));
                stack[i] += 1;
                i = 1;
            } else {
                stack[i] = 0;
                i += 1;
            }
        }
        best
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for k in 0..300 {
            let n = 1 + k % 6;
            let (a, b) = (rand_set(&mut rng, n), rand_set(&mut rng, n));
            let emd = assignment_emd(&a, &b, DEFAULT_LAMBDA_ROT).unwrap();
            let c = cost_matrix(&a, &b, DEFAULT_LAMBDA_ROT);
            assert_abs_diff_eq!(emd, brute_force_min(&c) / n as f64, epsilon = 1e-12);
        }
        // ties and integer costs
        let c = Array2::from_shape_fn((5, 5), |(i, j)| ((i * 3 + j * 7) % 4) as f64);
        let a = hungarian(&c).unwrap();
        let total: f64 = a.iter().enumerate().map(|(i, &j)| c[[i, j]]).sum();
        assert_eq!(total, brute_force_min(&c));
    }

    #[test]
    fn rectangular_assignment_uses_distinct_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = Array2::from_shape_fn((3, 6), |_| rng.random::<f64>());
        let a = hungarian(&c).unwrap();
        let mut cols = a.clone();
        cols.sort();
        cols.dedup();
        assert_eq!(cols.len(), 3);
        assert!(hungarian(&c.t().to_owned()).is_err());
    }

    #[test]
    fn cost_matrix_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_set(&mut rng, 5);
        let b = rand_set(&mut rng, 4);
        let caa = cost_matrix(&a, &a, 0.1);
        for i in 0..5 {
            assert!(caa[[i, i]] < 1e-12);
        }
        let cab = cost_matrix(&a, &b, 0.1);
        let cba = cost_matrix(&b, &a, 0.1);
        for i in 0..5 {
            for j in 0..4 {
                assert_abs_diff_eq!(cab[[i, j]], cba[[j, i]], epsilon = 1e-12);
                assert!(cab[[i, j]] >= 0.0);
            }
        }
    }

    #[test]
    fn emd_is_a_metric_and_left_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = 8;
            let (a, b, c) = (rand_set(&mut rng, n), rand_set(&mut rng, n), rand_set(&mut rng, n));
            let ab = assignment_emd(&a, &b, 0.1).unwrap();
            let ba = assignment_emd(&b, &a, 0.1).unwrap();
            let bc = assignment_emd(&b, &c, 0.1).unwrap();
            let ac = assignment_emd(&a, &c, 0.1).unwrap();
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-12);
            assert!(ac <= ab + bc + 1e-12);
            let mut shuffled = a.poses.clone();
            shuffled.reverse();
            let a2 = GraspSet::new(shuffled, SetSource::GroundTruth).unwrap();
            assert!(assignment_emd(&a, &a2, 0.1).unwrap() < 1e-9);
            let w = rand_pose(&mut rng);
            let move_set = |s: &GraspSet| GraspSet {
                poses: s.poses.iter().map(|g| apply_global(g, &w)).collect(),
                source: s.source,
            };
            assert_abs_diff_eq!(assignment_emd(&move_set(&a), &move_set(&b), 0.1).unwrap(), ab, epsilon = 1e-9);
            // moving only one set changes EMD by at most the per-pose displacement
            let moved = move_set(&a);
            let bound = a
                .poses
                .iter()
                .zip(&moved.poses)
                .map(|(x, y)| geodesic_dist(x, y, 0.1))
                .fold(0.0, f64::max);
            assert!((assignment_emd(&moved, &b, 0.1).unwrap() - ab).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn subsampling_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_set(&mut rng, 10);
        let b = rand_set(&mut rng, 6);
        assert!(assignment_emd(&a, &b, 0.1).is_err());
        let x = assignment_emd_subsampled(&a, &b, 0.1, 7).unwrap();
        assert_eq!(x, assignment_emd_subsampled(&a, &b, 0.1, 7).unwrap());
        assert!(GraspSet::new(vec![], SetSource::Generated).is_err());
        let _ = Vec3::ZERO;
    }

    #[test]
    fn accuracy_examples() {
        let labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let perfect: Vec<Vec<f64>> = labels.iter().map(|&y| (0..4).map(|k| if k == y { 1.0 } else { 0.0 }).collect()).collect();
        assert_eq!(taxonomy_accuracy(&perfect, &labels).unwrap(), 100.0);
        let constant = vec![vec![1.0, 0.0, 0.0, 0.0]; 400];
        assert_eq!(taxonomy_accuracy(&constant, &labels).unwrap(), 25.0);
        assert!(taxonomy_accuracy(&[], &[]).is_err());
        assert!(taxonomy_accuracy(&constant, &labels[..3]).is_err());

        let t = vec![vec![1.0, 0.0, 1.0]];
        assert_eq!(contact_accuracy(&t, &t, 0.5).unwrap(), 100.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let probs = vec![vec![0.5; 16]; n];
        let targets: Vec<Vec<f64>> = (0..n).map(|_| (0..16).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect()).collect();
        let ca = contact_accuracy(&probs, &targets, 0.5).unwrap();
        // 0.5 thresholds to "contact"; expected agreement is the positive rate
        assert!((ca - 50.0).abs() < 3.0);
        let random: Vec<Vec<f64>> = (0..n).map(|_| (0..16).map(|_| rng.random::<f64>()).collect()).collect();
        assert!((contact_accuracy(&random, &targets, 0.5).unwrap() - 50.0).abs() < 3.0);
    }
}
