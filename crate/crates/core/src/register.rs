//! Translation-only registration along a single ray direction ("Z-only ICP").

use crate::error::{Error, Result};
use crate::lie::Vec3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("point cloud is empty".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("point cloud has non-finite coordinates".into()));
        }
        Ok(Self { points })
    }

    /// Reads `x,y,z` rows; a non-numeric first line is treated as a header.
    pub fn from_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
        let mut points = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() < 3 {
                return Err(Error::Parse(format!("line {}: expected x,y,z", i + 1)));
            }
            let parsed: std::result::Result<Vec<f64>, _> = (0..3).map(|k| rec[k].parse::<f64>()).collect();
            match parsed {
                Ok(v) => points.push(Vec3::new(v[0], v[1], v[2])),
                Err(_) if i == 0 => continue,
                Err(e) => return Err(Error::Parse(format!("line {}: {e}", i + 1))),
            }
        }
        Self::new(points)
    }
}

/// Uniform voxel hash for fixed-radius nearest-neighbour queries.
pub struct VoxelGrid<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl<'a> VoxelGrid<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(*p, cell)).or_default().push(i);
        }
        Self { points, cell, cells }
    }

    fn key(p: Vec3, cell: f64) -> (i64, i64, i64) {
        ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64)
    }

    /// Nearest point within `cell` of `q`, ties broken by lowest index.
    pub fn nearest_within(&self, q: Vec3) -> Option<(usize, f64)> {
        let (kx, ky, kz) = Self::key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(ids) = self.cells.get(&(kx + dx, ky + dy, kz + dz)) else { continue };
                    for &i in ids {
                        let d2 = (self.points[i] - q).norm_squared();
                        if d2 <= self.cell * self.cell && best.is_none_or(|(bi, bd)| d2 < bd || (d2 == bd && i < bi)) {
                            best = Some((i, d2));
                        }
                    }
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub max_offset: f64,
    pub iters: usize,
    pub tol: f64,
    /// Correspondences farther than this are rejected.
    pub reject_dist: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_offset: 0.1, iters: 20, tol: 1e-5, reject_dist: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub offset: f64,
    pub rms_before: f64,
    pub rms_after: f64,
    pub iterations: usize,
    pub converged: bool,
    /// No correspondences within the rejection distance; no correction applied.
    pub flagged: bool,
    /// Mean squared correspondence distance after each update.
    #[serde(skip)]
    pub objective: Vec<f64>,
}

fn correspondences(grid: &VoxelGrid<'_>, src: &[Vec3], shift: Vec3) -> Vec<(usize, usize, f64)> {
    src.par_iter()
        .enumerate()
        .filter_map(|(i, p)| grid.nearest_within(*p + shift).map(|(j, d2)| (i, j, d2)))
        .collect()
}

fn rms(c: &[(usize, usize, f64)]) -> f64 {
    if c.is_empty() {
        return f64::NAN;
    }
    (c.iter().map(|x| x.2).sum::<f64>() / c.len() as f64).sqrt()
}

/// Alternates nearest-neighbour correspondence with the closed-form 1-D
/// update `s = mean⟨q_i − p_i, d⟩`, clamped to `±max_offset`.
pub fn z_only_icp(source: &PointCloud, target: &PointCloud, ray_dir: Vec3, cfg: &IcpConfig) -> Result<IcpResult> {
    if (ray_dir.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("ray direction must be unit length (norm {})", ray_dir.norm())));
    }
    if !(cfg.max_offset >= 0.0 && cfg.reject_dist > 0.0 && cfg.tol >= 0.0) {
        return Err(Error::Config("icp needs max_offset ≥ 0, reject_dist > 0, tol ≥ 0".into()));
    }
    let grid = VoxelGrid::new(&target.points, cfg.reject_dist);
    let src = &source.points;
    let c0 = correspondences(&grid, src, Vec3::ZERO);
    let rms_before = rms(&c0);
    if c0.is_empty() {
        return Ok(IcpResult {
            offset: 0.0,
            rms_before,
            rms_after: rms_before,
            iterations: 0,
            converged: false,
            flagged: true,
            objective: Vec::new(),
        });
    }
    let mut s = 0.0;
    let mut corr = c0;
    let mut objective = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.iters {
        iterations += 1;
        let next = corr
            .iter()
            .map(|&(i, j, _)| (target.points[j] - src[i]).dot(ray_dir))
            .sum::<f64>()
            / corr.len() as f64;
        let next = next.clamp(-cfg.max_offset, cfg.max_offset);
        let step = (next - s).abs();
        s = next;
        let c = correspondences(&grid, src, ray_dir * s);
        if c.is_empty() {
            break;
        }
        corr = c;
        objective.push(rms(&corr).powi(2));
        if step < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(IcpResult { offset: s, rms_before, rms_after: rms(&corr), iterations, converged, flagged: false, objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::gaussian_vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Points on a small ellipsoid shell, a stand-in for a hand surface.
    fn blob(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u = gaussian_vec(&mut rng).normalized().unwrap();
                Vec3::new(u.x * 0.05, u.y * 0.035, u.z * 0.025)
            })
            .collect()
    }

    fn shifted(points: &[Vec3], d: Vec3) -> PointCloud {
        PointCloud::new(points.iter().map(|p| *p + d).collect()).unwrap()
    }

    #[test]
    fn recovers_along_ray_shift() {
        let pts = blob(3000, 1);
        let src = PointCloud::new(pts.clone()).unwrap();
        let ray = Vec3::new(0.2, -0.3, 1.0).normalized().unwrap();
        let cfg = IcpConfig::default();
        let r = z_only_icp(&src, &shifted(&pts, ray * 0.03), ray, &cfg).unwrap();
        assert!((r.offset - 0.03).abs() < 1e-4, "{r:?}");
        assert!(!r.flagged && r.rms_after < r.rms_before);
        for w in r.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
        let same = z_only_icp(&src, &src, ray, &cfg).unwrap();
        assert!(same.offset.abs() < 1e-12);
    }

    #[test]
    fn perpendicular_shift_gives_no_correction() {
        let pts = blob(3000, 2);
        let src = PointCloud::new(pts.clone()).unwrap();
        let ray = Vec3::Z;
        let r = z_only_icp(&src, &shifted(&pts, Vec3::X * 0.01), ray, &IcpConfig::default()).unwrap();
        assert!(r.offset.abs() < 1e-3, "{r:?}");
    }

    #[test]
    fn clamps_and_flags() {
        let pts = blob(500, 3);
        let src = PointCloud::new(pts.clone()).unwrap();
        let cfg = IcpConfig { max_offset: 0.01, ..Default::default() };
        let r = z_only_icp(&src, &shifted(&pts, Vec3::Z * 0.03), Vec3::Z, &cfg).unwrap();
        assert!(r.offset.abs() <= 0.01);
        let far = z_only_icp(&src, &shifted(&pts, Vec3::X * 1.0), Vec3::Z, &cfg).unwrap();
        assert!(far.flagged && far.offset == 0.0);
        assert!(z_only_icp(&src, &src, Vec3::new(0.0, 0.0, 2.0), &cfg).is_err());
        assert!(PointCloud::new(vec![]).is_err());
    }

    #[test]
    fn csv_reading() {
        let c = PointCloud::from_csv("x,y,z\n0,0,1\n 1.5, 2, 3\n".as_bytes()).unwrap();
        assert_eq!(c.points, vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.5, 2.0, 3.0)]);
        assert!(PointCloud::from_csv("0,0,1\nfoo,1,2\n".as_bytes()).is_err());
    }
}
