//! Synthetic conditioned grasp scenes: antipodal parallel-jaw grasps on
//! primitive objects, filtered by region matching against a hand proxy.
//!
//! All scene geometry is expressed in the wrist frame. Each class places
//! its opposing region pairs on antipodal chords of the object, so the
//! accepted grasps form one mode per pair, approaching from the palm side.

pub mod hand;
pub mod primitive;

pub use hand::{region_match, GraspClass, HandProxy, RegionMatch, NUM_HAND_REGIONS, PALM};
pub use primitive::{moller_trumbore, PrimitiveKind, PrimitiveMesh, Shape, SurfacePoint, Triangle};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::lie::{exp_so3, Mat3, Pose, UnitQuat, Vec3};
use crate::net::ConditionBundle;
use crate::rng::{domain, stream_rng};
use crate::schedule::gaussian_vec;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;
/// Pair slots in the layout descriptor (the largest class has four pairs).
pub const MAX_PAIRS: usize = 4;
/// one-hot(8) ⊕ palm center(3) ⊕ per slot [present, chord midpoint(3), closing axis(3)].
pub const FEATURE_DIM: usize = GraspClass::ALL.len() + 3 + 7 * MAX_PAIRS;
/// A region counts as engaged when at least this share of a scene's grasps touch it.
pub const ENGAGED_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub num_scenes: usize,
    pub classes: Vec<GraspClass>,
    pub kinds: Vec<PrimitiveKind>,
    pub grasps_per_scene: usize,
    pub min_grasps: usize,
    pub mu: f64,
    pub max_width: f64,
    pub region_radius: f64,
    pub feature_noise: f64,
    /// Std of the approach rotation about the closing axis (rad).
    pub approach_jitter: f64,
    /// Distance from grasp center to finger base along the approach axis (m).
    pub finger_length: f64,
    pub attempt_budget: usize,
    /// Object and hand layouts tried per scene before the scene is dropped.
    pub layout_retries: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_scenes: 64,
            classes: GraspClass::ALL.to_vec(),
            kinds: vec![PrimitiveKind::Box, PrimitiveKind::Cylinder, PrimitiveKind::Sphere],
            grasps_per_scene: 100,
            min_grasps: 32,
            mu: 0.5,
            max_width: 0.085,
            region_radius: 0.015,
            feature_noise: 0.005,
            approach_jitter: 0.15,
            finger_length: 0.05,
            attempt_budget: 20_000,
            layout_retries: 4,
        }
    }
}

impl DatasetSpec {
    /// Every problem found, empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.num_scenes == 0 {
            errs.push("num_scenes must be ≥ 1".into());
        }
        if self.classes.is_empty() {
            errs.push("classes must not be empty".into());
        }
        if self.kinds.is_empty() {
            errs.push("kinds must not be empty".into());
        }
        if self.min_grasps == 0 || self.min_grasps > self.grasps_per_scene {
            errs.push(format!("need 1 ≤ min_grasps ≤ grasps_per_scene, got {} and {}", self.min_grasps, self.grasps_per_scene));
        }
        for (name, v) in [
            ("mu", self.mu),
            ("max_width", self.max_width),
            ("region_radius", self.region_radius),
            ("finger_length", self.finger_length),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("feature_noise", self.feature_noise), ("approach_jitter", self.approach_jitter)] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name} must be ≥ 0, got {v}"));
            }
        }
        if self.attempt_budget == 0 || self.layout_retries == 0 {
            errs.push("attempt_budget and layout_retries must be ≥ 1".into());
        }
        errs
    }
}

/// Two opposing contacts on a primitive (object frame), outward normals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AntipodalCandidate {
    pub c1: SurfacePoint,
    pub c2: SurfacePoint,
}

impl AntipodalCandidate {
    pub fn width(&self) -> f64 {
        (self.c2.point - self.c1.point).norm()
    }

    pub fn midpoint(&self) -> Vec3 {
        (self.c1.point + self.c2.point) * 0.5
    }

    /// Unit closing axis from `c1` to `c2`.
    pub fn closing_axis(&self) -> Vec3 {
        (self.c2.point - self.c1.point).normalized().unwrap_or(Vec3::X)
    }

    /// Grasp frame: x along the closing line, y the approach direction
    /// (`approach` projected orthogonal to x), position at the midpoint.
    pub fn pose(&self, approach: Vec3) -> Option<Pose> {
        grasp_frame(self.midpoint(), self.closing_axis(), approach)
    }

    pub fn transformed(&self, g: &Pose) -> Self {
        let t = |s: SurfacePoint| SurfacePoint { point: g.transform_point(s.point), normal: g.q.rotate(s.normal) };
        Self { c1: t(self.c1), c2: t(self.c2) }
    }

    pub fn swapped(&self) -> Self {
        Self { c1: self.c2, c2: self.c1 }
    }
}

pub fn grasp_frame(mid: Vec3, x: Vec3, approach: Vec3) -> Option<Pose> {
    let y = (approach - x * approach.dot(x)).normalized()?;
    let z = x.cross(y);
    let q = UnitQuat::from_matrix(&Mat3::from_columns(x, y, z));
    Some(Pose::new(mid, q))
}

/// Both contact normals within the friction cone of the closing line.
pub fn friction_cone_ok(c: &AntipodalCandidate, mu: f64) -> bool {
    let x = c.closing_axis();
    let cos_max = mu.atan().cos();
    c.c1.normal.dot(-x) >= cos_max && c.c2.normal.dot(x) >= cos_max
}

/// One attempt: a uniform surface point, a ray along the inward normal and
/// the opposing exit point. `None` when the cone or width test fails.
pub fn sample_antipodal<R: Rng + ?Sized>(
    mesh: &PrimitiveMesh,
    mu: f64,
    max_width: f64,
    rng: &mut R,
) -> Result<Option<AntipodalCandidate>> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("friction coefficient must be positive, got {mu}")));
    }
    let shape = &mesh.shape;
    let c1 = shape.sample_surface(rng);
    let Some(c2) = shape.exit(c1.point, -c1.normal) else { return Ok(None) };
    let cand = AntipodalCandidate { c1, c2 };
    let w = cand.width();
    Ok((w > 1e-9 && w <= max_width && friction_cone_ok(&cand, mu)).then_some(cand))
}

/// Repeats [`sample_antipodal`] up to `budget` times; returns the accepted
/// candidates and the number of attempts.
pub fn sample_antipodal_batch<R: Rng + ?Sized>(
    mesh: &PrimitiveMesh,
    mu: f64,
    max_width: f64,
    want: usize,
    budget: usize,
    rng: &mut R,
) -> Result<(Vec<AntipodalCandidate>, usize)> {
    let mut out = Vec::new();
    let mut tries = 0;
    while out.len() < want && tries < budget {
        tries += 1;
        if let Some(c) = sample_antipodal(mesh, mu, max_width, rng)? {
            out.push(c);
        }
    }
    Ok((out, tries))
}

/// Why a stored grasp fails re-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraspCheck {
    BadPose,
    NoChord,
    Width,
    FrictionCone,
    Region(RegionMatch),
    Orientation,
    Collision,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneGeometry<'a> {
    pub shape: &'a Shape,
    pub hand: &'a HandProxy,
    pub mu: f64,
    pub max_width: f64,
    pub finger_length: f64,
}

impl SceneGeometry<'_> {
    fn object_pose(&self) -> Pose {
        Pose::from_array(self.hand.object_pose).unwrap_or(Pose::IDENTITY)
    }

    /// Recovers the jaw contacts from a wrist-frame grasp: the closing line
    /// through the grasp center, cut by the object.
    pub fn contacts(&self, grasp: &Pose) -> Option<AntipodalCandidate> {
        let obj = self.object_pose();
        let inv = obj.inverse();
        let m = inv.transform_point(grasp.p);
        let x = inv.q.rotate(grasp.q.rotate(Vec3::X));
        let (t0, t1, n0, n1) = self.shape.line_interval(m, x)?;
        if !(t0 < 0.0 && t1 > 0.0) {
            return None;
        }
        let local = AntipodalCandidate {
            c1: SurfacePoint { point: m + x * t0, normal: n0 },
            c2: SurfacePoint { point: m + x * t1, normal: n1 },
        };
        Some(local.transformed(&obj))
    }

    fn finger_base_clear(&self, grasp: &Pose) -> bool {
        let base = grasp.transform_point(Vec3::Y * self.finger_length);
        self.shape.signed_distance(self.object_pose().inverse().transform_point(base)) > 0.0
    }

    /// The stored-grasp predicate: antipodal cone and width, two distinct
    /// regions with x pointing from the lower to the higher region index,
    /// and a finger base outside the object.
    pub fn check(&self, grasp: &[f64; 7]) -> std::result::Result<(usize, usize), GraspCheck> {
        let g = Pose::from_array(*grasp).ok_or(GraspCheck::BadPose)?;
        let c = self.contacts(&g).ok_or(GraspCheck::NoChord)?;
        if c.width() > self.max_width {
            return Err(GraspCheck::Width);
        }
        if !friction_cone_ok(&c, self.mu) {
            return Err(GraspCheck::FrictionCone);
        }
        let (a, b) = match region_match(c.c1.point, c.c2.point, self.hand) {
            RegionMatch::Accept { regions } => regions,
            other => return Err(GraspCheck::Region(other)),
        };
        if a > b {
            return Err(GraspCheck::Orientation);
        }
        if !self.finger_base_clear(&g) {
            return Err(GraspCheck::Collision);
        }
        Ok((a, b))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: usize,
    pub class: GraspClass,
    pub class_label: usize,
    pub shape: Shape,
    pub hand: HandProxy,
    pub condition: ConditionBundle,
    pub engaged_regions: Vec<usize>,
    /// Wrist-frame grasps, `px py pz qw qx qy qz`.
    pub grasps: Vec<[f64; 7]>,
    pub attempts: usize,
    pub region_checked: usize,
    pub region_accepted: usize,
}

impl SceneRecord {
    pub fn grasp_poses(&self) -> Result<Vec<Pose>> {
        self.grasps
            .iter()
            .map(|a| Pose::from_array(*a).ok_or_else(|| Error::NonFinite(format!("scene {} has an invalid pose", self.scene_id))))
            .collect()
    }

    pub fn geometry<'a>(&'a self, spec: &DatasetSpec) -> SceneGeometry<'a> {
        SceneGeometry {
            shape: &self.shape,
            hand: &self.hand,
            mu: spec.mu,
            max_width: spec.max_width,
            finger_length: spec.finger_length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub seed: u64,
    pub spec: DatasetSpec,
    pub feature_dim: usize,
    pub scenes: usize,
    pub dropped: usize,
    pub attempts: usize,
    pub region_checked: usize,
    pub region_accepted: usize,
    /// Hash of the run configuration that produced the file, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl DatasetHeader {
    pub fn region_acceptance_rate(&self) -> f64 {
        self.region_accepted as f64 / self.region_checked.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspDataset {
    pub header: DatasetHeader,
    pub scenes: Vec<SceneRecord>,
}

struct Layout {
    hand: HandProxy,
    object_pose: Pose,
    palm: Vec3,
    slots: Vec<(Vec3, Vec3)>,
}

fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuat {
    let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    UnitQuat::new(v[0], v[1], v[2], v[3]).unwrap_or(UnitQuat::IDENTITY)
}

fn random_shape<R: Rng + ?Sized>(kind: PrimitiveKind, rng: &mut R) -> Shape {
    match kind {
        PrimitiveKind::Box => Shape::Box {
            size: [rng.random_range(0.03..0.07), rng.random_range(0.03..0.07), rng.random_range(0.05..0.15)],
        },
        PrimitiveKind::Cylinder => {
            Shape::Cylinder { radius: rng.random_range(0.015..0.04), height: rng.random_range(0.05..0.15) }
        }
        PrimitiveKind::Sphere => Shape::Sphere { radius: rng.random_range(0.025..0.04) },
    }
}

fn approach_toward(palm: Vec3, c: &AntipodalCandidate) -> Vec3 {
    palm - c.midpoint()
}

/// Places the object, the palm and one antipodal chord per class pair.
fn build_layout<R: Rng + ?Sized>(class: GraspClass, mesh: &PrimitiveMesh, spec: &DatasetSpec, rng: &mut R) -> Option<Layout> {
    let dist = rng.random_range(0.12..0.14);
    let dir = (Vec3::Y * -3.0 + gaussian_vec(rng) * 0.3).normalized()?;
    let object_pose = Pose::new(dir * dist, random_rotation(rng));
    let palm = dir * 0.02;
    let mut centers: Vec<Option<Vec3>> = vec![None; NUM_HAND_REGIONS];
    centers[PALM] = Some(palm);
    let mut slots = Vec::new();
    let far_enough = |p: Vec3, centers: &[Option<Vec3>]| {
        centers.iter().flatten().all(|c| (*c - p).norm() > 2.2 * spec.region_radius)
    };
    for &(a, b) in class.region_pairs() {
        let mut placed = false;
        for _ in 0..2000 {
            let Ok(Some(local)) = sample_antipodal(mesh, spec.mu, spec.max_width, rng) else { continue };
            let c = local.transformed(&object_pose);
            let Some(grasp) = c.pose(approach_toward(palm, &c)) else { continue };
            let base = object_pose.inverse().transform_point(grasp.transform_point(Vec3::Y * spec.finger_length));
            // keep a margin so that nearby grasps in the mode clear the object too
            if mesh.shape.signed_distance(base) < 0.01 {
                continue;
            }
            if !far_enough(c.c1.point, &centers) || !far_enough(c.c2.point, &centers) {
                continue;
            }
            let c = if rng.random::<bool>() { c } else { c.swapped() };
            centers[a] = Some(c.c1.point);
            centers[b] = Some(c.c2.point);
            let (lo, hi) = if a < b { (c.c1.point, c.c2.point) } else { (c.c2.point, c.c1.point) };
            slots.push(((lo + hi) * 0.5, (hi - lo).normalized()?));
            placed = true;
            break;
        }
        if !placed {
            return None;
        }
    }
    // unused regions sit behind the palm, away from the object
    let back = -dir;
    let mut k = 1.0;
    for c in centers.iter_mut().filter(|c| c.is_none()) {
        *c = Some(palm + back * (0.01 * k));
        k += 1.0;
    }
    let hand = HandProxy::new(centers.into_iter().flatten().collect(), spec.region_radius, &object_pose).ok()?;
    Some(Layout { hand, object_pose, palm, slots })
}

fn condition_feature<R: Rng + ?Sized>(class: GraspClass, layout: &Layout, noise: f64, rng: &mut R) -> Vec<f64> {
    let mut f = vec![0.0; FEATURE_DIM];
    f[class.ordinal()] = 1.0;
    let base = GraspClass::ALL.len();
    f[base..base + 3].copy_from_slice(&layout.palm.to_array());
    for (k, (mid, axis)) in layout.slots.iter().enumerate() {
        let o = base + 3 + 7 * k;
        f[o] = 1.0;
        f[o + 1..o + 4].copy_from_slice(&mid.to_array());
        f[o + 4..o + 7].copy_from_slice(&axis.to_array());
    }
    if noise > 0.0 {
        let n = Normal::new(0.0, noise).expect("validated noise");
        for v in &mut f {
            *v += n.sample(rng);
        }
    }
    f
}

/// Generates one scene from its own rng stream; `None` when every layout
/// attempt fails to reach `min_grasps`.
pub fn generate_scene(scene_id: usize, spec: &DatasetSpec, seed: u64) -> Option<SceneRecord> {
    let class = spec.classes[scene_id % spec.classes.len()];
    let kind = spec.kinds[(scene_id / spec.classes.len()) % spec.kinds.len()];
    let mut rng = stream_rng(seed, domain::DATAGEN, scene_id as u64);
    let jitter = Normal::new(0.0, spec.approach_jitter).ok()?;
    let mut attempts = 0;
    let (mut checked, mut accepted_regions) = (0, 0);
    for _ in 0..spec.layout_retries {
        // a fresh primitive per retry; some draws admit no layout at all
        let shape = random_shape(kind, &mut rng);
        let mesh = PrimitiveMesh::new(shape, 32).ok()?;
        let Some(layout) = build_layout(class, &mesh, spec, &mut rng) else { continue };
        let geo = SceneGeometry {
            shape: &shape,
            hand: &layout.hand,
            mu: spec.mu,
            max_width: spec.max_width,
            finger_length: spec.finger_length,
        };
        let mut grasps = Vec::new();
        let mut counts = [0usize; NUM_HAND_REGIONS];
        let mut tries = 0;
        while grasps.len() < spec.grasps_per_scene && tries < spec.attempt_budget {
            tries += 1;
            let Ok(Some(local)) = sample_antipodal(&mesh, spec.mu, spec.max_width, &mut rng) else { continue };
            let c = local.transformed(&layout.object_pose);
            checked += 1;
            let Some((a, b)) = region_match(c.c1.point, c.c2.point, &layout.hand).accepted() else { continue };
            accepted_regions += 1;
            let c = if a < b { c } else { c.swapped() };
            let x = c.closing_axis();
            let Some(frame) = c.pose(approach_toward(layout.palm, &c)) else { continue };
            let twist = exp_so3(x * jitter.sample(&mut rng));
            let grasp = Pose::new(frame.p, twist * frame.q).to_array();
            if let Ok((lo, hi)) = geo.check(&grasp) {
                counts[lo] += 1;
                counts[hi] += 1;
                grasps.push(grasp);
            }
        }
        attempts += tries;
        if grasps.len() < spec.min_grasps {
            continue;
        }
        let n = grasps.len() as f64;
        let engaged: Vec<usize> =
            (0..NUM_HAND_REGIONS).filter(|&r| counts[r] as f64 / n >= ENGAGED_FRACTION).collect();
        let contact_target = (0..NUM_HAND_REGIONS).map(|r| if engaged.contains(&r) { 1.0 } else { 0.0 }).collect();
        let feature = condition_feature(class, &layout, spec.feature_noise, &mut rng);
        return Some(SceneRecord {
            scene_id,
            class,
            class_label: class.taxonomy_index(),
            shape,
            hand: layout.hand,
            condition: ConditionBundle { feature, class_label: class.taxonomy_index(), contact_target, null_flag: false },
            engaged_regions: engaged,
            grasps,
            attempts,
            region_checked: checked,
            region_accepted: accepted_regions,
        });
    }
    None
}

/// Generates all scenes in parallel (one rng stream per scene) and keeps
/// them in scene order.
pub fn build_dataset(spec: &DatasetSpec, seed: u64) -> Result<GraspDataset> {
    let errs = spec.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs.join("; ")));
    }
    let results: Vec<Option<SceneRecord>> =
        (0..spec.num_scenes).into_par_iter().map(|i| generate_scene(i, spec, seed)).collect();
    let dropped = results.iter().filter(|r| r.is_none()).count();
    let scenes: Vec<SceneRecord> = results.into_iter().flatten().collect();
    if scenes.is_empty() {
        return Err(Error::Empty(format!("all {} scenes failed to reach {} grasps", spec.num_scenes, spec.min_grasps)));
    }
    let header = DatasetHeader {
        schema_version: SCHEMA_VERSION,
        seed,
        spec: spec.clone(),
        feature_dim: FEATURE_DIM,
        scenes: scenes.len(),
        dropped,
        attempts: scenes.iter().map(|s| s.attempts).sum(),
        region_checked: scenes.iter().map(|s| s.region_checked).sum(),
        region_accepted: scenes.iter().map(|s| s.region_accepted).sum(),
        config_hash: None,
    };
    Ok(GraspDataset { header, scenes })
}

/// Re-validation summary: how many stored grasps pass the stored predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RevalidationReport {
    pub grasps: usize,
    pub passed: usize,
    pub cone_failures: usize,
    pub region_failures: usize,
}

impl GraspDataset {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for s in &self.scenes {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, |w| self.write_jsonl(w))
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines.next().ok_or_else(|| Error::Empty("dataset file is empty".into()))??;
        let header: DatasetHeader = serde_json::from_str(&first)?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "dataset schema {} is not supported (expected {SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let mut scenes = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: SceneRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse(format!("dataset line {}: {e}", i + 2)))?;
            s.hand.validate()?;
            s.shape.validate()?;
            if s.condition.feature.len() != header.feature_dim {
                return Err(Error::Shape(format!("scene {} feature has {} entries", s.scene_id, s.condition.feature.len())));
            }
            scenes.push(s);
        }
        if scenes.len() != header.scenes {
            return Err(Error::Parse(format!("header lists {} scenes, file has {}", header.scenes, scenes.len())));
        }
        Ok(Self { header, scenes })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn revalidate(&self) -> RevalidationReport {
        let mut rep = RevalidationReport { grasps: 0, passed: 0, cone_failures: 0, region_failures: 0 };
        for s in &self.scenes {
            let geo = s.geometry(&self.header.spec);
            for g in &s.grasps {
                rep.grasps += 1;
                match geo.check(g) {
                    Ok(_) => rep.passed += 1,
                    Err(GraspCheck::FrictionCone) => rep.cone_failures += 1,
                    Err(GraspCheck::Region(_)) => rep.region_failures += 1,
                    Err(_) => {}
                }
            }
        }
        rep
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> DatasetSpec {
        DatasetSpec { num_scenes: 16, ..Default::default() }
    }

    #[test]
    fn sphere_grasps_pass_through_center() {
        let mesh = PrimitiveMesh::new(Shape::Sphere { radius: 1.0 }, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (cands, _) = sample_antipodal_batch(&mesh, 0.3, 2.5, 200, 1000, &mut rng).unwrap();
        assert_eq!(cands.len(), 200);
        for c in cands {
            let x = c.closing_axis();
            let off = c.c1.point - x * c.c1.point.dot(x);
            assert!(off.norm() < 1e-6);
        }
        assert!(sample_antipodal(&mesh, 0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn box_width_limit() {
        let mesh = PrimitiveMesh::new(Shape::Box { size: [0.04, 0.1, 0.2] }, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (cands, tries) = sample_antipodal_batch(&mesh, 0.5, 0.085, 300, 100_000, &mut rng).unwrap();
        assert_eq!(cands.len(), 300);
        assert!(tries > 300);
        for c in &cands {
            assert!((c.width() - 0.04).abs() < 1e-12);
            assert!(c.closing_axis().x.abs() > 1.0 - 1e-12);
        }
    }

    /// Cone angles recomputed from the triangle mesh (Möller–Trumbore) along
    /// the closing line, independent of the analytic normals.
    #[test]
    fn cone_recheck_against_mesh() {
        let mu: f64 = 0.5;
        let cos_max = mu.atan().cos();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for shape in [
            Shape::Box { size: [0.05, 0.06, 0.12] },
            Shape::Cylinder { radius: 0.03, height: 0.1 },
            Shape::Sphere { radius: 0.035 },
        ] {
            let mesh = PrimitiveMesh::new(shape, 256).unwrap();
            let (cands, _) = sample_antipodal_batch(&mesh, mu, 0.085, 200, 10_000, &mut rng).unwrap();
            assert!(!cands.is_empty());
            for c in cands {
                let x = c.closing_axis();
                let hits = mesh.raycast_all(c.midpoint(), x);
                let back = mesh.raycast_all(c.midpoint(), -x);
                let (Some(h2), Some(h1)) = (hits.first(), back.first()) else { panic!("mesh missed chord") };
                assert!(h2.1.dot(x) >= cos_max && h1.1.dot(-x) >= cos_max, "{shape:?}");
            }
        }
    }

    #[test]
    fn cylinder_closing_axes_are_radial_or_axial() {
        let mesh = PrimitiveMesh::new(Shape::Cylinder { radius: 0.03, height: 0.07 }, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (cands, _) = sample_antipodal_batch(&mesh, 0.5, 0.085, 500, 10_000, &mut rng).unwrap();
        let mut radial = 0;
        for c in &cands {
            let x = c.closing_axis();
            if x.z.abs() > 1.0 - 1e-9 {
                continue;
            }
            assert!(x.z.abs() < 1e-9);
            // the closing line passes through the cylinder axis
            let m = c.midpoint();
            assert!(Vec3::new(m.x, m.y, 0.0).norm() < 1e-9);
            radial += 1;
        }
        assert!(radial > cands.len() / 2);
    }

    #[test]
    fn dataset_is_deterministic_and_revalidates() {
        let spec = small_spec();
        let a = build_dataset(&spec, 11).unwrap();
        let b = build_dataset(&spec, 11).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        a.write_jsonl(&mut ba).unwrap();
        b.write_jsonl(&mut bb).unwrap();
        assert_eq!(ba, bb);
        let c = build_dataset(&spec, 12).unwrap();
        let mut bc = Vec::new();
        c.write_jsonl(&mut bc).unwrap();
        assert_ne!(ba, bc);

        let back = GraspDataset::read_jsonl(&ba[..]).unwrap();
        assert_eq!(back, a);
        let rep = back.revalidate();
        assert_eq!(rep.passed, rep.grasps);
        assert!(rep.grasps >= 32 * back.scenes.len());
        let rate = a.header.region_acceptance_rate();
        assert!(rate > 0.0 && rate < 1.0, "{rate}");
        for s in &a.scenes {
            assert!(s.grasps.len() >= spec.min_grasps && s.grasps.len() <= spec.grasps_per_scene);
            assert_eq!(s.condition.feature.len(), FEATURE_DIM);
            assert!(s.engaged_regions.len() >= 2);
            assert_eq!(s.class_label, s.class.taxonomy_index());
        }
    }

    #[test]
    fn reload_rejects_tampering() {
        let spec = DatasetSpec { num_scenes: 2, ..Default::default() };
        let ds = build_dataset(&spec, 1).unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let extra = format!("{text}{}\n", text.lines().last().unwrap());
        assert!(GraspDataset::read_jsonl(extra.as_bytes()).is_err());
        let bumped = text.replacen("\"schema_version\":1", "\"schema_version\":9", 1);
        assert!(GraspDataset::read_jsonl(bumped.as_bytes()).is_err());
        assert!(GraspDataset::read_jsonl(&b""[..]).is_err());

        let mut moved = ds.clone();
        moved.scenes[0].grasps[0][0] += 0.5;
        assert!(moved.revalidate().passed < moved.revalidate().grasps);
    }

    #[test]
    fn spec_validation_lists_all_errors() {
        let bad = DatasetSpec { num_scenes: 0, mu: -1.0, min_grasps: 0, ..Default::default() };
        assert_eq!(bad.validate().len(), 3);
        assert!(build_dataset(&bad, 0).is_err());
    }
}
