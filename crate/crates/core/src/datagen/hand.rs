//! 16-region hand proxy, taxonomy classes and region-conditioned matching.

use crate::error::{Error, Result};
use crate::lie::{Pose, Vec3};
use serde::{Deserialize, Serialize};

pub const NUM_HAND_REGIONS: usize = 16;
pub const PALM: usize = 0;

/// The eight grasp classes of the synthetic set, with their 0-based index
/// in the 33-class taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraspClass {
    SmallDiameter,
    MediumWrap,
    PalmarPinch,
    Tripod,
    Lateral,
    ParallelExtension,
    Sphere4Finger,
    Stick,
}

impl GraspClass {
    pub const ALL: [GraspClass; 8] = [
        GraspClass::SmallDiameter,
        GraspClass::MediumWrap,
        GraspClass::PalmarPinch,
        GraspClass::Tripod,
        GraspClass::Lateral,
        GraspClass::ParallelExtension,
        GraspClass::Sphere4Finger,
        GraspClass::Stick,
    ];

    pub fn taxonomy_index(self) -> usize {
        match self {
            GraspClass::SmallDiameter => 1,
            GraspClass::MediumWrap => 2,
            GraspClass::PalmarPinch => 8,
            GraspClass::Tripod => 13,
            GraspClass::Lateral => 15,
            GraspClass::ParallelExtension => 21,
            GraspClass::Sphere4Finger => 25,
            GraspClass::Stick => 28,
        }
    }

    pub fn from_taxonomy_index(k: usize) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.taxonomy_index() == k)
    }

    /// Position among the eight synthetic classes.
    pub fn ordinal(self) -> usize {
        Self::ALL.iter().position(|&c| c == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            GraspClass::SmallDiameter => "small_diameter",
            GraspClass::MediumWrap => "medium_wrap",
            GraspClass::PalmarPinch => "palmar_pinch",
            GraspClass::Tripod => "tripod",
            GraspClass::Lateral => "lateral",
            GraspClass::ParallelExtension => "parallel_extension",
            GraspClass::Sphere4Finger => "sphere_4_finger",
            GraspClass::Stick => "stick",
        }
    }

    /// Opposing region pairs that the class places on the object. Regions:
    /// 0 palm, 1–3 thumb (3 = tip), 4–6 index, 7–9 middle, 10–12 ring, 13–15 little.
    pub fn region_pairs(self) -> &'static [(usize, usize)] {
        match self {
            GraspClass::SmallDiameter => &[(2, 5), (1, 8)],
            GraspClass::MediumWrap => &[(2, 5), (1, 8), (11, 14)],
            GraspClass::PalmarPinch => &[(3, 6)],
            GraspClass::Tripod => &[(3, 6), (2, 9)],
            GraspClass::Lateral => &[(3, 5)],
            GraspClass::ParallelExtension => &[(3, 6), (2, 9), (1, 12)],
            GraspClass::Sphere4Finger => &[(3, 6), (2, 9), (1, 12), (11, 15)],
            GraspClass::Stick => &[(3, 5), (2, 8)],
        }
    }
}

impl std::str::FromStr for GraspClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| Error::Parse(format!("unknown grasp class '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandProxy {
    pub region_centers: Vec<[f64; 3]>,
    pub region_radius: f64,
    /// Object pose in the wrist frame.
    pub object_pose: [f64; 7],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionMatch {
    Accept { regions: (usize, usize) },
    SameRegion(usize),
    Unassigned,
}

impl RegionMatch {
    pub fn accepted(&self) -> Option<(usize, usize)> {
        match *self {
            RegionMatch::Accept { regions } => Some(regions),
            _ => None,
        }
    }
}

impl HandProxy {
    pub fn new(region_centers: Vec<Vec3>, region_radius: f64, object_pose: &Pose) -> Result<Self> {
        let hp = Self {
            region_centers: region_centers.iter().map(|c| c.to_array()).collect(),
            region_radius,
            object_pose: object_pose.to_array(),
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.region_centers.len() != NUM_HAND_REGIONS {
            return Err(Error::Shape(format!("hand proxy needs {NUM_HAND_REGIONS} regions, got {}", self.region_centers.len())));
        }
        if !(self.region_radius > 0.0 && self.region_radius.is_finite()) {
            return Err(Error::InvalidArgument("region_radius must be positive".into()));
        }
        for i in 0..NUM_HAND_REGIONS {
            for j in 0..i {
                if self.center(i) == self.center(j) {
                    return Err(Error::InvalidArgument(format!("region centers {j} and {i} coincide")));
                }
            }
        }
        Ok(())
    }

    pub fn center(&self, i: usize) -> Vec3 {
        Vec3::from_array(self.region_centers[i])
    }

    /// Nearest region whose center lies within `region_radius`; ties go to
    /// the lower index.
    pub fn assign(&self, p: Vec3) -> Option<usize> {
        let r2 = self.region_radius * self.region_radius;
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.region_centers.len() {
            let d2 = (self.center(i) - p).norm_squared();
            if d2 <= r2 && best.is_none_or(|(_, b)| d2 < b) {
                best = Some((i, d2));
            }
        }
        best.map(|b| b.0)
    }
}

/// Assigns both jaw contacts (wrist frame) to regions; accepts when both
/// are assigned to different regions.
pub fn region_match(c1: Vec3, c2: Vec3, hand: &HandProxy) -> RegionMatch {
    match (hand.assign(c1), hand.assign(c2)) {
        (Some(a), Some(b)) if a != b => RegionMatch::Accept { regions: (a, b) },
        (Some(a), Some(_)) => RegionMatch::SameRegion(a),
        _ => RegionMatch::Unassigned,
    }
}
