//! Box, cylinder and sphere primitives centred at the origin of their own
//! frame (cylinder axis along z), with analytic ray casting, surface
//! sampling and a faceted triangle mesh.

use crate::error::{Error, Result};
use crate::igso3::uniform_axis;
use crate::lie::Vec3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveKind {
    Box,
    Cylinder,
    Sphere,
}

impl std::str::FromStr for PrimitiveKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "box" => Ok(Self::Box),
            "cylinder" => Ok(Self::Cylinder),
            "sphere" => Ok(Self::Sphere),
            other => Err(Error::Parse(format!("unknown primitive '{other}'"))),
        }
    }
}

/// Shape parameters in metres. Box: full extents; cylinder: radius and
/// height; sphere: radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Box { size: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub v: [Vec3; 3],
    pub normal: Vec3,
}

/// A surface point with its outward unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub point: Vec3,
    pub normal: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveMesh {
    pub shape: Shape,
    pub triangles: Vec<Triangle>,
}

impl Shape {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Shape::Box { .. } => PrimitiveKind::Box,
            Shape::Cylinder { .. } => PrimitiveKind::Cylinder,
            Shape::Sphere { .. } => PrimitiveKind::Sphere,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Box { size } => size.iter().all(|&s| s > 0.0 && s.is_finite()),
            Shape::Cylinder { radius, height } => radius > 0.0 && height > 0.0 && radius.is_finite() && height.is_finite(),
            Shape::Sphere { radius } => radius > 0.0 && radius.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("primitive dimensions must be positive: {self:?}")))
        }
    }

    /// Dimensions as a fixed 3-vector (box extents; cylinder `(r, r, h)`; sphere `(r, r, r)`).
    pub fn dims(&self) -> [f64; 3] {
        match *self {
            Shape::Box { size } => size,
            Shape::Cylinder { radius, height } => [radius, radius, height],
            Shape::Sphere { radius } => [radius; 3],
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Shape::Box { size: [a, b, c] } => 2.0 * (a * b + b * c + a * c),
            Shape::Cylinder { radius, height } => 2.0 * PI * radius * height + 2.0 * PI * radius * radius,
            Shape::Sphere { radius } => 4.0 * PI * radius * radius,
        }
    }

    /// Exact signed distance (negative inside).
    pub fn signed_distance(&self, p: Vec3) -> f64 {
        match *self {
            Shape::Box { size } => {
                let q = [p.x.abs() - size[0] / 2.0, p.y.abs() - size[1] / 2.0, p.z.abs() - size[2] / 2.0];
                let outside = Vec3::new(q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)).norm();
                outside + q[0].max(q[1]).max(q[2]).min(0.0)
            }
            Shape::Cylinder { radius, height } => {
                let dr = (p.x * p.x + p.y * p.y).sqrt() - radius;
                let dz = p.z.abs() - height / 2.0;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                outside + dr.max(dz).min(0.0)
            }
            Shape::Sphere { radius } => p.norm() - radius,
        }
    }

    /// Parameter interval `[t_in, t_out]` where the line `o + t d` is inside.
    pub fn line_interval(&self, o: Vec3, d: Vec3) -> Option<(f64, f64, Vec3, Vec3)> {
        match *self {
            Shape::Box { size } => {
                let half = [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0];
                let (oa, da) = (o.to_array(), d.to_array());
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut n0, mut n1) = (Vec3::ZERO, Vec3::ZERO);
                for i in 0..3 {
                    if da[i] == 0.0 {
                        if oa[i].abs() > half[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half[i] - oa[i]) / da[i];
                    let b = (half[i] - oa[i]) / da[i];
                    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                    let s = da[i].signum();
                    if lo > t0 {
                        t0 = lo;
                        n0 = Vec3::basis(i) * -s;
                    }
                    if hi < t1 {
                        t1 = hi;
                        n1 = Vec3::basis(i) * s;
                    }
                }
                (t0 <= t1).then_some((t0, t1, n0, n1))
            }
            Shape::Cylinder { radius, height } => {
                let h = height / 2.0;
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                let (mut n0, mut n1) = (Vec3::ZERO, Vec3::ZERO);
                let a = d.x * d.x + d.y * d.y;
                if a > 1e-300 {
                    let b = o.x * d.x + o.y * d.y;
                    let c = o.x * o.x + o.y * o.y - radius * radius;
                    let disc = b * b - a * c;
                    if disc < 0.0 {
                        return None;
                    }
                    let sq = disc.sqrt();
                    t0 = (-b - sq) / a;
                    t1 = (-b + sq) / a;
                    let radial = |t: f64| {
                        let p = o + d * t;
                        Vec3::new(p.x, p.y, 0.0) * (1.0 / radius)
                    };
                    n0 = radial(t0);
                    n1 = radial(t1);
                } else if o.x * o.x + o.y * o.y > radius * radius {
                    return None;
                }
                if d.z == 0.0 {
                    if o.z.abs() > h {
                        return None;
                    }
                } else {
                    let za = (-h - o.z) / d.z;
                    let zb = (h - o.z) / d.z;
                    let (lo, hi) = if za < zb { (za, zb) } else { (zb, za) };
                    let s = d.z.signum();
                    if lo > t0 {
                        t0 = lo;
                        n0 = Vec3::Z * -s;
                    }
                    if hi < t1 {
                        t1 = hi;
                        n1 = Vec3::Z * s;
                    }
                }
                (t0 <= t1).then_some((t0, t1, n0, n1))
            }
            Shape::Sphere { radius } => {
                let a = d.norm_squared();
                let b = o.dot(d);
                let c = o.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 || a == 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let (t0, t1) = ((-b - sq) / a, (-b + sq) / a);
                let n = |t: f64| (o + d * t) * (1.0 / radius);
                Some((t0, t1, n(t0), n(t1)))
            }
        }
    }

    /// Where a ray from `o` along unit `d` leaves the solid, if `o` is inside
    /// or on the surface.
    pub fn exit(&self, o: Vec3, d: Vec3) -> Option<SurfacePoint> {
        let (_, t1, _, n1) = self.line_interval(o, d)?;
        (t1 > 0.0).then(|| SurfacePoint { point: o + d * t1, normal: n1 })
    }

    /// Area-uniform surface sample.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R) -> SurfacePoint {
        match *self {
            Shape::Sphere { radius } => {
                let u = uniform_axis(rng);
                SurfacePoint { point: u * radius, normal: u }
            }
            Shape::Cylinder { radius, height } => {
                let side = 2.0 * PI * radius * height;
                let cap = PI * radius * radius;
                let pick = rng.random_range(0.0..side + 2.0 * cap);
                let h = height / 2.0;
                if pick < side {
                    let th = rng.random_range(0.0..2.0 * PI);
                    let n = Vec3::new(th.cos(), th.sin(), 0.0);
                    SurfacePoint { point: n * radius + Vec3::Z * rng.random_range(-h..h), normal: n }
                } else {
                    let s = if pick < side + cap { 1.0 } else { -1.0 };
                    let r = radius * rng.random::<f64>().sqrt();
                    let th = rng.random_range(0.0..2.0 * PI);
                    SurfacePoint { point: Vec3::new(r * th.cos(), r * th.sin(), s * h), normal: Vec3::Z * s }
                }
            }
            Shape::Box { size } => {
                let faces = [size[1] * size[2], size[0] * size[2], size[0] * size[1]];
                let total = 2.0 * (faces[0] + faces[1] + faces[2]);
                let mut pick = rng.random_range(0.0..total);
                let mut axis = 2;
                for (i, a) in faces.iter().enumerate() {
                    if pick < 2.0 * a {
                        axis = i;
                        break;
                    }
                    pick -= 2.0 * a;
                }
                let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let mut p = [0.0; 3];
                for k in 0..3 {
                    p[k] = if k == axis { s * size[k] / 2.0 } else { rng.random_range(-size[k] / 2.0..size[k] / 2.0) };
                }
                SurfacePoint { point: Vec3::from_array(p), normal: Vec3::basis(axis) * s }
            }
        }
    }
}

impl PrimitiveMesh {
    /// Tessellates `shape`; `segments` sets the angular resolution of curved surfaces.
    pub fn new(shape: Shape, segments: usize) -> Result<Self> {
        shape.validate()?;
        let segments = segments.max(8);
        let mut tris = Vec::new();
        let mut push = |a: Vec3, b: Vec3, c: Vec3| {
            let n = (b - a).cross(c - a);
            if let Some(n) = n.normalized() {
                tris.push(Triangle { v: [a, b, c], normal: n });
            }
        };
        match shape {
            Shape::Box { size } => {
                let h = [size[0] / 2.0, size[1] / 2.0, size[2] / 2.0];
                for axis in 0..3 {
                    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                    for s in [1.0, -1.0] {
                        let corner = |a: f64, b: f64| {
                            let mut p = [0.0; 3];
                            p[axis] = s * h[axis];
                            p[u] = a * h[u];
                            p[v] = b * h[v];
                            Vec3::from_array(p)
                        };
                        let (c00, c10, c11, c01) = (corner(-1.0, -1.0), corner(1.0, -1.0), corner(1.0, 1.0), corner(-1.0, 1.0));
                        if s > 0.0 {
                            push(c00, c10, c11);
                            push(c00, c11, c01);
                        } else {
                            push(c00, c11, c10);
                            push(c00, c01, c11);
                        }
                    }
                }
            }
            Shape::Cylinder { radius, height } => {
                let h = height / 2.0;
                let ring = |k: usize, z: f64| {
                    let th = 2.0 * PI * k as f64 / segments as f64;
                    Vec3::new(radius * th.cos(), radius * th.sin(), z)
                };
                for k in 0..segments {
                    let (a0, a1, b0, b1) = (ring(k, -h), ring(k + 1, -h), ring(k, h), ring(k + 1, h));
                    push(a0, a1, b1);
                    push(a0, b1, b0);
                    push(Vec3::Z * h, b0, b1);
                    push(Vec3::Z * -h, a1, a0);
                }
            }
            Shape::Sphere { radius } => {
                let rings = segments / 2;
                let pt = |i: usize, j: usize| {
                    let th = PI * i as f64 / rings as f64;
                    let ph = 2.0 * PI * j as f64 / segments as f64;
                    Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()) * radius
                };
                for i in 0..rings {
                    for j in 0..segments {
                        let (a, b, c, d) = (pt(i, j), pt(i + 1, j), pt(i + 1, j + 1), pt(i, j + 1));
                        if i != 0 {
                            push(a, b, d);
                        }
                        if i + 1 != rings {
                            push(b, c, d);
                        }
                    }
                }
            }
        }
        Ok(Self { shape, triangles: tris })
    }

    /// All ray/triangle hits `t > 0` along `o + t d`, sorted.
    pub fn raycast_all(&self, o: Vec3, d: Vec3) -> Vec<(f64, Vec3)> {
        let mut hits: Vec<(f64, Vec3)> =
            self.triangles.iter().filter_map(|tri| moller_trumbore(o, d, tri).map(|t| (t, tri.normal))).collect();
        hits.sort_by(|a, b| a.0.total_cmp(&b.0));
        hits
    }

    /// Watertightness proxy: every edge is shared by exactly two triangles
    /// with opposite orientation.
    pub fn is_closed(&self) -> bool {
        use std::collections::HashMap;
        let key = |p: Vec3| {
            let q = |x: f64| (x * 1e9).round() as i64;
            (q(p.x), q(p.y), q(p.z))
        };
        let mut edges: HashMap<((i64, i64, i64), (i64, i64, i64)), i32> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (key(t.v[k]), key(t.v[(k + 1) % 3]));
                *edges.entry((a, b)).or_default() += 1;
            }
        }
        edges.iter().all(|(&(a, b), &n)| n == 1 && edges.get(&(b, a)) == Some(&1))
    }
}

/// Ray/triangle intersection; returns the ray parameter of the hit.
pub fn moller_trumbore(o: Vec3, d: Vec3, tri: &Triangle) -> Option<f64> {
    const EPS: f64 = 1e-12;
    let e1 = tri.v[1] - tri.v[0];
    let e2 = tri.v[2] - tri.v[0];
    let p = d.cross(e2);
    let det = e1.dot(p);
    if det.abs() < EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = o - tri.v[0];
    let u = s.dot(p) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(e1);
    let v = d.dot(q) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(q) * inv;
    (t > EPS).then_some(t)
}
