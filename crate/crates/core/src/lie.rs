//! SO(3) / SE(3) primitives.
//!
//! Quaternions are scalar-first `(w, x, y, z)`. Rotation vectors live in
//! `so(3)` with the angle as their norm. Poses compose in the body frame:
//!
//! ```text
//! (p, q) ∘ (dp, dq) = (p + R(q) J(Log dq) dp,  q ⊗ dq)
//! ```
//!
//! which is the right action of the SE(3) exponential of the twist
//! `(dp, Log dq)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Below this angle the trigonometric ratios switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Unit basis vector `e_i`.
    pub fn basis(i: usize) -> Self {
        match i {
            0 => Self::X,
            1 => Self::Y,
            2 => Self::Z,
            _ => panic!("basis index {i} out of range"),
        }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    /// Returns `None` for (near-)zero vectors.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 1e-300 && n.is_finite()).then(|| self.scale(1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    /// Skew-symmetric matrix `[v]×` so that `[v]× u = v × u`.
    pub fn skew(v: Vec3) -> Mat3 {
        Mat3([[0.0, -v.z, v.y], [v.z, 0.0, -v.x], [-v.y, v.x, 0.0]])
    }

    pub fn from_columns(c0: Vec3, c1: Vec3, c2: Vec3) -> Mat3 {
        Mat3([[c0.x, c1.x, c2.x], [c0.y, c1.y, c2.y], [c0.z, c1.z, c2.z]])
    }

    pub fn column(&self, j: usize) -> Vec3 {
        Vec3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3::new(
            m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
            m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
            m[2][0] * v.x + m[2][1] * v.y + m[2][2] * v.z,
        )
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(r)
    }

    pub fn add(&self, o: &Mat3) -> Mat3 {
        let mut r = self.0;
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] += o.0[i][j];
            }
        }
        Mat3(r)
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut r = self.0;
        r.iter_mut().flatten().for_each(|v| *v *= s);
        Mat3(r)
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Row-major flattening, used as the network's rotation input.
    pub fn flatten(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        ]
    }

    pub fn max_abs_diff(&self, o: &Mat3) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(o.0.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Unit quaternion, scalar first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuat {
    pub const IDENTITY: UnitQuat = UnitQuat { w: 1.0, x: 0.0, y: 0.0, z: 0.0 };

    /// Normalizes the given components. Returns `None` for zero or non-finite input.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Option<Self> {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !(n.is_finite() && n > 1e-300) {
            return None;
        }
        Some(Self { w: w / n, x: x / n, y: y / n, z: z / n })
    }

    fn renormalized(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self::new(w, x, y, z).expect("quaternion product of unit inputs is nonzero")
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Same rotation with `w ≥ 0`.
    pub fn canonical(&self) -> UnitQuat {
        if self.w < 0.0 {
            UnitQuat { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
        } else {
            *self
        }
    }

    pub fn conjugate(&self) -> UnitQuat {
        UnitQuat { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn inverse(&self) -> UnitQuat {
        self.conjugate()
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        // v' = v + 2w (u × v) + 2 u × (u × v)
        let u = self.vector();
        let t = u.cross(v) * 2.0;
        v + t * self.w + u.cross(t)
    }

    pub fn to_matrix(&self) -> Mat3 {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Mat3([
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ])
    }

    /// Shepperd's method. The input must be a rotation matrix.
    pub fn from_matrix(m: &Mat3) -> UnitQuat {
        let r = &m.0;
        let tr = r[0][0] + r[1][1] + r[2][2];
        let q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            (0.25 * s, (r[2][1] - r[1][2]) / s, (r[0][2] - r[2][0]) / s, (r[1][0] - r[0][1]) / s)
        } else if r[0][0] > r[1][1] && r[0][0] > r[2][2] {
            let s = (1.0 + r[0][0] - r[1][1] - r[2][2]).sqrt() * 2.0;
            ((r[2][1] - r[1][2]) / s, 0.25 * s, (r[0][1] + r[1][0]) / s, (r[0][2] + r[2][0]) / s)
        } else if r[1][1] > r[2][2] {
            let s = (1.0 + r[1][1] - r[0][0] - r[2][2]).sqrt() * 2.0;
            ((r[0][2] - r[2][0]) / s, (r[0][1] + r[1][0]) / s, 0.25 * s, (r[1][2] + r[2][1]) / s)
        } else {
            let s = (1.0 + r[2][2] - r[0][0] - r[1][1]).sqrt() * 2.0;
            ((r[1][0] - r[0][1]) / s, (r[0][2] + r[2][0]) / s, (r[1][2] + r[2][1]) / s, 0.25 * s)
        };
        UnitQuat::renormalized(q.0, q.1, q.2, q.3).canonical()
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        log_so3(*self).norm()
    }
}

impl Mul for UnitQuat {
    type Output = UnitQuat;
    fn mul(self, b: UnitQuat) -> UnitQuat {
        quat_mul(self, b)
    }
}

/// Hamilton product, renormalized.
pub fn quat_mul(a: UnitQuat, b: UnitQuat) -> UnitQuat {
    UnitQuat::renormalized(
        a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
        a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
        a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
        a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
    )
}

pub fn exp_so3(phi: Vec3) -> UnitQuat {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (c, k) = if theta < SMALL_ANGLE {
        // cos(θ/2) ≈ 1 − θ²/8, sin(θ/2)/θ ≈ 1/2 − θ²/48
        (1.0 - theta2 / 8.0, 0.5 - theta2 / 48.0)
    } else {
        ((0.5 * theta).cos(), (0.5 * theta).sin() / theta)
    };
    UnitQuat::renormalized(c, phi.x * k, phi.y * k, phi.z * k)
}

/// Rotation vector with norm in `[0, π]`. At exactly π the axis is signed so
/// that its first nonzero component is positive.
pub fn log_so3(q: UnitQuat) -> Vec3 {
    let q = q.canonical();
    let v = q.vector();
    let s = v.norm();
    if s < SMALL_ANGLE {
        // θ/s = 2 atan(s/w)/s ≈ (2/w)(1 − s²/(3w²))
        return v * (2.0 / q.w * (1.0 - s * s / (3.0 * q.w * q.w)));
    }
    let theta = 2.0 * s.atan2(q.w);
    let mut phi = v * (theta / s);
    if q.w.abs() < 1e-15 {
        let first = [phi.x, phi.y, phi.z].into_iter().find(|c| c.abs() > 1e-12).unwrap_or(0.0);
        if first < 0.0 {
            phi = -phi;
        }
    }
    phi
}

/// Left Jacobian of SO(3).
pub fn left_jacobian(phi: Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    let k = Mat3::skew(phi);
    Mat3::IDENTITY.add(&k.scale(a)).add(&k.mul_mat(&k).scale(b))
}

/// Inverse of the left Jacobian.
pub fn left_jacobian_inverse(phi: Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    let k = Mat3::skew(phi);
    Mat3::IDENTITY.add(&k.scale(-0.5)).add(&k.mul_mat(&k).scale(c))
}

/// Inverse right Jacobian, `J_r⁻¹(φ) = J_l⁻¹(−φ)`.
pub fn right_jacobian_inverse(phi: Vec3) -> Mat3 {
    left_jacobian_inverse(-phi)
}

/// Rigid pose in SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub p: Vec3,
    pub q: UnitQuat,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose { p: Vec3::ZERO, q: UnitQuat::IDENTITY };

    pub fn new(p: Vec3, q: UnitQuat) -> Self {
        Self { p, q }
    }

    pub fn from_translation(p: Vec3) -> Self {
        Self { p, q: UnitQuat::IDENTITY }
    }

    pub fn from_rotation(q: UnitQuat) -> Self {
        Self { p: Vec3::ZERO, q }
    }

    /// `px py pz qw qx qy qz` with `qw ≥ 0`.
    pub fn to_array(&self) -> [f64; 7] {
        let q = self.q.canonical();
        [self.p.x, self.p.y, self.p.z, q.w, q.x, q.y, q.z]
    }

    pub fn from_array(a: [f64; 7]) -> Option<Pose> {
        if a.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let q = UnitQuat::new(a[3], a[4], a[5], a[6])?;
        Some(Pose::new(Vec3::new(a[0], a[1], a[2]), q))
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.q.to_array().iter().all(|v| v.is_finite())
    }

    /// 4×4 homogeneous matrix, row-major.
    pub fn to_homogeneous(&self) -> [[f64; 4]; 4] {
        let r = self.q.to_matrix().0;
        [
            [r[0][0], r[0][1], r[0][2], self.p.x],
            [r[1][0], r[1][1], r[1][2], self.p.y],
            [r[2][0], r[2][1], r[2][2], self.p.z],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Ordinary rigid-transform inverse.
    pub fn inverse(&self) -> Pose {
        let qi = self.q.inverse();
        Pose::new(-qi.rotate(self.p), qi)
    }

    /// Maps a point from this frame into the parent frame.
    pub fn transform_point(&self, v: Vec3) -> Vec3 {
        self.p + self.q.rotate(v)
    }
}

/// Body-frame group product with the left Jacobian applied to the
/// translational increment.
pub fn compose(g: Pose, dg: Pose) -> Pose {
    let phi = log_so3(dg.q);
    let dp = left_jacobian(phi).mul_vec(dg.p);
    Pose::new(g.p + g.q.rotate(dp), g.q * dg.q)
}

/// Increment whose composition undoes `dg`: `compose(compose(g, dg), pose_inverse_increment(dg)) = g`.
pub fn pose_inverse_increment(dg: Pose) -> Pose {
    Pose::new(-dg.p, dg.q.inverse())
}

/// Translation distance plus `lambda_rot` times the relative rotation angle.
pub fn geodesic_dist(a: &Pose, b: &Pose, lambda_rot: f64) -> f64 {
    let dp = (a.p - b.p).norm();
    let dq = log_so3(a.q.inverse() * b.q).norm();
    dp + lambda_rot * dq
}

/// Ordinary frame change `world ∘ g`: `p' = p_w + R_w p`, `q' = q_w ⊗ q`.
pub fn apply_global(g_wrist: &Pose, world: &Pose) -> Pose {
    Pose::new(world.p + world.q.rotate(g_wrist.p), world.q * g_wrist.q)
}

/// Relative rotation angle between two orientations.
pub fn rotation_angle_between(a: UnitQuat, b: UnitQuat) -> f64 {
    log_so3(a.inverse() * b).norm().min(PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut impl Rng, scale: f64) -> Vec3 {
        Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ) * scale
    }

    fn rand_quat(rng: &mut impl Rng) -> UnitQuat {
        loop {
            let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            if let Some(q) = UnitQuat::new(v[0], v[1], v[2], v[3]) {
                return q;
            }
        }
    }

    fn rand_pose(rng: &mut impl Rng) -> Pose {
        Pose::new(rand_vec(rng, 0.5), rand_quat(rng))
    }

    fn same_rotation(a: UnitQuat, b: UnitQuat, tol: f64) -> bool {
        let d = a.to_array().iter().zip(b.to_array()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let e = a.to_array().iter().zip(b.to_array()).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
        d.min(e) < tol
    }

    #[test]
    fn quat_mul_identity_and_axis_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = rand_quat(&mut rng);
        assert!(same_rotation(UnitQuat::IDENTITY * q, q, 1e-15));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let a = UnitQuat::new(h, h, 0.0, 0.0).unwrap();
        let r = a * a;
        assert_abs_diff_eq!(r.w(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.x(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn quat_mul_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let (a, b) = (rand_quat(&mut rng), rand_quat(&mut rng));
            let m = a.to_matrix().mul_mat(&b.to_matrix());
            assert!((a * b).to_matrix().max_abs_diff(&m) < 1e-12);
            assert!(same_rotation(UnitQuat::from_matrix(&m), a * b, 1e-12));
        }
    }

    #[test]
    fn exp_log_examples() {
        let q = exp_so3(Vec3::ZERO);
        assert_eq!(q, UnitQuat::IDENTITY);
        let q = exp_so3(Vec3::new(PI / 2.0, 0.0, 0.0));
        assert_abs_diff_eq!(q.w(), 0.5f64.sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(q.x(), 0.5f64.sqrt(), epsilon = 1e-12);
        assert_eq!(log_so3(UnitQuat::IDENTITY), Vec3::ZERO);
        let phi = log_so3(UnitQuat::new(0.0, 1.0, 0.0, 0.0).unwrap());
        assert_abs_diff_eq!(phi.x, PI, epsilon = 1e-12);
        // sign convention at π
        let phi = log_so3(UnitQuat::new(0.0, -1.0, 0.0, 0.0).unwrap());
        assert_abs_diff_eq!(phi.x, PI, epsilon = 1e-12);
        let phi = log_so3(UnitQuat::new(0.0, 0.0, -0.6, 0.8).unwrap());
        assert!(phi.y > 0.0 && phi.z < 0.0);
    }

    #[test]
    fn exp_log_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let axis = rand_vec(&mut rng, 1.0).normalized().unwrap();
            let angle = rng.random_range(1e-9..PI - 1e-3);
            let phi = axis * angle;
            assert!((log_so3(exp_so3(phi)) - phi).max_abs() < 1e-9);
            let q = rand_quat(&mut rng);
            assert!(same_rotation(exp_so3(log_so3(q)), q, 1e-12));
        }
        let tiny = Vec3::new(3e-8, -1e-8, 2e-8);
        assert!((log_so3(exp_so3(tiny)) - tiny).max_abs() < 1e-20);
    }

    fn rodrigues(phi: Vec3) -> Mat3 {
        // independent matrix exponential by truncated power series
        let k = Mat3::skew(phi);
        let mut term = Mat3::IDENTITY;
        let mut acc = Mat3::IDENTITY;
        for n in 1..40 {
            term = term.mul_mat(&k).scale(1.0 / n as f64);
            acc = acc.add(&term);
        }
        acc
    }

    #[test]
    fn left_jacobian_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(left_jacobian(Vec3::ZERO).max_abs_diff(&Mat3::IDENTITY) < 1e-15);
        for _ in 0..20 {
            let phi = rand_vec(&mut rng, 1.7);
            let v = rand_vec(&mut rng, 1.0);
            // Simpson on ∫₀¹ Exp(sφ) v ds
            let n = 2000;
            let h = 1.0 / n as f64;
            let mut acc = Vec3::ZERO;
            for i in 0..=n {
                let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += rodrigues(phi * (i as f64 * h)).mul_vec(v) * w;
            }
            let integral = acc * (h / 3.0);
            assert!((left_jacobian(phi).mul_vec(v) - integral).max_abs() < 1e-8);
        }
    }

    #[test]
    fn left_jacobian_positive_determinant_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let axis = rand_vec(&mut rng, 1.0).normalized().unwrap();
            let phi = axis * rng.random_range(0.0..PI - 1e-3);
            assert!(left_jacobian(phi).determinant() > 0.0);
            let prod = left_jacobian(phi).mul_mat(&left_jacobian_inverse(phi));
            assert!(prod.max_abs_diff(&Mat3::IDENTITY) < 1e-9);
        }
    }

    fn mat4_mul(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut r = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                r[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        r
    }

    fn twist_exp(rho: Vec3, phi: Vec3) -> [[f64; 4]; 4] {
        let k = Mat3::skew(phi).0;
        let x = [
            [k[0][0], k[0][1], k[0][2], rho.x],
            [k[1][0], k[1][1], k[1][2], rho.y],
            [k[2][0], k[2][1], k[2][2], rho.z],
            [0.0; 4],
        ];
        let mut term = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]];
        let mut acc = term;
        for n in 1..40 {
            term = mat4_mul(&term, &x);
            term.iter_mut().flatten().for_each(|v| *v /= n as f64);
            for i in 0..4 {
                for j in 0..4 {
                    acc[i][j] += term[i][j];
                }
            }
        }
        acc
    }

    #[test]
    fn compose_matches_homogeneous_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = rand_pose(&mut rng);
        let c = compose(g, Pose::IDENTITY);
        assert!((c.p - g.p).max_abs() < 1e-15 && same_rotation(c.q, g.q, 1e-15));
        let dp = rand_vec(&mut rng, 0.3);
        let c = compose(g, Pose::from_translation(dp));
        assert!((c.p - (g.p + g.q.rotate(dp))).max_abs() < 1e-15);
        for _ in 0..200 {
            let g = rand_pose(&mut rng);
            let dg = rand_pose(&mut rng);
            let oracle = mat4_mul(&g.to_homogeneous(), &twist_exp(dg.p, log_so3(dg.q)));
            let got = compose(g, dg).to_homogeneous();
            for i in 0..4 {
                for j in 0..4 {
                    assert!((oracle[i][j] - got[i][j]).abs() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn compose_is_a_right_action_and_invertible() {
        // compose(g, dg) = g · exp(twist(dg)); chaining increments multiplies
        // their exponentials, and the inverse increment undoes one exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let (a, b, c) = (rand_pose(&mut rng), rand_pose(&mut rng), rand_pose(&mut rng));
            let chained = compose(compose(a, b), c).to_homogeneous();
            let oracle = mat4_mul(
                &mat4_mul(&a.to_homogeneous(), &twist_exp(b.p, log_so3(b.q))),
                &twist_exp(c.p, log_so3(c.q)),
            );
            for i in 0..4 {
                for j in 0..4 {
                    assert!((chained[i][j] - oracle[i][j]).abs() < 1e-8);
                }
            }
            let back = compose(compose(a, b), pose_inverse_increment(b));
            assert!((back.p - a.p).max_abs() < 1e-9 && same_rotation(back.q, a.q, 1e-9));
            let id = compose(compose(Pose::IDENTITY, a), Pose::IDENTITY);
            let direct = compose(Pose::IDENTITY, a);
            assert!((id.p - direct.p).max_abs() < 1e-15);
        }
    }

    #[test]
    fn geodesic_dist_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = rand_pose(&mut rng);
        assert_eq!(geodesic_dist(&g, &g, 0.1), 0.0);
        let flip = Pose::from_rotation(UnitQuat::new(0.0, 0.0, 1.0, 0.0).unwrap());
        assert_abs_diff_eq!(geodesic_dist(&Pose::IDENTITY, &flip, 1.0), PI, epsilon = 1e-12);
        for _ in 0..1000 {
            let (a, b, c) = (rand_pose(&mut rng), rand_pose(&mut rng), rand_pose(&mut rng));
            let ab = geodesic_dist(&a, &b, 0.1);
            assert!(ab <= geodesic_dist(&a, &c, 0.1) + geodesic_dist(&c, &b, 0.1) + 1e-12);
            assert_abs_diff_eq!(ab, geodesic_dist(&b, &a, 0.1), epsilon = 1e-12);
            let w = rand_pose(&mut rng);
            let moved = geodesic_dist(&apply_global(&a, &w), &apply_global(&b, &w), 0.1);
            assert_abs_diff_eq!(moved, ab, epsilon = 1e-9);
        }
    }

    #[test]
    fn apply_global_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = rand_pose(&mut rng);
        assert_eq!(apply_global(&g, &Pose::IDENTITY).p, g.p);
        let t = Pose::from_translation(Vec3::new(0.1, -0.2, 0.3));
        let m = apply_global(&g, &t);
        assert!((m.p - (g.p + t.p)).max_abs() < 1e-15);
        assert!(same_rotation(m.q, g.q, 1e-15));
        for _ in 0..100 {
            let (g, w1, w2) = (rand_pose(&mut rng), rand_pose(&mut rng), rand_pose(&mut rng));
            let two = apply_global(&apply_global(&g, &w1), &w2);
            let one = apply_global(&g, &apply_global(&w1, &w2));
            assert!((two.p - one.p).max_abs() < 1e-12 && same_rotation(two.q, one.q, 1e-12));
        }
    }

    #[test]
    fn norm_stays_unit_over_long_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut g = Pose::IDENTITY;
        for _ in 0..100_000 {
            let dg = Pose::new(rand_vec(&mut rng, 0.01), exp_so3(rand_vec(&mut rng, 0.1)));
            g = compose(g, dg);
        }
        assert!((g.q.norm() - 1.0).abs() < 1e-9);
    }
}
