//! Rotation helpers and the small amount of spatial algebra used by the
//! dynamics routines. Spatial vectors are expressed in world axes about a
//! single reference point chosen by the caller.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Rotation for ZYX Euler angles `(roll, pitch, yaw)`: `Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn rot_zyx(roll: f64, pitch: f64, yaw: f64) -> Mat3 {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Mat3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Recover ZYX Euler angles `(roll, pitch, yaw)` from a rotation matrix.
pub fn euler_zyx(r: &Mat3) -> (f64, f64, f64) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    (roll, pitch, yaw)
}

/// Map from Euler rates to world angular velocity, `ω = E(φ) φ̇`.
pub fn euler_rate_map(pitch: f64, yaw: f64) -> Mat3 {
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Mat3::new(cy * cp, -sy, 0.0, sy * cp, cy, 0.0, -sp, 0.0, 1.0)
}

/// Time derivative of [`euler_rate_map`].
pub fn euler_rate_map_dot(pitch: f64, yaw: f64, pitch_dot: f64, yaw_dot: f64) -> Mat3 {
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    Mat3::new(
        -sy * yaw_dot * cp - cy * sp * pitch_dot,
        -cy * yaw_dot,
        0.0,
        cy * yaw_dot * cp - sy * sp * pitch_dot,
        -sy * yaw_dot,
        0.0,
        -cp * pitch_dot,
        0.0,
        0.0,
    )
}

pub fn axis_rotation(axis: &Vec3, angle: f64) -> Mat3 {
    *Rotation3::from_axis_angle(&nalgebra::Unit::new_unchecked(*axis), angle).matrix()
}

/// Rotation vector of `r`, stable near the identity.
pub fn rotation_log(r: &Mat3) -> Vec3 {
    let v = 0.5 * Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = v.norm();
    let c = 0.5 * (r.trace() - 1.0);
    if c < 0.0 {
        // Near a half turn the skew part loses the axis.
        return mat_to_quat(r).scaled_axis();
    }
    if s < 1e-12 {
        return v;
    }
    v * (s.atan2(c) / s)
}

pub fn quat_to_mat(q: &UnitQuaternion<f64>) -> Mat3 {
    *q.to_rotation_matrix().matrix()
}

pub fn mat_to_quat(r: &Mat3) -> UnitQuaternion<f64> {
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r))
}

/// Spatial motion vector: angular part and linear velocity of the point
/// coincident with the reference point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Motion {
    pub w: Vec3,
    pub v: Vec3,
}

/// Spatial force: moment about the reference point and net force.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Force {
    pub n: Vec3,
    pub f: Vec3,
}

impl Motion {
    pub fn new(w: Vec3, v: Vec3) -> Self {
        Self { w, v }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.w * s, self.v * s)
    }

    pub fn add(&self, o: &Motion) -> Self {
        Self::new(self.w + o.w, self.v + o.v)
    }

    /// Motion cross product `self ×ₘ other`.
    pub fn cross_motion(&self, o: &Motion) -> Motion {
        Motion::new(self.w.cross(&o.w), self.w.cross(&o.v) + self.v.cross(&o.w))
    }

    /// Force cross product `self ×f force`.
    pub fn cross_force(&self, o: &Force) -> Force {
        Force {
            n: self.w.cross(&o.n) + self.v.cross(&o.f),
            f: self.w.cross(&o.f),
        }
    }

    pub fn dot_force(&self, f: &Force) -> f64 {
        self.w.dot(&f.n) + self.v.dot(&f.f)
    }

    /// Linear velocity of the material point at offset `r` from the reference point.
    pub fn point_velocity(&self, r: &Vec3) -> Vec3 {
        self.v + self.w.cross(r)
    }
}

impl Force {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn add(&self, o: &Force) -> Self {
        Force {
            n: self.n + o.n,
            f: self.f + o.f,
        }
    }

    /// Wrench of a point force `f` applied at offset `r` from the reference point.
    pub fn at_point(r: &Vec3, f: &Vec3) -> Self {
        Force { n: r.cross(f), f: *f }
    }
}

/// Rigid-body spatial inertia about the reference point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpatialInertia {
    pub mass: f64,
    /// First mass moment `m·r` with `r` the CoM offset from the reference point.
    pub first_moment: Vec3,
    /// Rotational inertia about the reference point.
    pub rot: Mat3,
}

impl SpatialInertia {
    pub fn zero() -> Self {
        Self {
            mass: 0.0,
            first_moment: Vec3::zeros(),
            rot: Mat3::zeros(),
        }
    }

    /// Body of mass `m`, CoM offset `r` from the reference point, world-frame
    /// central inertia `ic`.
    pub fn from_body(m: f64, r: &Vec3, ic: &Mat3) -> Self {
        let rot = ic + m * (Mat3::identity() * r.norm_squared() - r * r.transpose());
        Self {
            mass: m,
            first_moment: r * m,
            rot,
        }
    }

    pub fn add(&self, o: &SpatialInertia) -> Self {
        Self {
            mass: self.mass + o.mass,
            first_moment: self.first_moment + o.first_moment,
            rot: self.rot + o.rot,
        }
    }

    pub fn apply(&self, m: &Motion) -> Force {
        Force {
            n: self.rot * m.w + self.first_moment.cross(&m.v),
            f: m.v * self.mass - self.first_moment.cross(&m.w),
        }
    }
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rotation_log_round_trip() {
        for w in [
            Vec3::new(0.3, -0.2, 0.1),
            Vec3::new(1e-9, 0.0, -2e-9),
            Vec3::new(0.0, 2.9, 0.5),
            Vec3::zeros(),
        ] {
            let r = *Rotation3::new(w).matrix();
            assert!((rotation_log(&r) - w).norm() < 1e-9, "{w}");
        }
    }

    #[test]
    fn euler_round_trip() {
        let r = rot_zyx(0.3, -0.7, 2.1);
        let (a, b, c) = euler_zyx(&r);
        assert_relative_eq!(a, 0.3, epsilon = 1e-12);
        assert_relative_eq!(b, -0.7, epsilon = 1e-12);
        assert_relative_eq!(c, 2.1, epsilon = 1e-12);
    }

    #[test]
    fn rate_map_matches_finite_difference() {
        let (r0, p0, y0) = (0.2, 0.4, -1.1);
        let rates = Vec3::new(0.7, -0.3, 1.9);
        let h = 1e-6;
        let ra = rot_zyx(r0 + rates.x * h, p0 + rates.y * h, y0 + rates.z * h);
        let rb = rot_zyx(r0 - rates.x * h, p0 - rates.y * h, y0 - rates.z * h);
        let rdot = (ra - rb) / (2.0 * h);
        let omega_hat = rdot * rot_zyx(r0, p0, y0).transpose();
        let omega = Vec3::new(omega_hat[(2, 1)], omega_hat[(0, 2)], omega_hat[(1, 0)]);
        let mapped = euler_rate_map(p0, y0) * rates;
        assert_relative_eq!(omega, mapped, epsilon = 1e-8);
    }

    #[test]
    fn rate_map_dot_matches_finite_difference() {
        let (p, y, pd, yd) = (0.4, -0.9, 0.8, -1.3);
        let h = 1e-6;
        let fd = (euler_rate_map(p + pd * h, y + yd * h) - euler_rate_map(p - pd * h, y - yd * h)) / (2.0 * h);
        assert_relative_eq!(fd, euler_rate_map_dot(p, y, pd, yd), epsilon = 1e-8);
    }

    #[test]
    fn spatial_inertia_kinetic_energy() {
        let ic = Mat3::from_diagonal(&Vec3::new(1.0, 2.0, 3.0));
        let r = Vec3::new(0.5, -0.2, 0.1);
        let si = SpatialInertia::from_body(2.0, &r, &ic);
        let m = Motion::new(Vec3::new(0.3, 0.1, -0.2), Vec3::new(1.0, 0.0, 2.0));
        let vc = m.point_velocity(&r);
        let ke_direct = 0.5 * 2.0 * vc.norm_squared() + 0.5 * m.w.dot(&(ic * m.w));
        let ke_spatial = 0.5 * m.dot_force(&si.apply(&m));
        assert_relative_eq!(ke_direct, ke_spatial, epsilon = 1e-12);
    }
}
