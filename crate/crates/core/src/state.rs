//! Generalized state of the floating-base chain.

use nalgebra::{DVector, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{euler_zyx, mat_to_quat, quat_to_mat, rot_zyx, Mat3};
use crate::robot_model::{JointVector, RobotModel};

/// Smallest admissible distance of the Euler pitch from ±π/2.
pub const GIMBAL_MARGIN: f64 = 1e-6;

/// `q = [x, y, z, roll, pitch, yaw, q_1..q_N]`, `u = q̇`.
///
/// The Euler angles are measured relative to `chart`, a fixed reference
/// rotation that is identity unless the integrator has re-based the angles
/// to stay clear of the pitch singularity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedState {
    pub q: DVector<f64>,
    pub u: DVector<f64>,
    pub chart: UnitQuaternion<f64>,
}

impl GeneralizedState {
    pub fn zeros(model: &RobotModel) -> Self {
        let n = model.dof();
        Self {
            q: DVector::zeros(n),
            u: DVector::zeros(n),
            chart: UnitQuaternion::identity(),
        }
    }

    pub fn from_joints(model: &RobotModel, joints: &JointVector) -> Self {
        let mut s = Self::zeros(model);
        s.set_joints(joints);
        s
    }

    pub fn set_joints(&mut self, joints: &JointVector) {
        for (i, v) in joints.iter().enumerate() {
            self.q[6 + i] = *v;
        }
    }

    pub fn joints(&self) -> JointVector {
        JointVector(self.q.rows(6, self.q.len() - 6).iter().copied().collect())
    }

    pub fn joint_rates(&self) -> Vec<f64> {
        self.u.rows(6, self.u.len() - 6).iter().copied().collect()
    }

    pub fn n_joints(&self) -> usize {
        self.q.len() - 6
    }

    pub fn chart_matrix(&self) -> Mat3 {
        quat_to_mat(&self.chart)
    }

    pub fn check(&self) -> Result<()> {
        if self.q.iter().chain(self.u.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Singular("non-finite state entry".into()));
        }
        if self.q[4].abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN {
            return Err(Error::Singular(format!(
                "Euler pitch {:.6} rad within the gimbal margin",
                self.q[4]
            )));
        }
        Ok(())
    }

    /// Re-base the Euler angles on the current head orientation, keeping the
    /// head's world angular velocity unchanged. Afterwards roll = pitch = yaw = 0.
    pub fn rechart(&mut self) {
        let c = self.chart_matrix();
        let (roll, pitch, yaw) = (self.q[3], self.q[4], self.q[5]);
        let r = c * rot_zyx(roll, pitch, yaw);
        let rates = nalgebra::Vector3::new(self.u[3], self.u[4], self.u[5]);
        let omega = c * crate::math::euler_rate_map(pitch, yaw) * rates;
        self.chart = mat_to_quat(&r);
        let new_c = self.chart_matrix();
        // At zero angles the rate map is identity.
        let new_rates = new_c.transpose() * omega;
        for i in 0..3 {
            self.q[3 + i] = 0.0;
            self.u[3 + i] = new_rates[i];
        }
    }

    /// Express the head orientation as plain ZYX Euler angles (identity chart),
    /// when that is possible without hitting the singularity.
    pub fn unchart(&mut self) -> Result<()> {
        let c = self.chart_matrix();
        let (roll, pitch, yaw) = (self.q[3], self.q[4], self.q[5]);
        let r = c * rot_zyx(roll, pitch, yaw);
        let rates = nalgebra::Vector3::new(self.u[3], self.u[4], self.u[5]);
        let omega = c * crate::math::euler_rate_map(pitch, yaw) * rates;
        let (nr, np, ny) = euler_zyx(&r);
        if np.abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN {
            return Err(Error::Singular("head pitch at the gimbal singularity".into()));
        }
        let e = crate::math::euler_rate_map(np, ny);
        let new_rates = e
            .try_inverse()
            .ok_or_else(|| Error::Singular("Euler rate map".into()))?
            * omega;
        self.chart = UnitQuaternion::identity();
        self.q[3] = nr;
        self.q[4] = np;
        self.q[5] = ny;
        for i in 0..3 {
            self.u[3 + i] = new_rates[i];
        }
        Ok(())
    }
}
