//! Joint-space PID controller.

use serde::{Deserialize, Serialize};

use crate::robot_model::RobotModel;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
    pub update_rate: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 80.0,
            kd: 30.0,
            ki: 10.0,
            update_rate: 1000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PidOutput {
    pub tau: Vec<f64>,
    /// Joints whose command exceeds the continuous torque rating.
    pub over_continuous: Vec<bool>,
    pub saturated: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PidController {
    pub gains: PidGains,
    pub integral: Vec<f64>,
    torque_peak: Vec<f64>,
    torque_continuous: Vec<f64>,
}

impl PidController {
    pub fn new(model: &RobotModel, gains: PidGains) -> Self {
        Self {
            gains,
            integral: vec![0.0; model.n_joints()],
            torque_peak: model.joints.iter().map(|j| j.torque_peak).collect(),
            torque_continuous: model.joints.iter().map(|j| j.torque_continuous).collect(),
        }
    }

    pub fn reset(&mut self) {
        self.integral.iter_mut().for_each(|v| *v = 0.0);
    }

    fn raw(&self, e: f64, e_dot: f64, integral: f64) -> f64 {
        self.gains.kp * e + self.gains.kd * e_dot + self.gains.ki * integral
    }

    /// Torque with the integral state held fixed.
    pub fn evaluate(&self, target: &[f64], target_rate: &[f64], q: &[f64], u: &[f64]) -> Vec<f64> {
        (0..self.integral.len())
            .map(|j| {
                let t = self.raw(target[j] - q[j], target_rate[j] - u[j], self.integral[j]);
                t.clamp(-self.torque_peak[j], self.torque_peak[j])
            })
            .collect()
    }

    /// Controller tick: advance the integral by `dt` (frozen on joints that
    /// would saturate) and return the resulting command.
    pub fn tick(&mut self, target: &[f64], target_rate: &[f64], q: &[f64], u: &[f64], dt: f64) -> PidOutput {
        let n = self.integral.len();
        let mut out = PidOutput {
            tau: vec![0.0; n],
            over_continuous: vec![false; n],
            saturated: vec![false; n],
        };
        for j in 0..n {
            let e = target[j] - q[j];
            let e_dot = target_rate[j] - u[j];
            let peak = self.torque_peak[j];
            let trial = self.integral[j] + e * dt;
            let mut tau = self.raw(e, e_dot, trial);
            if tau.abs() > peak {
                out.saturated[j] = true;
                tau = self.raw(e, e_dot, self.integral[j]);
            } else {
                self.integral[j] = trial;
            }
            let tau = tau.clamp(-peak, peak);
            out.over_continuous[j] = tau.abs() > self.torque_continuous[j];
            out.tau[j] = tau;
        }
        out
    }
}

/// One controller tick toward `target` with a stationary reference.
pub fn pid_torque(
    controller: &mut PidController,
    target: &[f64],
    state: &crate::state::GeneralizedState,
    dt_control: f64,
) -> PidOutput {
    let zeros = vec![0.0; target.len()];
    let q = state.joints();
    controller.tick(target, &zeros, &q, &state.joint_rates(), dt_control)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot_model::build_cobra_model;
    use crate::state::GeneralizedState;

    #[test]
    fn examples() {
        let m = build_cobra_model(None).unwrap();
        let s = GeneralizedState::zeros(&m);
        let mut pid = PidController::new(&m, PidGains::default());
        let out = pid_torque(&mut pid, &[0.0; 11], &s, 1e-3);
        assert!(out.tau.iter().all(|t| *t == 0.0));

        let mut target = [0.0; 11];
        target[4] = 0.1;
        let out = pid_torque(&mut pid, &target, &s, 1e-3);
        assert!((out.tau[4] - (8.0 + 10.0 * 0.1 * 1e-3)).abs() < 1e-12);
        assert!(!out.over_continuous[4]);

        pid.reset();
        target[4] = 1.0;
        let out = pid_torque(&mut pid, &target, &s, 1e-3);
        assert_eq!(out.tau[4], 10.0);
        assert!(out.over_continuous[4] && out.saturated[4]);
        // Anti-windup: no integration while saturated.
        assert_eq!(pid.integral[4], 0.0);
    }
}
