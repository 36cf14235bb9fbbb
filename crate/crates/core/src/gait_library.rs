//! Time-parameterized joint targets for the crawling gaits and the
//! snake-to-ring transformations.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::robot_model::{
    hexring_configuration, latch_error, spiral_configuration, JointVector, RobotModel, JOINT_LIMIT,
};
use crate::state::GeneralizedState;

/// Latch closes only when the head/tail frames are this close.
pub const LATCH_POSITION_TOLERANCE: f64 = 0.02;
pub const LATCH_ANGLE_TOLERANCE: f64 = 10.0 * PI / 180.0;
pub const DEFAULT_TRANSFORM_DURATION: f64 = 8.0;
pub const MAX_FREQUENCY: f64 = 2.0;
const MIN_LATCH_OFFSET: f64 = 3.0 * PI / 180.0;
const MAX_LATCH_OFFSET: f64 = 5.0 * PI / 180.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaitFamily {
    Sidewinding,
    VerticalUndulation,
    LateralRolling,
    HexringTransform,
    SpiralTransform,
}

impl GaitFamily {
    pub fn name(&self) -> &'static str {
        match self {
            GaitFamily::Sidewinding => "sidewinding",
            GaitFamily::VerticalUndulation => "vertical_undulation",
            GaitFamily::LateralRolling => "lateral_rolling",
            GaitFamily::HexringTransform => "hexring_transform",
            GaitFamily::SpiralTransform => "spiral_transform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            GaitFamily::Sidewinding,
            GaitFamily::VerticalUndulation,
            GaitFamily::LateralRolling,
            GaitFamily::HexringTransform,
            GaitFamily::SpiralTransform,
        ]
        .into_iter()
        .find(|f| f.name() == s)
    }

    pub fn is_periodic(&self) -> bool {
        matches!(
            self,
            GaitFamily::Sidewinding | GaitFamily::VerticalUndulation | GaitFamily::LateralRolling
        )
    }

    pub fn is_transform(&self) -> bool {
        !self.is_periodic()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitSpec {
    pub family: GaitFamily,
    pub amp_h: f64,
    pub amp_v: f64,
    pub frequency: f64,
    pub phase_per_joint: f64,
    pub wave_phase_offset: f64,
    pub latch_offset: f64,
    pub transform_duration: f64,
    /// Helix pitch angle of the spiral target.
    pub helix_pitch: f64,
}

impl GaitSpec {
    /// Sidewinding preset 1: 40° horizontal, 20° vertical.
    pub fn gait1(frequency: f64) -> Self {
        Self {
            family: GaitFamily::Sidewinding,
            amp_h: 40f64.to_radians(),
            amp_v: 20f64.to_radians(),
            frequency,
            ..Self::default()
        }
    }

    /// Sidewinding preset 2: 60° horizontal, 30° vertical.
    pub fn gait2(frequency: f64) -> Self {
        Self {
            amp_h: 60f64.to_radians(),
            amp_v: 30f64.to_radians(),
            ..Self::gait1(frequency)
        }
    }

    pub fn vertical_undulation(amp_v: f64, frequency: f64) -> Self {
        Self {
            family: GaitFamily::VerticalUndulation,
            amp_h: 0.0,
            amp_v,
            frequency,
            ..Self::default()
        }
    }

    pub fn lateral_rolling(amp: f64, frequency: f64) -> Self {
        Self {
            family: GaitFamily::LateralRolling,
            amp_h: 0.0,
            amp_v: amp,
            frequency,
            ..Self::default()
        }
    }

    pub fn hexring(latch_offset: f64, duration: f64) -> Self {
        Self {
            family: GaitFamily::HexringTransform,
            latch_offset,
            transform_duration: duration,
            ..Self::default()
        }
    }

    pub fn spiral(helix_pitch: f64, duration: f64) -> Self {
        Self {
            family: GaitFamily::SpiralTransform,
            helix_pitch,
            transform_duration: duration,
            ..Self::default()
        }
    }

    pub fn period(&self) -> Option<f64> {
        self.family.is_periodic().then(|| 1.0 / self.frequency)
    }

    pub fn validate(&self) -> Result<()> {
        let fam = self.family;
        if fam.is_periodic() && !(self.frequency > 0.0 && self.frequency <= MAX_FREQUENCY) {
            return Err(Error::validation("frequency", "must lie in (0, 2] Hz"));
        }
        let room = JOINT_LIMIT - self.latch_offset.abs();
        for (name, a) in [("amp_h", self.amp_h), ("amp_v", self.amp_v)] {
            if !(a >= 0.0 && a <= room + 1e-12) {
                return Err(Error::validation(
                    name,
                    format!("must lie in [0, {:.1}] degrees", room.to_degrees()),
                ));
            }
        }
        for (name, v) in [
            ("phase_per_joint", self.phase_per_joint),
            ("wave_phase_offset", self.wave_phase_offset),
        ] {
            if !v.is_finite() {
                return Err(Error::validation(name, "must be finite"));
            }
        }
        if fam == GaitFamily::HexringTransform
            && !(MIN_LATCH_OFFSET - 1e-12..=MAX_LATCH_OFFSET + 1e-12).contains(&self.latch_offset)
        {
            return Err(Error::validation("latch_offset", "must lie in [3, 5] degrees"));
        }
        if fam.is_transform() && !(self.transform_duration >= 0.0 && self.transform_duration.is_finite()) {
            return Err(Error::validation("transform_duration", "must be non-negative"));
        }
        Ok(())
    }
}

impl Default for GaitSpec {
    fn default() -> Self {
        Self {
            family: GaitFamily::Sidewinding,
            amp_h: 0.0,
            amp_v: 0.0,
            frequency: 0.5,
            phase_per_joint: 2.0 * PI / 6.0,
            wave_phase_offset: PI / 2.0,
            latch_offset: 4f64.to_radians(),
            transform_duration: DEFAULT_TRANSFORM_DURATION,
            helix_pitch: 0.15,
        }
    }
}

fn expect(spec: &GaitSpec, family: GaitFamily) -> Result<()> {
    if spec.family != family {
        return Err(Error::Usage(format!(
            "gait family is {}, expected {}",
            spec.family.name(),
            family.name()
        )));
    }
    Ok(())
}

/// Yaw joints carry the horizontal wave and pitch joints the vertical wave;
/// `j` counts joints of the same kind from the head.
pub fn sidewinding_targets(model: &RobotModel, spec: &GaitSpec, t: f64) -> Result<JointVector> {
    expect(spec, GaitFamily::Sidewinding)?;
    Ok(orthogonal_waves(model, spec, t, spec.amp_h, spec.amp_v))
}

fn orthogonal_waves(model: &RobotModel, spec: &GaitSpec, t: f64, amp_h: f64, amp_v: f64) -> JointVector {
    let w = 2.0 * PI * spec.frequency * t;
    let mut q = JointVector::zeros(model.n_joints());
    for (j, idx) in model.yaw_joints().enumerate() {
        q[idx] = amp_h * (w + j as f64 * spec.phase_per_joint).sin();
    }
    for (j, idx) in model.pitch_joints().enumerate() {
        q[idx] = amp_v * (w + j as f64 * spec.phase_per_joint + spec.wave_phase_offset).sin();
    }
    q
}

pub fn vertical_undulation_targets(model: &RobotModel, spec: &GaitSpec, t: f64) -> Result<JointVector> {
    expect(spec, GaitFamily::VerticalUndulation)?;
    let w = 2.0 * PI * spec.frequency * t;
    let mut q = JointVector::zeros(model.n_joints());
    for (j, idx) in model.pitch_joints().enumerate() {
        q[idx] = spec.amp_v * (w + j as f64 * spec.phase_per_joint).sin();
    }
    Ok(q)
}

pub fn lateral_rolling_targets(model: &RobotModel, spec: &GaitSpec, t: f64) -> Result<JointVector> {
    expect(spec, GaitFamily::LateralRolling)?;
    let (s, c) = (2.0 * PI * spec.frequency * t).sin_cos();
    let mut q = JointVector::zeros(model.n_joints());
    for idx in model.pitch_joints() {
        q[idx] = spec.amp_v * s;
    }
    for idx in model.yaw_joints() {
        q[idx] = spec.amp_v * c;
    }
    Ok(q)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatchCommand {
    Open,
    Engage,
}

/// `10τ³ − 15τ⁴ + 6τ⁵`, zero rate and acceleration at both ends.
pub fn quintic_blend(tau: f64) -> f64 {
    let x = tau.clamp(0.0, 1.0);
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

fn blend(goal: &JointVector, t: f64, duration: f64) -> JointVector {
    let s = if duration > 0.0 {
        quintic_blend(t / duration)
    } else {
        1.0
    };
    JointVector(goal.iter().map(|g| g * s).collect())
}

/// Closed-ring target with the extra bend on the two tail-most pitch joints.
pub fn hexring_with_offset(model: &RobotModel, latch_offset: f64) -> JointVector {
    let mut goal = hexring_configuration(model);
    let pitch: Vec<usize> = model.pitch_joints().collect();
    for &j in pitch.iter().rev().take(2) {
        goal[j] += latch_offset;
    }
    goal
}

/// Whether the head and tail latch frames are close enough to lock.
pub fn latch_ready(model: &RobotModel, state: &GeneralizedState) -> bool {
    let (dp, dr) = latch_error(model, state);
    dp < LATCH_POSITION_TOLERANCE && dr < LATCH_ANGLE_TOLERANCE
}

/// Straight-to-ring interpolation. `state` is the robot's current pose, used
/// to decide whether the latch may close.
pub fn hexring_transform_targets(
    model: &RobotModel,
    t: f64,
    duration: f64,
    latch_offset: f64,
    state: &GeneralizedState,
) -> (JointVector, LatchCommand) {
    let q = blend(&hexring_with_offset(model, latch_offset), t, duration);
    let cmd = if t >= duration && latch_ready(model, state) {
        LatchCommand::Engage
    } else {
        LatchCommand::Open
    };
    (q, cmd)
}

pub fn spiral_transform_targets(model: &RobotModel, t: f64, duration: f64, helix_pitch: f64) -> Result<JointVector> {
    Ok(blend(&spiral_configuration(model, helix_pitch)?, t, duration))
}

/// Compiled gait: caches the posture goals of the transform families.
#[derive(Clone, Debug)]
pub struct GaitPlan {
    pub spec: GaitSpec,
    goal: Option<JointVector>,
    /// Ring target once the latch holds the ring closed (no offset).
    closed_goal: Option<JointVector>,
}

impl GaitPlan {
    pub fn new(model: &RobotModel, spec: &GaitSpec) -> Result<Self> {
        spec.validate()?;
        let (goal, closed_goal) = match spec.family {
            GaitFamily::HexringTransform => (
                Some(hexring_with_offset(model, spec.latch_offset)),
                Some(hexring_configuration(model)),
            ),
            GaitFamily::SpiralTransform => (Some(spiral_configuration(model, spec.helix_pitch)?), None),
            _ => (None, None),
        };
        Ok(Self {
            spec: *spec,
            goal,
            closed_goal,
        })
    }

    /// Joint targets at time `t`; `latched` selects the offset-free ring.
    pub fn targets(&self, model: &RobotModel, t: f64, latched: bool) -> JointVector {
        let spec = &self.spec;
        match spec.family {
            GaitFamily::Sidewinding => orthogonal_waves(model, spec, t, spec.amp_h, spec.amp_v),
            GaitFamily::VerticalUndulation => vertical_undulation_targets(model, spec, t).expect("family checked"),
            GaitFamily::LateralRolling => lateral_rolling_targets(model, spec, t).expect("family checked"),
            GaitFamily::HexringTransform if latched => self.closed_goal.clone().expect("ring goal"),
            _ => blend(self.goal.as_ref().expect("transform goal"), t, spec.transform_duration),
        }
    }

    /// Central-difference target rates.
    pub fn target_rates(&self, model: &RobotModel, t: f64, latched: bool) -> Vec<f64> {
        let h = 1e-6;
        let a = self.targets(model, t + h, latched);
        let b = self.targets(model, (t - h).max(0.0), latched);
        let span = t + h - (t - h).max(0.0);
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) / span).collect()
    }

    pub fn wants_latch(&self, t: f64) -> bool {
        self.spec.family == GaitFamily::HexringTransform && t >= self.spec.transform_duration
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot_model::build_cobra_model;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cobra() -> RobotModel {
        build_cobra_model(None).unwrap()
    }

    #[test]
    fn gait1_at_zero() {
        let m = cobra();
        let spec = GaitSpec::gait1(0.5);
        let q = sidewinding_targets(&m, &spec, 0.0).unwrap();
        for (j, idx) in m.yaw_joints().enumerate() {
            assert_relative_eq!(q[idx], 0.6981317 * (j as f64 * PI / 3.0).sin(), epsilon = 1e-6);
        }
        for (j, idx) in m.pitch_joints().enumerate() {
            assert_relative_eq!(q[idx], 0.3490659 * (j as f64 * PI / 3.0).cos(), epsilon = 1e-6);
        }
        assert!(matches!(
            vertical_undulation_targets(&m, &spec, 0.0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn periodicity_and_bounds() {
        let m = cobra();
        let spec = GaitSpec::gait1(0.4);
        let p = spec.period().unwrap();
        let mut max_yaw: f64 = 0.0;
        let mut max_pitch: f64 = 0.0;
        // 12000 samples hit every joint's peak phase exactly.
        for i in 0..12000 {
            let t = i as f64 * p / 12000.0;
            let a = sidewinding_targets(&m, &spec, t).unwrap();
            let b = sidewinding_targets(&m, &spec, t + p).unwrap();
            for k in 0..11 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
            max_yaw = m.yaw_joints().map(|j| a[j].abs()).fold(max_yaw, f64::max);
            max_pitch = m.pitch_joints().map(|j| a[j].abs()).fold(max_pitch, f64::max);
        }
        assert!((max_yaw - spec.amp_h).abs() < 1e-9);
        assert!((max_pitch - spec.amp_v).abs() < 1e-9);
    }

    #[test]
    fn undulation_is_sagittal_travelling_wave() {
        let m = cobra();
        let spec = GaitSpec::vertical_undulation(0.5, 0.5);
        let dt = spec.phase_per_joint / (2.0 * PI * spec.frequency);
        let pitch: Vec<usize> = m.pitch_joints().collect();
        for i in 0..50 {
            let t = 0.037 * i as f64;
            let a = vertical_undulation_targets(&m, &spec, t).unwrap();
            assert!(m.yaw_joints().all(|j| a[j] == 0.0));
            let b = vertical_undulation_targets(&m, &spec, t + dt).unwrap();
            for k in 0..pitch.len() - 1 {
                assert_relative_eq!(b[pitch[k]], a[pitch[k + 1]], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rolling_circle() {
        let m = cobra();
        let spec = GaitSpec::lateral_rolling(0.5, 0.5);
        let q0 = lateral_rolling_targets(&m, &spec, 0.0).unwrap();
        assert_eq!(q0[0], 0.0);
        assert_eq!(q0[1], 0.5);
        for i in 0..100 {
            let q = lateral_rolling_targets(&m, &spec, 0.013 * i as f64).unwrap();
            assert_relative_eq!(q[2] * q[2] + q[3] * q[3], 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn transform_endpoints() {
        let m = cobra();
        let straight = GeneralizedState::zeros(&m);
        let (q, cmd) = hexring_transform_targets(&m, 0.0, 8.0, 4f64.to_radians(), &straight);
        assert!(q.iter().all(|v| *v == 0.0));
        assert_eq!(cmd, LatchCommand::Open);

        let off = 4f64.to_radians();
        let ring_state = GeneralizedState::from_joints(&m, &hexring_configuration(&m));
        let (q, cmd) = hexring_transform_targets(&m, 8.0, 8.0, off, &ring_state);
        let pitch: Vec<usize> = m.pitch_joints().collect();
        for (k, &j) in pitch.iter().enumerate() {
            let expect = if k >= pitch.len() - 2 {
                HEXRING_DEG + 4.0
            } else {
                HEXRING_DEG
            };
            assert_relative_eq!(q[j].to_degrees(), expect, epsilon = 1e-9);
        }
        assert_eq!(cmd, LatchCommand::Engage);
        // Posed exactly at the commanded targets, the offset opens the ring
        // past the latch tolerance.
        let commanded = GeneralizedState::from_joints(&m, &q);
        let (_, cmd) = hexring_transform_targets(&m, 8.0, 8.0, off, &commanded);
        assert_eq!(cmd == LatchCommand::Engage, latch_ready(&m, &commanded));
        // Before the end of the transform the latch stays open.
        let (_, cmd) = hexring_transform_targets(&m, 7.9, 8.0, off, &ring_state);
        assert_eq!(cmd, LatchCommand::Open);
    }

    const HEXRING_DEG: f64 = 60.0;

    #[test]
    fn quintic_is_c2() {
        let h = 1e-5;
        for &x in &[0.0, 1.0] {
            let d1 = (quintic_blend(x + h) - quintic_blend(x - h)) / (2.0 * h);
            let d2 = (quintic_blend(x + h) - 2.0 * quintic_blend(x) + quintic_blend(x - h)) / (h * h);
            assert!(d1.abs() < 1e-8 && d2.abs() < 1e-3);
        }
        assert_relative_eq!(quintic_blend(0.5), 0.5);
    }

    proptest! {
        #[test]
        fn targets_within_limits(
            fam in 0usize..5,
            amp_h in 0.0f64..1.0,
            amp_v in 0.0f64..1.0,
            f in 0.05f64..2.0,
            ppj in -3.2f64..3.2,
            off in 3.0f64..5.0,
            t in 0.0f64..30.0,
        ) {
            let m = cobra();
            let family = [GaitFamily::Sidewinding, GaitFamily::VerticalUndulation, GaitFamily::LateralRolling,
                          GaitFamily::HexringTransform, GaitFamily::SpiralTransform][fam];
            let spec = GaitSpec {
                family, amp_h, amp_v, frequency: f, phase_per_joint: ppj,
                latch_offset: off.to_radians(), ..GaitSpec::default()
            };
            prop_assume!(spec.validate().is_ok());
            let plan = GaitPlan::new(&m, &spec).unwrap();
            let q = plan.targets(&m, t, false);
            prop_assert!(q.within_limits(&m));
            if let Some(p) = spec.period() {
                let q2 = plan.targets(&m, t + p, false);
                for k in 0..11 { prop_assert!((q[k] - q2[k]).abs() < 1e-9); }
            }
        }
    }
}
