//! Kinematic chain, inertial parameters and collision geometry of the
//! twelve-module snake, plus its canonical closed postures.
//!
//! Every link frame sits at the proximal end of its module with the x-axis
//! running along the chain toward the tail. Joint `j` (1-based) connects link
//! `j - 1` to link `j` at the distal end of link `j - 1`. Odd-numbered joints
//! bend about the local y-axis (pitch), even-numbered joints about the local
//! z-axis (yaw).

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{axis_rotation, rot_zyx, Mat3, Vec3};
use crate::state::GeneralizedState;

pub const COBRA_LINKS: usize = 12;
pub const COBRA_JOINTS: usize = 11;
pub const COBRA_LENGTH: f64 = 1.7;
pub const MODULE_MASS: f64 = 0.60;
pub const MODULE_INERTIA: [f64; 3] = [7.16707e-4, 8.70397e-4, 8.6286e-4];
pub const MODULE_RADIUS: f64 = 0.05;
pub const JOINT_LIMIT: f64 = 70.0 * PI / 180.0;
pub const TORQUE_CONTINUOUS: f64 = 8.1;
pub const TORQUE_PEAK: f64 = 10.0;
pub const HEXRING_BEND: f64 = PI / 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub mass: f64,
    pub principal_inertia: [f64; 3],
    pub length: f64,
    pub radius: f64,
    pub com_offset: [f64; 3],
}

impl LinkParams {
    pub fn cobra_module() -> Self {
        let length = COBRA_LENGTH / COBRA_LINKS as f64;
        Self {
            mass: MODULE_MASS,
            principal_inertia: MODULE_INERTIA,
            length,
            radius: MODULE_RADIUS,
            com_offset: [0.5 * length, 0.0, 0.0],
        }
    }

    pub fn validate(&self, idx: usize) -> Result<()> {
        let field = |name: &str| format!("links[{idx}].{name}");
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::validation(field("mass"), "must be positive"));
        }
        let [a, b, c] = self.principal_inertia;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(Error::validation(
                field("principal_inertia"),
                "all components must be positive",
            ));
        }
        let tol = 1e-12 * (a + b + c);
        if a + b < c - tol || a + c < b - tol || b + c < a - tol {
            return Err(Error::validation(
                field("principal_inertia"),
                "violates the triangle inequality",
            ));
        }
        if !(self.length > 0.0) {
            return Err(Error::validation(field("length"), "must be positive"));
        }
        if !(self.radius > 0.0) {
            return Err(Error::validation(field("radius"), "must be positive"));
        }
        Ok(())
    }

    pub fn com(&self) -> Vec3 {
        Vec3::from(self.com_offset)
    }

    pub fn inertia_matrix(&self) -> Mat3 {
        Mat3::from_diagonal(&Vec3::from(self.principal_inertia))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum JointKind {
    Pitch,
    Yaw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub kind: JointKind,
    pub axis: [f64; 3],
    pub angle_limits: [f64; 2],
    pub torque_continuous: f64,
    pub torque_peak: f64,
}

impl JointParams {
    pub fn cobra_joint(kind: JointKind) -> Self {
        let axis = match kind {
            JointKind::Pitch => [0.0, 1.0, 0.0],
            JointKind::Yaw => [0.0, 0.0, 1.0],
        };
        Self {
            kind,
            axis,
            angle_limits: [-JOINT_LIMIT, JOINT_LIMIT],
            torque_continuous: TORQUE_CONTINUOUS,
            torque_peak: TORQUE_PEAK,
        }
    }

    pub fn axis(&self) -> Vec3 {
        Vec3::from(self.axis)
    }

    pub fn validate(&self, idx: usize) -> Result<()> {
        let field = |name: &str| format!("joints[{idx}].{name}");
        let [lo, hi] = self.angle_limits;
        if !(lo < hi) {
            return Err(Error::validation(field("angle_limits"), "inverted limits"));
        }
        if (lo + hi).abs() > 1e-9 {
            return Err(Error::validation(field("angle_limits"), "limits must be symmetric"));
        }
        if !(self.torque_continuous > 0.0 && self.torque_continuous < self.torque_peak) {
            return Err(Error::validation(
                field("torque_continuous"),
                "must be positive and below the peak torque",
            ));
        }
        if (self.axis().norm() - 1.0).abs() > 1e-9 {
            return Err(Error::validation(field("axis"), "must be unit norm"));
        }
        Ok(())
    }
}

/// Joint-space vector of commanded or measured joint angles (rad).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn within_limits(&self, model: &RobotModel) -> bool {
        self.0
            .iter()
            .zip(&model.joints)
            .all(|(q, j)| *q >= j.angle_limits[0] - 1e-12 && *q <= j.angle_limits[1] + 1e-12)
    }
}

impl Deref for JointVector {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

impl DerefMut for JointVector {
    fn deref_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

/// Optional replacements for the default module parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelOverrides {
    pub mass: Option<f64>,
    pub principal_inertia: Option<[f64; 3]>,
    pub total_length: Option<f64>,
    pub radius: Option<f64>,
    pub joint_limit: Option<[f64; 2]>,
    pub torque_continuous: Option<f64>,
    pub torque_peak: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub links: Vec<LinkParams>,
    pub joints: Vec<JointParams>,
    pub head_frame_index: usize,
}

impl RobotModel {
    /// Serial chain with alternating pitch/yaw joints starting with pitch.
    pub fn chain(links: Vec<LinkParams>) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::validation("links", "at least one link required"));
        }
        let joints = (0..links.len() - 1)
            .map(|i| JointParams::cobra_joint(if i % 2 == 0 { JointKind::Pitch } else { JointKind::Yaw }))
            .collect();
        let model = Self {
            links,
            joints,
            head_frame_index: 0,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints.len() + 1 != self.links.len() {
            return Err(Error::validation(
                "joints",
                format!("{} links need {} joints", self.links.len(), self.links.len() - 1),
            ));
        }
        for (i, l) in self.links.iter().enumerate() {
            l.validate(i)?;
        }
        for (i, j) in self.joints.iter().enumerate() {
            j.validate(i)?;
        }
        for w in self.joints.windows(2) {
            if w[0].kind == w[1].kind {
                return Err(Error::validation("joints", "pitch and yaw joints must alternate"));
            }
        }
        Ok(())
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    /// Generalized coordinate count: 6 head-pose coordinates plus joints.
    pub fn dof(&self) -> usize {
        6 + self.joints.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn total_length(&self) -> f64 {
        self.links.iter().map(|l| l.length).sum()
    }

    pub fn pitch_joints(&self) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.kind == JointKind::Pitch)
            .map(|(i, _)| i)
    }

    pub fn yaw_joints(&self) -> impl Iterator<Item = usize> + '_ {
        self.joints
            .iter()
            .enumerate()
            .filter(|(_, j)| j.kind == JointKind::Yaw)
            .map(|(i, _)| i)
    }

    /// Body-frame offset of the tail latch (distal end of the last link).
    pub fn tail_latch_offset(&self) -> Vec3 {
        Vec3::new(self.links[self.n_links() - 1].length, 0.0, 0.0)
    }
}

/// The default robot, optionally with parameter overrides.
pub fn build_cobra_model(overrides: Option<&ModelOverrides>) -> Result<RobotModel> {
    let mut link = LinkParams::cobra_module();
    let mut joint_limit = [-JOINT_LIMIT, JOINT_LIMIT];
    let mut tc = TORQUE_CONTINUOUS;
    let mut tp = TORQUE_PEAK;
    if let Some(o) = overrides {
        if let Some(m) = o.mass {
            link.mass = m;
        }
        if let Some(i) = o.principal_inertia {
            link.principal_inertia = i;
        }
        if let Some(len) = o.total_length {
            if !(len > 0.0) {
                return Err(Error::validation("total_length", "must be positive"));
            }
            link.length = len / COBRA_LINKS as f64;
            link.com_offset = [0.5 * link.length, 0.0, 0.0];
        }
        if let Some(r) = o.radius {
            link.radius = r;
        }
        if let Some(l) = o.joint_limit {
            joint_limit = l;
        }
        if let Some(t) = o.torque_continuous {
            tc = t;
        }
        if let Some(t) = o.torque_peak {
            tp = t;
        }
    }
    link.validate(0).map_err(|e| match e {
        Error::Validation { field, reason } => {
            Error::validation(field.trim_start_matches("links[0].").to_string(), reason)
        }
        other => other,
    })?;
    let mut model = RobotModel::chain(vec![link; COBRA_LINKS])?;
    for j in &mut model.joints {
        j.angle_limits = joint_limit;
        j.torque_continuous = tc;
        j.torque_peak = tp;
    }
    model.validate().map_err(|e| match e {
        Error::Validation { field, reason } => {
            Error::validation(field.split('.').last().unwrap_or(&field).to_string(), reason)
        }
        other => other,
    })?;
    Ok(model)
}

/// World pose of a link frame (proximal end of the module).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkPose {
    pub rotation: Mat3,
    pub origin: Vec3,
}

impl LinkPose {
    pub fn transform_point(&self, local: &Vec3) -> Vec3 {
        self.origin + self.rotation * local
    }
}

/// Head frame rotation for the state (chart times ZYX Euler rotation).
pub fn head_rotation(state: &GeneralizedState) -> Mat3 {
    let q = &state.q;
    state.chart_matrix() * rot_zyx(q[3], q[4], q[5])
}

/// Link poses from head to tail.
pub fn forward_kinematics(model: &RobotModel, state: &GeneralizedState) -> Vec<LinkPose> {
    let q = &state.q;
    let mut poses = Vec::with_capacity(model.n_links());
    let mut pose = LinkPose {
        rotation: head_rotation(state),
        origin: Vec3::new(q[0], q[1], q[2]),
    };
    poses.push(pose);
    for (j, joint) in model.joints.iter().enumerate() {
        let parent_len = model.links[j].length;
        let origin = pose.transform_point(&Vec3::new(parent_len, 0.0, 0.0));
        let rotation = pose.rotation * axis_rotation(&joint.axis(), q[6 + j]);
        pose = LinkPose { rotation, origin };
        poses.push(pose);
    }
    poses
}

/// Head and tail latch frames as poses. Closure means they coincide.
pub fn latch_frames(model: &RobotModel, poses: &[LinkPose]) -> (LinkPose, LinkPose) {
    let head = poses[0];
    let tail_link = poses[poses.len() - 1];
    let tail = LinkPose {
        rotation: tail_link.rotation,
        origin: tail_link.transform_point(&model.tail_latch_offset()),
    };
    (head, tail)
}

/// Position (m) and orientation (rad) mismatch between the latch frames.
pub fn latch_error(model: &RobotModel, state: &GeneralizedState) -> (f64, f64) {
    let poses = forward_kinematics(model, state);
    let (head, tail) = latch_frames(model, &poses);
    let dp = (tail.origin - head.origin).norm();
    let dr = crate::math::rotation_log(&(head.rotation.transpose() * tail.rotation)).norm();
    (dp, dr)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactCandidate {
    pub link: usize,
    pub point: usize,
    /// Capsule-axis point in the link frame.
    pub axis_offset: Vec3,
    /// Surface point in the link frame (axis point pushed toward the terrain).
    pub body_offset: Vec3,
    pub world: Vec3,
}

pub const CANDIDATES_PER_LINK: usize = 3;

/// Capsule-axis sample points of a link (proximal end, middle, distal end).
pub fn candidate_axis_points(link: &LinkParams) -> [Vec3; CANDIDATES_PER_LINK] {
    [
        Vec3::zeros(),
        Vec3::new(0.5 * link.length, 0.0, 0.0),
        Vec3::new(link.length, 0.0, 0.0),
    ]
}

/// Candidate contact points projected toward the ground along world −z.
pub fn contact_candidates(model: &RobotModel, state: &GeneralizedState) -> Vec<ContactCandidate> {
    contact_candidates_toward(model, state, &Vec3::new(0.0, 0.0, -1.0))
}

/// Candidate contact points projected along the unit direction `down`.
pub fn contact_candidates_toward(model: &RobotModel, state: &GeneralizedState, down: &Vec3) -> Vec<ContactCandidate> {
    let poses = forward_kinematics(model, state);
    let mut out = Vec::with_capacity(model.n_links() * CANDIDATES_PER_LINK);
    for (k, (link, pose)) in model.links.iter().zip(&poses).enumerate() {
        let local_down = pose.rotation.transpose() * down;
        for (i, axis) in candidate_axis_points(link).iter().enumerate() {
            let body_offset = axis + local_down * link.radius;
            out.push(ContactCandidate {
                link: k,
                point: i,
                axis_offset: *axis,
                body_offset,
                world: pose.transform_point(&body_offset),
            });
        }
    }
    out
}

/// Closed hexagon: pitch joints at 60°, yaw joints straight.
pub fn hexring_configuration(model: &RobotModel) -> JointVector {
    let mut q = JointVector::zeros(model.n_joints());
    for j in model.pitch_joints() {
        q[j] = HEXRING_BEND;
    }
    q
}

pub const MAX_HELIX_PITCH: f64 = 0.35;

/// Helical coil: hex-ring pitch bends plus yaw bends of one magnitude whose
/// sign flips across the middle of the body, so the two halves wind apart
/// like a split washer. The magnitude is chosen so the end-to-end offset along
/// the coil axis equals `total_length · sin(helix_pitch_angle)`.
///
/// A single-signed yaw bend does not work: with equal link lengths every
/// pitch/yaw unit is a zero-pitch screw and the coil stays planar.
pub fn spiral_configuration(model: &RobotModel, helix_pitch_angle: f64) -> Result<JointVector> {
    if !(helix_pitch_angle > 0.0 && helix_pitch_angle <= MAX_HELIX_PITCH) {
        return Err(Error::validation(
            "helix_pitch_angle",
            format!("must lie in (0, {MAX_HELIX_PITCH}] rad"),
        ));
    }
    let target = model.total_length() * helix_pitch_angle.sin();
    let limit = model
        .yaw_joints()
        .map(|j| model.joints[j].angle_limits[1])
        .fold(f64::INFINITY, f64::min);
    // Walk out to the first local maximum of the offset; the offset is
    // monotone below it.
    let step = 0.01;
    let (mut lo, mut best) = (0.0, 0.0);
    let mut hi = None;
    let mut y = step;
    while y <= limit {
        let e = coil_axial_extent(model, y);
        if e >= target {
            hi = Some(y);
            break;
        }
        if e < best {
            break;
        }
        best = e;
        lo = y;
        y += step;
    }
    let Some(mut hi) = hi else {
        return Err(Error::validation(
            "helix_pitch_angle",
            format!("unreachable within joint limits (largest offset {best:.3} m)"),
        ));
    };
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if coil_axial_extent(model, mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(coil(model, 0.5 * (lo + hi)))
}

fn coil(model: &RobotModel, yaw: f64) -> JointVector {
    let mut q = hexring_configuration(model);
    let yaws: Vec<usize> = model.yaw_joints().collect();
    let n = yaws.len();
    for (k, j) in yaws.into_iter().enumerate() {
        // Before, at, or after the middle yaw joint.
        q[j] = match (2 * k + 1).cmp(&n) {
            std::cmp::Ordering::Less => yaw,
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Greater => -yaw,
        };
    }
    q
}

/// Axis of a ring or coil posture: the least-variance direction of the link
/// CoMs, signed towards +y of the head frame.
pub fn coil_axis(model: &RobotModel, joints: &JointVector) -> Vec3 {
    let state = GeneralizedState::from_joints(model, joints);
    ring_normal(model, &forward_kinematics(model, &state))
}

/// Least-variance direction of the link CoMs of posed links.
pub fn ring_normal(model: &RobotModel, poses: &[LinkPose]) -> Vec3 {
    let cs: Vec<Vec3> = model
        .links
        .iter()
        .zip(poses)
        .map(|(l, p)| p.transform_point(&l.com()))
        .collect();
    let mean = cs.iter().sum::<Vec3>() / cs.len() as f64;
    let cov = cs.iter().map(|c| (c - mean) * (c - mean).transpose()).sum::<Mat3>();
    let eig = nalgebra::SymmetricEigen::new(cov);
    let n: Vec3 = eig.eigenvectors.column(eig.eigenvalues.imin()).into();
    let head_y = poses[0].rotation * Vec3::y();
    if n.dot(&head_y) < 0.0 {
        -n
    } else {
        n
    }
}

/// End-to-end offset along the coil axis for the given yaw magnitude.
fn coil_axial_extent(model: &RobotModel, yaw: f64) -> f64 {
    let q = coil(model, yaw);
    let state = GeneralizedState::from_joints(model, &q);
    let poses = forward_kinematics(model, &state);
    let axis = ring_normal(model, &poses);
    let (head, tail) = latch_frames(model, &poses);
    (tail.origin - head.origin).dot(&axis).abs()
}

/// Width of the support strip of a posture: axial extent of the capsule-axis
/// candidate points along `axis`, plus one capsule diameter.
pub fn support_width(model: &RobotModel, state: &GeneralizedState, axis: &Vec3) -> f64 {
    let poses = forward_kinematics(model, state);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (link, pose) in model.links.iter().zip(&poses) {
        for p in candidate_axis_points(link) {
            let s = pose.transform_point(&p).dot(axis);
            lo = lo.min(s);
            hi = hi.max(s);
        }
    }
    let diameter = 2.0 * model.links.iter().map(|l| l.radius).fold(0.0, f64::max);
    hi - lo + diameter
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cobra() -> RobotModel {
        build_cobra_model(None).unwrap()
    }

    #[test]
    fn default_parameters() {
        let m = cobra();
        assert_eq!(m.n_links(), 12);
        assert_eq!(m.n_joints(), 11);
        for l in &m.links {
            assert_eq!(l.mass, 0.60);
            assert_eq!(l.principal_inertia, [7.16707e-4, 8.70397e-4, 8.6286e-4]);
            assert_relative_eq!(l.length, 1.7 / 12.0);
            assert_eq!(l.radius, 0.05);
        }
        assert_relative_eq!(m.total_mass(), 7.2, epsilon = 1e-12);
        assert_relative_eq!(m.total_length(), 1.7, epsilon = 1e-12);
        assert_eq!(m.pitch_joints().count(), 6);
        assert_eq!(m.yaw_joints().count(), 5);
        assert_relative_eq!(m.joints[0].angle_limits[1], 1.2217, epsilon = 1e-4);
    }

    #[test]
    fn rejects_invalid_overrides() {
        let bad_mass = ModelOverrides {
            mass: Some(-1.0),
            ..Default::default()
        };
        match build_cobra_model(Some(&bad_mass)) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "mass"),
            other => panic!("unexpected {other:?}"),
        }
        let inverted = ModelOverrides {
            joint_limit: Some([0.5, -0.5]),
            ..Default::default()
        };
        match build_cobra_model(Some(&inverted)) {
            Err(Error::Validation { field, .. }) => assert_eq!(field, "angle_limits"),
            other => panic!("unexpected {other:?}"),
        }
        let triangle = ModelOverrides {
            principal_inertia: Some([1e-4, 1e-4, 1e-3]),
            ..Default::default()
        };
        assert!(build_cobra_model(Some(&triangle)).is_err());
    }

    #[test]
    fn straight_chain_is_collinear() {
        let m = cobra();
        let s = GeneralizedState::zeros(&m);
        let poses = forward_kinematics(&m, &s);
        for (k, p) in poses.iter().enumerate() {
            assert_relative_eq!(p.origin, Vec3::new(k as f64 * 1.7 / 12.0, 0.0, 0.0), epsilon = 1e-14);
            assert_relative_eq!(p.rotation, Mat3::identity(), epsilon = 1e-14);
        }
    }

    #[test]
    fn translation_equivariance() {
        let m = cobra();
        let mut s = GeneralizedState::zeros(&m);
        for j in 0..11 {
            s.q[6 + j] = 0.1 * (j as f64 - 5.0);
        }
        s.q[3] = 0.2;
        let base = forward_kinematics(&m, &s);
        s.q[0] += 1.0;
        s.q[1] += 2.0;
        s.q[2] += 3.0;
        let moved = forward_kinematics(&m, &s);
        for (a, b) in base.iter().zip(&moved) {
            assert!((b.origin - a.origin - Vec3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn hexring_closes() {
        let m = cobra();
        let q = hexring_configuration(&m);
        for j in m.pitch_joints() {
            assert_relative_eq!(q[j], 60f64.to_radians(), epsilon = 1e-12);
        }
        for j in m.yaw_joints() {
            assert_eq!(q[j], 0.0);
        }
        assert!(q.within_limits(&m));
        let s = GeneralizedState::from_joints(&m, &q);
        let (dp, dr) = latch_error(&m, &s);
        assert!(dp < 1e-6 && dr < 1e-6, "closure error {dp} {dr}");
    }

    #[test]
    fn hexring_geometry_matches_hand_computation() {
        // Vertices of a regular hexagon of side 2L, traversed from the head.
        let m = cobra();
        let l = 1.7 / 12.0;
        let s = GeneralizedState::from_joints(&m, &hexring_configuration(&m));
        let poses = forward_kinematics(&m, &s);
        let mut heading: f64 = 0.0;
        let mut p = Vec3::new(l, 0.0, 0.0);
        for k in (1..12).step_by(2) {
            assert_relative_eq!(poses[k].origin, p, epsilon = 1e-12);
            heading += PI / 3.0;
            p += 2.0 * l * Vec3::new(heading.cos(), 0.0, -heading.sin());
        }
        assert_relative_eq!(2.0 * l, 0.2833, epsilon = 1e-4);
        assert_relative_eq!(6.0 * 2.0 * l, 1.70, epsilon = 1e-12);
    }

    #[test]
    fn candidates_per_link() {
        let m = cobra();
        let mut s = GeneralizedState::zeros(&m);
        s.q[2] = 0.05;
        let c = contact_candidates(&m, &s);
        assert_eq!(c.len(), 36);
        for (i, cand) in c.iter().enumerate() {
            assert_eq!((cand.link, cand.point), (i / 3, i % 3));
            assert!(cand.world.z.abs() < 1e-9);
        }
    }

    #[test]
    fn upright_hexring_lowest_candidates() {
        let m = cobra();
        let s = GeneralizedState::from_joints(&m, &hexring_configuration(&m));
        let c = contact_candidates(&m, &s);
        let zmin = c.iter().map(|c| c.world.z).fold(f64::INFINITY, f64::min);
        let lowest: Vec<usize> = c.iter().filter(|c| c.world.z < zmin + 1e-9).map(|c| c.link).collect();
        // The bottom side's six candidates, plus the shared vertex points of
        // the neighbouring links at the same height.
        assert_eq!(lowest.iter().filter(|&&l| l == 5 || l == 6).count(), 6);
        assert!(lowest.iter().all(|&l| (4..=7).contains(&l)), "{lowest:?}");
        assert_eq!(lowest.len(), 8);
    }

    #[test]
    fn spiral_geometry() {
        let m = cobra();
        assert!(spiral_configuration(&m, 0.0).is_err());
        assert!(spiral_configuration(&m, 0.4).is_err());
        let q = spiral_configuration(&m, 0.15).unwrap();
        let yaw: Vec<f64> = m.yaw_joints().map(|j| q[j]).collect();
        assert!(yaw[0] > 0.0);
        assert!(yaw.iter().all(|y| y.abs() < 1e-15 || (y.abs() - yaw[0]).abs() < 1e-15));
        assert_eq!(yaw[2], 0.0);
        assert_eq!(yaw[3], -yaw[0]);
        assert!(q.within_limits(&m));
        let axis = coil_axis(&m, &q);
        let s = GeneralizedState::from_joints(&m, &q);
        let poses = forward_kinematics(&m, &s);
        let (h, t) = latch_frames(&m, &poses);
        let offset = (t.origin - h.origin).dot(&axis).abs();
        assert_relative_eq!(offset, 1.7 * 0.15f64.sin(), epsilon = 1e-6);

        let hex = GeneralizedState::from_joints(&m, &hexring_configuration(&m));
        let w_hex = support_width(&m, &hex, &Vec3::y());
        assert_relative_eq!(w_hex, 0.1, epsilon = 1e-9);
        assert!(support_width(&m, &s, &axis) > w_hex + 0.1);
    }

    proptest::proptest! {
        #[test]
        fn candidate_count_is_three_per_link(
            qs in proptest::collection::vec(-1.2f64..1.2, 17)
        ) {
            let m = cobra();
            let mut s = GeneralizedState::zeros(&m);
            for (i, v) in qs.iter().enumerate() { s.q[i] = *v; }
            proptest::prop_assert_eq!(contact_candidates(&m, &s).len(), 36);
        }

        #[test]
        fn rigid_transform_round_trip(
            qs in proptest::collection::vec(-1.2f64..1.2, 11),
            t in proptest::array::uniform3(-5.0f64..5.0),
            yaw in -3.0f64..3.0,
        ) {
            let m = cobra();
            let mut s = GeneralizedState::zeros(&m);
            for (i, v) in qs.iter().enumerate() { s.q[6 + i] = *v; }
            let base = forward_kinematics(&m, &s);
            s.q[0] = t[0]; s.q[1] = t[1]; s.q[2] = t[2]; s.q[5] = yaw;
            let moved = forward_kinematics(&m, &s);
            let r = rot_zyx(0.0, 0.0, yaw);
            let tv = Vec3::from(t);
            for (a, b) in base.iter().zip(&moved) {
                let back = r.transpose() * (b.origin - tv);
                proptest::prop_assert!((back - a.origin).norm() < 1e-12);
            }
        }
    }
}
