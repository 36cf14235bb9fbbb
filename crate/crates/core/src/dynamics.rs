//! Equations of motion `M(q) u̇ − h(q, u, τ) = Σ Jᵢᵀ fᵢ` for the floating-base
//! chain, and the partitioned head/joint form used to study tumbling.
//!
//! All spatial quantities are expressed in world axes about the head-frame
//! origin at the current instant. The mass matrix is assembled from composite
//! inertias; the velocity-product terms come from a recursive inverse-dynamics
//! pass with `u̇ = 0`.

use nalgebra::{DMatrix, DVector, Matrix3xX};

use crate::error::{Error, Result};
use crate::math::{euler_rate_map, euler_rate_map_dot, Force, Mat3, Motion, SpatialInertia, Vec3};
use crate::robot_model::{forward_kinematics, LinkPose, RobotModel};
use crate::state::GeneralizedState;

pub const STANDARD_GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -9.81);
pub const LUNAR_GRAVITY: Vec3 = Vec3::new(0.0, 0.0, -1.62);

/// Mass-matrix condition number beyond which it is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Point force applied to a link, both expressed in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointForce {
    pub link: usize,
    pub point: Vec3,
    pub force: Vec3,
}

/// Per-state kinematic quantities shared by the dynamics routines.
#[derive(Clone, Debug)]
pub struct ChainKinematics {
    pub poses: Vec<LinkPose>,
    pub com: Vec<Vec3>,
    pub inertia_world: Vec<Mat3>,
    /// Spatial reference point (head-frame origin).
    pub reference: Vec3,
    /// Motion subspace column of each generalized coordinate.
    pub subspace: Vec<Motion>,
    /// First link moved by each generalized coordinate.
    pub dof_link: Vec<usize>,
    pub body_inertia: Vec<SpatialInertia>,
    pub velocity: Vec<Motion>,
    /// Spatial acceleration of each link when `u̇ = 0`.
    pub bias_accel: Vec<Motion>,
}

impl ChainKinematics {
    pub fn new(model: &RobotModel, state: &GeneralizedState) -> Self {
        let n = model.n_links();
        let dof = model.dof();
        let q = &state.q;
        let u = &state.u;
        let poses = forward_kinematics(model, state);
        let reference = poses[0].origin;

        let mut com = Vec::with_capacity(n);
        let mut inertia_world = Vec::with_capacity(n);
        let mut body_inertia = Vec::with_capacity(n);
        for (link, pose) in model.links.iter().zip(&poses) {
            let c = pose.transform_point(&link.com());
            let iw = pose.rotation * link.inertia_matrix() * pose.rotation.transpose();
            body_inertia.push(SpatialInertia::from_body(link.mass, &(c - reference), &iw));
            com.push(c);
            inertia_world.push(iw);
        }

        let chart = state.chart_matrix();
        let e = chart * euler_rate_map(q[4], q[5]);
        let e_dot = chart * euler_rate_map_dot(q[4], q[5], u[4], u[5]);
        let head_lin_vel = Vec3::new(u[0], u[1], u[2]);

        let mut subspace = Vec::with_capacity(dof);
        let mut subspace_dot = Vec::with_capacity(dof);
        let mut dof_link = Vec::with_capacity(dof);
        for i in 0..3 {
            let mut v = Vec3::zeros();
            v[i] = 1.0;
            subspace.push(Motion::new(Vec3::zeros(), v));
            subspace_dot.push(Motion::zero());
            dof_link.push(0);
        }
        for i in 0..3 {
            let eps: Vec3 = e.column(i).into();
            let eps_dot: Vec3 = e_dot.column(i).into();
            subspace.push(Motion::new(eps, Vec3::zeros()));
            subspace_dot.push(Motion::new(eps_dot, head_lin_vel.cross(&eps)));
            dof_link.push(0);
        }

        let mut velocity = Vec::with_capacity(n);
        let mut bias_accel = Vec::with_capacity(n);
        let mut v0 = Motion::zero();
        let mut a0 = Motion::zero();
        for i in 0..6 {
            v0 = v0.add(&subspace[i].scale(u[i]));
            a0 = a0.add(&subspace_dot[i].scale(u[i]));
        }
        velocity.push(v0);
        bias_accel.push(a0);
        for (j, joint) in model.joints.iter().enumerate() {
            let k = j + 1;
            let axis = poses[k].rotation * joint.axis();
            let origin = poses[k].origin;
            let s = Motion::new(axis, axis.cross(&(reference - origin)));
            let parent_v = velocity[k - 1];
            let s_dot = parent_v.cross_motion(&s);
            let rate = u[6 + j];
            velocity.push(parent_v.add(&s.scale(rate)));
            bias_accel.push(bias_accel[k - 1].add(&s_dot.scale(rate)));
            subspace.push(s);
            dof_link.push(k);
        }

        Self {
            poses,
            com,
            inertia_world,
            reference,
            subspace,
            dof_link,
            body_inertia,
            velocity,
            bias_accel,
        }
    }

    pub fn n_links(&self) -> usize {
        self.poses.len()
    }

    /// Mass matrix from composite inertias.
    pub fn mass_matrix(&self) -> DMatrix<f64> {
        let n = self.n_links();
        let dof = self.subspace.len();
        let mut composite = self.body_inertia.clone();
        for k in (0..n - 1).rev() {
            composite[k] = composite[k].add(&composite[k + 1]);
        }
        let mut m = DMatrix::zeros(dof, dof);
        for b in 0..dof {
            let fb = composite[self.dof_link[b]].apply(&self.subspace[b]);
            for a in 0..=b {
                // dof_link is non-decreasing in the coordinate index.
                let val = self.subspace[a].dot_force(&fb);
                m[(a, b)] = val;
                m[(b, a)] = val;
            }
        }
        m
    }

    /// Project per-link wrenches (about the reference point) onto the
    /// generalized coordinates through the subtree sums.
    pub fn project_wrenches(&self, mut wrenches: Vec<Force>) -> DVector<f64> {
        let n = self.n_links();
        for k in (0..n - 1).rev() {
            wrenches[k] = wrenches[k].add(&wrenches[k + 1]);
        }
        DVector::from_iterator(
            self.subspace.len(),
            self.subspace
                .iter()
                .zip(&self.dof_link)
                .map(|(s, &k)| s.dot_force(&wrenches[k])),
        )
    }

    /// Generalized velocity-product forces `C(q, u) u` as produced by inverse
    /// dynamics with zero acceleration and no gravity.
    pub fn velocity_product(&self) -> DVector<f64> {
        let wrenches = (0..self.n_links())
            .map(|k| {
                let i = &self.body_inertia[k];
                let v = &self.velocity[k];
                i.apply(&self.bias_accel[k]).add(&v.cross_force(&i.apply(v)))
            })
            .collect();
        self.project_wrenches(wrenches)
    }

    pub fn gravity_forces(&self, model: &RobotModel, gravity: &Vec3) -> DVector<f64> {
        let wrenches = model
            .links
            .iter()
            .zip(&self.com)
            .map(|(l, c)| Force::at_point(&(c - self.reference), &(gravity * l.mass)))
            .collect();
        self.project_wrenches(wrenches)
    }

    pub fn point_forces(&self, forces: &[PointForce]) -> DVector<f64> {
        let mut wrenches = vec![Force::zero(); self.n_links()];
        for pf in forces {
            let w = Force::at_point(&(pf.point - self.reference), &pf.force);
            wrenches[pf.link] = wrenches[pf.link].add(&w);
        }
        self.project_wrenches(wrenches)
    }

    /// World velocity of a point rigidly attached to `link`.
    pub fn point_velocity(&self, link: usize, point: &Vec3) -> Vec3 {
        self.velocity[link].point_velocity(&(point - self.reference))
    }

    /// World acceleration of a point on `link` when `u̇ = 0` (the `J̇ u` term).
    pub fn point_bias_acceleration(&self, link: usize, point: &Vec3) -> Vec3 {
        let r = point - self.reference;
        let a = &self.bias_accel[link];
        let v = &self.velocity[link];
        a.v + a.w.cross(&r) + v.w.cross(&v.point_velocity(&r))
    }

    /// Linear (3 × dof) Jacobian of a point rigidly attached to `link`.
    pub fn point_jacobian(&self, link: usize, point: &Vec3) -> Matrix3xX<f64> {
        let r = point - self.reference;
        let mut j = Matrix3xX::zeros(self.subspace.len());
        for (c, (s, &k)) in self.subspace.iter().zip(&self.dof_link).enumerate() {
            if k <= link {
                j.set_column(c, &s.point_velocity(&r));
            }
        }
        j
    }

    /// Angular (3 × dof) Jacobian of `link`.
    pub fn angular_jacobian(&self, link: usize) -> Matrix3xX<f64> {
        let mut j = Matrix3xX::zeros(self.subspace.len());
        for (c, (s, &k)) in self.subspace.iter().zip(&self.dof_link).enumerate() {
            if k <= link {
                j.set_column(c, &s.w);
            }
        }
        j
    }

    pub fn total_mass(&self) -> f64 {
        self.body_inertia.iter().map(|b| b.mass).sum()
    }

    pub fn center_of_mass(&self) -> Vec3 {
        let m = self.total_mass();
        self.body_inertia
            .iter()
            .zip(&self.com)
            .map(|(b, c)| c * b.mass)
            .sum::<Vec3>()
            / m
    }

    pub fn com_velocity(&self) -> Vec3 {
        self.linear_momentum() / self.total_mass()
    }

    pub fn linear_momentum(&self) -> Vec3 {
        (0..self.n_links())
            .map(|k| self.velocity[k].point_velocity(&(self.com[k] - self.reference)) * self.body_inertia[k].mass)
            .sum()
    }

    /// Angular momentum about the instantaneous centre of mass.
    pub fn angular_momentum_about_com(&self) -> Vec3 {
        let c = self.center_of_mass();
        (0..self.n_links())
            .map(|k| {
                let v = &self.velocity[k];
                let vc = v.point_velocity(&(self.com[k] - self.reference));
                self.inertia_world[k] * v.w + (self.com[k] - c).cross(&vc) * self.body_inertia[k].mass
            })
            .sum()
    }

    pub fn kinetic_energy(&self) -> f64 {
        (0..self.n_links())
            .map(|k| {
                let v = &self.velocity[k];
                0.5 * v.dot_force(&self.body_inertia[k].apply(v))
            })
            .sum()
    }

    pub fn potential_energy(&self, gravity: &Vec3) -> f64 {
        -self
            .body_inertia
            .iter()
            .zip(&self.com)
            .map(|(b, c)| b.mass * gravity.dot(c))
            .sum::<f64>()
    }
}

/// `M` and `h` at one state.
#[derive(Clone, Debug)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
}

fn check_torque(model: &RobotModel, tau: &[f64]) -> Result<()> {
    if tau.len() != model.n_joints() {
        return Err(Error::validation(
            "tau",
            format!("expected {} entries, got {}", model.n_joints(), tau.len()),
        ));
    }
    for (i, (t, j)) in tau.iter().zip(&model.joints).enumerate() {
        if !t.is_finite() || t.abs() > j.torque_peak + 1e-9 {
            return Err(Error::validation(
                format!("tau[{i}]"),
                format!("{t} exceeds the peak torque {}", j.torque_peak),
            ));
        }
    }
    Ok(())
}

pub fn mass_matrix(model: &RobotModel, state: &GeneralizedState) -> Result<DMatrix<f64>> {
    state.check()?;
    Ok(ChainKinematics::new(model, state).mass_matrix())
}

/// `h = C(q,u)u + G(q) + B τ` with the sign convention `M u̇ = h + Σ Jᵀ f`.
pub fn bias_forces(model: &RobotModel, state: &GeneralizedState, tau: &[f64], gravity: &Vec3) -> Result<DVector<f64>> {
    state.check()?;
    check_torque(model, tau)?;
    let kin = ChainKinematics::new(model, state);
    Ok(bias_from(&kin, model, tau, gravity))
}

pub(crate) fn bias_from(kin: &ChainKinematics, model: &RobotModel, tau: &[f64], gravity: &Vec3) -> DVector<f64> {
    let mut h = kin.gravity_forces(model, gravity) - kin.velocity_product();
    for (i, t) in tau.iter().enumerate() {
        h[6 + i] += t;
    }
    h
}

pub fn dynamics_terms(
    model: &RobotModel,
    state: &GeneralizedState,
    tau: &[f64],
    gravity: &Vec3,
) -> Result<DynamicsTerms> {
    state.check()?;
    check_torque(model, tau)?;
    let kin = ChainKinematics::new(model, state);
    Ok(DynamicsTerms {
        mass: kin.mass_matrix(),
        bias: bias_from(&kin, model, tau, gravity),
    })
}

/// 3 × dof Jacobian mapping `u` to the world velocity of a material point.
pub fn contact_jacobian(
    model: &RobotModel,
    state: &GeneralizedState,
    link: usize,
    world_point: &Vec3,
) -> Result<Matrix3xX<f64>> {
    if link >= model.n_links() {
        return Err(Error::validation("link", format!("no link {link}")));
    }
    Ok(ChainKinematics::new(model, state).point_jacobian(link, world_point))
}

/// Cholesky factor of `M` with a condition-number guard.
pub fn factor_mass(m: &DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("mass matrix is not positive definite".into()))?;
    let l = chol.l_dirty();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..l.nrows() {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo == 0.0 || (hi / lo).powi(2) > MAX_CONDITION {
        return Err(Error::Singular("mass matrix condition number above 1e12".into()));
    }
    Ok(chol)
}

/// `u̇ = M⁻¹ (h + Σ Jᵢᵀ fᵢ)`.
pub fn forward_dynamics(
    model: &RobotModel,
    state: &GeneralizedState,
    tau: &[f64],
    gravity: &Vec3,
    contact_forces: &[PointForce],
) -> Result<DVector<f64>> {
    state.check()?;
    check_torque(model, tau)?;
    for pf in contact_forces {
        if pf.link >= model.n_links() {
            return Err(Error::validation("contact_forces", format!("no link {}", pf.link)));
        }
    }
    let kin = ChainKinematics::new(model, state);
    let rhs = bias_from(&kin, model, tau, gravity) + kin.point_forces(contact_forces);
    let chol = factor_mass(&kin.mass_matrix())?;
    Ok(chol.solve(&rhs))
}

/// Block partition of `M` into joint (J) and head (H) coordinates.
#[derive(Clone, Debug)]
pub struct TumblingBlocks {
    pub m_jj: DMatrix<f64>,
    pub m_jh: DMatrix<f64>,
    pub m_hh: DMatrix<f64>,
    pub m_hj: DMatrix<f64>,
    /// Schur complement `M_JJ − M_JH M_HH⁻¹ M_HJ`.
    pub m_prime: DMatrix<f64>,
    pub h_j: DVector<f64>,
    pub h_h: DVector<f64>,
}

pub fn partition_tumbling(
    model: &RobotModel,
    state: &GeneralizedState,
    tau: &[f64],
    gravity: &Vec3,
) -> Result<TumblingBlocks> {
    let terms = dynamics_terms(model, state, tau, gravity)?;
    partition_terms(&terms)
}

fn partition_terms(terms: &DynamicsTerms) -> Result<TumblingBlocks> {
    let m = &terms.mass;
    let nj = m.nrows() - 6;
    let m_hh = m.view((0, 0), (6, 6)).into_owned();
    let m_hj = m.view((0, 6), (6, nj)).into_owned();
    let m_jh = m.view((6, 0), (nj, 6)).into_owned();
    let m_jj = m.view((6, 6), (nj, nj)).into_owned();
    let hh_chol = m_hh
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("M_HH is not invertible".into()))?;
    let m_prime = &m_jj - &m_jh * hh_chol.solve(&m_hj);
    Ok(TumblingBlocks {
        m_jj,
        m_jh,
        m_hh,
        m_hj,
        m_prime: (&m_prime + m_prime.transpose()) * 0.5,
        h_j: terms.bias.rows(6, nj).into_owned(),
        h_h: terms.bias.rows(0, 6).into_owned(),
    })
}

/// Partitioned tumbling state: joint posture and rates, head pose, and the
/// head momentum carried as angular momentum about the CoM (`sigma_cm`)
/// together with the total linear momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct TumblingState {
    pub q_j: DVector<f64>,
    pub u_j: DVector<f64>,
    pub q_h: DVector<f64>,
    pub sigma_cm: Vec3,
    pub linear_momentum: Vec3,
    pub chart: nalgebra::UnitQuaternion<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TumblingDerivative {
    pub q_j: DVector<f64>,
    pub u_j: DVector<f64>,
    pub q_h: DVector<f64>,
    pub sigma_cm: Vec3,
    pub linear_momentum: Vec3,
}

/// Conjugate momentum of the head coordinates, `∂T/∂u_H`, from CoM momenta.
fn head_momentum(kin: &ChainKinematics, state: &GeneralizedState, sigma: &Vec3, p: &Vec3) -> DVector<f64> {
    let e = state.chart_matrix() * euler_rate_map(state.q[4], state.q[5]);
    let l_ref = sigma + (kin.center_of_mass() - kin.reference).cross(p);
    let rot = e.transpose() * l_ref;
    DVector::from_vec(vec![p.x, p.y, p.z, rot.x, rot.y, rot.z])
}

impl TumblingState {
    pub fn from_full(model: &RobotModel, state: &GeneralizedState) -> Self {
        let nj = model.n_joints();
        let kin = ChainKinematics::new(model, state);
        Self {
            q_j: state.q.rows(6, nj).into_owned(),
            u_j: state.u.rows(6, nj).into_owned(),
            q_h: state.q.rows(0, 6).into_owned(),
            sigma_cm: kin.angular_momentum_about_com(),
            linear_momentum: kin.linear_momentum(),
            chart: state.chart,
        }
    }

    /// Full generalized state with `u_H = M_HH⁻¹ (π_H − M_HJ u_J)`.
    pub fn to_full(&self, model: &RobotModel) -> Result<GeneralizedState> {
        let mut s = GeneralizedState::zeros(model);
        s.chart = self.chart;
        s.q.rows_mut(0, 6).copy_from(&self.q_h);
        s.q.rows_mut(6, self.q_j.len()).copy_from(&self.q_j);
        s.u.rows_mut(6, self.u_j.len()).copy_from(&self.u_j);
        s.check()?;
        let kin = ChainKinematics::new(model, &s);
        let m = kin.mass_matrix();
        let nj = self.q_j.len();
        let m_hh = m.view((0, 0), (6, 6)).into_owned();
        let m_hj = m.view((0, 6), (6, nj)).into_owned();
        let pi = head_momentum(&kin, &s, &self.sigma_cm, &self.linear_momentum);
        let u_h = m_hh
            .cholesky()
            .ok_or_else(|| Error::Singular("M_HH is not invertible".into()))?
            .solve(&(pi - m_hj * &self.u_j));
        s.u.rows_mut(0, 6).copy_from(&u_h);
        Ok(s)
    }

    pub fn axpy(&self, h: f64, d: &TumblingDerivative) -> Self {
        Self {
            q_j: &self.q_j + &d.q_j * h,
            u_j: &self.u_j + &d.u_j * h,
            q_h: &self.q_h + &d.q_h * h,
            sigma_cm: self.sigma_cm + d.sigma_cm * h,
            linear_momentum: self.linear_momentum + d.linear_momentum * h,
            chart: self.chart,
        }
    }
}

/// Time derivative of the partitioned tumbling state.
///
/// `q̇_J = u_J`, `q̇_H = M_HH⁻¹ (π_H − M_HJ u_J)`,
/// `M′ u̇_J = h_J + Q_J − M_JH M_HH⁻¹ (h_H + Q_H)`,
/// `σ̇_cm = Σ Υᵢ × fᵢ` with `Υᵢ` the CoM-to-contact arm, `ṗ = Σ fᵢ + m g`.
pub fn tumbling_state_derivative(
    model: &RobotModel,
    tstate: &TumblingState,
    tau: &[f64],
    gravity: &Vec3,
    contact_forces: &[PointForce],
) -> Result<TumblingDerivative> {
    check_torque(model, tau)?;
    let full = tstate.to_full(model)?;
    let kin = ChainKinematics::new(model, &full);
    let terms = DynamicsTerms {
        mass: kin.mass_matrix(),
        bias: bias_from(&kin, model, tau, gravity),
    };
    let blocks = partition_terms(&terms)?;
    let q_ext = kin.point_forces(contact_forces);
    let nj = model.n_joints();
    let hh = blocks
        .m_hh
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("M_HH is not invertible".into()))?;
    let rhs_h = &blocks.h_h + q_ext.rows(0, 6);
    let rhs_j = &blocks.h_j + q_ext.rows(6, nj) - &blocks.m_jh * hh.solve(&rhs_h);
    let u_dot_j = blocks
        .m_prime
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular("Schur complement is not positive definite".into()))?
        .solve(&rhs_j);
    let c = kin.center_of_mass();
    let mut sigma_dot = Vec3::zeros();
    let mut p_dot = gravity * kin.total_mass();
    for pf in contact_forces {
        sigma_dot += (pf.point - c).cross(&pf.force);
        p_dot += pf.force;
    }
    Ok(TumblingDerivative {
        q_j: tstate.u_j.clone(),
        u_j: u_dot_j,
        q_h: full.u.rows(0, 6).into_owned(),
        sigma_cm: sigma_dot,
        linear_momentum: p_dot,
    })
}
