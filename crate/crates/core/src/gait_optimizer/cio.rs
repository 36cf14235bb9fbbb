//! One step of contact-implicit optimization: find joint torques, contact
//! forces and accelerations that realize a desired CoM acceleration while
//! minimizing `½ fᵀ G f` with `G` the Delassus operator.
//!
//! Decision variables `x = [u̇, τ, f]` with per-contact forces in the
//! (normal, tangent, tangent) frame. Constraint families, in order:
//! equations of motion, joint range at the end of the step, torque range,
//! unilaterality and complementarity, friction cone, contact velocity,
//! contact acceleration, and the initial contact velocity.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, Qp, QpOutcome, QpSettings, Violations};
use crate::contact::{gap, gap_rates_from, tangent_basis, Terrain};
use crate::dynamics::{bias_from, factor_mass, ChainKinematics, STANDARD_GRAVITY};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::robot_model::{candidate_axis_points, RobotModel};
use crate::state::GeneralizedState;

pub const FAMILIES: [&str; 8] = [
    "dynamics",
    "joint_limits",
    "torque_limits",
    "complementarity",
    "friction_cone",
    "contact_velocity",
    "contact_acceleration",
    "initial_velocity",
];

const DYNAMICS: usize = 0;
const JOINT_LIMITS: usize = 1;
const TORQUE_LIMITS: usize = 2;
const COMPLEMENTARITY: usize = 3;
const FRICTION: usize = 4;
const CONTACT_VELOCITY: usize = 5;
const CONTACT_ACCELERATION: usize = 6;
const INITIAL_VELOCITY: usize = 7;

/// Candidates closer than this to the terrain enter the problem (m).
pub const DEFAULT_ACTIVATION: f64 = 0.01;
/// Gaps at or below this count as closed (m).
pub const CLOSED_GAP: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ConeMode {
    /// Inscribed pyramid with `k` facets.
    Polyhedral(usize),
    /// The quadratic cone, by supporting-plane cuts.
    Exact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CioContact {
    pub link: usize,
    pub point: usize,
    pub gap: f64,
    pub normal: Vec3,
    /// Application point on the capsule surface (world).
    pub position: Vec3,
    /// Sphere centre on the capsule axis (world).
    pub centre: Vec3,
    pub closed: bool,
}

#[derive(Clone, Debug)]
pub struct CioProblem {
    pub model: RobotModel,
    pub terrain: Terrain,
    pub state: GeneralizedState,
    pub gravity: Vec3,
    pub desired_com_acceleration: Vec3,
    pub contacts: Vec<CioContact>,
    pub mu: f64,
    /// Complementarity relaxation per outer iteration, strictly decreasing.
    pub epsilon_schedule: Vec<f64>,
    pub cone: ConeMode,
    /// Step used for the end-of-step joint-range and velocity rows (s).
    pub dt: f64,
    /// Weight of `½‖τ‖²` added to the contact-force objective.
    pub torque_weight: f64,
    /// Tangential speed below which a closed contact is held sticking (m/s).
    pub stick_speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CioForce {
    pub link: usize,
    pub point: usize,
    pub f_n: f64,
    pub f_t: Vector2<f64>,
    pub world: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CioSolution {
    pub tau: Vec<f64>,
    pub forces: Vec<CioForce>,
    pub udot: DVector<f64>,
    /// Largest violation per constraint family, in [`FAMILIES`] order.
    pub residuals: [f64; 8],
    /// `|m a_com − m a_des|` of the solution (N).
    pub com_residual: f64,
    pub objective: f64,
    /// `max |g f_N|` after each outer iteration.
    pub complementarity_history: Vec<f64>,
}

impl CioSolution {
    pub fn total_normal(&self) -> f64 {
        self.forces.iter().map(|f| f.f_n).sum()
    }

    pub fn residual(&self, family: &str) -> Option<f64> {
        FAMILIES.iter().position(|f| *f == family).map(|i| self.residuals[i])
    }
}

/// Geometric epsilon schedule from `start` down to `end` by `factor`.
pub fn epsilon_schedule(start: f64, end: f64, factor: f64) -> Vec<f64> {
    let mut out = vec![start];
    while *out.last().expect("non-empty") > end * (1.0 + 1e-9) {
        out.push((out.last().expect("non-empty") / factor).max(end));
    }
    out
}

pub fn contacts_near(
    model: &RobotModel,
    terrain: &Terrain,
    state: &GeneralizedState,
    activation: f64,
) -> Result<Vec<CioContact>> {
    let kin = ChainKinematics::new(model, state);
    let mut out = Vec::new();
    for (link, lp) in model.links.iter().enumerate() {
        for (point, axis) in candidate_axis_points(lp).iter().enumerate() {
            let centre = kin.poses[link].transform_point(axis);
            let gr = gap(terrain, &centre, lp.radius)?;
            if gr.g < activation {
                out.push(CioContact {
                    link,
                    point,
                    gap: gr.g,
                    normal: gr.n,
                    position: centre - gr.n * lp.radius,
                    centre,
                    closed: gr.g <= CLOSED_GAP,
                });
            }
        }
    }
    Ok(out)
}

impl CioProblem {
    /// Problem with default settings and every candidate within the
    /// activation distance.
    pub fn new(
        model: RobotModel,
        terrain: Terrain,
        state: GeneralizedState,
        desired_com_acceleration: Vec3,
    ) -> Result<Self> {
        state.check()?;
        let contacts = contacts_near(&model, &terrain, &state, DEFAULT_ACTIVATION)?;
        Ok(Self {
            model,
            terrain,
            state,
            gravity: STANDARD_GRAVITY,
            desired_com_acceleration,
            contacts,
            mu: 0.7,
            epsilon_schedule: epsilon_schedule(1e-1, 1e-5, 10.0),
            cone: ConeMode::Polyhedral(8),
            dt: 1e-3,
            torque_weight: 1.0,
            stick_speed: 1e-3,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let eps = &self.epsilon_schedule;
        if eps.is_empty() || !eps.iter().all(|e| *e > 0.0 && e.is_finite()) {
            return Err(Error::validation("epsilon_schedule", "must be positive"));
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::validation("epsilon_schedule", "must be strictly decreasing"));
        }
        if let ConeMode::Polyhedral(k) = self.cone {
            if k < 4 {
                return Err(Error::validation("cone", "needs at least 4 facets"));
            }
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::validation("mu", "must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::validation("dt", "must be positive"));
        }
        if !self.desired_com_acceleration.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("desired_com_acceleration", "must be finite"));
        }
        Ok(())
    }
}

/// Per-problem matrices shared by all outer iterations.
struct Assembly {
    dof: usize,
    nj: usize,
    nc: usize,
    mass: DMatrix<f64>,
    h0: DVector<f64>,
    /// Contact-frame Jacobian rows, `3 nc × dof`.
    jc: DMatrix<f64>,
    delassus: DMatrix<f64>,
    frames: Vec<(Vec3, Vec3, Vec3)>,
    /// Normal gap rows at the sphere centres and their `ζ̂`.
    w: Vec<(DVector<f64>, f64)>,
    /// Tangential rows at the surface points and their `J̇u` parts.
    tangential: Vec<[(DVector<f64>, f64); 2]>,
    sticking: Vec<bool>,
    total_mass: f64,
}

fn assemble(p: &CioProblem) -> Result<Assembly> {
    let model = &p.model;
    let kin = ChainKinematics::new(model, &p.state);
    let dof = model.dof();
    let nj = model.n_joints();
    let nc = p.contacts.len();
    let mass = kin.mass_matrix();
    let chol = factor_mass(&mass)?;
    let h0 = bias_from(&kin, model, &vec![0.0; nj], &p.gravity);
    let mut jc = DMatrix::zeros(3 * nc, dof);
    let mut frames = Vec::with_capacity(nc);
    let mut w = Vec::with_capacity(nc);
    let mut tangential = Vec::with_capacity(nc);
    let mut sticking = Vec::with_capacity(nc);
    for (i, c) in p.contacts.iter().enumerate() {
        let (t1, t2) = tangent_basis(&c.normal);
        let j = kin.point_jacobian(c.link, &c.position);
        let bias = kin.point_bias_acceleration(c.link, &c.position);
        for (r, axis) in [c.normal, t1, t2].iter().enumerate() {
            jc.row_mut(3 * i + r).copy_from(&(axis.transpose() * &j));
        }
        let radius = model.links[c.link].radius;
        let gr = gap_rates_from(&kin, &p.terrain, c.link, &c.centre, radius)?;
        w.push((gr.w_row.transpose(), gr.zeta_hat));
        let row = |axis: &Vec3| ((axis.transpose() * &j).transpose(), axis.dot(&bias));
        tangential.push([row(&t1), row(&t2)]);
        let v = kin.point_velocity(c.link, &c.position);
        let v_t = v - c.normal * v.dot(&c.normal);
        sticking.push(c.closed && v_t.norm() < p.stick_speed);
        frames.push((c.normal, t1, t2));
    }
    let delassus = &jc * chol.solve(&jc.transpose());
    Ok(Assembly {
        dof,
        nj,
        nc,
        h0,
        delassus: (&delassus + delassus.transpose()) * 0.5,
        mass,
        jc,
        frames,
        w,
        tangential,
        sticking,
        total_mass: model.total_mass(),
    })
}

/// Friction rows `dᵀ f_T ≤ μ_d f_N` per contact.
fn initial_cuts(p: &CioProblem) -> Vec<Vec<(Vector2<f64>, f64)>> {
    let facets: Vec<(Vector2<f64>, f64)> = match p.cone {
        ConeMode::Polyhedral(k) => {
            let half = std::f64::consts::PI / k as f64;
            (0..k)
                .map(|i| {
                    let a = (2 * i + 1) as f64 * half;
                    (Vector2::new(a.cos(), a.sin()), p.mu * half.cos())
                })
                .collect()
        }
        ConeMode::Exact => [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)]
            .iter()
            .map(|(x, y)| (Vector2::new(*x, *y), p.mu))
            .collect(),
    };
    vec![facets; p.contacts.len()]
}

/// QP for one epsilon. Returns the problem and the family of each equality
/// and inequality row.
fn build_qp(p: &CioProblem, a: &Assembly, eps: f64, cuts: &[Vec<(Vector2<f64>, f64)>]) -> (Qp, Vec<usize>, Vec<usize>) {
    let (dof, nj, nc) = (a.dof, a.nj, a.nc);
    let n = dof + nj + 3 * nc;
    let (iu, it, if_) = (0, dof, dof + nj);
    let u = &p.state.u;

    let mut h = DMatrix::zeros(n, n);
    let gmax = (0..3 * nc).map(|i| a.delassus[(i, i)]).fold(0.0, f64::max).max(1e-12);
    h.view_mut((if_, if_), (3 * nc, 3 * nc)).copy_from(&a.delassus);
    for i in 0..3 * nc {
        h[(if_ + i, if_ + i)] += 1e-9 * gmax;
    }
    for i in 0..nj {
        h[(it + i, it + i)] = p.torque_weight;
    }
    // Keeps the accelerations of unconstrained directions bounded.
    for i in 0..dof {
        h[(iu + i, iu + i)] = 1e-12;
    }
    let c = DVector::zeros(n);

    let mut eq_rows: Vec<(DVector<f64>, f64, usize)> = Vec::new();
    // M u̇ − B τ − J_cᵀ f = h₀.
    for r in 0..dof {
        let mut row = DVector::zeros(n);
        row.rows_mut(iu, dof).copy_from(&a.mass.row(r).transpose());
        if r >= 6 {
            row[it + r - 6] = -1.0;
        }
        for k in 0..3 * nc {
            row[if_ + k] = -a.jc[(k, r)];
        }
        eq_rows.push((row, a.h0[r], DYNAMICS));
    }
    // Net contact force realizes the desired CoM acceleration.
    let need = (p.desired_com_acceleration - p.gravity) * a.total_mass;
    for axis in 0..3 {
        let mut row = DVector::zeros(n);
        for (i, (nrm, t1, t2)) in a.frames.iter().enumerate() {
            row[if_ + 3 * i] = nrm[axis];
            row[if_ + 3 * i + 1] = t1[axis];
            row[if_ + 3 * i + 2] = t2[axis];
        }
        eq_rows.push((row, need[axis], DYNAMICS));
    }
    // Closed contacts: normal (and, when sticking, tangential) velocity
    // vanishes at the end of the step.
    for (i, cnt) in p.contacts.iter().enumerate() {
        if !cnt.closed {
            continue;
        }
        let (wr, zeta_hat) = &a.w[i];
        let mut row = DVector::zeros(n);
        row.rows_mut(iu, dof).copy_from(wr);
        eq_rows.push((row, -zeta_hat - wr.dot(u) / p.dt, CONTACT_ACCELERATION));
        if a.sticking[i] {
            for (tr, bias) in &a.tangential[i] {
                let mut row = DVector::zeros(n);
                row.rows_mut(iu, dof).copy_from(tr);
                eq_rows.push((row, -bias - tr.dot(u) / p.dt, CONTACT_ACCELERATION));
            }
        }
    }

    let mut in_rows: Vec<(DVector<f64>, f64, usize)> = Vec::new();
    // Joint range at the end of the step.
    let half_dt2 = 0.5 * p.dt * p.dt;
    for (j, jp) in p.model.joints.iter().enumerate() {
        let q_next = p.state.q[6 + j] + p.dt * u[6 + j];
        let mut row = DVector::zeros(n);
        row[iu + 6 + j] = half_dt2;
        in_rows.push((row.clone(), jp.angle_limits[1] - q_next, JOINT_LIMITS));
        in_rows.push((-row, q_next - jp.angle_limits[0], JOINT_LIMITS));
    }
    for (j, jp) in p.model.joints.iter().enumerate() {
        let mut row = DVector::zeros(n);
        row[it + j] = 1.0;
        in_rows.push((row.clone(), jp.torque_peak, TORQUE_LIMITS));
        in_rows.push((-row, jp.torque_peak, TORQUE_LIMITS));
    }
    for (i, cnt) in p.contacts.iter().enumerate() {
        let mut row = DVector::zeros(n);
        row[if_ + 3 * i] = -1.0;
        in_rows.push((row, 0.0, COMPLEMENTARITY));
        if cnt.gap > 0.0 {
            let mut row = DVector::zeros(n);
            row[if_ + 3 * i] = cnt.gap;
            in_rows.push((row, eps, COMPLEMENTARITY));
        }
        for (d, mu) in &cuts[i] {
            let mut row = DVector::zeros(n);
            row[if_ + 3 * i] = -mu;
            row[if_ + 3 * i + 1] = d.x;
            row[if_ + 3 * i + 2] = d.y;
            in_rows.push((row, 0.0, FRICTION));
        }
        if cnt.closed {
            // No approach at the end of the step.
            let (wr, _) = &a.w[i];
            let mut row = DVector::zeros(n);
            row.rows_mut(iu, dof).copy_from(&(-wr * p.dt));
            in_rows.push((row, wr.dot(u), CONTACT_VELOCITY));
        }
    }

    let stack = |rows: &[(DVector<f64>, f64, usize)]| {
        let mut m = DMatrix::zeros(rows.len(), n);
        let mut v = DVector::zeros(rows.len());
        for (k, (r, b, _)) in rows.iter().enumerate() {
            m.row_mut(k).copy_from(&r.transpose());
            v[k] = *b;
        }
        (m, v, rows.iter().map(|r| r.2).collect::<Vec<_>>())
    };
    let (am, bv, eq_fam) = stack(&eq_rows);
    let (gm, dv, in_fam) = stack(&in_rows);
    (
        Qp {
            h,
            c,
            a: am,
            b: bv,
            g: gm,
            d: dv,
        },
        eq_fam,
        in_fam,
    )
}

fn binding_family(v: &Violations, eq_fam: &[usize], in_fam: &[usize]) -> &'static str {
    let mut total = [0.0; 8];
    for (x, f) in v.eq.iter().zip(eq_fam) {
        total[*f] += x.abs();
    }
    for (x, f) in v.ineq.iter().zip(in_fam) {
        total[*f] += x.max(0.0);
    }
    let best = (0..8).max_by(|a, b| total[*a].total_cmp(&total[*b])).expect("families");
    FAMILIES[best]
}

fn phase_one_weights(eq_fam: &[usize], in_fam: &[usize]) -> (DVector<f64>, DVector<f64>) {
    // The equations of motion and the commanded CoM acceleration are hard;
    // phase 1 prefers to report the limit that gives way.
    let w = |f: &usize| if *f == DYNAMICS { 100.0 } else { 1.0 };
    (
        DVector::from_iterator(eq_fam.len(), eq_fam.iter().map(w)),
        DVector::from_iterator(in_fam.len(), in_fam.iter().map(w)),
    )
}

const FEASIBILITY_TOL: f64 = 1e-6;
const MAX_CUT_ROUNDS: usize = 60;

pub fn solve_cio_step(p: &CioProblem) -> Result<CioSolution> {
    p.validate()?;
    let a = assemble(p)?;
    let settings = QpSettings::default();
    let mut cuts = initial_cuts(p);
    let mut history = Vec::with_capacity(p.epsilon_schedule.len());
    let mut last = None;
    for &eps in &p.epsilon_schedule {
        let mut rounds = 0;
        let x = loop {
            let (qp, eq_fam, in_fam) = build_qp(p, &a, eps, &cuts);
            let (we, wi) = phase_one_weights(&eq_fam, &in_fam);
            let sol = match solve_qp(&qp, &settings, FEASIBILITY_TOL, Some((&we, &wi)))? {
                QpOutcome::Solved(s) => s,
                QpOutcome::Infeasible(v) => {
                    return Err(Error::Infeasible {
                        family: binding_family(&v, &eq_fam, &in_fam).to_string(),
                    })
                }
            };
            if p.cone != ConeMode::Exact {
                break sol.x;
            }
            // Add a supporting plane wherever the quadratic cone is violated.
            let base = a.dof + a.nj;
            let mut added = false;
            for (i, c) in cuts.iter_mut().enumerate() {
                let f_n = sol.x[base + 3 * i];
                let f_t = Vector2::new(sol.x[base + 3 * i + 1], sol.x[base + 3 * i + 2]);
                if f_t.norm() > p.mu * f_n + 1e-10 * (1.0 + f_n.abs()) {
                    c.push((f_t.normalize(), p.mu));
                    added = true;
                }
            }
            rounds += 1;
            if !added {
                break sol.x;
            }
            if rounds >= MAX_CUT_ROUNDS {
                return Err(Error::NoConvergence {
                    iterations: rounds,
                    residual: cone_violation(p, &a, &sol.x),
                });
            }
        };
        let comp = p
            .contacts
            .iter()
            .enumerate()
            .map(|(i, c)| (c.gap * x[a.dof + a.nj + 3 * i]).abs())
            .fold(0.0, f64::max);
        history.push(comp);
        last = Some(x);
    }
    let x = last.expect("schedule is non-empty");
    Ok(report(p, &a, &x, history))
}

fn cone_violation(p: &CioProblem, a: &Assembly, x: &DVector<f64>) -> f64 {
    let base = a.dof + a.nj;
    (0..a.nc)
        .map(|i| {
            let f_n = x[base + 3 * i];
            Vector2::new(x[base + 3 * i + 1], x[base + 3 * i + 2]).norm() - p.mu * f_n
        })
        .fold(0.0, f64::max)
}

fn report(p: &CioProblem, a: &Assembly, x: &DVector<f64>, history: Vec<f64>) -> CioSolution {
    let (dof, nj, nc) = (a.dof, a.nj, a.nc);
    let udot = x.rows(0, dof).into_owned();
    let tau: Vec<f64> = x.rows(dof, nj).iter().copied().collect();
    let f = x.rows(dof + nj, 3 * nc).into_owned();
    let u = &p.state.u;
    let eps_min = *p.epsilon_schedule.last().expect("validated");
    let mut res = [0.0f64; 8];

    let mut gen_tau = DVector::zeros(dof);
    gen_tau.rows_mut(6, nj).copy_from(&DVector::from_column_slice(&tau));
    let dyn_res = &a.mass * &udot - &a.h0 - gen_tau - a.jc.transpose() * &f;
    res[DYNAMICS] = dyn_res.amax();

    let half_dt2 = 0.5 * p.dt * p.dt;
    for (j, jp) in p.model.joints.iter().enumerate() {
        let q = p.state.q[6 + j];
        let q_next = q + p.dt * u[6 + j] + half_dt2 * udot[6 + j];
        for v in [q, q_next] {
            res[JOINT_LIMITS] = res[JOINT_LIMITS]
                .max(v - jp.angle_limits[1])
                .max(jp.angle_limits[0] - v);
        }
        res[TORQUE_LIMITS] = res[TORQUE_LIMITS].max(tau[j].abs() - jp.torque_peak);
    }
    let mut forces = Vec::with_capacity(nc);
    let mut net = Vec3::zeros();
    for (i, c) in p.contacts.iter().enumerate() {
        let (f_n, f_t) = (f[3 * i], Vector2::new(f[3 * i + 1], f[3 * i + 2]));
        let (nrm, t1, t2) = a.frames[i];
        let world = nrm * f_n + t1 * f_t.x + t2 * f_t.y;
        net += world;
        res[COMPLEMENTARITY] = res[COMPLEMENTARITY]
            .max(-f_n)
            .max(-(c.gap + CLOSED_GAP))
            .max((c.gap * f_n).abs() - eps_min);
        res[FRICTION] = res[FRICTION].max(f_t.norm() - p.mu * f_n);
        if c.closed {
            let (wr, zeta_hat) = &a.w[i];
            let v_next = wr.dot(&(u + &udot * p.dt));
            res[CONTACT_VELOCITY] = res[CONTACT_VELOCITY].max(-v_next);
            let acc = wr.dot(&udot) + zeta_hat + wr.dot(u) / p.dt;
            res[CONTACT_ACCELERATION] = res[CONTACT_ACCELERATION].max(acc.abs());
            if a.sticking[i] {
                for (tr, bias) in &a.tangential[i] {
                    let acc = tr.dot(&udot) + bias + tr.dot(u) / p.dt;
                    res[CONTACT_ACCELERATION] = res[CONTACT_ACCELERATION].max(acc.abs());
                }
            }
            res[INITIAL_VELOCITY] = res[INITIAL_VELOCITY].max(wr.dot(u).abs());
        }
        forces.push(CioForce {
            link: c.link,
            point: c.point,
            f_n,
            f_t,
            world,
        });
    }
    let com_residual = (net + p.gravity * a.total_mass - p.desired_com_acceleration * a.total_mass).norm();
    for r in res.iter_mut() {
        *r = r.max(0.0);
    }
    let objective = 0.5 * f.dot(&(&a.delassus * &f));
    CioSolution {
        tau,
        forces,
        udot,
        residuals: res,
        com_residual,
        objective,
        complementarity_history: history,
    }
}

/// Remove the approaching and sliding velocity of closed contacts by an
/// M-orthogonal projection onto the null space of their velocity rows.
/// Fails when the projection cannot zero them.
pub fn project_initial_velocity(
    model: &RobotModel,
    terrain: &Terrain,
    state: &GeneralizedState,
) -> Result<GeneralizedState> {
    let contacts: Vec<CioContact> = contacts_near(model, terrain, state, CLOSED_GAP)?;
    if contacts.is_empty() {
        return Ok(state.clone());
    }
    let kin = ChainKinematics::new(model, state);
    let dof = model.dof();
    let mut rows = DMatrix::zeros(3 * contacts.len(), dof);
    for (i, c) in contacts.iter().enumerate() {
        let j = kin.point_jacobian(c.link, &c.position);
        rows.view_mut((3 * i, 0), (3, dof)).copy_from(&j);
    }
    let chol = factor_mass(&kin.mass_matrix())?;
    let minv_wt = chol.solve(&rows.transpose());
    let a = &rows * &minv_wt;
    let rhs = &rows * &state.u;
    let svd = a.svd(true, true);
    let y = svd
        .solve(&rhs, 1e-10 * svd.singular_values.amax().max(1e-300))
        .map_err(|e| Error::Singular(e.to_string()))?;
    let mut out = state.clone();
    out.u -= minv_wt * y;
    let left = (&rows * &out.u).amax();
    if left > 1e-9 {
        return Err(Error::Infeasible {
            family: FAMILIES[INITIAL_VELOCITY].to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot_model::{build_cobra_model, LinkParams};
    use crate::sim_engine::{place_on_terrain, Placement};

    fn resting() -> CioProblem {
        let model = build_cobra_model(None).unwrap();
        let s = place_on_terrain(
            &model,
            &crate::robot_model::JointVector::zeros(11),
            &Terrain::flat(),
            Placement::default(),
        )
        .unwrap();
        CioProblem::new(model, Terrain::flat(), s, Vec3::zeros()).unwrap()
    }

    #[test]
    fn static_rest_supports_the_weight() {
        let p = resting();
        assert_eq!(p.contacts.len(), 36);
        let s = solve_cio_step(&p).unwrap();
        let weight = p.model.total_mass() * 9.81;
        assert!(
            (s.total_normal() - weight).abs() < 0.01 * weight,
            "{}",
            s.total_normal()
        );
        assert!(s.tau.iter().all(|t| t.abs() < 0.1), "{:?}", s.tau);
        assert!(s.residuals[DYNAMICS] < 1e-6, "{:?}", s.residuals);
        assert!(s.residual("friction_cone").unwrap() <= 1e-9);
        assert!(*s.complementarity_history.last().unwrap() <= 1e-5);
        assert!(s.com_residual < 1e-6);
    }

    #[test]
    fn no_contacts_is_free_fall() {
        let model = build_cobra_model(None).unwrap();
        let mut s = GeneralizedState::zeros(&model);
        s.q[2] = 1.0;
        let p = CioProblem::new(model, Terrain::flat(), s, STANDARD_GRAVITY).unwrap();
        let sol = solve_cio_step(&p).unwrap();
        assert!(sol.forces.is_empty());
        assert_eq!(sol.objective, 0.0);
        assert!((sol.udot[2] + 9.81).abs() < 1e-6);
        assert!(sol.tau.iter().all(|t| t.abs() < 1e-6));
    }

    #[test]
    fn epsilon_schedule_is_geometric() {
        let e = epsilon_schedule(1e-1, 1e-5, 10.0);
        assert_eq!(e.len(), 5);
        assert!((e[4] - 1e-5).abs() < 1e-18);
    }

    fn wedge(mu: f64) -> Result<CioSolution> {
        let model = RobotModel::chain(vec![LinkParams::cobra_module()]).unwrap();
        let terrain = Terrain::incline(24f64.to_radians(), Vector2::x()).unwrap();
        let s = place_on_terrain(
            &model,
            &crate::robot_model::JointVector::zeros(0),
            &terrain,
            Placement::default(),
        )
        .unwrap();
        let mut p = CioProblem::new(model, terrain, s, Vec3::zeros()).unwrap();
        p.mu = mu;
        p.cone = ConeMode::Exact;
        solve_cio_step(&p)
    }

    #[test]
    fn incline_wedge_matches_the_friction_angle() {
        let s = wedge(0.67).unwrap();
        let fn_sum: f64 = s.forces.iter().map(|f| f.f_n).sum();
        let ft_sum = s.forces.iter().fold(Vector2::zeros(), |a, f| a + f.f_t).norm();
        assert!((ft_sum / fn_sum - 24f64.to_radians().tan()).abs() < 1e-4);
        match wedge(0.4) {
            Err(Error::Infeasible { family }) => assert_eq!(family, "friction_cone"),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}
