//! Simulation of the robot on terrain: gait targets, PID joint control,
//! compliant contact, the head–tail latch, and trace recording.
//!
//! Each 1 ms control tick updates the controller's integral state and is
//! then integrated with RK3 substeps, error-controlled by default. The proportional and
//! derivative terms are evaluated at every stage: the derivative gain acting
//! on the lightest distal links is too stiff to hold piecewise constant over
//! a full millisecond.

pub mod integrator;
pub mod pid;
pub mod trace;

use nalgebra::{DMatrix, DVector, Matrix3xX, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contact::{point_forces, resolve_kinematics, ContactForce, ContactParams, Terrain};
use crate::dynamics::{bias_from, factor_mass, ChainKinematics, STANDARD_GRAVITY};
use crate::error::{Error, Result};
use crate::gait_library::{latch_ready, GaitFamily, GaitPlan, GaitSpec};
use crate::math::{euler_rate_map, euler_zyx, mat_to_quat, rotation_log, Mat3, Vec3};
use crate::robot_model::{forward_kinematics, latch_frames, ring_normal, JointVector, RobotModel, CANDIDATES_PER_LINK};
use crate::state::GeneralizedState;

pub use integrator::{rk3_adaptive, rk3_step, StepControl};
pub use pid::{pid_torque, PidController, PidGains, PidOutput};
pub use trace::{ContactSample, SimTrace, TraceMeta, TraceRecord};
use trace::{FLAG_ENERGY_ANOMALY, FLAG_TIP_OVER, FLAG_TORQUE_CONTINUOUS};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_SUBSTEPS: usize = 10;
/// Euler pitch beyond which the angles are re-based on the current pose.
pub const RECHART_PITCH: f64 = 1.0;
/// Ring tilt that counts as tipping over.
pub const TIP_OVER_ANGLE: f64 = std::f64::consts::FRAC_PI_3;
/// Natural frequency (rad/s) of the latch constraint stabilization.
const LATCH_OMEGA: f64 = 200.0;
/// Energy bookkeeping tolerance, J per second of simulated time.
const ENERGY_TOLERANCE: f64 = 1e-2;

const ACC_WORK: usize = 0;
const ACC_ABS: usize = 1;
const ACC_CONTACT: usize = 2;
const ACC_ROLL: usize = 3;
const ACC_CONSTRAINT: usize = 4;
const N_ACC: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub model: RobotModel,
    pub terrain: Terrain,
    pub contact: ContactParams,
    pub gravity: Vec3,
    pub gait: GaitSpec,
    pub initial_state: GeneralizedState,
    /// Start with the head–tail latch engaged at the initial relative pose.
    pub latched: bool,
    pub dt: f64,
    /// Fixed RK3 substeps per tick, used when `step_control` is `None`.
    pub substeps: usize,
    /// Error-controlled substepping within each tick.
    pub step_control: Option<StepControl>,
    pub duration: f64,
    pub gains: PidGains,
    /// End the run once the CoM has moved this far along the goal direction.
    pub stop_distance: Option<f64>,
    pub seed: Option<u64>,
    /// Half-width (rad/s) of the seeded uniform perturbation of the initial
    /// head angular velocity.
    pub perturbation: f64,
}

impl SimConfig {
    pub fn new(model: RobotModel, terrain: Terrain, gait: GaitSpec, initial_state: GeneralizedState) -> Self {
        Self {
            model,
            terrain,
            contact: ContactParams::stiff(),
            gravity: STANDARD_GRAVITY,
            gait,
            initial_state,
            latched: false,
            dt: DEFAULT_DT,
            substeps: DEFAULT_SUBSTEPS,
            step_control: Some(StepControl::default()),
            duration: 10.0,
            gains: PidGains::default(),
            stop_distance: None,
            seed: None,
            perturbation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.terrain.validate()?;
        self.contact.validate()?;
        self.gait.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation("dt", "must be positive"));
        }
        if !(self.duration >= self.dt) {
            return Err(Error::validation("duration", "must be at least dt"));
        }
        if self.substeps == 0 {
            return Err(Error::validation("substeps", "must be at least 1"));
        }
        if self.initial_state.q.len() != self.model.dof() || self.initial_state.u.len() != self.model.dof() {
            return Err(Error::validation("initial_state", "dimension does not match the model"));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::validation("gravity", "must be finite"));
        }
        if !(self.perturbation >= 0.0) {
            return Err(Error::validation("perturbation", "must be non-negative"));
        }
        self.initial_state.check()
    }

    pub fn step_count(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Weld reference: relative pose of the tail latch frame in the head frame.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Weld {
    offset: Vec3,
    rotation: Mat3,
}

struct WeldRows {
    jac: DMatrix<f64>,
    bias: DVector<f64>,
    error: DVector<f64>,
}

fn weld_rows(model: &RobotModel, kin: &ChainKinematics, weld: &Weld) -> WeldRows {
    let (head, tail) = latch_frames(model, &kin.poses);
    let tail_link = model.n_links() - 1;
    let anchor = head.origin + head.rotation * weld.offset;
    let jt: Matrix3xX<f64> = kin.point_jacobian(tail_link, &tail.origin);
    let jh = kin.point_jacobian(0, &anchor);
    let wt = kin.angular_jacobian(tail_link);
    let wh = kin.angular_jacobian(0);
    let dof = kin.subspace.len();
    let mut jac = DMatrix::zeros(6, dof);
    jac.view_mut((0, 0), (3, dof)).copy_from(&(jt - jh));
    jac.view_mut((3, 0), (3, dof)).copy_from(&(wt - wh));
    let a_lin = kin.point_bias_acceleration(tail_link, &tail.origin) - kin.point_bias_acceleration(0, &anchor);
    let a_ang = kin.bias_accel[tail_link].w - kin.bias_accel[0].w;
    let e_lin = tail.origin - anchor;
    let e_ang = rotation_log(&(tail.rotation * (head.rotation * weld.rotation).transpose()));
    WeldRows {
        jac,
        bias: DVector::from_iterator(6, a_lin.iter().chain(a_ang.iter()).copied()),
        error: DVector::from_iterator(6, e_lin.iter().chain(e_ang.iter()).copied()),
    }
}

/// Least-squares solve of a symmetric system. The planar ring leaves one
/// weld direction unreachable by any joint, so the rows are rank deficient.
fn pinv_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let eig = a.symmetric_eigen();
    let cutoff = 1e-10 * eig.eigenvalues.amax();
    if !(cutoff > 0.0 && cutoff.is_finite()) {
        return Err(Error::Singular("latch constraint rows vanish".into()));
    }
    let v = &eig.eigenvectors;
    let mut coeff = v.transpose() * b;
    for (c, l) in coeff.iter_mut().zip(eig.eigenvalues.iter()) {
        *c = if *l > cutoff { *c / l } else { 0.0 };
    }
    Ok(v * coeff)
}

struct Evaluation {
    dx: DVector<f64>,
    tau: Vec<f64>,
    targets: Vec<f64>,
    contacts: Vec<ContactForce>,
}

/// Stepper for one scenario.
pub struct Simulator {
    cfg: SimConfig,
    plan: GaitPlan,
    pid: PidController,
    x: DVector<f64>,
    chart: UnitQuaternion<f64>,
    t: f64,
    steps: usize,
    weld: Option<Weld>,
    h_next: f64,
    roll_axis: Vec3,
    meta: TraceMeta,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let plan = GaitPlan::new(&cfg.model, &cfg.gait)?;
        let pid = PidController::new(&cfg.model, cfg.gains);
        let mut state = cfg.initial_state.clone();
        let up = cfg.terrain.up();
        let downhill = cfg.terrain.downhill_direction();
        let roll_axis = up.cross(&downhill);
        if let Some(seed) = cfg.seed {
            if cfg.perturbation > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dw = Vec3::from_fn(|_, _| rng.gen_range(-cfg.perturbation..=cfg.perturbation));
                let e = state.chart_matrix() * euler_rate_map(state.q[4], state.q[5]);
                let rates = e
                    .try_inverse()
                    .ok_or_else(|| Error::Singular("Euler rate map".into()))?
                    * dw;
                for i in 0..3 {
                    state.u[3 + i] += rates[i];
                }
            }
        }
        let dof = cfg.model.dof();
        let mut x = DVector::zeros(2 * dof + N_ACC);
        x.rows_mut(0, dof).copy_from(&state.q);
        x.rows_mut(dof, dof).copy_from(&state.u);
        let kin = ChainKinematics::new(&cfg.model, &state);
        let weld = cfg.latched.then(|| {
            let (head, tail) = latch_frames(&cfg.model, &kin.poses);
            Weld {
                offset: head.rotation.transpose() * (tail.origin - head.origin),
                rotation: head.rotation.transpose() * tail.rotation,
            }
        });
        let meta = TraceMeta {
            dt: cfg.dt,
            total_mass: cfg.model.total_mass(),
            n_links: cfg.model.n_links(),
            gait_period: cfg.gait.period(),
            up,
            downhill,
            start_com: kin.center_of_mass(),
            initial_energy: kin.kinetic_energy() + kin.potential_energy(&cfg.gravity),
        };
        Ok(Self {
            chart: state.chart,
            plan,
            pid,
            x,
            t: 0.0,
            steps: 0,
            weld,
            h_next: cfg.dt / cfg.substeps as f64,
            roll_axis,
            meta,
            cfg,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn meta(&self) -> &TraceMeta {
        &self.meta
    }

    pub fn is_latched(&self) -> bool {
        self.weld.is_some()
    }

    pub fn state(&self) -> GeneralizedState {
        self.unpack(&self.x)
    }

    fn unpack(&self, x: &DVector<f64>) -> GeneralizedState {
        let dof = self.cfg.model.dof();
        GeneralizedState {
            q: x.rows(0, dof).into_owned(),
            u: x.rows(dof, dof).into_owned(),
            chart: self.chart,
        }
    }

    fn evaluate(&self, t: f64, x: &DVector<f64>) -> Result<Evaluation> {
        let model = &self.cfg.model;
        let dof = model.dof();
        let nj = model.n_joints();
        let s = self.unpack(x);
        s.check()?;
        let kin = ChainKinematics::new(model, &s);
        let latched = self.weld.is_some();
        let targets = self.plan.targets(model, t, latched);
        let rates = self.plan.target_rates(model, t, latched);
        let qj: Vec<f64> = s.q.rows(6, nj).iter().copied().collect();
        let uj: Vec<f64> = s.u.rows(6, nj).iter().copied().collect();
        let tau = self.pid.evaluate(&targets, &rates, &qj, &uj);
        let contacts = resolve_kinematics(model, &kin, &self.cfg.terrain, &self.cfg.contact)?;
        let rhs = bias_from(&kin, model, &tau, &self.cfg.gravity) + kin.point_forces(&point_forces(&contacts));
        let chol = factor_mass(&kin.mass_matrix())?;
        let mut u_dot = chol.solve(&rhs);
        let mut constraint_power = 0.0;
        if let Some(weld) = &self.weld {
            let rows = weld_rows(model, &kin, weld);
            let c_dot = &rows.jac * &s.u;
            let minv_jt = chol.solve(&rows.jac.transpose());
            let a = &rows.jac * &minv_jt;
            let target_acc = -&c_dot * (2.0 * LATCH_OMEGA) - &rows.error * (LATCH_OMEGA * LATCH_OMEGA);
            let rhs_c = target_acc - &rows.bias - &rows.jac * &u_dot;
            let lambda = pinv_solve(a, &rhs_c)?;
            u_dot += &minv_jt * &lambda;
            constraint_power = lambda.dot(&c_dot);
        }
        let mut dx = DVector::zeros(x.len());
        dx.rows_mut(0, dof).copy_from(&s.u);
        dx.rows_mut(dof, dof).copy_from(&u_dot);
        let acc = 2 * dof;
        dx[acc + ACC_WORK] = tau.iter().zip(&uj).map(|(t, u)| t * u).sum();
        dx[acc + ACC_ABS] = tau.iter().zip(&uj).map(|(t, u)| (t * u).abs()).sum();
        dx[acc + ACC_CONTACT] = contacts
            .iter()
            .map(|c| c.world_force.dot(&kin.point_velocity(c.link, &c.point)))
            .sum();
        dx[acc + ACC_ROLL] = kin.velocity[0].w.dot(&self.roll_axis);
        dx[acc + ACC_CONSTRAINT] = constraint_power;
        Ok(Evaluation {
            dx,
            tau,
            targets: targets.0,
            contacts,
        })
    }

    fn diverged(&self, t: f64, x: &DVector<f64>) -> Option<Error> {
        let dof = self.cfg.model.dof();
        let bad = x.iter().position(|v| !v.is_finite())?;
        let quantity = if bad < dof {
            format!("q[{bad}]")
        } else if bad < 2 * dof {
            format!("u[{}]", bad - dof)
        } else {
            "energy accumulator".to_string()
        };
        Some(Error::Divergence { time: t, quantity })
    }

    fn as_divergence(&self, e: Error, t: f64) -> Error {
        match e {
            Error::Singular(msg) => Error::Divergence { time: t, quantity: msg },
            other => other,
        }
    }

    /// Advance one control tick and return its record.
    pub fn step(&mut self) -> Result<TraceRecord> {
        let model = self.cfg.model.clone();
        let nj = model.n_joints();
        let t0 = self.t;
        let dt = self.cfg.dt;

        let state = self.state();
        if self.weld.is_none() && self.plan.wants_latch(t0) && latch_ready(&model, &state) {
            let poses = forward_kinematics(&model, &state);
            let (head, tail) = latch_frames(&model, &poses);
            self.weld = Some(Weld {
                offset: head.rotation.transpose() * (tail.origin - head.origin),
                rotation: head.rotation.transpose() * tail.rotation,
            });
        }
        let latched = self.weld.is_some();
        let targets = self.plan.targets(&model, t0, latched);
        let rates = self.plan.target_rates(&model, t0, latched);
        let qj: Vec<f64> = state.q.rows(6, nj).iter().copied().collect();
        let uj: Vec<f64> = state.u.rows(6, nj).iter().copied().collect();
        self.pid
            .tick(&targets, &rates, &qj, &uj, 1.0 / self.cfg.gains.update_rate);

        let t1 = (self.steps + 1) as f64 * dt;
        let mut x = self.x.clone();
        if let Some(ctl) = self.cfg.step_control {
            let (y, h) = rk3_adaptive(|t, x| self.evaluate(t, x).map(|e| e.dx), t0, t1, &x, self.h_next, &ctl)
                .map_err(|e| self.as_divergence(e, t0))?;
            x = y;
            self.h_next = h;
        } else {
            let h = dt / self.cfg.substeps as f64;
            for k in 0..self.cfg.substeps {
                let ts = t0 + k as f64 * h;
                x = rk3_step(|t, x| self.evaluate(t, x).map(|e| e.dx), ts, &x, h)
                    .map_err(|e| self.as_divergence(e, ts))?;
            }
        }
        if let Some(err) = self.diverged(t1, &x) {
            return Err(err);
        }
        self.x = x;
        self.t = t1;
        self.steps += 1;
        if self.weld.is_some() {
            self.project_weld().map_err(|e| self.as_divergence(e, self.t))?;
        }
        if self.x[4].abs() > RECHART_PITCH {
            let mut s = self.state();
            s.rechart();
            self.chart = s.chart;
            let dof = model.dof();
            self.x.rows_mut(0, dof).copy_from(&s.q);
            self.x.rows_mut(dof, dof).copy_from(&s.u);
        }
        self.record().map_err(|e| self.as_divergence(e, self.t))
    }

    /// Remove latch drift: Gauss–Newton on positions, then an M-orthogonal
    /// velocity projection.
    fn project_weld(&mut self) -> Result<()> {
        let weld = self.weld.expect("latched");
        let model = &self.cfg.model;
        let dof = model.dof();
        for _ in 0..3 {
            let s = self.state();
            let kin = ChainKinematics::new(model, &s);
            let rows = weld_rows(model, &kin, &weld);
            if rows.error.amax() < 1e-12 {
                break;
            }
            let jjt = &rows.jac * rows.jac.transpose();
            let y = pinv_solve(jjt, &rows.error)?;
            let dq = rows.jac.transpose() * y;
            let mut q = self.x.rows_mut(0, dof);
            q -= dq;
        }
        let s = self.state();
        let kin = ChainKinematics::new(model, &s);
        let rows = weld_rows(model, &kin, &weld);
        let chol = factor_mass(&kin.mass_matrix())?;
        let minv_jt = chol.solve(&rows.jac.transpose());
        let a = &rows.jac * &minv_jt;
        let y = pinv_solve(a, &(&rows.jac * &s.u))?;
        let du = minv_jt * y;
        let mut u = self.x.rows_mut(dof, dof);
        u -= du;
        Ok(())
    }

    fn record(&self) -> Result<TraceRecord> {
        let model = &self.cfg.model;
        let dof = model.dof();
        let ev = self.evaluate(self.t, &self.x)?;
        let s = self.state();
        let kin = ChainKinematics::new(model, &s);
        let n_links = model.n_links();
        let mut module_normal = vec![0.0; n_links];
        let mut module_contact = vec![false; n_links];
        let mut net_t = Vec3::zeros();
        let mut net_normal = 0.0;
        let contacts: Vec<ContactSample> = ev
            .contacts
            .iter()
            .map(|c| {
                module_normal[c.link] += c.f_n;
                if c.gap < 0.0 {
                    module_contact[c.link] = true;
                }
                net_normal += c.f_n;
                net_t += c.world_force - c.normal * c.f_n;
                ContactSample {
                    candidate: c.candidate,
                    link: c.link,
                    point: c.candidate % CANDIDATES_PER_LINK,
                    gap: c.gap,
                    f_n: c.f_n,
                    f_t: c.f_t.norm(),
                    position: c.point,
                }
            })
            .collect();
        let acc = 2 * dof;
        let kinetic = kin.kinetic_energy();
        let potential = kin.potential_energy(&self.cfg.gravity);
        let budget = self.x[acc + ACC_WORK] + self.x[acc + ACC_CONTACT] + self.x[acc + ACC_CONSTRAINT];
        let residual = kinetic + potential - self.meta.initial_energy - budget;
        let mut flags = 0;
        if ev
            .tau
            .iter()
            .zip(&model.joints)
            .any(|(t, j)| t.abs() > j.torque_continuous)
        {
            flags |= FLAG_TORQUE_CONTINUOUS;
        }
        if residual.abs() > ENERGY_TOLERANCE * self.t.max(1.0) {
            flags |= FLAG_ENERGY_ANOMALY;
        }
        let ring_tilt = if self.cfg.gait.family.is_transform() {
            let n = ring_normal(model, &kin.poses);
            n.dot(&self.roll_axis).abs().clamp(0.0, 1.0).acos()
        } else {
            0.0
        };
        if ring_tilt > TIP_OVER_ANGLE && self.t >= self.cfg.gait.transform_duration {
            flags |= FLAG_TIP_OVER;
        }
        let head = kin.poses[0].rotation;
        let (r, p, y) = euler_zyx(&head);
        let peak_module_normal = module_normal.iter().copied().fold(0.0, f64::max);
        Ok(TraceRecord {
            t: self.t,
            head_euler: Vec3::new(r, p, y),
            head_omega: kin.velocity[0].w,
            targets: ev.targets,
            peak_abs_tau: ev.tau.iter().fold(0.0f64, |m, t| m.max(t.abs())),
            tau: ev.tau,
            contacts,
            com: kin.center_of_mass(),
            com_velocity: kin.com_velocity(),
            latched: self.weld.is_some(),
            flags,
            peak_module_normal,
            peak_net_normal: net_normal,
            peak_net_friction: net_t.norm(),
            module_normal,
            module_contact,
            net_normal,
            net_friction: net_t.norm(),
            actuator_work: self.x[acc + ACC_WORK],
            actuator_energy: self.x[acc + ACC_ABS],
            contact_work: self.x[acc + ACC_CONTACT],
            constraint_work: self.x[acc + ACC_CONSTRAINT],
            roll_angle: self.x[acc + ACC_ROLL],
            kinetic_energy: kinetic,
            potential_energy: potential,
            ring_tilt,
            state: s,
        })
    }

    /// Displacement of the CoM along the goal direction since t = 0.
    pub fn progress(&self, rec: &TraceRecord) -> f64 {
        goal_displacement(&self.meta, rec)
    }
}

/// CoM displacement: along the downhill direction on slopes, planar distance
/// on level ground.
pub fn goal_displacement(meta: &TraceMeta, rec: &TraceRecord) -> f64 {
    let d = rec.com - meta.start_com;
    if meta.downhill.z.abs() > 1e-12 {
        d.dot(&meta.downhill)
    } else {
        let planar = d - meta.up * d.dot(&meta.up);
        planar.norm()
    }
}

/// Failed run: the error plus every record produced before it.
#[derive(Debug)]
pub struct SimFailure {
    pub error: Error,
    pub partial: SimTrace,
}

/// Integrate a whole scenario.
pub fn run_scenario(config: &SimConfig) -> std::result::Result<SimTrace, SimFailure> {
    let mut sim = match Simulator::new(config.clone()) {
        Ok(s) => s,
        Err(error) => {
            return Err(SimFailure {
                error,
                partial: SimTrace {
                    meta: TraceMeta {
                        dt: config.dt,
                        total_mass: config.model.total_mass(),
                        n_links: config.model.n_links(),
                        gait_period: None,
                        up: Vec3::z(),
                        downhill: Vec3::x(),
                        start_com: Vec3::zeros(),
                        initial_energy: 0.0,
                    },
                    records: Vec::new(),
                },
            })
        }
    };
    let n = config.step_count();
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        match sim.step() {
            Ok(rec) => {
                let done = config.stop_distance.is_some_and(|d| sim.progress(&rec) >= d);
                records.push(rec);
                if done {
                    break;
                }
            }
            Err(error) => {
                return Err(SimFailure {
                    error,
                    partial: SimTrace {
                        meta: sim.meta.clone(),
                        records,
                    },
                })
            }
        }
    }
    Ok(SimTrace {
        meta: sim.meta.clone(),
        records,
    })
}

/// How to set a posture down on the terrain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Placement {
    /// Rotation of the body about the terrain normal (rad).
    pub heading: f64,
    /// Ring postures: stand the ring up across the slope on one vertex.
    pub upright_ring: bool,
    /// With `upright_ring`, also tilt sideways into the two-sided rest of a
    /// coil whose ends are offset along its axis.
    pub settle: bool,
    /// Rotation about the goal direction applied after standing up (rad).
    pub lean: f64,
}

impl Default for Placement {
    fn default() -> Self {
        Self {
            heading: 0.0,
            upright_ring: false,
            settle: false,
            lean: 0.0,
        }
    }
}

/// Golden-section search for a minimum of `f` on `[a, b]`.
fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..iters {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    0.5 * (a + b)
}

/// Largest sideways tilt tried when settling a coil (rad).
const SETTLE_RANGE: f64 = 0.35;

/// Pose a joint configuration so that its lowest contact candidate just
/// touches the terrain with the CoM above the origin.
pub fn place_on_terrain(
    model: &RobotModel,
    joints: &JointVector,
    terrain: &Terrain,
    placement: Placement,
) -> Result<GeneralizedState> {
    use crate::math::axis_rotation;
    let up = terrain.up();
    let downhill = terrain.downhill_direction();
    let across = up.cross(&downhill);
    let mut s = GeneralizedState::from_joints(model, joints);
    let base = Mat3::from_columns(&[downhill, across, up]);
    let mut rot = axis_rotation(&up, placement.heading) * base;
    if placement.upright_ring {
        let poses = forward_kinematics(model, &s);
        let n_body = ring_normal(model, &poses);
        let align = nalgebra::Rotation3::rotation_between(&n_body, &Vec3::y())
            .unwrap_or_else(|| nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI));
        let pose = |phi: f64, tilt: f64| {
            axis_rotation(&downhill, tilt) * base * axis_rotation(&Vec3::y(), phi) * align.matrix()
        };
        // Sideways rest for a given roll angle: the tilt of lowest CoM.
        let tilt_for = |phi: f64| {
            if placement.settle {
                golden_min(
                    |l| lowest_depth(model, joints, &pose(phi, l), &up),
                    -SETTLE_RANGE,
                    SETTLE_RANGE,
                    40,
                )
            } else {
                0.0
            }
        };
        // Vertex down: the roll angle with the CoM highest above the support.
        let depth = |phi: f64| -lowest_depth(model, joints, &pose(phi, tilt_for(phi)), &up);
        let n = 360;
        let step = std::f64::consts::TAU / n as f64;
        // An open coil rests on its split ends, which sit side by side across
        // the slope; the middle of the coil goes on top.
        let (lo, count) = if placement.settle {
            let mid = model.n_links() / 2;
            let height = |phi: f64| {
                let mut st = GeneralizedState::from_joints(model, joints);
                st.chart = mat_to_quat(&pose(phi, 0.0));
                forward_kinematics(model, &st)[mid].origin.dot(&up)
            };
            let phi0 = (0..n)
                .map(|i| i as f64 * step)
                .max_by(|a, b| height(*a).total_cmp(&height(*b)))
                .expect("scan");
            (phi0 - std::f64::consts::FRAC_PI_6, n / 6)
        } else {
            (0.0, n)
        };
        let best_phi = (0..=count)
            .map(|i| lo + i as f64 * step)
            .min_by(|a, b| depth(*a).total_cmp(&depth(*b)))
            .expect("scan");
        let phi = golden_min(depth, best_phi - step, best_phi + step, 50);
        rot = axis_rotation(&downhill, placement.lean) * pose(phi, tilt_for(phi));
    } else if placement.lean != 0.0 {
        rot = axis_rotation(&downhill, placement.lean) * rot;
    }
    s.chart = mat_to_quat(&rot);
    for i in 3..6 {
        s.q[i] = 0.0;
    }
    let kin = ChainKinematics::new(model, &s);
    let c = kin.center_of_mass();
    let shift = -(c - up * c.dot(&up));
    for i in 0..3 {
        s.q[i] += shift[i];
    }
    // Drop along the direction in which the gap is measured.
    let drop_dir = match terrain {
        Terrain::Heightmap(_) => Vec3::z(),
        _ => up,
    };
    let poses = forward_kinematics(model, &s);
    let mut min_gap = f64::INFINITY;
    for (link, pose) in model.links.iter().zip(&poses) {
        for p in crate::robot_model::candidate_axis_points(link) {
            let g = crate::contact::gap(terrain, &pose.transform_point(&p), link.radius)?.g;
            min_gap = min_gap.min(g);
        }
    }
    for i in 0..3 {
        s.q[i] -= drop_dir[i] * min_gap;
    }
    Ok(s)
}

/// Give a posed state a rigid-body rotation `omega` (world) about the world
/// point `pivot`, with all joints at rest.
pub fn with_rigid_spin(state: &GeneralizedState, omega: &Vec3, pivot: &Vec3) -> Result<GeneralizedState> {
    let mut s = state.clone();
    let head = Vec3::new(s.q[0], s.q[1], s.q[2]);
    let v = omega.cross(&(head - pivot));
    let e = s.chart_matrix() * euler_rate_map(s.q[4], s.q[5]);
    let rates = e
        .try_inverse()
        .ok_or_else(|| Error::Singular("Euler rate map".into()))?
        * omega;
    s.u.fill(0.0);
    for i in 0..3 {
        s.u[i] = v[i];
        s.u[3 + i] = rates[i];
    }
    Ok(s)
}

/// Height of the CoM above the lowest candidate, measured along `up`.
fn lowest_depth(model: &RobotModel, joints: &JointVector, rot: &Mat3, up: &Vec3) -> f64 {
    let mut s = GeneralizedState::from_joints(model, joints);
    s.chart = mat_to_quat(rot);
    let kin = ChainKinematics::new(model, &s);
    let c = kin.center_of_mass();
    let mut lowest = f64::INFINITY;
    for (link, pose) in model.links.iter().zip(&kin.poses) {
        for p in crate::robot_model::candidate_axis_points(link) {
            lowest = lowest.min(pose.transform_point(&p).dot(up));
        }
    }
    c.dot(up) - lowest
}

/// Whether a gait family starts from a closed or coiled posture.
pub fn is_tumbling(family: GaitFamily) -> bool {
    family.is_transform()
}
