//! Shooting: roll a gait out in the simulator and score it, and a pattern
//! search over gait parameters built on top of it.

use serde::{Deserialize, Serialize};

use crate::contact::{ContactParams, Terrain};
use crate::dynamics::STANDARD_GRAVITY;
use crate::error::{Error, Result};
use crate::gait_library::{GaitSpec, MAX_FREQUENCY};
use crate::math::Vec3;
use crate::parallel;
use crate::robot_model::{JointVector, RobotModel};
use crate::sim_engine::{
    goal_displacement, place_on_terrain, run_scenario, Placement, SimConfig, SimTrace, StepControl, DEFAULT_DT,
};
use crate::state::GeneralizedState;

/// Searchable gait parameters: amplitudes (rad), frequency (Hz), phase per
/// joint and wave offset (rad).
pub type GaitParams = [f64; 5];
pub const PARAM_NAMES: [&str; 5] = ["amp_h", "amp_v", "frequency", "phase_per_joint", "wave_phase_offset"];

pub fn params_of(g: &GaitSpec) -> GaitParams {
    [g.amp_h, g.amp_v, g.frequency, g.phase_per_joint, g.wave_phase_offset]
}

pub fn with_params(base: &GaitSpec, p: &GaitParams) -> GaitSpec {
    GaitSpec {
        amp_h: p[0],
        amp_v: p[1],
        frequency: p[2],
        phase_per_joint: p[3],
        wave_phase_offset: p[4],
        ..*base
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShootingSetup {
    pub model: RobotModel,
    pub terrain: Terrain,
    pub contact: ContactParams,
    pub gravity: Vec3,
    /// Shared by every rollout.
    pub initial_state: GeneralizedState,
    pub horizon: f64,
    pub dt: f64,
    pub step_control: Option<StepControl>,
    /// Weight on the negated goal displacement.
    pub w_displacement: f64,
    /// Weight on the actuator energy `∫ Σ |τ u| dt`.
    pub w_effort: f64,
}

impl ShootingSetup {
    /// Straight chain resting on the terrain, stiff ground, default weights.
    pub fn new(model: RobotModel, terrain: Terrain, horizon: f64) -> Result<Self> {
        let straight = JointVector::zeros(model.n_joints());
        let initial_state = place_on_terrain(&model, &straight, &terrain, Placement::default())?;
        Ok(Self {
            model,
            terrain,
            contact: ContactParams::stiff(),
            gravity: STANDARD_GRAVITY,
            initial_state,
            horizon,
            dt: DEFAULT_DT,
            step_control: Some(StepControl::default()),
            w_displacement: 1.0,
            w_effort: 0.01,
        })
    }

    pub fn sim_config(&self, gait: &GaitSpec) -> SimConfig {
        let mut cfg = SimConfig::new(
            self.model.clone(),
            self.terrain.clone(),
            *gait,
            self.initial_state.clone(),
        );
        cfg.contact = self.contact;
        cfg.gravity = self.gravity;
        cfg.duration = self.horizon;
        cfg.dt = self.dt;
        cfg.step_control = self.step_control;
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub gait: GaitSpec,
    /// `+∞` for failed rollouts.
    pub objective: f64,
    pub displacement: f64,
    pub effort: f64,
    /// Largest energy-bookkeeping mismatch along the trace (J).
    pub energy_residual: f64,
    /// Time and reason of a failed rollout.
    pub failure: Option<(f64, String)>,
    pub trace: Option<SimTrace>,
}

impl Rollout {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShootingResult {
    pub rollouts: Vec<Rollout>,
    pub best: usize,
}

fn score(setup: &ShootingSetup, trace: &SimTrace) -> (f64, f64, f64) {
    let Some(last) = trace.records.last() else {
        return (0.0, 0.0, 0.0);
    };
    let displacement = goal_displacement(&trace.meta, last);
    let effort = last.actuator_energy;
    (
        -setup.w_displacement * displacement + setup.w_effort * effort,
        displacement,
        effort,
    )
}

/// Roll `gait` out from the shared initial state over the horizon.
pub fn shoot_trajectory(setup: &ShootingSetup, gait: &GaitSpec) -> Result<Rollout> {
    gait.validate()?;
    if let Some(period) = gait.period() {
        if setup.horizon < period - 1e-12 {
            return Err(Error::validation("horizon", "must cover at least one gait period"));
        }
    }
    if (setup.dt - DEFAULT_DT).abs() > 1e-15 {
        return Err(Error::validation("dt", "must match the simulator step"));
    }
    let cfg = setup.sim_config(gait);
    cfg.validate()?;
    match run_scenario(&cfg) {
        Ok(trace) => {
            let (objective, displacement, effort) = score(setup, &trace);
            Ok(Rollout {
                gait: *gait,
                objective,
                displacement,
                effort,
                energy_residual: energy_residual(&trace),
                failure: None,
                trace: Some(trace),
            })
        }
        Err(fail) => {
            let time = match &fail.error {
                Error::Divergence { time, .. } => *time,
                _ => fail.partial.duration(),
            };
            log::warn!("rollout failed at t = {time:.3} s: {}", fail.error);
            Ok(Rollout {
                gait: *gait,
                objective: f64::INFINITY,
                displacement: fail
                    .partial
                    .records
                    .last()
                    .map_or(0.0, |r| goal_displacement(&fail.partial.meta, r)),
                effort: fail.partial.records.last().map_or(0.0, |r| r.actuator_energy),
                energy_residual: energy_residual(&fail.partial),
                failure: Some((time, fail.error.to_string())),
                trace: Some(fail.partial),
            })
        }
    }
}

fn energy_residual(trace: &SimTrace) -> f64 {
    trace
        .records
        .iter()
        .map(|r| {
            let budget = r.actuator_work + r.contact_work + r.constraint_work;
            (r.kinetic_energy + r.potential_energy - trace.meta.initial_energy - budget).abs()
        })
        .fold(0.0, f64::max)
}

/// Box on the searchable parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub lo: GaitParams,
    pub hi: GaitParams,
}

impl ParamBox {
    pub fn point(p: GaitParams) -> Self {
        Self { lo: p, hi: p }
    }

    pub fn validate(&self, model: &RobotModel, base: &GaitSpec) -> Result<()> {
        for i in 0..5 {
            if !(self.lo[i].is_finite() && self.hi[i].is_finite() && self.lo[i] <= self.hi[i]) {
                return Err(Error::validation(PARAM_NAMES[i], "bounds must be finite with lo ≤ hi"));
            }
        }
        let limit = model
            .joints
            .iter()
            .map(|j| j.angle_limits[1].min(-j.angle_limits[0]))
            .fold(f64::INFINITY, f64::min)
            - base.latch_offset.abs() * f64::from(u8::from(base.family.is_transform()));
        for i in 0..2 {
            if self.lo[i] < 0.0 || self.hi[i] > limit + 1e-12 {
                return Err(Error::validation(
                    PARAM_NAMES[i],
                    "amplitude bounds must lie within the joint range",
                ));
            }
        }
        if !(self.lo[2] > 0.0 && self.hi[2] <= MAX_FREQUENCY) {
            return Err(Error::validation("frequency", "bounds must lie in (0, 2] Hz"));
        }
        Ok(())
    }

    fn clamp(&self, p: &GaitParams) -> GaitParams {
        let mut out = *p;
        for i in 0..5 {
            out[i] = out[i].clamp(self.lo[i], self.hi[i]);
        }
        out
    }

    fn centre(&self) -> GaitParams {
        let mut c = [0.0; 5];
        for i in 0..5 {
            c[i] = 0.5 * (self.lo[i] + self.hi[i]);
        }
        c
    }

    fn is_point(&self) -> bool {
        (0..5).all(|i| self.lo[i] == self.hi[i])
    }
}

/// One line of the optimization audit log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub index: usize,
    pub amp_h_deg: f64,
    pub amp_v_deg: f64,
    pub frequency_hz: f64,
    pub phase_per_joint_deg: f64,
    pub wave_phase_offset_deg: f64,
    pub objective: Option<f64>,
    pub displacement_m: f64,
    pub effort_j: f64,
    pub energy_residual_j: f64,
    pub failure: Option<String>,
}

impl AuditRecord {
    fn new(index: usize, r: &Rollout) -> Self {
        let g = &r.gait;
        Self {
            index,
            amp_h_deg: g.amp_h.to_degrees(),
            amp_v_deg: g.amp_v.to_degrees(),
            frequency_hz: g.frequency,
            phase_per_joint_deg: g.phase_per_joint.to_degrees(),
            wave_phase_offset_deg: g.wave_phase_offset.to_degrees(),
            objective: r.objective.is_finite().then_some(r.objective),
            displacement_m: r.displacement,
            effort_j: r.effort,
            energy_residual_j: r.energy_residual,
            failure: r.failure.as_ref().map(|(t, m)| format!("t = {t:.3} s: {m}")),
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("audit record serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeResult {
    pub best: GaitSpec,
    pub best_rollout: Rollout,
    pub audit: Vec<AuditRecord>,
    pub result: ShootingResult,
}

/// Strict "a is better than b": lower objective, ties to the
/// lexicographically smaller parameter vector.
fn better(a: &Rollout, b: &Rollout) -> bool {
    match a.objective.total_cmp(&b.objective) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => {
            let (pa, pb) = (params_of(&a.gait), params_of(&b.gait));
            pa.iter().zip(&pb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Less)
        }
    }
}

/// Pattern search over the free coordinates of `bounds`, spending exactly
/// `budget` rollouts (one for a single-point box). `seeds` are evaluated
/// first. Rollouts of a poll run in parallel.
pub fn optimize_gait(
    setup: &ShootingSetup,
    base: &GaitSpec,
    bounds: &ParamBox,
    budget: usize,
    seeds: &[GaitSpec],
) -> Result<OptimizeResult> {
    bounds.validate(&setup.model, base)?;
    if budget < 8 {
        return Err(Error::validation("budget", "must be at least 8 evaluations"));
    }
    let run_batch = |points: &[GaitParams]| -> Result<Vec<Rollout>> {
        let out = parallel::map(points, |p| {
            shoot_trajectory(setup, &with_params(base, p)).map(|mut r| {
                r.trace = None;
                r
            })
        });
        out.into_iter().collect()
    };

    let mut rollouts: Vec<Rollout> = Vec::new();
    let mut first: Vec<GaitParams> = seeds.iter().map(|s| bounds.clamp(&params_of(s))).collect();
    first.push(bounds.centre());
    if bounds.is_point() {
        first = vec![bounds.lo];
    }
    first.truncate(budget);
    rollouts.extend(run_batch(&first)?);
    let pick = |rs: &[Rollout]| (1..rs.len()).fold(0, |b, i| if better(&rs[i], &rs[b]) { i } else { b });
    let mut best = pick(&rollouts);

    if !bounds.is_point() {
        let free: Vec<usize> = (0..5).filter(|i| bounds.hi[*i] > bounds.lo[*i]).collect();
        let mut step: Vec<f64> = (0..5).map(|i| 0.25 * (bounds.hi[i] - bounds.lo[i])).collect();
        while rollouts.len() < budget {
            let centre = params_of(&rollouts[best].gait);
            let mut poll = Vec::new();
            for &d in &free {
                for sign in [1.0, -1.0] {
                    let mut p = centre;
                    p[d] += sign * step[d];
                    let p = bounds.clamp(&p);
                    if p != centre && !poll.contains(&p) {
                        poll.push(p);
                    }
                }
            }
            if poll.is_empty() || free.iter().all(|d| step[*d] < 1e-9 * (bounds.hi[*d] - bounds.lo[*d])) {
                break;
            }
            poll.truncate(budget - rollouts.len());
            let start = rollouts.len();
            rollouts.extend(run_batch(&poll)?);
            let cand = start + pick(&rollouts[start..]);
            if better(&rollouts[cand], &rollouts[best]) {
                best = cand;
                log::info!(
                    "evaluation {}: objective {:.6}",
                    rollouts.len(),
                    rollouts[best].objective
                );
            } else {
                for d in &free {
                    step[*d] *= 0.5;
                }
            }
        }
    }
    if rollouts.iter().all(Rollout::failed) {
        return Err(Error::Optimization(format!("all {} rollouts failed", rollouts.len())));
    }
    let audit = rollouts
        .iter()
        .enumerate()
        .map(|(i, r)| AuditRecord::new(i, r))
        .collect();
    Ok(OptimizeResult {
        best: rollouts[best].gait,
        best_rollout: rollouts[best].clone(),
        audit,
        result: ShootingResult { rollouts, best },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot_model::build_cobra_model;

    fn setup(horizon: f64) -> ShootingSetup {
        ShootingSetup::new(build_cobra_model(None).unwrap(), Terrain::flat(), horizon).unwrap()
    }

    fn rollout(p: GaitParams, objective: f64) -> Rollout {
        Rollout {
            gait: with_params(&GaitSpec::gait1(1.0), &p),
            objective,
            displacement: 0.0,
            effort: 0.0,
            energy_residual: 0.0,
            failure: None,
            trace: None,
        }
    }

    #[test]
    fn ties_go_to_the_smaller_parameters() {
        let a = rollout([0.1, 0.2, 1.0, 0.0, 0.0], 1.0);
        let b = rollout([0.1, 0.3, 1.0, 0.0, 0.0], 1.0);
        assert!(better(&a, &b));
        assert!(!better(&b, &a));
        assert!(!better(&a, &a));
        assert!(better(&rollout([0.5; 5], 0.5), &a));
    }

    #[test]
    fn single_point_box_returns_the_point() {
        let s = setup(1.0);
        let base = GaitSpec::gait1(1.0);
        let p = params_of(&base);
        let out = optimize_gait(&s, &base, &ParamBox::point(p), 8, &[]).unwrap();
        assert_eq!(out.audit.len(), 1);
        assert_eq!(params_of(&out.best), p);
        assert!(out.best_rollout.objective.is_finite());
    }

    #[test]
    fn spends_exactly_the_budget() {
        let s = setup(1.0);
        let base = GaitSpec::gait1(1.0);
        let mut lo = params_of(&base);
        let mut hi = lo;
        lo[0] *= 0.8;
        hi[0] *= 1.2;
        let out = optimize_gait(&s, &base, &ParamBox { lo, hi }, 8, &[]).unwrap();
        assert_eq!(out.audit.len(), 8);
        let best = out.result.rollouts[out.result.best].objective;
        assert!(out.result.rollouts.iter().all(|r| r.objective >= best));
        assert_eq!(out.audit[out.result.best].objective, Some(best));
    }

    #[test]
    fn rejects_bad_requests() {
        let s = setup(1.0);
        let base = GaitSpec::gait1(1.0);
        let p = params_of(&base);
        assert!(optimize_gait(&s, &base, &ParamBox::point(p), 7, &[]).is_err());
        let mut hi = p;
        hi[0] = 1.5;
        assert!(optimize_gait(&s, &base, &ParamBox { lo: p, hi }, 8, &[]).is_err());
        assert!(shoot_trajectory(&setup(0.5), &base).is_err());
    }
}
