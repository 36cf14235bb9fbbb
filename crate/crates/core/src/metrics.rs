//! Locomotion metrics computed from simulation traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::sim_engine::{SimTrace, TraceRecord};

/// Capsule contact strip of 0.05 m by 7.06 mm.
pub const DEFAULT_PATCH_AREA: f64 = 0.05 * 0.00706;
/// Bearing capacity of the weakest listed regolith simulant, Pa.
pub const BEARING_LIMIT_PA: f64 = 620e3;
/// The limit is quoted to two significant figures (62 N/cm²); pressures
/// within this relative margin of it count as at the limit.
pub const BEARING_ROUNDING: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub avg_speed: f64,
    /// Mean over modules of the fraction of time in contact.
    pub duty_factor: f64,
    /// Fraction of time any module is in contact.
    pub duty_factor_whole_body: f64,
    /// Largest normal force carried by a single module.
    pub peak_normal: f64,
    /// Largest total normal force on the robot.
    pub peak_net_normal: f64,
    pub peak_net_friction: f64,
    pub peak_abs_torque: f64,
    pub avg_power: f64,
    /// `None` when the robot made no progress.
    pub cost_of_transport: Option<f64>,
    /// Displacement per gait cycle, or per revolution for rolling postures.
    pub per_cycle_advance: Option<f64>,
    /// Vertical CoM descent per revolution (rolling only).
    pub per_cycle_descent: Option<f64>,
    pub max_contact_pressure: f64,
    /// Start and end of the averaging window (s).
    pub window: (f64, f64),
}

/// Averaging window: whole cycles after the first for periodic gaits,
/// otherwise the whole trace.
fn window(trace: &SimTrace, gait_period: Option<f64>) -> (usize, usize) {
    let n = trace.records.len();
    let dt = trace.meta.dt;
    let Some(period) = gait_period.filter(|p| *p > 0.0) else {
        return (0, n - 1);
    };
    let duration = trace.duration();
    let cycles = ((duration - period) / period + 1e-9).floor();
    if cycles < 1.0 {
        return (0, n - 1);
    }
    let idx = |t: f64| (((t / dt).round() as usize).max(1) - 1).min(n - 1);
    (idx(period), idx(period * (1.0 + cycles)))
}

fn displacement(trace: &SimTrace, a: &TraceRecord, b: &TraceRecord) -> f64 {
    let meta = &trace.meta;
    let d = b.com - a.com;
    if meta.downhill.z.abs() > 1e-12 {
        d.dot(&meta.downhill)
    } else {
        (d - meta.up * d.dot(&meta.up)).norm()
    }
}

pub fn compute_metrics(trace: &SimTrace, gait_period: Option<f64>, patch_area: f64) -> Result<Metrics> {
    if trace.records.is_empty() {
        return Err(Error::validation("trace", "is empty"));
    }
    if !(patch_area > 0.0) {
        return Err(Error::validation("patch_area", "must be positive"));
    }
    let (i0, i1) = window(trace, gait_period);
    let recs = &trace.records;
    let (a, b) = (&recs[i0], &recs[i1]);
    // A trace that starts at the first record has no earlier sample; its
    // accumulators and position start from the initial state.
    let (t0, start_com, energy0) = if i0 == 0 {
        (0.0, trace.meta.start_com, 0.0)
    } else {
        (a.t, a.com, a.actuator_energy)
    };
    let span = b.t - t0;
    let start = TraceRecord {
        com: start_com,
        ..a.clone()
    };
    let distance = displacement(trace, &start, b).max(0.0);
    let avg_speed = if span > 0.0 { distance / span } else { 0.0 };
    let avg_power = if span > 0.0 {
        ((b.actuator_energy - energy0) / span).max(0.0)
    } else {
        0.0
    };

    // Samples in (t0, t1].
    let used = if i0 == 0 && t0 == 0.0 {
        &recs[..=i1]
    } else {
        &recs[i0 + 1..=i1]
    };
    let n_mod = trace.meta.n_links;
    let mut per_module = vec![0usize; n_mod];
    let mut any = 0usize;
    let (mut peak, mut peak_net, mut peak_fric, mut peak_tau) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for r in used {
        for (c, m) in per_module.iter_mut().zip(&r.module_contact) {
            *c += usize::from(*m);
        }
        any += usize::from(r.module_contact.iter().any(|m| *m));
        peak = peak.max(r.peak_module_normal);
        peak_net = peak_net.max(r.peak_net_normal);
        peak_fric = peak_fric.max(r.peak_net_friction);
        peak_tau = peak_tau.max(r.peak_abs_tau);
    }
    let n = used.len() as f64;
    let duty_factor = per_module.iter().map(|c| *c as f64 / n).sum::<f64>() / n_mod as f64;
    let duty_factor_whole_body = any as f64 / n;

    let mass = trace.meta.total_mass;
    let cost_of_transport = (avg_speed > 0.0).then(|| avg_power / (mass * avg_speed));
    let (per_cycle_advance, per_cycle_descent) = match gait_period {
        Some(p) => {
            let cycles = per_cycle_normalize(trace, p);
            let steady: Vec<f64> = cycles.iter().skip(1).copied().collect();
            let adv = (!steady.is_empty()).then(|| steady.iter().sum::<f64>() / steady.len() as f64);
            (adv, None)
        }
        None => match per_revolution(trace) {
            Some((adv, desc)) => (Some(adv), Some(desc)),
            None => (None, None),
        },
    };
    Ok(Metrics {
        avg_speed,
        duty_factor,
        duty_factor_whole_body,
        peak_normal: peak,
        peak_net_normal: peak_net,
        peak_net_friction: peak_fric,
        peak_abs_torque: peak_tau,
        avg_power,
        cost_of_transport,
        per_cycle_advance,
        per_cycle_descent,
        max_contact_pressure: peak / patch_area,
        window: (t0, b.t),
    })
}

/// Goal axis: downhill on slopes, else the net planar heading of the run.
fn goal_axis(trace: &SimTrace) -> Vec3 {
    let meta = &trace.meta;
    if meta.downhill.z.abs() > 1e-12 {
        return meta.downhill;
    }
    let end = trace.records.last().map_or(meta.start_com, |r| r.com);
    let d = end - meta.start_com;
    let planar = d - meta.up * d.dot(&meta.up);
    if planar.norm() > 0.0 {
        planar.normalize()
    } else {
        meta.downhill
    }
}

fn com_at(trace: &SimTrace, t: f64) -> Vec3 {
    if t <= 0.0 {
        return trace.meta.start_com;
    }
    let dt = trace.meta.dt;
    let i = ((t / dt).round() as usize).clamp(1, trace.records.len()) - 1;
    trace.records[i].com
}

/// Displacement along the goal axis in each complete cycle.
pub fn per_cycle_normalize(trace: &SimTrace, gait_period: f64) -> Vec<f64> {
    if trace.records.is_empty() || !(gait_period > 0.0) {
        return Vec::new();
    }
    let axis = goal_axis(trace);
    let cycles = (trace.duration() / gait_period + 1e-9).floor() as usize;
    (0..cycles)
        .map(|k| {
            let a = com_at(trace, k as f64 * gait_period);
            let b = com_at(trace, (k + 1) as f64 * gait_period);
            (b - a).dot(&axis)
        })
        .collect()
}

/// Advance and CoM descent per revolution of a rolling body, from the
/// integrated roll angle. `None` before one full turn.
pub fn per_revolution(trace: &SimTrace) -> Option<(f64, f64)> {
    let last = trace.records.last()?;
    let revs = last.roll_angle.abs() / std::f64::consts::TAU;
    if revs < 1.0 {
        return None;
    }
    let d = last.com - trace.meta.start_com;
    let advance = d.dot(&goal_axis(trace)) / revs;
    let descent = -d.z / revs;
    Some((advance, descent))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub x: f64,
    pub y: f64,
    pub link: usize,
    pub t: f64,
}

/// Touchdown points: a module starts a contact when one of its candidates
/// enters the activation band. The location is the lowest active candidate.
pub fn footprint(trace: &SimTrace) -> Vec<Footprint> {
    let n = trace.meta.n_links;
    let mut was = vec![false; n];
    let mut out = Vec::new();
    for r in &trace.records {
        let mut now = vec![None::<(f64, Vec3)>; n];
        for c in &r.contacts {
            let slot = &mut now[c.link];
            if slot.map_or(true, |(g, _)| c.gap < g) {
                *slot = Some((c.gap, c.position));
            }
        }
        for (link, (w, cur)) in was.iter_mut().zip(&now).enumerate() {
            if let (false, Some((_, p))) = (*w, cur) {
                out.push(Footprint {
                    x: p.x,
                    y: p.y,
                    link,
                    t: r.t,
                });
            }
            *w = cur.is_some();
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BearingCheck {
    pub pressure: f64,
    pub limit: f64,
    pub pass: bool,
    /// `limit − pressure`, or `f64::MAX` when nothing presses on the ground.
    pub margin: f64,
}

pub fn bearing_check(metrics: &Metrics, limit_pa: f64) -> BearingCheck {
    let p = metrics.max_contact_pressure;
    BearingCheck {
        pressure: p,
        limit: limit_pa,
        pass: p <= limit_pa * (1.0 + BEARING_ROUNDING),
        margin: if p == 0.0 { f64::MAX } else { limit_pa - p },
    }
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BearingReport {
    pub pressure_Pa: f64,
    pub limit_Pa: f64,
    pub pass: bool,
}

/// Metrics file contents.
#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario_id: String,
    pub gait: String,
    pub terrain: String,
    pub avg_speed_mps: f64,
    pub duty_factor: f64,
    pub duty_factor_whole_body: f64,
    pub peak_normal_N: f64,
    pub avg_power_W: f64,
    pub cot_J_per_kg_m: Option<f64>,
    pub per_cycle_advance_m: Option<f64>,
    pub bearing: BearingReport,
}

impl MetricsReport {
    pub fn new(scenario_id: &str, gait: &str, terrain: &str, m: &Metrics, limit_pa: f64) -> Self {
        let b = bearing_check(m, limit_pa);
        Self {
            scenario_id: scenario_id.to_string(),
            gait: gait.to_string(),
            terrain: terrain.to_string(),
            avg_speed_mps: m.avg_speed,
            duty_factor: m.duty_factor,
            duty_factor_whole_body: m.duty_factor_whole_body,
            peak_normal_N: m.peak_normal,
            avg_power_W: m.avg_power,
            cot_J_per_kg_m: m.cost_of_transport,
            per_cycle_advance_m: m.per_cycle_advance,
            bearing: BearingReport {
                pressure_Pa: b.pressure,
                limit_Pa: b.limit,
                pass: b.pass,
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}
