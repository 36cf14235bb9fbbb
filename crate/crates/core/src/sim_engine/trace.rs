//! Per-step simulation records and the CSV trace format.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::math::Vec3;
use crate::robot_model::CANDIDATES_PER_LINK;
use crate::state::GeneralizedState;

pub const FLAG_TORQUE_CONTINUOUS: u8 = 1;
pub const FLAG_ENERGY_ANOMALY: u8 = 2;
pub const FLAG_TIP_OVER: u8 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactSample {
    pub candidate: usize,
    pub link: usize,
    pub point: usize,
    pub gap: f64,
    pub f_n: f64,
    pub f_t: f64,
    pub position: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub state: GeneralizedState,
    /// World ZYX Euler angles of the head.
    pub head_euler: Vec3,
    /// World angular velocity of the head.
    pub head_omega: Vec3,
    pub targets: Vec<f64>,
    pub tau: Vec<f64>,
    pub contacts: Vec<ContactSample>,
    pub com: Vec3,
    pub com_velocity: Vec3,
    pub latched: bool,
    pub flags: u8,
    /// Normal force carried by each module.
    pub module_normal: Vec<f64>,
    /// Whether each module has a candidate below the surface.
    pub module_contact: Vec<bool>,
    pub net_normal: f64,
    pub net_friction: f64,
    /// Maxima since the previous record (equal to the instantaneous values
    /// at full rate; folded over the window when decimated).
    pub peak_module_normal: f64,
    pub peak_net_normal: f64,
    pub peak_net_friction: f64,
    pub peak_abs_tau: f64,
    /// Running integrals from t = 0.
    pub actuator_work: f64,
    pub actuator_energy: f64,
    pub contact_work: f64,
    pub constraint_work: f64,
    /// Integrated rotation about the across-slope axis (rad).
    pub roll_angle: f64,
    pub kinetic_energy: f64,
    pub potential_energy: f64,
    /// Angle between the ring axis and the across-slope axis (rad); zero for
    /// crawling gaits.
    pub ring_tilt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub dt: f64,
    pub total_mass: f64,
    pub n_links: usize,
    pub gait_period: Option<f64>,
    pub up: Vec3,
    pub downhill: Vec3,
    pub start_com: Vec3,
    pub initial_energy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
}

impl SimTrace {
    pub fn duration(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t)
    }

    /// Keep one record per `1 / hz` seconds, carrying window maxima.
    pub fn decimate(&self, hz: f64) -> SimTrace {
        let stride = ((1.0 / (hz * self.meta.dt)).round() as usize).max(1);
        let mut records = Vec::with_capacity(self.records.len() / stride + 1);
        let mut window: Option<(f64, f64, f64, f64)> = None;
        for (i, r) in self.records.iter().enumerate() {
            let w = window.get_or_insert((0.0, 0.0, 0.0, 0.0));
            w.0 = w.0.max(r.peak_module_normal);
            w.1 = w.1.max(r.peak_net_normal);
            w.2 = w.2.max(r.peak_net_friction);
            w.3 = w.3.max(r.peak_abs_tau);
            if (i + 1) % stride == 0 {
                let (a, b, c, d) = window.take().expect("window");
                let mut kept = r.clone();
                kept.peak_module_normal = a;
                kept.peak_net_normal = b;
                kept.peak_net_friction = c;
                kept.peak_abs_tau = d;
                records.push(kept);
            }
        }
        SimTrace {
            meta: TraceMeta {
                dt: self.meta.dt * stride as f64,
                ..self.meta.clone()
            },
            records,
        }
    }

    pub fn to_csv(&self) -> String {
        let n_links = self.meta.n_links;
        let mut out = String::new();
        let mut header = vec!["t".to_string()];
        header.extend(["q_x", "q_y", "q_z", "q_roll", "q_pitch", "q_yaw"].map(String::from));
        let n_joints = n_links.saturating_sub(1);
        header.extend((1..=n_joints).map(|j| format!("q_{j}")));
        header.extend(["u_vx", "u_vy", "u_vz", "u_wx", "u_wy", "u_wz"].map(String::from));
        header.extend((1..=n_joints).map(|j| format!("u_{j}")));
        header.extend((1..=n_joints).map(|j| format!("tau_{j}")));
        for link in 0..n_links {
            for p in 0..CANDIDATES_PER_LINK {
                for f in ["g", "fN", "fT"] {
                    header.push(format!("c{link}_{p}_{f}"));
                }
            }
        }
        header.extend(["com_x", "com_y", "com_z", "latch", "flags"].map(String::from));
        out.push_str(&header.join(","));
        out.push('\n');

        let n_cand = n_links * CANDIDATES_PER_LINK;
        for r in &self.records {
            let q = &r.state.q;
            let u = &r.state.u;
            let mut row = String::new();
            let _ = write!(row, "{}", r.t);
            for v in q
                .rows(0, 3)
                .iter()
                .chain(r.head_euler.iter())
                .chain(q.rows(6, n_joints).iter())
            {
                let _ = write!(row, ",{v}");
            }
            for v in u
                .rows(0, 3)
                .iter()
                .chain(r.head_omega.iter())
                .chain(u.rows(6, n_joints).iter())
            {
                let _ = write!(row, ",{v}");
            }
            for v in &r.tau {
                let _ = write!(row, ",{v}");
            }
            let mut slots: Vec<Option<&ContactSample>> = vec![None; n_cand];
            for c in &r.contacts {
                slots[c.candidate] = Some(c);
            }
            for s in slots {
                match s {
                    Some(c) => {
                        let _ = write!(row, ",{},{},{}", c.gap, c.f_n, c.f_t);
                    }
                    None => row.push_str(",,,"),
                }
            }
            let _ = write!(
                row,
                ",{},{},{},{},{}",
                r.com.x,
                r.com.y,
                r.com.z,
                u8::from(r.latched),
                r.flags
            );
            out.push_str(&row);
            out.push('\n');
        }
        out
    }
}
