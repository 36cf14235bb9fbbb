use std::path::Path;
use std::sync::OnceLock;

use cobra_core::config::{fmt_num, ScenarioConfig};
use cobra_core::contact::{friction_force, normal_force, ContactParams, Terrain};
use cobra_core::dynamics::mass_matrix;
use cobra_core::gait_library::{quintic_blend, GaitSpec};
use cobra_core::gait_optimizer::cio::epsilon_schedule;
use cobra_core::metrics::compute_metrics;
use cobra_core::robot_model::{build_cobra_model, JointVector};
use cobra_core::sim_engine::{place_on_terrain, run_scenario, Placement, SimConfig, SimTrace};
use cobra_core::state::GeneralizedState;
use nalgebra::Vector2;
use proptest::prelude::*;

fn rollout() -> &'static SimTrace {
    static TRACE: OnceLock<SimTrace> = OnceLock::new();
    TRACE.get_or_init(|| {
        let model = build_cobra_model(None).unwrap();
        let terrain = Terrain::flat();
        let s = place_on_terrain(&model, &JointVector::zeros(11), &terrain, Placement::default()).unwrap();
        let mut cfg = SimConfig::new(model, terrain, GaitSpec::gait1(1.0), s);
        cfg.duration = 2.0;
        run_scenario(&cfg).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normal_force_is_non_negative(g in -0.05f64..0.05, g_dot in -2.0f64..2.0, compliant in any::<bool>()) {
        let p = if compliant { ContactParams::compliant() } else { ContactParams::stiff() };
        let f = normal_force(g, g_dot, &p);
        prop_assert!(f >= 0.0);
        if g >= 0.0 {
            prop_assert_eq!(f, 0.0);
        }
    }

    #[test]
    fn friction_opposes_slip_inside_the_cone(vx in -1.0f64..1.0, vy in -1.0f64..1.0, f_n in 0.0f64..500.0) {
        let p = ContactParams::stiff();
        let v = Vector2::new(vx, vy);
        let f = friction_force(&v, f_n, &p);
        prop_assert!(f.norm() <= p.mu_s.max(p.mu_k) * f_n + 1e-12);
        prop_assert!(f.dot(&v) <= 0.0);
    }

    #[test]
    fn quintic_blend_is_monotone(a in -0.5f64..1.5, b in -0.5f64..1.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quintic_blend(lo) <= quintic_blend(hi));
        prop_assert!((0.0..=1.0).contains(&quintic_blend(a)));
    }

    #[test]
    fn epsilon_schedule_decreases_to_the_floor(start in 1e-3f64..1.0, ratio in 1e-4f64..0.5, factor in 1.5f64..20.0) {
        let end = start * ratio;
        let e = epsilon_schedule(start, end, factor);
        prop_assert!(e.windows(2).all(|w| w[1] < w[0]));
        prop_assert!((e.last().unwrap() - end).abs() <= 1e-12 * end.max(1.0));
    }

    #[test]
    fn config_numbers_round_trip(duration in 0.5f64..20.0, amp in 5.0f64..60.0) {
        let text = format!(
            "[gait]\nfamily = sidewinding\namp_h_deg = {}\n[sim]\nduration_s = {}\n",
            fmt_num(amp),
            fmt_num(duration)
        );
        let c = ScenarioConfig::parse(&text, "p", Path::new(".")).unwrap();
        prop_assert!((c.duration - duration).abs() <= 1e-6);
        prop_assert!((c.gait.amp_h.to_degrees() - amp).abs() <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(joints in proptest::collection::vec(-1.2f64..1.2, 11), pitch in -1.4f64..1.4) {
        let model = build_cobra_model(None).unwrap();
        let mut s = GeneralizedState::from_joints(&model, &JointVector(joints));
        s.q[4] = pitch;
        let m = mass_matrix(&model, &s).unwrap();
        prop_assert!((&m - m.transpose()).amax() <= 1e-12 * m.amax());
        prop_assert!(m.cholesky().is_some());
    }

    #[test]
    fn metrics_survive_decimation(hz in prop::sample::select(vec![50.0, 100.0, 250.0, 500.0])) {
        let full = rollout();
        let a = compute_metrics(full, Some(1.0), 0.05 * 0.00706).unwrap();
        let b = compute_metrics(&full.decimate(hz), Some(1.0), 0.05 * 0.00706).unwrap();
        prop_assert!((0.0..=1.0).contains(&b.duty_factor));
        prop_assert!(b.duty_factor <= b.duty_factor_whole_body + 1e-12);
        prop_assert!((a.avg_speed - b.avg_speed).abs() <= 0.02 * a.avg_speed.max(1e-3));
        prop_assert!((a.avg_power - b.avg_power).abs() <= 0.02 * a.avg_power.max(1e-3));
        prop_assert_eq!(a.peak_normal, b.peak_normal);
        prop_assert!((a.duty_factor - b.duty_factor).abs() <= 0.02);
    }
}
