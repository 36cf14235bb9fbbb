//! Scenario commands behind the `cobra-sim` binary: run, optimize, compare.
//! Every file is written to a temporary sibling and renamed into place.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::{fmt_num, ScenarioConfig};
use crate::contact::gap;
use crate::error::{Error, Result};
use crate::gait_optimizer::{optimize_gait, AuditRecord, OptimizeResult};
use crate::metrics::{compute_metrics, footprint, Metrics, MetricsReport};
use crate::parallel;
use crate::sim_engine::{goal_displacement, run_scenario, SimFailure, SimTrace};

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Config = 1,
    Divergence = 2,
    Optimization = 3,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn for_error(e: &Error) -> Self {
        match e {
            Error::Config { .. } | Error::Validation { .. } | Error::Usage(_) | Error::Io(_) => Exit::Config,
            Error::Optimization(_) => Exit::Optimization,
            Error::Divergence { .. }
            | Error::Singular(_)
            | Error::NoConvergence { .. }
            | Error::Infeasible { .. }
            | Error::OutOfBounds { .. } => Exit::Divergence,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub trace_hz: u32,
    /// Base directory for relative output paths (default: working directory).
    pub out_dir: Option<PathBuf>,
    pub quiet: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            trace_hz: 100,
            out_dir: None,
            quiet: false,
        }
    }
}

impl RunOptions {
    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// What a command did: exit status, a one-paragraph summary and the files
/// it wrote.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub exit: Exit,
    pub summary: String,
    pub artifacts: Vec<PathBuf>,
}

impl Outcome {
    fn failed(e: &Error, artifacts: Vec<PathBuf>) -> Self {
        Self {
            exit: Exit::for_error(e),
            summary: format!("error: {e}"),
            artifacts,
        }
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(format!("{}: not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| Error::Io(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::Io(format!("{}: {e}", path.display()))
    })
}

/// Simulate a scenario. A failed run still returns its partial trace.
pub fn simulate(cfg: &ScenarioConfig) -> std::result::Result<SimTrace, SimFailure> {
    let sim = cfg.sim_config().map_err(|error| SimFailure {
        error,
        partial: empty_trace(),
    })?;
    run_scenario(&sim)
}

fn empty_trace() -> SimTrace {
    use crate::math::Vec3;
    SimTrace {
        meta: crate::sim_engine::TraceMeta {
            dt: crate::sim_engine::DEFAULT_DT,
            total_mass: 0.0,
            n_links: 0,
            gait_period: None,
            up: Vec3::z(),
            downhill: Vec3::x(),
            start_com: Vec3::zeros(),
            initial_energy: 0.0,
        },
        records: Vec::new(),
    }
}

pub fn scenario_metrics(cfg: &ScenarioConfig, trace: &SimTrace) -> Result<Metrics> {
    compute_metrics(trace, cfg.gait.period(), cfg.outputs.patch_area)
}

pub fn metrics_report(cfg: &ScenarioConfig, m: &Metrics) -> MetricsReport {
    MetricsReport::new(
        &cfg.id,
        cfg.gait.family.name(),
        &cfg.terrain_label(),
        m,
        cfg.outputs.bearing_limit,
    )
}

fn decimated(trace: &SimTrace, hz: u32) -> SimTrace {
    if f64::from(hz) * trace.meta.dt >= 1.0 {
        trace.clone()
    } else {
        trace.decimate(f64::from(hz))
    }
}

fn com_csv(trace: &SimTrace) -> String {
    let mut s = String::from("t,com_x,com_y,com_z,head_x,head_y,head_z,progress_m\n");
    for r in &trace.records {
        let q = &r.state.q;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.t,
            r.com.x,
            r.com.y,
            r.com.z,
            q[0],
            q[1],
            q[2],
            goal_displacement(&trace.meta, r)
        );
    }
    s
}

fn forces_csv(trace: &SimTrace) -> String {
    let n = trace.records.first().map_or(0, |r| r.tau.len());
    let mut s = String::from("t,net_normal_N,net_friction_N,peak_module_normal_N,peak_abs_tau_Nm");
    for j in 1..=n {
        let _ = write!(s, ",tau_{j}");
    }
    s.push('\n');
    for r in &trace.records {
        let _ = write!(
            s,
            "{},{},{},{},{}",
            r.t, r.peak_net_normal, r.peak_net_friction, r.peak_module_normal, r.peak_abs_tau
        );
        for t in &r.tau {
            let _ = write!(s, ",{t}");
        }
        s.push('\n');
    }
    s
}

fn footprint_csv(trace: &SimTrace) -> String {
    let mut s = String::from("t,link,x,y\n");
    for f in footprint(trace) {
        let _ = writeln!(s, "{},{},{},{}", f.t, f.link, f.x, f.y);
    }
    s
}

/// Trace CSV, metrics JSON and plot data for one finished (or failed) run.
fn write_run_artifacts(
    cfg: &ScenarioConfig,
    trace: &SimTrace,
    opts: &RunOptions,
) -> Result<(Vec<PathBuf>, Option<MetricsReport>)> {
    let mut written = Vec::new();
    let out = decimated(trace, opts.trace_hz);
    let trace_path = opts.resolve(
        &cfg.outputs
            .trace
            .clone()
            .unwrap_or_else(|| format!("{}_trace.csv", cfg.id).into()),
    );
    write_atomic(&trace_path, out.to_csv().as_bytes())?;
    written.push(trace_path);

    // A partial trace may be too short to measure.
    let report = if let Ok(m) = scenario_metrics(cfg, trace) {
        let report = metrics_report(cfg, &m);
        let path = opts.resolve(
            &cfg.outputs
                .metrics
                .clone()
                .unwrap_or_else(|| format!("{}_metrics.json", cfg.id).into()),
        );
        write_atomic(&path, (report.to_json() + "\n").as_bytes())?;
        written.push(path);
        Some(report)
    } else {
        None
    };

    let plots = opts.resolve(
        &cfg.outputs
            .plot_dir
            .clone()
            .unwrap_or_else(|| format!("{}_plots", cfg.id).into()),
    );
    for (name, body) in [
        ("com_trajectory.csv", com_csv(&out)),
        ("forces_torques.csv", forces_csv(&out)),
        ("footprint.csv", footprint_csv(trace)),
    ] {
        let p = plots.join(name);
        write_atomic(&p, body.as_bytes())?;
        written.push(p);
    }
    Ok((written, report))
}

fn describe(report: &MetricsReport) -> String {
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    format!(
        "{} ({} on {}): speed {:.4} m/s, duty {:.3} (whole body {:.3}), peak normal {:.1} N, power {:.2} W, CoT {}, advance/cycle {}, bearing {} ({:.0} of {:.0} Pa)",
        report.scenario_id,
        report.gait,
        report.terrain,
        report.avg_speed_mps,
        report.duty_factor,
        report.duty_factor_whole_body,
        report.peak_normal_N,
        report.avg_power_W,
        opt(report.cot_J_per_kg_m),
        opt(report.per_cycle_advance_m),
        if report.bearing.pass { "pass" } else { "FAIL" },
        report.bearing.pressure_Pa,
        report.bearing.limit_Pa,
    )
}

pub fn cmd_run(config: &Path, opts: &RunOptions) -> Outcome {
    let cfg = match ScenarioConfig::load(config) {
        Ok(c) => c,
        Err(e) => return Outcome::failed(&e, Vec::new()),
    };
    run_loaded(&cfg, opts)
}

pub fn run_loaded(cfg: &ScenarioConfig, opts: &RunOptions) -> Outcome {
    if opts.trace_hz == 0 {
        return Outcome::failed(&Error::Usage("--trace-hz must be positive".into()), Vec::new());
    }
    match simulate(cfg) {
        Ok(trace) => match write_run_artifacts(cfg, &trace, opts) {
            Ok((artifacts, report)) => Outcome {
                exit: Exit::Ok,
                summary: report.as_ref().map_or_else(|| cfg.id.clone(), describe),
                artifacts,
            },
            Err(e) => Outcome::failed(&e, Vec::new()),
        },
        Err(SimFailure { error, partial }) => {
            if partial.records.is_empty() {
                return Outcome::failed(&error, Vec::new());
            }
            // Partial artifacts, then the failure's own status.
            let artifacts = write_run_artifacts(cfg, &partial, opts)
                .map(|a| a.0)
                .unwrap_or_default();
            Outcome::failed(&error, artifacts)
        }
    }
}

#[allow(non_snake_case)]
#[derive(Serialize)]
struct BestGaitReport<'a> {
    scenario_id: &'a str,
    family: &'a str,
    amp_h_deg: f64,
    amp_v_deg: f64,
    frequency_hz: f64,
    phase_per_joint_deg: f64,
    wave_phase_offset_deg: f64,
    objective: f64,
    displacement_m: f64,
    effort_J: f64,
    evaluations: usize,
}

pub fn cmd_optimize(config: &Path, opts: &RunOptions) -> Outcome {
    let cfg = match ScenarioConfig::load(config) {
        Ok(c) => c,
        Err(e) => return Outcome::failed(&e, Vec::new()),
    };
    let result = (|| -> Result<OptimizeResult> {
        let setup = cfg.shooting_setup()?;
        let bounds = cfg.param_box()?;
        let budget = cfg.optimize_spec()?.budget;
        optimize_gait(&setup, &cfg.gait, &bounds, budget, &[])
    })();
    let res = match result {
        Ok(r) => r,
        Err(e) => return Outcome::failed(&e, Vec::new()),
    };
    let g = &res.best;
    let report = BestGaitReport {
        scenario_id: &cfg.id,
        family: g.family.name(),
        amp_h_deg: g.amp_h.to_degrees(),
        amp_v_deg: g.amp_v.to_degrees(),
        frequency_hz: g.frequency,
        phase_per_joint_deg: g.phase_per_joint.to_degrees(),
        wave_phase_offset_deg: g.wave_phase_offset.to_degrees(),
        objective: res.best_rollout.objective,
        displacement_m: res.best_rollout.displacement,
        effort_J: res.best_rollout.effort,
        evaluations: res.audit.len(),
    };
    let audit: String = res
        .audit
        .iter()
        .map(|a: &AuditRecord| a.to_json_line() + "\n")
        .collect();
    let best_path = opts.resolve(Path::new(&format!("{}_best_gait.json", cfg.id)));
    let audit_path = opts.resolve(Path::new(&format!("{}_audit.jsonl", cfg.id)));
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Err(e) = write_atomic(&best_path, json.as_bytes()).and_then(|_| write_atomic(&audit_path, audit.as_bytes()))
    {
        return Outcome::failed(&e, Vec::new());
    }
    Outcome {
        exit: Exit::Ok,
        summary: format!(
            "{}: best of {} rollouts: amp_h {} deg, amp_v {} deg, {} Hz, phase {} deg, offset {} deg; objective {:.4}, displacement {:.4} m",
            cfg.id,
            report.evaluations,
            fmt_num(report.amp_h_deg),
            fmt_num(report.amp_v_deg),
            fmt_num(report.frequency_hz),
            fmt_num(report.phase_per_joint_deg),
            fmt_num(report.wave_phase_offset_deg),
            report.objective,
            report.displacement_m
        ),
        artifacts: vec![best_path, audit_path],
    }
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SideSummary {
    pub scenario_id: String,
    pub contact: String,
    pub final_distance_m: f64,
    pub peak_normal_module_N: f64,
    pub peak_net_normal_N: f64,
    pub peak_net_friction_N: f64,
    pub mean_com_height_m: f64,
}

#[allow(non_snake_case)]
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub duration_s: f64,
    pub a: SideSummary,
    pub b: SideSummary,
    pub delta_final_distance_m: f64,
    pub delta_peak_net_normal_N: f64,
    pub delta_peak_net_friction_N: f64,
}

/// CoM distance along the goal axis and height above the terrain, per
/// record.
pub fn distance_height_series(cfg: &ScenarioConfig, trace: &SimTrace) -> Result<Vec<(f64, f64, f64)>> {
    let terrain = cfg.terrain()?;
    trace
        .records
        .iter()
        .map(|r| Ok((r.t, goal_displacement(&trace.meta, r), gap(&terrain, &r.com, 0.0)?.g)))
        .collect()
}

fn summarize(cfg: &ScenarioConfig, trace: &SimTrace, series: &[(f64, f64, f64)]) -> SideSummary {
    let fold = |f: fn(&crate::sim_engine::TraceRecord) -> f64| trace.records.iter().map(f).fold(0.0, f64::max);
    SideSummary {
        scenario_id: cfg.id.clone(),
        contact: cfg.contact_preset.clone(),
        final_distance_m: series.last().map_or(0.0, |s| s.1),
        peak_normal_module_N: fold(|r| r.peak_module_normal),
        peak_net_normal_N: fold(|r| r.peak_net_normal),
        peak_net_friction_N: fold(|r| r.peak_net_friction),
        mean_com_height_m: series.iter().map(|s| s.2).sum::<f64>() / series.len().max(1) as f64,
    }
}

/// Run two scenarios side by side and report paired series and peaks.
pub fn compare_loaded(a: &ScenarioConfig, b: &ScenarioConfig, opts: &RunOptions) -> Result<(CompareReport, String)> {
    if a.duration != b.duration {
        return Err(Error::Config {
            line: 0,
            field: "sim.duration_s".into(),
            message: format!(
                "durations differ ({} s vs {} s)",
                fmt_num(a.duration),
                fmt_num(b.duration)
            ),
        });
    }
    if opts.trace_hz == 0 {
        return Err(Error::Usage("--trace-hz must be positive".into()));
    }
    let pair = [a, b];
    let traces = parallel::map(&pair, |c| simulate(c));
    let mut out = Vec::new();
    for (cfg, t) in pair.iter().zip(traces) {
        let t = t.map_err(|f| f.error)?;
        let series = distance_height_series(cfg, &t)?;
        out.push((summarize(cfg, &t, &series), series, t.meta.dt));
    }
    let (sb, series_b, _) = out.pop().expect("two runs");
    let (sa, series_a, dt) = out.pop().expect("two runs");
    let stride = ((1.0 / (f64::from(opts.trace_hz) * dt)).round() as usize).max(1);
    let mut csv = String::from("t,distance_a_m,distance_b_m,delta_distance_m,com_height_a_m,com_height_b_m\n");
    let n = series_a.len().min(series_b.len());
    for i in (stride - 1..n).step_by(stride) {
        let (t, da, ha) = series_a[i];
        let (_, db, hb) = series_b[i];
        let _ = writeln!(csv, "{t},{da},{db},{},{ha},{hb}", db - da);
    }
    let report = CompareReport {
        duration_s: a.duration,
        delta_final_distance_m: sb.final_distance_m - sa.final_distance_m,
        delta_peak_net_normal_N: sb.peak_net_normal_N - sa.peak_net_normal_N,
        delta_peak_net_friction_N: sb.peak_net_friction_N - sa.peak_net_friction_N,
        a: sa,
        b: sb,
    };
    Ok((report, csv))
}

pub fn cmd_compare(config_a: &Path, config_b: &Path, opts: &RunOptions) -> Outcome {
    let loaded = ScenarioConfig::load(config_a).and_then(|a| Ok((a, ScenarioConfig::load(config_b)?)));
    let (a, b) = match loaded {
        Ok(p) => p,
        Err(e) => return Outcome::failed(&e, Vec::new()),
    };
    let (report, csv) = match compare_loaded(&a, &b, opts) {
        Ok(r) => r,
        Err(e) => return Outcome::failed(&e, Vec::new()),
    };
    let stem = format!("compare_{}_vs_{}", a.id, b.id);
    let json_path = opts.resolve(Path::new(&format!("{stem}.json")));
    let csv_path = opts.resolve(Path::new(&format!("{stem}.csv")));
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Err(e) = write_atomic(&json_path, json.as_bytes()).and_then(|_| write_atomic(&csv_path, csv.as_bytes())) {
        return Outcome::failed(&e, Vec::new());
    }
    Outcome {
        exit: Exit::Ok,
        summary: format!(
            "{} vs {} over {} s: distance {:.3} / {:.3} m, peak net normal {:.1} / {:.1} N, peak module normal {:.1} / {:.1} N, peak friction {:.1} / {:.1} N",
            report.a.scenario_id,
            report.b.scenario_id,
            fmt_num(report.duration_s),
            report.a.final_distance_m,
            report.b.final_distance_m,
            report.a.peak_net_normal_N,
            report.b.peak_net_normal_N,
            report.a.peak_normal_module_N,
            report.b.peak_normal_module_N,
            report.a.peak_net_friction_N,
            report.b.peak_net_friction_N,
        ),
        artifacts: vec![json_path, csv_path],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ScenarioConfig {
        ScenarioConfig::parse(text, "t", Path::new(".")).unwrap()
    }

    #[test]
    fn exit_codes_follow_the_error_kind() {
        assert_eq!(Exit::for_error(&Error::Usage("x".into())).code(), 1);
        assert_eq!(
            Exit::for_error(&Error::Divergence {
                time: 1.0,
                quantity: "u".into()
            })
            .code(),
            2
        );
        assert_eq!(Exit::for_error(&Error::Optimization("x".into())).code(), 3);
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temp() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/file.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "two");
        let names: Vec<_> = std::fs::read_dir(dir.path().join("sub"))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn compare_rejects_mismatched_durations() {
        let a = cfg("[gait]\nfamily = sidewinding\n[sim]\nduration_s = 1\n");
        let b = cfg("[gait]\nfamily = sidewinding\n[sim]\nduration_s = 2\n");
        let e = compare_loaded(&a, &b, &RunOptions::default()).unwrap_err();
        assert_eq!(Exit::for_error(&e), Exit::Config);
    }

    #[test]
    fn comparing_a_scenario_with_itself_gives_zero_deltas() {
        let a = cfg("[gait]\nfamily = vertical_undulation\namp_v_deg = 15\n[sim]\nduration_s = 0.2\n");
        let (r, csv) = compare_loaded(&a, &a, &RunOptions::default()).unwrap();
        assert_eq!(r.delta_final_distance_m, 0.0);
        assert_eq!(r.delta_peak_net_normal_N, 0.0);
        assert_eq!(r.delta_peak_net_friction_N, 0.0);
        assert_eq!(csv.lines().count(), 1 + 20);
        assert!(csv.lines().skip(1).all(|l| l.split(',').nth(3) == Some("0")));
    }

    #[test]
    fn run_writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg("[gait]\nfamily = sidewinding\npreset = gait1\n[sim]\nid = short\nduration_s = 0.3\n");
        let opts = RunOptions {
            out_dir: Some(dir.path().to_path_buf()),
            ..RunOptions::default()
        };
        let o = run_loaded(&c, &opts);
        assert_eq!(o.exit, Exit::Ok, "{}", o.summary);
        assert_eq!(o.artifacts.len(), 5);
        let csv = std::fs::read_to_string(dir.path().join("short_trace.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 30);
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("short_metrics.json")).unwrap()).unwrap();
        for key in [
            "scenario_id",
            "gait",
            "terrain",
            "avg_speed_mps",
            "duty_factor",
            "duty_factor_whole_body",
            "peak_normal_N",
            "avg_power_W",
            "cot_J_per_kg_m",
            "per_cycle_advance_m",
            "bearing",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert!(dir.path().join("short_plots/com_trajectory.csv").is_file());
    }
}
