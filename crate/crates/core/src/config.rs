//! Scenario files: INI-style sections of `key = value` lines.
//!
//! ```text
//! [model]      mass_kg, inertia_kgm2 (3), length_m, radius_m, joint_limit_deg,
//!              torque_continuous_Nm, torque_peak_Nm, gravity (standard | lunar | m/s²)
//! [terrain]    type (flat | incline | heightmap), z0_m, slope_deg, downhill (x, y),
//!              heightmap (path), contact (stiff | compliant), k_n, d_n,
//!              transition_width, mu_s, mu_k, v_crit
//! [gait]       family, preset (gait1 | gait2), amp_h_deg, amp_v_deg, frequency_hz,
//!              phase_per_joint_deg, wave_phase_offset_deg, latch_offset_deg,
//!              transform_duration_s, helix_pitch_deg
//! [sim]        id, duration_s, dt_s, seed, perturbation_rad_s, start (gait | upright),
//!              latched, heading_deg, lean_deg, roll_speed_mps, stop_distance_m,
//!              adaptive, substeps, kp, kd, ki
//! [outputs]    trace, metrics, plot_dir, patch_area_m2, bearing_limit_Pa
//! [optimize]   budget, horizon_s, w_displacement, w_effort,
//!              <gait key>_range = lo, hi
//! ```
//!
//! `#` and `;` start comments. Relative paths in `[terrain]` resolve against
//! the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;

use crate::contact::{ContactParams, Heightmap, Terrain};
use crate::dynamics::{ChainKinematics, LUNAR_GRAVITY, STANDARD_GRAVITY};
use crate::error::{Error, Result};
use crate::gait_library::{GaitFamily, GaitPlan, GaitSpec};
use crate::gait_optimizer::{params_of, ParamBox, ShootingSetup};
use crate::math::Vec3;
use crate::metrics::{BEARING_LIMIT_PA, DEFAULT_PATCH_AREA};
use crate::robot_model::{
    build_cobra_model, contact_candidates_toward, hexring_configuration, spiral_configuration, ModelOverrides,
    RobotModel,
};
use crate::sim_engine::{place_on_terrain, with_rigid_spin, PidGains, Placement, SimConfig, StepControl};
use crate::state::GeneralizedState;

const SECTIONS: [&str; 6] = ["model", "terrain", "gait", "sim", "outputs", "optimize"];

#[derive(Clone, Debug, PartialEq)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

/// Parsed key-value document; remembers line numbers for diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
struct Document {
    sections: BTreeMap<String, (usize, BTreeMap<String, Entry>)>,
}

fn config_err(line: usize, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        field: field.into(),
        message: message.into(),
    }
}

impl Document {
    fn parse(text: &str) -> Result<Self> {
        let mut doc = Document::default();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split(['#', ';']).next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(line, content, "unterminated section header"))?
                    .trim()
                    .to_ascii_lowercase();
                if !SECTIONS.contains(&name.as_str()) {
                    return Err(config_err(line, name, "unknown section"));
                }
                if doc.sections.contains_key(&name) {
                    return Err(config_err(line, name, "section appears twice"));
                }
                doc.sections.insert(name.clone(), (line, BTreeMap::new()));
                current = Some(name);
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| config_err(line, content, "expected `key = value`"))?;
            let key = key.trim().to_ascii_lowercase();
            let section = current
                .as_ref()
                .ok_or_else(|| config_err(line, &key, "key outside any section"))?;
            let entries = &mut doc.sections.get_mut(section).expect("section exists").1;
            if entries.contains_key(&key) {
                return Err(config_err(line, format!("{section}.{key}"), "key appears twice"));
            }
            entries.insert(
                key,
                Entry {
                    value: value.trim().to_string(),
                    line,
                    used: false,
                },
            );
        }
        Ok(doc)
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        let e = self.sections.get_mut(section)?.1.get_mut(key)?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    fn str(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.take(section, key)
    }

    fn f64(&mut self, section: &str, key: &str) -> Result<Option<(f64, usize)>> {
        let Some((v, line)) = self.take(section, key) else {
            return Ok(None);
        };
        let x: f64 = v
            .parse()
            .map_err(|_| config_err(line, format!("{section}.{key}"), format!("`{v}` is not a number")))?;
        if !x.is_finite() {
            return Err(config_err(line, format!("{section}.{key}"), "must be finite"));
        }
        Ok(Some((x, line)))
    }

    fn list(&mut self, section: &str, key: &str, n: usize) -> Result<Option<(Vec<f64>, usize)>> {
        let Some((v, line)) = self.take(section, key) else {
            return Ok(None);
        };
        let field = format!("{section}.{key}");
        let xs: Vec<f64> = v
            .split(',')
            .map(|t| t.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| config_err(line, &field, format!("`{v}` is not a list of numbers")))?;
        if xs.len() != n {
            return Err(config_err(line, &field, format!("expected {n} comma-separated values")));
        }
        Ok(Some((xs, line)))
    }

    fn usize(&mut self, section: &str, key: &str) -> Result<Option<(usize, usize)>> {
        let Some((v, line)) = self.take(section, key) else {
            return Ok(None);
        };
        let n = v.parse().map_err(|_| {
            config_err(
                line,
                format!("{section}.{key}"),
                format!("`{v}` is not a non-negative integer"),
            )
        })?;
        Ok(Some((n, line)))
    }

    fn bool(&mut self, section: &str, key: &str) -> Result<Option<(bool, usize)>> {
        let Some((v, line)) = self.take(section, key) else {
            return Ok(None);
        };
        match v.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" => Ok(Some((true, line))),
            "false" | "no" | "0" => Ok(Some((false, line))),
            _ => Err(config_err(
                line,
                format!("{section}.{key}"),
                format!("`{v}` is not a boolean"),
            )),
        }
    }

    fn section_line(&self, section: &str) -> usize {
        self.sections.get(section).map_or(0, |s| s.0)
    }

    fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn reject_unused(&self) -> Result<()> {
        for (name, (_, entries)) in &self.sections {
            if let Some((key, e)) = entries.iter().find(|(_, e)| !e.used) {
                return Err(config_err(e.line, format!("{name}.{key}"), "unknown key"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TerrainSpec {
    Flat { z0: f64 },
    Incline { slope: f64, downhill: Vector2<f64> },
    Heightmap { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartPosture {
    /// Gait targets at t = 0 (straight chain for transform gaits) lying on
    /// the terrain.
    Gait,
    /// Final ring or coil posture stood up on the terrain.
    Upright,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizeSpec {
    pub budget: usize,
    pub horizon: Option<f64>,
    pub w_displacement: f64,
    pub w_effort: f64,
    /// Per searchable parameter; `None` pins it to the gait value.
    pub ranges: [Option<(f64, f64)>; 5],
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSpec {
    pub trace: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub plot_dir: Option<PathBuf>,
    pub patch_area: f64,
    pub bearing_limit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub id: String,
    pub model: ModelOverrides,
    pub gravity: Vec3,
    pub terrain: TerrainSpec,
    pub contact_preset: String,
    pub contact: ContactParams,
    pub gait: GaitSpec,
    pub duration: f64,
    pub dt: f64,
    pub seed: Option<u64>,
    pub perturbation: f64,
    pub start: StartPosture,
    pub latched: bool,
    pub heading: f64,
    pub lean: f64,
    pub roll_speed: f64,
    pub stop_distance: Option<f64>,
    pub adaptive: bool,
    pub substeps: Option<usize>,
    pub gains: PidGains,
    pub outputs: OutputSpec,
    pub optimize: Option<OptimizeSpec>,
    /// Line of each key, for mapping validation errors back to the file.
    lines: BTreeMap<String, usize>,
}

const GAIT_ANGLES: [(&str, usize); 5] = [
    ("amp_h_deg", 0),
    ("amp_v_deg", 1),
    ("frequency_hz", 2),
    ("phase_per_joint_deg", 3),
    ("wave_phase_offset_deg", 4),
];

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(0, path.display().to_string(), format!("cannot read: {e}")))?;
        let id = path
            .file_stem()
            .map_or_else(|| "scenario".to_string(), |s| s.to_string_lossy().into_owned());
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &id, &dir)
    }

    /// `default_id` names the scenario unless `[sim] id` is given; relative
    /// paths resolve against `base_dir`.
    pub fn parse(text: &str, default_id: &str, base_dir: &Path) -> Result<Self> {
        let mut d = Document::parse(text)?;
        let mut lines = BTreeMap::new();
        let mut note = |field: &str, line: usize| {
            lines.insert(field.to_string(), line);
        };

        // [model]
        let mut model = ModelOverrides::default();
        if let Some((v, l)) = d.f64("model", "mass_kg")? {
            model.mass = Some(v);
            note("mass", l);
        }
        if let Some((v, l)) = d.list("model", "inertia_kgm2", 3)? {
            model.principal_inertia = Some([v[0], v[1], v[2]]);
            note("principal_inertia", l);
        }
        if let Some((v, l)) = d.f64("model", "length_m")? {
            model.total_length = Some(v);
            note("total_length", l);
        }
        if let Some((v, l)) = d.f64("model", "radius_m")? {
            model.radius = Some(v);
            note("radius", l);
        }
        if let Some((v, l)) = d.f64("model", "joint_limit_deg")? {
            model.joint_limit = Some([-v.to_radians(), v.to_radians()]);
            note("angle_limits", l);
        }
        if let Some((v, l)) = d.f64("model", "torque_continuous_nm")? {
            model.torque_continuous = Some(v);
            note("torque_continuous", l);
        }
        if let Some((v, l)) = d.f64("model", "torque_peak_nm")? {
            model.torque_peak = Some(v);
            note("torque_peak", l);
        }
        let gravity = match d.str("model", "gravity") {
            None => STANDARD_GRAVITY,
            Some((v, l)) => match v.to_ascii_lowercase().as_str() {
                "standard" | "earth" => STANDARD_GRAVITY,
                "lunar" | "moon" => LUNAR_GRAVITY,
                other => {
                    let g: f64 = other
                        .parse()
                        .ok()
                        .filter(|g: &f64| g.is_finite() && *g >= 0.0)
                        .ok_or_else(|| {
                            config_err(l, "model.gravity", "expected standard, lunar or a magnitude in m/s²")
                        })?;
                    Vec3::new(0.0, 0.0, -g)
                }
            },
        };

        // [terrain]
        let kind = d.str("terrain", "type");
        let terrain = match kind.as_ref().map(|(v, l)| (v.to_ascii_lowercase(), *l)) {
            None => TerrainSpec::Flat { z0: 0.0 },
            Some((k, _)) if k == "flat" => TerrainSpec::Flat {
                z0: d.f64("terrain", "z0_m")?.map_or(0.0, |v| v.0),
            },
            Some((k, l)) if k == "incline" => {
                let (slope, sl) = d
                    .f64("terrain", "slope_deg")?
                    .ok_or_else(|| config_err(l, "terrain.slope_deg", "required for an incline"))?;
                note("slope", sl);
                let downhill = match d.list("terrain", "downhill", 2)? {
                    Some((v, dl)) => {
                        let dir = Vector2::new(v[0], v[1]);
                        if dir.norm() < 1e-12 {
                            return Err(config_err(dl, "terrain.downhill", "must be a non-zero direction"));
                        }
                        dir.normalize()
                    }
                    None => Vector2::x(),
                };
                TerrainSpec::Incline {
                    slope: slope.to_radians(),
                    downhill,
                }
            }
            Some((k, l)) if k == "heightmap" => {
                let (p, _) = d
                    .str("terrain", "heightmap")
                    .ok_or_else(|| config_err(l, "terrain.heightmap", "required for heightmap terrain"))?;
                let path = base_dir.join(p);
                if !path.is_file() {
                    return Err(config_err(
                        l,
                        "terrain.heightmap",
                        format!("{} does not exist", path.display()),
                    ));
                }
                TerrainSpec::Heightmap { path }
            }
            Some((k, l)) => return Err(config_err(l, "terrain.type", format!("unknown terrain `{k}`"))),
        };
        let (contact_preset, mut contact) = match d.str("terrain", "contact") {
            None => ("stiff".to_string(), ContactParams::stiff()),
            Some((v, l)) => match v.to_ascii_lowercase().as_str() {
                "stiff" => ("stiff".to_string(), ContactParams::stiff()),
                "compliant" => ("compliant".to_string(), ContactParams::compliant()),
                _ => return Err(config_err(l, "terrain.contact", "expected stiff or compliant")),
            },
        };
        for (key, slot) in [
            ("k_n", &mut contact.k_n),
            ("d_n", &mut contact.d_n),
            ("transition_width", &mut contact.transition_width),
            ("mu_s", &mut contact.mu_s),
            ("mu_k", &mut contact.mu_k),
            ("v_crit", &mut contact.v_crit),
        ] {
            if let Some((v, l)) = d.f64("terrain", key)? {
                *slot = v;
                note(key, l);
            }
        }

        // [gait]
        let (family_name, family_line) = d
            .str("gait", "family")
            .ok_or_else(|| config_err(d.section_line("gait"), "gait.family", "missing required field"))?;
        let family = GaitFamily::parse(&family_name.to_ascii_lowercase()).ok_or_else(|| {
            config_err(
                family_line,
                "gait.family",
                format!("unknown gait family `{family_name}`"),
            )
        })?;
        let mut gait = match d.str("gait", "preset") {
            None => GaitSpec::default(),
            Some((p, l)) => match p.to_ascii_lowercase().as_str() {
                "gait1" => GaitSpec::gait1(0.5),
                "gait2" => GaitSpec::gait2(0.5),
                _ => return Err(config_err(l, "gait.preset", "expected gait1 or gait2")),
            },
        };
        gait.family = family;
        let mut params = params_of(&gait);
        for (key, idx) in GAIT_ANGLES {
            if let Some((v, l)) = d.f64("gait", key)? {
                params[idx] = if idx == 2 { v } else { v.to_radians() };
                note(
                    ["amp_h", "amp_v", "frequency", "phase_per_joint", "wave_phase_offset"][idx],
                    l,
                );
            }
        }
        gait = crate::gait_optimizer::with_params(&gait, &params);
        if let Some((v, l)) = d.f64("gait", "latch_offset_deg")? {
            gait.latch_offset = v.to_radians();
            note("latch_offset", l);
        }
        if let Some((v, l)) = d.f64("gait", "transform_duration_s")? {
            gait.transform_duration = v;
            note("transform_duration", l);
        }
        if let Some((v, l)) = d.f64("gait", "helix_pitch_deg")? {
            gait.helix_pitch = v.to_radians();
            note("helix_pitch_angle", l);
        }

        // [sim]
        let id = d.str("sim", "id").map_or_else(|| default_id.to_string(), |v| v.0);
        let mut f = |d: &mut Document, key: &str, field: &str, default: f64| -> Result<f64> {
            Ok(match d.f64("sim", key)? {
                Some((v, l)) => {
                    lines.insert(field.to_string(), l);
                    v
                }
                None => default,
            })
        };
        let duration = f(&mut d, "duration_s", "duration", 10.0)?;
        let dt = f(&mut d, "dt_s", "dt", crate::sim_engine::DEFAULT_DT)?;
        let perturbation = f(&mut d, "perturbation_rad_s", "perturbation", 0.0)?;
        let heading = f(&mut d, "heading_deg", "heading", 0.0)?.to_radians();
        let lean = f(&mut d, "lean_deg", "lean", 0.0)?.to_radians();
        let roll_speed = f(&mut d, "roll_speed_mps", "roll_speed", 0.0)?;
        let defaults = PidGains::default();
        let gains = PidGains {
            kp: f(&mut d, "kp", "kp", defaults.kp)?,
            kd: f(&mut d, "kd", "kd", defaults.kd)?,
            ki: f(&mut d, "ki", "ki", defaults.ki)?,
            ..defaults
        };
        let stop_distance = d.f64("sim", "stop_distance_m")?.map(|v| v.0);
        let seed = match d.take("sim", "seed") {
            None => None,
            Some((v, l)) => Some(
                v.parse::<u64>()
                    .map_err(|_| config_err(l, "sim.seed", format!("`{v}` is not a non-negative integer")))?,
            ),
        };
        let start = match d.str("sim", "start") {
            None => StartPosture::Gait,
            Some((v, l)) => match v.to_ascii_lowercase().as_str() {
                "gait" => StartPosture::Gait,
                "upright" if family.is_transform() => StartPosture::Upright,
                "upright" => return Err(config_err(l, "sim.start", "upright starts need a ring or coil gait")),
                _ => return Err(config_err(l, "sim.start", "expected gait or upright")),
            },
        };
        let latched = d.bool("sim", "latched")?.map_or(
            start == StartPosture::Upright && family == GaitFamily::HexringTransform,
            |v| v.0,
        );
        let adaptive = d.bool("sim", "adaptive")?.map_or(true, |v| v.0);
        let substeps = d.usize("sim", "substeps")?.map(|v| v.0);

        // [outputs]
        let path = |d: &mut Document, key: &str| d.str("outputs", key).map(|v| PathBuf::from(v.0));
        let trace = path(&mut d, "trace");
        let metrics = path(&mut d, "metrics");
        let plot_dir = path(&mut d, "plot_dir");
        let (patch_area, _) = match d.f64("outputs", "patch_area_m2")? {
            Some((a, l)) if !(a > 0.0) => return Err(config_err(l, "outputs.patch_area_m2", "must be positive")),
            Some(v) => v,
            None => (DEFAULT_PATCH_AREA, 0),
        };
        let bearing_limit = d.f64("outputs", "bearing_limit_pa")?.map_or(BEARING_LIMIT_PA, |v| v.0);

        // [optimize]
        let optimize = if d.has_section("optimize") {
            let budget = d
                .usize("optimize", "budget")?
                .ok_or_else(|| config_err(d.section_line("optimize"), "optimize.budget", "missing required field"))?
                .0;
            let horizon = d.f64("optimize", "horizon_s")?.map(|v| v.0);
            let w_displacement = d.f64("optimize", "w_displacement")?.map_or(1.0, |v| v.0);
            let w_effort = d.f64("optimize", "w_effort")?.map_or(0.01, |v| v.0);
            let mut ranges = [None; 5];
            for (key, idx) in GAIT_ANGLES {
                if let Some((v, l)) = d.list("optimize", &format!("{key}_range"), 2)? {
                    let (lo, hi) = if idx == 2 {
                        (v[0], v[1])
                    } else {
                        (v[0].to_radians(), v[1].to_radians())
                    };
                    if lo > hi {
                        return Err(config_err(
                            l,
                            format!("optimize.{key}_range"),
                            "lower bound exceeds upper bound",
                        ));
                    }
                    ranges[idx] = Some((lo, hi));
                }
            }
            Some(OptimizeSpec {
                budget,
                horizon,
                w_displacement,
                w_effort,
                ranges,
            })
        } else {
            None
        };

        d.reject_unused()?;
        let cfg = Self {
            id,
            model,
            gravity,
            terrain,
            contact_preset,
            contact,
            gait,
            duration,
            dt,
            seed,
            perturbation,
            start,
            latched,
            heading,
            lean,
            roll_speed,
            stop_distance,
            adaptive,
            substeps,
            gains,
            outputs: OutputSpec {
                trace,
                metrics,
                plot_dir,
                patch_area,
                bearing_limit,
            },
            optimize,
            lines,
        };
        cfg.check()?;
        Ok(cfg)
    }

    /// Turn a validation error into a config error pointing at the key.
    fn locate(&self, e: Error) -> Error {
        match e {
            Error::Validation { field, reason } => {
                let line = self.lines.get(&field).copied().unwrap_or(0);
                config_err(line, field, reason)
            }
            other => other,
        }
    }

    fn check(&self) -> Result<()> {
        let model = self.robot_model()?;
        self.contact.validate().map_err(|e| self.locate(e))?;
        self.gait.validate().map_err(|e| self.locate(e))?;
        GaitPlan::new(&model, &self.gait).map_err(|e| self.locate(e))?;
        self.terrain().map_err(|e| self.locate(e))?;
        if !(self.dt > 0.0) {
            return Err(self.locate(Error::validation("dt", "must be positive")));
        }
        if !(self.duration >= self.dt) {
            return Err(self.locate(Error::validation("duration", "must be at least dt")));
        }
        if self.perturbation < 0.0 {
            return Err(self.locate(Error::validation("perturbation", "must be non-negative")));
        }
        Ok(())
    }

    pub fn robot_model(&self) -> Result<RobotModel> {
        build_cobra_model(Some(&self.model)).map_err(|e| self.locate(e))
    }

    pub fn terrain(&self) -> Result<Terrain> {
        match &self.terrain {
            TerrainSpec::Flat { z0 } => Ok(Terrain::FlatPlane { z0: *z0 }),
            TerrainSpec::Incline { slope, downhill } => Terrain::incline(*slope, *downhill),
            TerrainSpec::Heightmap { path } => Ok(Terrain::Heightmap(Heightmap::load(path)?)),
        }
    }

    /// Short terrain label for reports.
    pub fn terrain_label(&self) -> String {
        match &self.terrain {
            TerrainSpec::Flat { .. } => "flat".to_string(),
            TerrainSpec::Incline { slope, .. } => format!("incline_{}deg", fmt_num(slope.to_degrees())),
            TerrainSpec::Heightmap { path } => format!(
                "heightmap:{}",
                path.file_name()
                    .map_or_else(String::new, |n| n.to_string_lossy().into_owned())
            ),
        }
    }

    pub fn initial_state(&self, model: &RobotModel, terrain: &Terrain) -> Result<GeneralizedState> {
        let (joints, placement) = match self.start {
            StartPosture::Gait => (
                GaitPlan::new(model, &self.gait)?.targets(model, 0.0, false),
                Placement {
                    heading: self.heading,
                    lean: self.lean,
                    ..Placement::default()
                },
            ),
            StartPosture::Upright => {
                let (joints, settle) = match self.gait.family {
                    GaitFamily::SpiralTransform => (spiral_configuration(model, self.gait.helix_pitch)?, true),
                    _ if self.latched => (hexring_configuration(model), false),
                    _ => (
                        GaitPlan::new(model, &self.gait)?.targets(model, f64::INFINITY, false),
                        false,
                    ),
                };
                (
                    joints,
                    Placement {
                        heading: self.heading,
                        upright_ring: true,
                        settle,
                        lean: self.lean,
                    },
                )
            }
        };
        let state = place_on_terrain(model, &joints, terrain, placement)?;
        if self.roll_speed == 0.0 {
            return Ok(state);
        }
        // Rigid roll about the lowest point, CoM moving downhill.
        let up = terrain.up();
        let c = ChainKinematics::new(model, &state).center_of_mass();
        let lowest = contact_candidates_toward(model, &state, &-up)
            .iter()
            .map(|k| k.world.dot(&up))
            .fold(f64::INFINITY, f64::min);
        let h = c.dot(&up) - lowest;
        let axis = up.cross(&terrain.downhill_direction());
        with_rigid_spin(&state, &(axis * (self.roll_speed / h)), &(c - up * h))
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let model = self.robot_model()?;
        let terrain = self.terrain()?;
        let state = self.initial_state(&model, &terrain)?;
        let mut cfg = SimConfig::new(model, terrain, self.gait, state);
        cfg.contact = self.contact;
        cfg.gravity = self.gravity;
        cfg.latched = self.latched;
        cfg.dt = self.dt;
        cfg.duration = self.duration;
        cfg.gains = self.gains;
        cfg.stop_distance = self.stop_distance;
        cfg.seed = self.seed;
        cfg.perturbation = self.perturbation;
        cfg.step_control = self.adaptive.then(StepControl::default);
        if let Some(n) = self.substeps {
            cfg.substeps = n;
        }
        cfg.validate().map_err(|e| self.locate(e))?;
        Ok(cfg)
    }

    /// Shooting setup for `[optimize]`: every rollout starts from the
    /// straight chain.
    pub fn shooting_setup(&self) -> Result<ShootingSetup> {
        let spec = self.optimize_spec()?;
        let mut s = ShootingSetup::new(
            self.robot_model()?,
            self.terrain()?,
            spec.horizon.unwrap_or(self.duration),
        )?;
        s.contact = self.contact;
        s.gravity = self.gravity;
        s.dt = self.dt;
        s.step_control = self.adaptive.then(StepControl::default);
        s.w_displacement = spec.w_displacement;
        s.w_effort = spec.w_effort;
        Ok(s)
    }

    pub fn optimize_spec(&self) -> Result<&OptimizeSpec> {
        self.optimize
            .as_ref()
            .ok_or_else(|| config_err(0, "optimize", "an [optimize] section with a budget is required"))
    }

    /// Search box: configured ranges, other parameters pinned to the gait.
    pub fn param_box(&self) -> Result<ParamBox> {
        let spec = self.optimize_spec()?;
        let p = params_of(&self.gait);
        let mut b = ParamBox::point(p);
        for (i, r) in spec.ranges.iter().enumerate() {
            if let Some((lo, hi)) = r {
                b.lo[i] = *lo;
                b.hi[i] = *hi;
            }
        }
        Ok(b)
    }
}

/// Shortest decimal form, integers without a fraction.
pub fn fmt_num(x: f64) -> String {
    let r = (x * 1e6).round() / 1e6;
    if r.fract() == 0.0 {
        format!("{r:.0}")
    } else {
        format!("{r}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig> {
        ScenarioConfig::parse(text, "t", Path::new("."))
    }

    #[test]
    fn minimal_file_uses_defaults() {
        let c = parse("[gait]\nfamily = sidewinding\npreset = gait1\n").unwrap();
        assert_eq!(c.id, "t");
        assert_eq!(c.gait, GaitSpec::gait1(0.5));
        assert_eq!(c.terrain, TerrainSpec::Flat { z0: 0.0 });
        assert_eq!(c.duration, 10.0);
        assert!(c.optimize.is_none());
        c.sim_config().unwrap();
    }

    #[test]
    fn missing_family_names_the_field() {
        let e = parse("[sim]\nduration_s = 2\n[gait]\namp_h_deg = 30\n").unwrap_err();
        assert_eq!(
            e,
            Error::Config {
                line: 3,
                field: "gait.family".into(),
                message: "missing required field".into()
            }
        );
        assert!(e.to_string().contains("gait.family"));
    }

    #[test]
    fn diagnostics_point_at_the_line() {
        let bad_number = parse("[gait]\nfamily = sidewinding\nfrequency_hz = fast\n").unwrap_err();
        assert!(matches!(bad_number, Error::Config { line: 3, .. }), "{bad_number}");
        let unknown = parse("[gait]\nfamily = sidewinding\n\n[sim]\nwibble = 1\n").unwrap_err();
        assert!(matches!(unknown, Error::Config { line: 5, ref field, .. } if field == "sim.wibble"));
        let range = parse("[gait]\nfamily = sidewinding\namp_h_deg = 95\n").unwrap_err();
        assert!(
            matches!(range, Error::Config { line: 3, ref field, .. } if field == "amp_h"),
            "{range}"
        );
        let section = parse("[gaits]\n").unwrap_err();
        assert!(matches!(section, Error::Config { line: 1, .. }));
        let twice = parse("[gait]\nfamily = sidewinding\nfamily = sidewinding\n").unwrap_err();
        assert!(matches!(twice, Error::Config { line: 3, .. }));
    }

    #[test]
    fn full_file_round_trips_values() {
        let text = "
# hex ring on a slope
[model]
gravity = lunar
[terrain]
type = incline
slope_deg = 10
downhill = 0, 2
contact = compliant
mu_s = 0.6
[gait]
family = hexring_transform
latch_offset_deg = 3.5
transform_duration_s = 0
[sim]
id = ring
duration_s = 2.5
start = upright
seed = 7
[outputs]
trace = out/ring.csv
[optimize]
budget = 12
amp_h_deg_range = 10, 20
";
        let c = parse(text).unwrap();
        assert_eq!(c.id, "ring");
        assert_eq!(c.gravity, LUNAR_GRAVITY);
        assert_eq!(c.terrain_label(), "incline_10deg");
        match &c.terrain {
            TerrainSpec::Incline { downhill, .. } => assert_eq!(*downhill, Vector2::y()),
            other => panic!("{other:?}"),
        }
        assert_eq!(c.contact.mu_s, 0.6);
        assert_eq!(c.contact.k_n, ContactParams::compliant().k_n);
        assert!(c.latched);
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.outputs.trace, Some(PathBuf::from("out/ring.csv")));
        let b = c.param_box().unwrap();
        assert!((b.lo[0] - 10f64.to_radians()).abs() < 1e-15);
        assert_eq!(b.lo[2], b.hi[2]);
        assert_eq!(c.optimize.as_ref().unwrap().budget, 12);
    }

    #[test]
    fn upright_start_needs_a_ring() {
        let e = parse("[gait]\nfamily = sidewinding\n[sim]\nstart = upright\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 4, .. }), "{e}");
    }

    #[test]
    fn missing_heightmap_file_is_reported() {
        let e =
            parse("[terrain]\ntype = heightmap\nheightmap = nowhere.asc\n[gait]\nfamily = sidewinding\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }), "{e}");
    }
}
