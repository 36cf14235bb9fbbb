//! Terrain, gap functions and the compliant ground-reaction model.

use std::path::Path;

use nalgebra::{DMatrix, RowDVector, Vector2};

use crate::dynamics::{factor_mass, ChainKinematics, PointForce};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::robot_model::{candidate_axis_points, RobotModel, CANDIDATES_PER_LINK};
use crate::state::GeneralizedState;

pub const MAX_SLOPE: f64 = std::f64::consts::FRAC_PI_3;

/// Regular grid of heights with bilinear interpolation. Row 0 is the
/// southern edge (`y = y0`); column 0 the western edge (`x = x0`).
#[derive(Clone, Debug, PartialEq)]
pub struct Heightmap {
    pub ncols: usize,
    pub nrows: usize,
    pub x0: f64,
    pub y0: f64,
    pub cellsize: f64,
    /// Row-major heights; `None` marks a nodata cell.
    pub heights: Vec<Option<f64>>,
}

impl Heightmap {
    pub fn new(ncols: usize, nrows: usize, x0: f64, y0: f64, cellsize: f64, heights: Vec<Option<f64>>) -> Result<Self> {
        if ncols < 2 || nrows < 2 {
            return Err(Error::validation("heightmap", "grid must be at least 2 x 2"));
        }
        if !(cellsize > 0.0 && cellsize.is_finite()) {
            return Err(Error::validation("cellsize", "must be positive"));
        }
        if heights.len() != ncols * nrows {
            return Err(Error::validation(
                "heightmap",
                format!("expected {} heights, got {}", ncols * nrows, heights.len()),
            ));
        }
        if heights.iter().flatten().any(|h| !h.is_finite()) {
            return Err(Error::validation("heightmap", "heights must be finite"));
        }
        Ok(Self {
            ncols,
            nrows,
            x0,
            y0,
            cellsize,
            heights,
        })
    }

    /// Parse the ASCII grid format: six header lines (`ncols`, `nrows`,
    /// `xllcorner`, `yllcorner`, `cellsize`, `nodata_value`) followed by
    /// heights, first row northernmost.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tokens = text.split_whitespace();
        let mut header = |name: &str| -> Result<f64> {
            let key = tokens
                .next()
                .ok_or_else(|| Error::validation("heightmap", format!("missing header `{name}`")))?;
            if !key.eq_ignore_ascii_case(name) {
                return Err(Error::validation(
                    "heightmap",
                    format!("expected `{name}`, found `{key}`"),
                ));
            }
            tokens
                .next()
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| Error::validation("heightmap", format!("bad value for `{name}`")))
        };
        let ncols = header("ncols")?;
        let nrows = header("nrows")?;
        let x0 = header("xllcorner")?;
        let y0 = header("yllcorner")?;
        let cellsize = header("cellsize")?;
        let nodata = header("nodata_value")?;
        if ncols.fract() != 0.0 || nrows.fract() != 0.0 || ncols < 0.0 || nrows < 0.0 {
            return Err(Error::validation("heightmap", "ncols and nrows must be integers"));
        }
        let (ncols, nrows) = (ncols as usize, nrows as usize);
        let values: Vec<f64> = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::validation("heightmap", format!("bad height `{t}`")))
            })
            .collect::<Result<_>>()?;
        if values.len() != ncols * nrows {
            return Err(Error::validation(
                "heightmap",
                format!("expected {} heights, got {}", ncols * nrows, values.len()),
            ));
        }
        let mut heights = vec![None; ncols * nrows];
        for (file_row, chunk) in values.chunks(ncols).enumerate() {
            let row = nrows - 1 - file_row;
            for (c, v) in chunk.iter().enumerate() {
                heights[row * ncols + c] = (*v != nodata).then_some(*v);
            }
        }
        Self::new(ncols, nrows, x0, y0, cellsize, heights)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Height and gradient at `(x, y)`, plus the mixed second derivative of
    /// the bilinear patch.
    pub fn sample(&self, x: f64, y: f64) -> Result<(f64, f64, f64, f64)> {
        let out = || Error::OutOfBounds { x, y };
        let fx = (x - self.x0) / self.cellsize;
        let fy = (y - self.y0) / self.cellsize;
        if !(fx >= 0.0 && fy >= 0.0 && fx <= (self.ncols - 1) as f64 && fy <= (self.nrows - 1) as f64) {
            return Err(out());
        }
        let i = (fx.floor() as usize).min(self.ncols - 2);
        let j = (fy.floor() as usize).min(self.nrows - 2);
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let at = |c: usize, r: usize| self.heights[r * self.ncols + c].ok_or_else(out);
        let (h00, h10, h01, h11) = (at(i, j)?, at(i + 1, j)?, at(i, j + 1)?, at(i + 1, j + 1)?);
        let h = h00 * (1.0 - tx) * (1.0 - ty) + h10 * tx * (1.0 - ty) + h01 * (1.0 - tx) * ty + h11 * tx * ty;
        let hx = ((h10 - h00) * (1.0 - ty) + (h11 - h01) * ty) / self.cellsize;
        let hy = ((h01 - h00) * (1.0 - tx) + (h11 - h10) * tx) / self.cellsize;
        let hxy = (h11 - h10 - h01 + h00) / (self.cellsize * self.cellsize);
        Ok((h, hx, hy, hxy))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Terrain {
    FlatPlane {
        z0: f64,
    },
    /// Plane through the origin descending along `downhill`.
    InclinedPlane {
        slope: f64,
        downhill: Vector2<f64>,
    },
    Heightmap(Heightmap),
}

impl Terrain {
    pub fn flat() -> Self {
        Terrain::FlatPlane { z0: 0.0 }
    }

    pub fn incline(slope: f64, downhill: Vector2<f64>) -> Result<Self> {
        let t = Terrain::InclinedPlane {
            slope,
            downhill: downhill.normalize(),
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Terrain::FlatPlane { z0 } if !z0.is_finite() => Err(Error::validation("z0", "must be finite")),
            Terrain::InclinedPlane { slope, downhill } => {
                if !(0.0..=MAX_SLOPE).contains(slope) {
                    return Err(Error::validation("slope", "must lie in [0, 60] degrees"));
                }
                if (downhill.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::validation("downhill", "must be a unit vector"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Unit vector pointing down the slope along the surface (flat: +x).
    pub fn downhill_direction(&self) -> Vec3 {
        match self {
            Terrain::InclinedPlane { slope, downhill } => {
                let (s, c) = slope.sin_cos();
                Vec3::new(downhill.x * c, downhill.y * c, -s)
            }
            _ => Vec3::x(),
        }
    }

    /// Surface normal used to define "up" for the robot (planes only; the
    /// heightmap reports vertical).
    pub fn up(&self) -> Vec3 {
        match self {
            Terrain::InclinedPlane { slope, downhill } => {
                let (s, c) = slope.sin_cos();
                Vec3::new(downhill.x * s, downhill.y * s, c)
            }
            _ => Vec3::z(),
        }
    }
}

/// Gap function value and its first and second time derivatives' pieces:
/// `ġ = W u + ζ`, `g̈ = W u̇ + ζ̂`.
#[derive(Clone, Debug, PartialEq)]
pub struct GapResult {
    pub g: f64,
    pub n: Vec3,
    pub w_row: RowDVector<f64>,
    pub zeta: f64,
    pub zeta_hat: f64,
}

/// Unnormalized gap gradient `∂g/∂p` and its rate of change along `v`.
struct GapGeometry {
    g: f64,
    n: Vec3,
    grad: Vec3,
    /// `(d/dt ∂g/∂p) · v` for a point moving with velocity `v`.
    curvature: Box<dyn Fn(&Vec3) -> f64>,
}

fn gap_geometry(terrain: &Terrain, point: &Vec3, radius: f64) -> Result<GapGeometry> {
    if !point.iter().all(|v| v.is_finite()) {
        return Err(Error::validation("point", "must be finite"));
    }
    Ok(match terrain {
        Terrain::FlatPlane { z0 } => GapGeometry {
            g: point.z - z0 - radius,
            n: Vec3::z(),
            grad: Vec3::z(),
            curvature: Box::new(|_| 0.0),
        },
        Terrain::InclinedPlane { .. } => {
            let n = terrain.up();
            GapGeometry {
                g: n.dot(point) - radius,
                n,
                grad: n,
                curvature: Box::new(|_| 0.0),
            }
        }
        Terrain::Heightmap(hm) => {
            let (h, hx, hy, hxy) = hm.sample(point.x, point.y)?;
            let grad = Vec3::new(-hx, -hy, 1.0);
            GapGeometry {
                g: point.z - h - radius,
                n: grad.normalize(),
                grad,
                curvature: Box::new(move |v: &Vec3| -2.0 * hxy * v.x * v.y),
            }
        }
    })
}

/// Gap of a sphere of `radius` centred at `point` (vertical gap for
/// heightmaps, normal distance for planes).
pub fn gap(terrain: &Terrain, point: &Vec3, radius: f64) -> Result<GapResult> {
    let geo = gap_geometry(terrain, point, radius)?;
    Ok(GapResult {
        g: geo.g,
        n: geo.n,
        w_row: RowDVector::zeros(0),
        zeta: 0.0,
        zeta_hat: 0.0,
    })
}

pub(crate) fn gap_rates_from(
    kin: &ChainKinematics,
    terrain: &Terrain,
    link: usize,
    point: &Vec3,
    radius: f64,
) -> Result<GapResult> {
    let geo = gap_geometry(terrain, point, radius)?;
    let j = kin.point_jacobian(link, point);
    let v = kin.point_velocity(link, point);
    let a_bias = kin.point_bias_acceleration(link, point);
    Ok(GapResult {
        g: geo.g,
        n: geo.n,
        w_row: geo.grad.transpose() * j,
        // Static terrain: no explicit time dependence.
        zeta: 0.0,
        zeta_hat: geo.grad.dot(&a_bias) + (geo.curvature)(&v),
    })
}

/// Gap with its velocity-level row `W` and acceleration residual `ζ̂` for a
/// sphere of `radius` centred at `point`, rigidly attached to `link`.
pub fn gap_rates(
    model: &RobotModel,
    state: &GeneralizedState,
    link: usize,
    point: &Vec3,
    radius: f64,
    terrain: &Terrain,
) -> Result<GapResult> {
    if link >= model.n_links() {
        return Err(Error::validation("link", format!("no link {link}")));
    }
    let kin = ChainKinematics::new(model, state);
    gap_rates_from(&kin, terrain, link, point, radius)
}

/// Delassus operator `G = J M⁻¹ Jᵀ`.
pub fn delassus(j: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = factor_mass(m)?;
    let g = j * chol.solve(&j.transpose());
    Ok((&g + g.transpose()) * 0.5)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactParams {
    pub k_n: f64,
    pub d_n: f64,
    pub transition_width: f64,
    pub mu_s: f64,
    pub mu_k: f64,
    pub v_crit: f64,
}

impl ContactParams {
    pub fn stiff() -> Self {
        Self {
            k_n: 1e4,
            d_n: 1e3,
            transition_width: 1e-3,
            mu_s: 0.7,
            mu_k: 0.5,
            v_crit: 1e-3,
        }
    }

    pub fn compliant() -> Self {
        Self {
            k_n: 1e3,
            d_n: 1e4,
            transition_width: 0.3,
            ..Self::stiff()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("k_n", self.k_n),
            ("d_n", self.d_n),
            ("transition_width", self.transition_width),
            ("mu_s", self.mu_s),
            ("mu_k", self.mu_k),
            ("v_crit", self.v_crit),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::validation(name, "must be positive"));
            }
        }
        if self.mu_k > self.mu_s {
            return Err(Error::validation("mu_k", "must not exceed mu_s"));
        }
        Ok(())
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Compliant normal force `s(δ/w)(k δ − d ġ)`, clamped at zero.
pub fn normal_force(g: f64, g_dot: f64, params: &ContactParams) -> f64 {
    let delta = (-g).max(0.0);
    if delta == 0.0 {
        return 0.0;
    }
    let s = smoothstep(delta / params.transition_width);
    (s * (params.k_n * delta - params.d_n * g_dot)).max(0.0)
}

/// Friction coefficient as a function of slip speed.
pub fn friction_coefficient(speed: f64, params: &ContactParams) -> f64 {
    let r = speed / params.v_crit;
    if r < 1.0 {
        params.mu_s * r * (2.0 - r)
    } else {
        params.mu_k + (params.mu_s - params.mu_k) * (-(r - 1.0).powi(2) * std::f64::consts::LN_2 * 2.0).exp()
    }
}

pub fn friction_force(v_t: &Vector2<f64>, f_n: f64, params: &ContactParams) -> Vector2<f64> {
    let speed = v_t.norm();
    if speed == 0.0 || f_n <= 0.0 {
        return Vector2::zeros();
    }
    -v_t / speed * f_n * friction_coefficient(speed, params)
}

/// Orthonormal tangent basis of a contact normal.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let seed = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let t1 = (seed - n * n.dot(&seed)).normalize();
    (t1, n.cross(&t1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactForce {
    /// `link * 3 + point` with point 0/1/2 = proximal end, middle, distal end.
    pub candidate: usize,
    pub link: usize,
    /// Application point on the capsule surface.
    pub point: Vec3,
    pub gap: f64,
    pub normal: Vec3,
    pub f_n: f64,
    pub f_t: Vector2<f64>,
    pub world_force: Vec3,
    pub slip_velocity: Vec3,
}

pub type ContactSet = Vec<ContactForce>;

pub fn point_forces(contacts: &[ContactForce]) -> Vec<PointForce> {
    contacts
        .iter()
        .map(|c| PointForce {
            link: c.link,
            point: c.point,
            force: c.world_force,
        })
        .collect()
}

fn resolve_one(
    kin: &ChainKinematics,
    terrain: &Terrain,
    params: &ContactParams,
    link: usize,
    point: usize,
    axis_offset: &Vec3,
    radius: f64,
) -> Result<Option<ContactForce>> {
    let centre = kin.poses[link].transform_point(axis_offset);
    let geo = gap_geometry(terrain, &centre, radius)?;
    if geo.g >= params.transition_width {
        return Ok(None);
    }
    let n = geo.n;
    let surface = centre - n * radius;
    let v = kin.point_velocity(link, &surface);
    let g_dot = geo.grad.dot(&kin.point_velocity(link, &centre));
    let f_n = normal_force(geo.g, g_dot, params);
    let (t1, t2) = tangent_basis(&n);
    let v_t = Vector2::new(v.dot(&t1), v.dot(&t2));
    let f_t = friction_force(&v_t, f_n, params);
    Ok(Some(ContactForce {
        candidate: link * CANDIDATES_PER_LINK + point,
        link,
        point: surface,
        gap: geo.g,
        normal: n,
        f_n,
        f_t,
        world_force: n * f_n + t1 * f_t.x + t2 * f_t.y,
        slip_velocity: t1 * v_t.x + t2 * v_t.y,
    }))
}

/// Penalty contacts for precomputed kinematics, in (link, point) order.
pub fn resolve_kinematics(
    model: &RobotModel,
    kin: &ChainKinematics,
    terrain: &Terrain,
    params: &ContactParams,
) -> Result<ContactSet> {
    let mut out = Vec::new();
    for (link, lp) in model.links.iter().enumerate() {
        for (i, axis) in candidate_axis_points(lp).iter().enumerate() {
            if let Some(c) = resolve_one(kin, terrain, params, link, i, axis, lp.radius)? {
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Ground reaction at every candidate within the activation margin, in
/// (link, point) order.
pub fn resolve_penalty_contacts(
    model: &RobotModel,
    state: &GeneralizedState,
    terrain: &Terrain,
    params: &ContactParams,
) -> Result<ContactSet> {
    state.check()?;
    let kin = ChainKinematics::new(model, state);
    resolve_kinematics(model, &kin, terrain, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot_model::build_cobra_model;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn bump() -> Heightmap {
        Heightmap::new(2, 2, 0.0, 0.0, 1.0, vec![Some(0.0), Some(0.0), Some(0.2), Some(0.2)]).unwrap()
    }

    #[test]
    fn gap_examples() {
        let r = gap(&Terrain::flat(), &Vec3::new(0.0, 0.0, 0.05), 0.05).unwrap();
        assert_eq!(r.g, 0.0);
        assert_eq!(r.n, Vec3::z());

        let t = Terrain::incline(24f64.to_radians(), Vector2::x()).unwrap();
        let surface = t.downhill_direction() * 3.0;
        let p = surface + t.up() * 0.1;
        assert_relative_eq!(gap(&t, &p, 0.05).unwrap().g, 0.05, epsilon = 1e-12);

        let hm = Terrain::Heightmap(bump());
        let g = gap(&hm, &Vec3::new(0.5, 0.5, 0.7), 0.0).unwrap();
        assert_relative_eq!(g.g, 0.6, epsilon = 1e-12);
        assert!(matches!(
            gap(&hm, &Vec3::new(1.5, 0.5, 0.0), 0.0),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn parse_ascii_grid() {
        let text = "ncols 3\nnrows 2\nxllcorner 1.0\nyllcorner -1.0\ncellsize 0.5\nNODATA_value -9999\n\
                    1 2 3\n4 5 -9999\n";
        let hm = Heightmap::parse(text).unwrap();
        // Last file row is the southern edge.
        assert_eq!(hm.heights[0], Some(4.0));
        assert_eq!(hm.heights[3], Some(1.0));
        assert_eq!(hm.sample(1.0, -1.0).unwrap().0, 4.0);
        assert_eq!(hm.sample(1.25, -0.5).unwrap().0, 1.5);
        assert!(matches!(hm.sample(1.9, -0.9), Err(Error::OutOfBounds { .. })));
        assert!(Heightmap::parse("ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\nnodata_value 0\n1").is_err());
    }

    #[test]
    fn normal_force_examples() {
        let p = ContactParams::stiff();
        assert_eq!(normal_force(0.01, 0.0, &p), 0.0);
        assert_relative_eq!(normal_force(-0.01, 0.0, &p), 100.0, epsilon = 1e-9);
        assert_eq!(normal_force(-1e-4, 10.0, &p), 0.0);
    }

    #[test]
    fn friction_examples() {
        let p = ContactParams::stiff();
        assert_eq!(friction_force(&Vector2::zeros(), 100.0, &p), Vector2::zeros());
        let f = friction_force(&Vector2::new(0.0, 10.0 * p.v_crit), 100.0, &p);
        assert!(f.norm() >= 0.95 * 50.0 && f.norm() <= 1.05 * 50.0);
        assert!(f.y < 0.0);
        assert_eq!(friction_force(&Vector2::new(1.0, 0.0), 0.0, &p), Vector2::zeros());
        assert_relative_eq!(friction_coefficient(p.v_crit, &p), 0.7, epsilon = 1e-12);
    }

    #[test]
    fn continuity_across_transitions() {
        // Jumps shrink with the input step, i.e. no discontinuity anywhere in
        // the transition band or around v_crit.
        for p in [ContactParams::stiff(), ContactParams::compliant()] {
            let w = p.transition_width;
            let lipschitz = 3.0 * (p.k_n + p.d_n * 0.01 / w) + p.k_n;
            for step in [1e-9, 1e-12] {
                let mut x = -1.2 * w;
                while x < 0.2 * w {
                    let a = normal_force(x, -0.01, &p);
                    let b = normal_force(x + step, -0.01, &p);
                    assert!((a - b).abs() <= lipschitz * step + 1e-12, "jump at {x}");
                    x += w / 997.0;
                }
                let mut s = 0.0;
                while s < 3.0 * p.v_crit {
                    let a = friction_force(&Vector2::new(s, 0.0), 100.0, &p);
                    let b = friction_force(&Vector2::new(s + step, 0.0), 100.0, &p);
                    assert!(
                        (a - b).norm() <= 2.0 * 0.7 * 100.0 / p.v_crit * step + 1e-12,
                        "jump at {s}"
                    );
                    s += p.v_crit / 101.0;
                }
            }
        }
    }

    #[test]
    fn delassus_examples() {
        let m = DMatrix::from_element(1, 1, 2.0);
        let j = DMatrix::from_element(1, 1, 1.0);
        assert_relative_eq!(delassus(&j, &m).unwrap()[(0, 0)], 0.5);

        // Planar bar (x, z, θ) of mass 2, inertia 0.5, contacts at ±1 along x.
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 2.0, 0.5]));
        let j = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, -1.0, 0.0, 1.0, 1.0]);
        let g = delassus(&j, &m).unwrap();
        assert_relative_eq!(g[(0, 0)], 0.5 + 2.0, epsilon = 1e-12);
        assert_relative_eq!(g[(0, 1)], 0.5 - 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gap_rate_consistency() {
        use rand::{Rng, SeedableRng};
        let model = build_cobra_model(None).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let hm = Heightmap::new(
            2,
            2,
            -10.0,
            -10.0,
            20.0,
            vec![Some(0.0), Some(1.0), Some(2.0), Some(0.5)],
        )
        .unwrap();
        let terrains = [
            Terrain::flat(),
            Terrain::incline(0.3, Vector2::new(0.6, 0.8)).unwrap(),
            Terrain::Heightmap(hm),
        ];
        for terrain in &terrains {
            for _ in 0..30 {
                let mut s = GeneralizedState::zeros(&model);
                for i in 0..model.dof() {
                    s.q[i] = rng.gen_range(-0.8..0.8);
                    s.u[i] = rng.gen_range(-1.0..1.0);
                }
                let link = rng.gen_range(0..12);
                let local = Vec3::new(0.07, 0.0, -0.05);
                let kin = ChainKinematics::new(&model, &s);
                let p = kin.poses[link].transform_point(&local);
                let r = gap_rates_from(&kin, terrain, link, &p, 0.05).unwrap();
                let g_at = |t: f64| {
                    let mut st = s.clone();
                    st.q += &s.u * t;
                    let pp = crate::robot_model::forward_kinematics(&model, &st)[link].transform_point(&local);
                    gap(terrain, &pp, 0.05).unwrap().g
                };
                let h = 1e-6;
                let fd = (g_at(h) - g_at(-h)) / (2.0 * h);
                assert!(((&r.w_row * &s.u)[0] - fd).abs() < 1e-6);
                // Along u̇ = 0, g̈ = ζ̂.
                let fdd = (g_at(1e-4) - 2.0 * g_at(0.0) + g_at(-1e-4)) / 1e-8;
                assert!(
                    (r.zeta_hat - fdd).abs() < 1e-3 * (1.0 + fdd.abs()),
                    "{} vs {fdd}",
                    r.zeta_hat
                );
            }
        }
    }

    #[test]
    fn penalty_set_examples() {
        let model = build_cobra_model(None).unwrap();
        let p = ContactParams::stiff();
        let mut s = GeneralizedState::zeros(&model);
        s.q[2] = 1.0;
        assert!(resolve_penalty_contacts(&model, &s, &Terrain::flat(), &p)
            .unwrap()
            .is_empty());

        // Equilibrium: 36 candidates share the weight, 36 f_N(δ*) = W.
        let weight = 7.2 * 9.81;
        let (mut lo, mut hi) = (0.0, 0.01);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if 36.0 * normal_force(-mid, 0.0, &p) < weight {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let delta = lo;
        s.q[2] = 0.05 - delta;
        let set = resolve_penalty_contacts(&model, &s, &Terrain::flat(), &p).unwrap();
        assert_eq!(set.len(), 36);
        let total: f64 = set.iter().map(|c| c.f_n).sum();
        assert!((total - weight).abs() < 0.01 * weight, "{total} vs {weight}");
    }

    proptest! {
        #[test]
        fn force_law_invariants(g in -0.4f64..0.4, gd in -5.0f64..5.0, vx in -0.1f64..0.1, vy in -0.1f64..0.1,
                                compliant in any::<bool>()) {
            let p = if compliant { ContactParams::compliant() } else { ContactParams::stiff() };
            let f_n = normal_force(g, gd, &p);
            prop_assert!(f_n >= 0.0);
            if g >= 0.0 { prop_assert_eq!(f_n, 0.0); }
            let v = Vector2::new(vx, vy);
            let f_t = friction_force(&v, f_n, &p);
            prop_assert!(f_t.norm() <= p.mu_s * f_n + 1e-9);
            prop_assert!(f_t.dot(&v) <= 0.0);
        }
    }
}
