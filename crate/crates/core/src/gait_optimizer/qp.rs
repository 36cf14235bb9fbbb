//! Dense convex QP by a primal-dual interior-point method (Mehrotra
//! predictor-corrector):
//!
//! minimize ½ xᵀ H x + cᵀ x  subject to  A x = b,  C x ≤ d.
//!
//! Equality rows may be linearly dependent; they are reduced to an
//! orthonormal row basis first. Infeasible problems are diagnosed with an
//! elastic phase-1 that reports per-row violations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Qp {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub d: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct QpSettings {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative rank cutoff for dependent equality rows.
    pub rank_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            rank_tol: 1e-10,
        }
    }
}

/// Per-row constraint violations of the closest point found by phase 1.
#[derive(Clone, Debug)]
pub struct Violations {
    pub eq: DVector<f64>,
    pub ineq: DVector<f64>,
}

impl Violations {
    pub fn max(&self) -> f64 {
        self.eq.amax().max(self.ineq.iter().fold(0.0, |m: f64, v| m.max(*v)))
    }
}

pub enum QpOutcome {
    Solved(QpSolution),
    /// Phase 1 could not close the constraints; carries the violations.
    Infeasible(Violations),
}

impl Qp {
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.c.dot(x)
    }
}

/// Orthonormal row basis of `[A | b]`'s row space restricted to A, with the
/// inconsistency of the dropped directions.
fn reduce_equalities(a: &DMatrix<f64>, b: &DVector<f64>, rank_tol: f64) -> (DMatrix<f64>, DVector<f64>, f64) {
    if a.nrows() == 0 {
        return (a.clone(), b.clone(), 0.0);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u");
    let vt = svd.v_t.as_ref().expect("v_t");
    let smax = svd.singular_values.amax();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|i| svd.singular_values[*i] > rank_tol * smax.max(1e-300))
        .collect();
    let n = a.ncols();
    let mut ar = DMatrix::zeros(keep.len(), n);
    let mut br = DVector::zeros(keep.len());
    for (r, &i) in keep.iter().enumerate() {
        let s = svd.singular_values[i];
        ar.row_mut(r).copy_from(&(vt.row(i) * s));
        br[r] = u.column(i).dot(b);
    }
    // Part of b outside the range of A.
    let mut proj = DVector::zeros(b.len());
    for &i in &keep {
        proj += u.column(i) * u.column(i).dot(b);
    }
    let inconsistency = (b - proj).amax();
    (ar, br, inconsistency)
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

/// Interior-point solve; equality rows must be independent.
fn ipm(qp: &Qp, settings: &QpSettings) -> Result<QpSolution> {
    let n = qp.n();
    let me = qp.a.nrows();
    let mi = qp.g.nrows();
    let scale = 1.0 + qp.c.amax().max(qp.b.amax()).max(qp.d.amax()).max(qp.h.amax());
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(me);
    let mut s = (&qp.d - &qp.g * &x).map(|v| v.max(1.0));
    let mut z = DVector::from_element(mi, 1.0);
    let reg = 1e-12 * scale;
    for iter in 0..settings.max_iter {
        let r_d = &qp.h * &x + &qp.c + qp.a.transpose() * &y + qp.g.transpose() * &z;
        let r_p = &qp.a * &x - &qp.b;
        let r_c = &qp.g * &x + &s - &qp.d;
        let mu = if mi > 0 { s.dot(&z) / mi as f64 } else { 0.0 };
        let res = r_d.amax().max(r_p.amax()).max(r_c.amax());
        if res < settings.tol * scale && mu < settings.tol * scale {
            return Ok(QpSolution {
                objective: qp.objective(&x),
                x,
                iterations: iter,
            });
        }
        let w = z.component_div(&s);
        let mut k = DMatrix::zeros(n + me, n + me);
        let hw = &qp.h + qp.g.transpose() * DMatrix::from_diagonal(&w) * &qp.g;
        k.view_mut((0, 0), (n, n)).copy_from(&hw);
        for i in 0..n {
            k[(i, i)] += reg;
        }
        k.view_mut((n, 0), (me, n)).copy_from(&qp.a);
        k.view_mut((0, n), (n, me)).copy_from(&qp.a.transpose());
        for i in 0..me {
            k[(n + i, n + i)] -= reg;
        }
        let lu = k.lu();
        let solve = |r_sz: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let tmp = (r_sz + z.component_mul(&r_c)).component_div(&s);
            let mut rhs = DVector::zeros(n + me);
            rhs.rows_mut(0, n).copy_from(&(-&r_d - qp.g.transpose() * tmp));
            rhs.rows_mut(n, me).copy_from(&(-&r_p));
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, me).into_owned();
            let ds = -&r_c - &qp.g * &dx;
            let dz = (r_sz - z.component_mul(&ds)).component_div(&s);
            Some((dx, dy, ds, dz))
        };
        let singular = || Error::NoConvergence {
            iterations: iter,
            residual: res,
        };
        // Predictor.
        let r_aff = -s.component_mul(&z);
        let (_, _, ds_a, dz_a) = solve(&r_aff).ok_or_else(singular)?;
        let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = if mi > 0 {
            (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3) } else { 0.0 };
        // Corrector.
        let r_sz = -s.component_mul(&z) - ds_a.component_mul(&dz_a) + DVector::from_element(mi, sigma * mu);
        let (dx, dy, ds, dz) = solve(&r_sz).ok_or_else(singular)?;
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0);
        x += &dx * alpha;
        y += &dy * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(singular());
        }
    }
    let r_p = (&qp.a * &x - &qp.b).amax();
    Err(Error::NoConvergence {
        iterations: settings.max_iter,
        residual: r_p,
    })
}

/// Elastic phase 1: minimize the weighted total violation of all rows.
fn phase_one(qp: &Qp, settings: &QpSettings, weights: Option<(&DVector<f64>, &DVector<f64>)>) -> Result<Violations> {
    let n = qp.n();
    let me = qp.a.nrows();
    let mi = qp.g.nrows();
    // Variables: x, p (eq +), q (eq −), t (ineq); all slacks ≥ 0.
    let nv = n + 2 * me + mi;
    let mut h = DMatrix::zeros(nv, nv);
    for i in 0..n {
        h[(i, i)] = 1e-8;
    }
    let mut c = DVector::zeros(nv);
    c.rows_mut(n, 2 * me + mi).fill(1.0);
    if let Some((we, wi)) = weights {
        c.rows_mut(n, me).copy_from(we);
        c.rows_mut(n + me, me).copy_from(we);
        c.rows_mut(n + 2 * me, mi).copy_from(wi);
    }
    let mut a = DMatrix::zeros(me, nv);
    a.view_mut((0, 0), (me, n)).copy_from(&qp.a);
    for i in 0..me {
        a[(i, n + i)] = 1.0;
        a[(i, n + me + i)] = -1.0;
    }
    let mut g = DMatrix::zeros(mi + 2 * me + mi, nv);
    g.view_mut((0, 0), (mi, n)).copy_from(&qp.g);
    for i in 0..mi {
        g[(i, n + 2 * me + i)] = -1.0;
    }
    for i in 0..2 * me + mi {
        g[(mi + i, n + i)] = -1.0;
    }
    let mut d = DVector::zeros(mi + 2 * me + mi);
    d.rows_mut(0, mi).copy_from(&qp.d);
    let elastic = Qp {
        h,
        c,
        a,
        b: qp.b.clone(),
        g,
        d,
    };
    let sol = ipm(&elastic, settings)?;
    let x = sol.x.rows(0, n).into_owned();
    let eq = (&qp.a * &x - &qp.b).abs();
    let ineq = (&qp.g * &x - &qp.d).map(|v| v.max(0.0));
    Ok(Violations { eq, ineq })
}

/// Solve with infeasibility diagnosis. Violations below `feas_tol` count as
/// feasible. `weights` (equality, inequality) price the rows in phase 1, so
/// the rows that give way are the cheap ones.
pub fn solve_qp(
    qp: &Qp,
    settings: &QpSettings,
    feas_tol: f64,
    weights: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<QpOutcome> {
    let viol = phase_one(qp, settings, weights)?;
    if viol.max() > feas_tol {
        return Ok(QpOutcome::Infeasible(viol));
    }
    let (ar, br, inconsistency) = reduce_equalities(&qp.a, &qp.b, settings.rank_tol);
    if inconsistency > feas_tol {
        return Ok(QpOutcome::Infeasible(viol));
    }
    let reduced = Qp {
        a: ar,
        b: br,
        ..qp.clone()
    };
    Ok(QpOutcome::Solved(ipm(&reduced, settings)?))
}
