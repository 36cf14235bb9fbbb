//! Third-order Runge–Kutta (Bogacki–Shampine tableau), fixed-step and with
//! the embedded second-order error estimate.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// One step of `ẋ = f(t, x)`:
/// `k1 = f(t, x)`, `k2 = f(t + h/2, x + h/2 k1)`, `k3 = f(t + 3h/4, x + 3h/4 k2)`,
/// `x⁺ = x + h (2 k1 + 3 k2 + 4 k3) / 9`.
pub fn rk3_step<F>(mut f: F, t: f64, x: &DVector<f64>, h: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f(t, x)?;
    let k2 = f(t + 0.5 * h, &(x + &k1 * (0.5 * h)))?;
    let k3 = f(t + 0.75 * h, &(x + &k2 * (0.75 * h)))?;
    Ok(x + (k1 * 2.0 + k2 * 3.0 + k3 * 4.0) * (h / 9.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepControl {
    pub atol: f64,
    pub rtol: f64,
    pub h_min: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            atol: 1e-7,
            rtol: 1e-6,
            h_min: 1e-9,
        }
    }
}

/// Integrate from `t0` to `t1` with error-controlled substeps. `h` is the
/// initial substep; returns the end state and a suggested next substep.
pub fn rk3_adaptive<F>(
    mut f: F,
    t0: f64,
    t1: f64,
    x: &DVector<f64>,
    h: f64,
    ctl: &StepControl,
) -> Result<(DVector<f64>, f64)>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let mut t = t0;
    let mut x = x.clone();
    let mut h = h.min(t1 - t0);
    let mut suggested = h;
    let mut k1 = f(t, &x)?;
    while t < t1 {
        let last = t + h >= t1 - 1e-15 * t1.abs().max(1.0);
        if last {
            h = t1 - t;
        }
        // A failed stage evaluation rejects the step like an error overrun.
        let trial = (|| {
            let k2 = f(t + 0.5 * h, &(&x + &k1 * (0.5 * h)))?;
            let k3 = f(t + 0.75 * h, &(&x + &k2 * (0.75 * h)))?;
            let x_new = &x + (&k1 * 2.0 + &k2 * 3.0 + &k3 * 4.0) * (h / 9.0);
            let k4 = f(t + h, &x_new)?;
            let err = (&k1 * (-5.0 / 72.0) + &k2 * (1.0 / 12.0) + &k3 * (1.0 / 9.0) + &k4 * (-1.0 / 8.0)) * h;
            Ok::<_, Error>((x_new, k4, err))
        })();
        let (x_new, k4, err) = match trial {
            Ok(v) => v,
            Err(e) if h <= ctl.h_min => return Err(e),
            Err(_) => {
                h = (h * 0.2).max(ctl.h_min);
                continue;
            }
        };
        let ratio = err
            .iter()
            .zip(x.iter().zip(x_new.iter()))
            .map(|(e, (a, b))| {
                let r = e.abs() / (ctl.atol + ctl.rtol * a.abs().max(b.abs()));
                if r.is_nan() {
                    f64::INFINITY
                } else {
                    r
                }
            })
            .fold(0.0, f64::max);
        let factor = if ratio > 0.0 {
            (0.9 * ratio.powf(-1.0 / 3.0)).clamp(0.2, 5.0)
        } else {
            5.0
        };
        if ratio <= 1.0 {
            t = if last { t1 } else { t + h };
            x = x_new;
            k1 = k4;
            // The shortened final step says little about the next one.
            if !last || h >= suggested {
                suggested = h * factor;
            }
            h *= factor;
        } else {
            if h <= ctl.h_min {
                return Err(Error::Singular(format!("step size fell below {:e} s", ctl.h_min)));
            }
            h = (h * factor.min(0.9)).max(ctl.h_min);
        }
    }
    Ok((x, suggested.min(t1 - t0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(h: f64, t_end: f64) -> f64 {
        let mut x = DVector::from_element(1, 1.0);
        let n = (t_end / h).round() as usize;
        for i in 0..n {
            x = rk3_step(|_, x| Ok(-x), i as f64 * h, &x, h).unwrap();
        }
        x[0]
    }

    #[test]
    fn third_order_convergence() {
        let exact = (-1.0f64).exp();
        let e1 = (decay(0.1, 1.0) - exact).abs();
        let e2 = (decay(0.05, 1.0) - exact).abs();
        let ratio = e1 / e2;
        assert!((ratio - 8.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn adaptive_meets_tolerance() {
        let ctl = StepControl::default();
        let x = DVector::from_element(1, 1.0);
        let (y, h) = rk3_adaptive(|_, x| Ok(-x * 50.0), 0.0, 0.1, &x, 1e-2, &ctl).unwrap();
        assert!((y[0] - (-5.0f64).exp()).abs() < 1e-5);
        assert!(h > 0.0 && h <= 0.1);
    }

    #[test]
    fn constant_rhs_is_exact() {
        let x = DVector::from_vec(vec![0.0, 0.0]);
        let y = rk3_step(|_, x| Ok(DVector::from_vec(vec![x[1], -9.81])), 0.0, &x, 1e-3).unwrap();
        assert!((y[1] + 9.81 * 1e-3).abs() < 1e-16);
        assert!((y[0] + 0.5 * 9.81 * 1e-6).abs() < 1e-18);
    }
}
