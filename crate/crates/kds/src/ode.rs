//! Adaptive Dormand–Prince 5(4) for small complex matrix states.

use crate::error::{KdsError, Result};
use nalgebra::SMatrix;
use num_complex::Complex64;

type C64 = Complex64;

#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-12,
            atol: 1e-14,
            max_steps: 2_000_000,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn s(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Integrates y' = f(t, y) from `t0` through the monotone list `stops`,
/// returning the state at each stop. Steps never cross a stop.
pub fn integrate<const R: usize, const C: usize, F>(
    f: F,
    t0: f64,
    y0: SMatrix<C64, R, C>,
    stops: &[f64],
    tol: Tolerances,
) -> Result<Vec<SMatrix<C64, R, C>>>
where
    F: Fn(f64, &SMatrix<C64, R, C>) -> SMatrix<C64, R, C>,
{
    let mut out = Vec::with_capacity(stops.len());
    let Some(&last) = stops.last() else {
        return Ok(out);
    };
    let dir = (last - t0).signum();
    let mut t = t0;
    let mut y = y0;
    let mut h = 1e-3 * (last - t0).abs().max(1e-12);
    let mut k1 = f(t, &y);
    let mut steps = 0usize;
    for &stop in stops {
        while (stop - t) * dir > 0.0 {
            steps += 1;
            if steps > tol.max_steps {
                return Err(KdsError::StiffIntegration(format!(
                    "{} steps without reaching t = {stop}",
                    tol.max_steps
                )));
            }
            let remaining = (stop - t).abs();
            let last_step = h >= remaining;
            let hh = if last_step { remaining } else { h } * dir;
            let k2 = f(t + C2 * hh, &(y + k1 * s(hh * A21)));
            let k3 = f(t + C3 * hh, &(y + k1 * s(hh * A31) + k2 * s(hh * A32)));
            let k4 = f(
                t + C4 * hh,
                &(y + k1 * s(hh * A41) + k2 * s(hh * A42) + k3 * s(hh * A43)),
            );
            let k5 = f(
                t + C5 * hh,
                &(y + k1 * s(hh * A51) + k2 * s(hh * A52) + k3 * s(hh * A53) + k4 * s(hh * A54)),
            );
            let k6 = f(
                t + hh,
                &(y + k1 * s(hh * A61)
                    + k2 * s(hh * A62)
                    + k3 * s(hh * A63)
                    + k4 * s(hh * A64)
                    + k5 * s(hh * A65)),
            );
            let yn = y
                + k1 * s(hh * B1)
                + k3 * s(hh * B3)
                + k4 * s(hh * B4)
                + k5 * s(hh * B5)
                + k6 * s(hh * B6);
            let k7 = f(t + hh, &yn);
            let err = k1 * s(hh * E1)
                + k3 * s(hh * E3)
                + k4 * s(hh * E4)
                + k5 * s(hh * E5)
                + k6 * s(hh * E6)
                + k7 * s(hh * E7);
            let scale = y.camax().max(yn.camax());
            let en = err.camax() / (tol.atol + tol.rtol * scale);
            if !en.is_finite() {
                return Err(KdsError::StiffIntegration(format!(
                    "non-finite state at t = {t}"
                )));
            }
            if en <= 1.0 {
                t = if last_step { stop } else { t + hh };
                y = yn;
                k1 = k7;
            }
            let fac = if en == 0.0 { 5.0 } else { 0.9 * en.powf(-0.2) };
            let hn = hh.abs() * fac.clamp(0.2, 5.0);
            if en <= 1.0 && last_step {
                h = h.max(hn);
            } else {
                h = hn;
            }
            if h < 1e-15 * t.abs().max(1.0) {
                return Err(KdsError::StiffIntegration(format!(
                    "step underflow at t = {t}"
                )));
            }
        }
        out.push(y);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix2;

    #[test]
    fn rotation_is_exact() {
        // y' = i σx y, y(0) = I  →  y(t) = cos t + i σx sin t
        let sx = Matrix2::new(s(0.0), s(1.0), s(1.0), s(0.0));
        let i = C64::new(0.0, 1.0);
        let f = |_t: f64, y: &Matrix2<C64>| sx * y * i;
        let stops = [0.5, 1.0, 3.0];
        let ys = integrate(f, 0.0, Matrix2::identity(), &stops, Tolerances::default()).unwrap();
        for (t, y) in stops.iter().zip(&ys) {
            let want = Matrix2::identity() * s(t.cos()) + sx * (i * t.sin());
            assert!((y - want).norm() < 1e-11);
        }
        let back = integrate(f, 3.0, ys[2], &[0.0], Tolerances::default()).unwrap();
        assert!((back[0] - Matrix2::identity()).norm() < 1e-11);
    }
}
