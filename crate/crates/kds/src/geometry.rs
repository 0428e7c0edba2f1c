//! Extreme Kerr-de Sitter parameters, horizon roots and the tortoise coordinate.
//!
//! With x = a²l², Δ_r = r² − 2Mr + a² − l²r²(r² + a²) has the factorisation
//! Δ_r = −l²(r − r₋)(r − r_e)²(r − r₊) when M is tuned to extremality.

use crate::error::{KdsError, Result};
use serde::{Deserialize, Serialize};

/// Upper bound on |a|·l for the extreme configuration.
pub const AL_MAX: f64 = 0.267_949_192_431_122_7; // 2 − √3

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtremeKdSParams {
    pub a: f64,
    pub l: f64,
    /// Black-hole mass M.
    pub mass: f64,
    pub xi: f64,
    pub gamma_disc: f64,
    pub r_e: f64,
    pub r_minus: f64,
    pub r_plus: f64,
}

/// One named identity check: residual compared against a tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub name: String,
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityCheck {
    pub fn new(name: impl Into<String>, residual: f64, tolerance: f64) -> Self {
        IdentityCheck {
            name: name.into(),
            residual,
            tolerance,
            pass: residual.is_finite() && residual <= tolerance,
        }
    }

    pub fn flag(name: impl Into<String>, ok: bool) -> Self {
        IdentityCheck {
            name: name.into(),
            residual: if ok { 0.0 } else { 1.0 },
            tolerance: 0.0,
            pass: ok,
        }
    }
}

fn rel(x: f64, y: f64) -> f64 {
    let s = x.abs().max(y.abs());
    if s == 0.0 {
        0.0
    } else {
        (x - y).abs() / s
    }
}

/// Extreme parameters from (a, l); M and all roots follow from the closed forms.
pub fn build_extreme_params(a: f64, l: f64) -> Result<ExtremeKdSParams> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(KdsError::NonPositiveCosmologicalConstant(l));
    }
    if a == 0.0 || !a.is_finite() {
        return Err(KdsError::ExtremalityViolated("a must be nonzero".into()));
    }
    if (a * l).abs() >= AL_MAX {
        return Err(KdsError::ExtremalityViolated(format!(
            "|a|l = {} must be below 2 - sqrt(3)",
            (a * l).abs()
        )));
    }
    let x = a * a * l * l;
    let xi = 1.0 + x;
    let gamma_disc = (1.0 - x).powi(2) - 12.0 * x;
    let sg = gamma_disc.sqrt();
    // (1−x)(x²+34x+1) − γ^{3/2} rationalised: A² − γ³ = 108 x (1+x)⁴.
    let big_a = (1.0 - x) * (x * x + 34.0 * x + 1.0);
    let m2 = 2.0 * a * a * xi.powi(4) / (big_a + gamma_disc * sg);
    let mass = m2.sqrt();
    // 1 − x − √γ = 12x / (1 − x + √γ)
    let r_e = 2.0 * a * a / (3.0 * mass) * (1.0 + (1.0 - x) / (1.0 - x + sg));
    let c = a * a / (l * l * r_e * r_e);
    let s = (r_e * r_e + c).sqrt();
    let r_minus = -r_e - s;
    let r_plus = c / (r_e + s);
    Ok(ExtremeKdSParams {
        a,
        l,
        mass,
        xi,
        gamma_disc,
        r_e,
        r_minus,
        r_plus,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaEval {
    pub delta_r: f64,
    pub delta_r_prime: f64,
}

impl ExtremeKdSParams {
    pub fn delta_r(&self, r: f64) -> f64 {
        let (a, l, m) = (self.a, self.l, self.mass);
        r * r - 2.0 * m * r + a * a - l * l * r * r * (r * r + a * a)
    }

    pub fn delta_r_prime(&self, r: f64) -> f64 {
        let (a, l, m) = (self.a, self.l, self.mass);
        2.0 * r - 2.0 * m - l * l * (4.0 * r * r * r + 2.0 * a * a * r)
    }

    pub fn delta_theta(&self, theta: f64) -> f64 {
        let c = theta.cos();
        1.0 + self.a * self.a * self.l * self.l * c * c
    }

    pub fn delta_eval(&self, r: f64) -> DeltaEval {
        DeltaEval {
            delta_r: self.delta_r(r),
            delta_r_prime: self.delta_r_prime(r),
        }
    }

    /// Δ_r through its root factorisation; accurate near the horizons.
    pub fn delta_r_factored(&self, r: f64) -> f64 {
        let l2 = self.l * self.l;
        l2 * (r - self.r_minus) * (r - self.r_e).powi(2) * (self.r_plus - r)
    }

    /// The extremality identities, each with its residual.
    pub fn identity_checks(&self, tol: f64) -> Vec<IdentityCheck> {
        let (a, l, m, re) = (self.a, self.l, self.mass, self.r_e);
        let x = a * a * l * l;
        let m2_direct =
            ((1.0 - x) * (x * x + 34.0 * x + 1.0) - self.gamma_disc.powf(1.5)) / (54.0 * l * l);
        // the displayed difference loses digits as x → 0; allow for its condition number
        let g32 = self.gamma_disc.powf(1.5);
        let big_a = (1.0 - x) * (x * x + 34.0 * x + 1.0);
        let m2_tol = tol.max(8.0 * f64::EPSILON * (big_a + g32) / (big_a - g32));
        let scale2 = m * m + a * a + re * re;
        let vieta_p = -a * a / (l * l * re * re);
        vec![
            IdentityCheck::new("extremality M^2 closed form", rel(m * m, m2_direct), m2_tol),
            IdentityCheck::new("Delta_r(r_e) = 0", self.delta_r(re).abs() / scale2, tol),
            IdentityCheck::new(
                "Delta_r'(r_e) = 0",
                self.delta_r_prime(re).abs() / (m + re),
                tol,
            ),
            IdentityCheck::new(
                "Delta_r(r_+) = 0",
                self.delta_r(self.r_plus).abs()
                    / (self.r_plus * self.r_plus * (1.0 + (l * self.r_plus).powi(2))),
                tol,
            ),
            IdentityCheck::new(
                "l^2 r_e^4 + a^2 = M r_e",
                rel(l * l * re.powi(4) + a * a, m * re),
                tol,
            ),
            IdentityCheck::flag(
                "0 <= r_e < 4a^2/(3M)",
                re >= 0.0 && re < 4.0 * a * a / (3.0 * m),
            ),
            IdentityCheck::new(
                "r_- + r_+ = -2 r_e",
                (self.r_minus + self.r_plus + 2.0 * re).abs()
                    / (self.r_minus.abs() + self.r_plus.abs()),
                tol,
            ),
            IdentityCheck::new(
                "r_- r_+ = -a^2/(l^2 r_e^2)",
                rel(self.r_minus * self.r_plus, vieta_p),
                tol,
            ),
            IdentityCheck::flag(
                "r_- < 0 < r_e < r_+",
                self.r_minus < 0.0 && 0.0 < re && re < self.r_plus,
            ),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TortoiseCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_pf: f64,
    pub delta: f64,
    pub eta_minus: f64,
    pub eta_plus: f64,
    pub kappa: f64,
    pub r0: f64,
}

/// Partial fractions of (r²+a²)/((r−r₋)(r−r_e)²(r−r₊)), κ and the normalisation R₀.
pub fn tortoise_coefficients(p: &ExtremeKdSParams) -> TortoiseCoefficients {
    let (a, l, m, re, rm, rp) = (p.a, p.l, p.mass, p.r_e, p.r_minus, p.r_plus);
    let a2 = a * a;
    let alpha = (rm * rm + a2) / ((rm - re).powi(2) * (rm - rp));
    let beta = (rp * rp + a2) / ((rp - rm) * (rp - re).powi(2));
    let d = 3.0 * l * l * re.powi(4) - a2; // = 3Mr_e − 4a² < 0
    let delta = l * l * re * re * (re * re + a2) / d;
    let gamma_pf = -2.0 * l * l * re.powi(3) * (2.0 * re * re - 7.0 * m * re + 6.0 * a2) / (d * d);
    let eta_minus = (rm * rm + a2) / (re - rm).powi(2);
    let eta_plus = (rp * rp + a2) / (re - rp).powi(2);
    let kappa = l / (p.xi * eta_plus) * (m / re).sqrt();
    let big_l = rp - re;
    let r0 = p.xi / (l * l) * (alpha * (rp - rm).ln() + gamma_pf * big_l.ln() - delta / big_l);
    TortoiseCoefficients {
        alpha,
        beta,
        gamma_pf,
        delta,
        eta_minus,
        eta_plus,
        kappa,
        r0,
    }
}

/// A point of (r_e, r₊) with both horizon gaps and their logarithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialPoint {
    pub r: f64,
    /// r − r_e
    pub lo: f64,
    /// r₊ − r (may underflow to 0; `ln_hi` stays exact)
    pub hi: f64,
    pub ln_lo: f64,
    pub ln_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TortoiseMap {
    pub params: ExtremeKdSParams,
    pub coeffs: TortoiseCoefficients,
    /// Relative tolerance on r*, scaled by (1 + |r*|).
    pub tol: f64,
    pub max_iter: usize,
}

fn softplus(y: f64) -> f64 {
    if y > 0.0 {
        y + (-y).exp().ln_1p()
    } else {
        y.exp().ln_1p()
    }
}

fn logistic(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

impl TortoiseMap {
    pub fn new(params: ExtremeKdSParams) -> Self {
        TortoiseMap {
            params,
            coeffs: tortoise_coefficients(&params),
            tol: 1e-14,
            max_iter: 200,
        }
    }

    pub fn from_al(a: f64, l: f64) -> Result<Self> {
        Ok(Self::new(build_extreme_params(a, l)?))
    }

    pub fn kappa(&self) -> f64 {
        self.coeffs.kappa
    }

    /// Limit constant C of (r − r_e)·r* as r* → −∞.
    pub fn double_horizon_constant(&self) -> f64 {
        let p = &self.params;
        let re = p.r_e;
        p.xi * re * re * (re * re + p.a * p.a) / (3.0 * p.mass * re - 4.0 * p.a * p.a)
    }

    pub fn point(&self, r: f64) -> Result<RadialPoint> {
        let p = &self.params;
        if !(r > p.r_e && r < p.r_plus) {
            return Err(KdsError::OutOfDomain {
                r,
                lo: p.r_e,
                hi: p.r_plus,
            });
        }
        let lo = r - p.r_e;
        let hi = p.r_plus - r;
        Ok(RadialPoint {
            r,
            lo,
            hi,
            ln_lo: lo.ln(),
            ln_hi: hi.ln(),
        })
    }

    fn point_from_logit(&self, y: f64) -> RadialPoint {
        let p = &self.params;
        let big_l = p.r_plus - p.r_e;
        let lo = big_l * logistic(y);
        let hi = big_l * logistic(-y);
        let ln_l = big_l.ln();
        let r = if lo <= hi { p.r_e + lo } else { p.r_plus - hi };
        RadialPoint {
            r,
            lo,
            hi,
            ln_lo: ln_l - softplus(-y),
            ln_hi: ln_l - softplus(y),
        }
    }

    pub fn forward_point(&self, q: &RadialPoint) -> f64 {
        let p = &self.params;
        let c = &self.coeffs;
        let r_minus_gap = (p.r_e - p.r_minus) + q.lo;
        -p.xi / (p.l * p.l)
            * (c.alpha * r_minus_gap.ln() + c.beta * q.ln_hi + c.gamma_pf * q.ln_lo
                - c.delta / q.lo)
            + c.r0
    }

    /// r ↦ r*.
    pub fn forward(&self, r: f64) -> Result<f64> {
        Ok(self.forward_point(&self.point(r)?))
    }

    /// dr*/dr = Ξ(r²+a²)/Δ_r.
    pub fn drstar_dr(&self, r: f64) -> f64 {
        let p = &self.params;
        p.xi * (r * r + p.a * p.a) / p.delta_r_factored(r)
    }

    fn drstar_dy(&self, q: &RadialPoint) -> f64 {
        let p = &self.params;
        let big_l = p.r_plus - p.r_e;
        p.xi * (q.r * q.r + p.a * p.a) / (p.l * p.l * ((p.r_e - p.r_minus) + q.lo) * q.lo * big_l)
    }

    fn initial_logit(&self, rstar: f64) -> f64 {
        let p = &self.params;
        let big_l = p.r_plus - p.r_e;
        let k = self.coeffs.kappa;
        let switch = 50.0 * (1.0 / k).max(p.mass);
        if rstar > switch {
            big_l.ln() + 2.0 * k * rstar
        } else if rstar < -switch {
            let lo = self.double_horizon_constant() / rstar;
            (lo / big_l).ln()
        } else {
            0.0
        }
    }

    /// r* ↦ r, returned with its horizon gaps.
    pub fn inverse_point(&self, rstar: f64) -> Result<RadialPoint> {
        if !rstar.is_finite() {
            return Err(KdsError::ConvergenceFailure(format!(
                "tortoise inverse of non-finite r* = {rstar}"
            )));
        }
        let target_tol = self.tol * (1.0 + rstar.abs());
        let f = |y: f64| self.forward_point(&self.point_from_logit(y)) - rstar;
        let y0 = self.initial_logit(rstar);
        // bracket by expanding steps
        let (mut ylo, mut yhi);
        let f0 = f(y0);
        if f0.abs() <= target_tol {
            return Ok(self.point_from_logit(y0));
        }
        let mut step = 1.0_f64.max(0.01 * y0.abs());
        let mut it = 0;
        if f0 < 0.0 {
            ylo = y0;
            yhi = y0 + step;
            while f(yhi) < 0.0 {
                ylo = yhi;
                step *= 2.0;
                yhi += step;
                it += 1;
                if it > self.max_iter {
                    return Err(KdsError::ConvergenceFailure("tortoise bracket".into()));
                }
            }
        } else {
            yhi = y0;
            ylo = y0 - step;
            while f(ylo) > 0.0 {
                yhi = ylo;
                step *= 2.0;
                ylo -= step;
                it += 1;
                if it > self.max_iter {
                    return Err(KdsError::ConvergenceFailure("tortoise bracket".into()));
                }
            }
        }
        // safeguarded Newton
        let mut y = 0.5 * (ylo + yhi);
        for _ in 0..self.max_iter {
            let q = self.point_from_logit(y);
            let fy = self.forward_point(&q) - rstar;
            if fy.abs() <= target_tol {
                return Ok(q);
            }
            if fy < 0.0 {
                ylo = y;
            } else {
                yhi = y;
            }
            let dy = fy / self.drstar_dy(&q);
            let mut yn = y - dy;
            if !(yn > ylo && yn < yhi) {
                yn = 0.5 * (ylo + yhi);
            }
            if (yn - y).abs() <= 4.0 * f64::EPSILON * (1.0 + y.abs())
                || (yhi - ylo) <= 4.0 * f64::EPSILON * (1.0 + y.abs())
            {
                let q = self.point_from_logit(yn);
                let fy = self.forward_point(&q) - rstar;
                // rounding floor of the forward evaluation
                if fy.abs() <= 1e3 * target_tol {
                    return Ok(q);
                }
                return Err(KdsError::ConvergenceFailure(format!(
                    "tortoise inverse stalled at r* = {rstar}, residual {fy:e}"
                )));
            }
            y = yn;
        }
        Err(KdsError::ConvergenceFailure(format!(
            "tortoise inverse at r* = {rstar} after {} iterations",
            self.max_iter
        )))
    }

    /// r* ↦ r.
    pub fn inverse(&self, rstar: f64) -> Result<f64> {
        Ok(self.inverse_point(rstar)?.r)
    }

    /// Sign, degree-counting and residue checks on the coefficients.
    pub fn coefficient_checks(&self, tol: f64) -> Vec<IdentityCheck> {
        let c = &self.coeffs;
        let p = &self.params;
        let a2 = p.a * p.a;
        // δ and γ as value and slope at the double root of (r²+a²)/((r−r₋)(r−r₊))
        let re = p.r_e;
        let d_closed = (re * re + a2) / ((re - p.r_minus) * (re - p.r_plus));
        let dq = {
            let (u, v) = (re - p.r_minus, re - p.r_plus);
            (2.0 * re * u * v - (re * re + a2) * (u + v)) / (u * v).powi(2)
        };
        let scale = c.alpha.abs().max(c.beta.abs()).max(c.gamma_pf.abs());
        vec![
            IdentityCheck::flag("alpha < 0", c.alpha < 0.0),
            IdentityCheck::flag("beta > 0", c.beta > 0.0),
            IdentityCheck::flag("gamma < 0", c.gamma_pf < 0.0),
            IdentityCheck::flag("delta < 0", c.delta < 0.0),
            IdentityCheck::flag("kappa > 0", c.kappa > 0.0),
            IdentityCheck::new(
                "alpha + beta + gamma = 0",
                (c.alpha + c.beta + c.gamma_pf).abs() / scale,
                tol,
            ),
            IdentityCheck::new("delta residue", rel(c.delta, d_closed), tol),
            IdentityCheck::new("gamma residue", rel(c.gamma_pf, dq), tol),
            IdentityCheck::new(
                "ln(r_+ - r) coefficient = -1/(2 kappa)",
                rel(p.xi * c.beta / (p.l * p.l), 0.5 / c.kappa),
                tol,
            ),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_extreme() {
        assert!(matches!(
            build_extreme_params(0.3, 1.0),
            Err(KdsError::ExtremalityViolated(_))
        ));
        assert!(matches!(
            build_extreme_params(0.0, 1.0),
            Err(KdsError::ExtremalityViolated(_))
        ));
        assert!(matches!(
            build_extreme_params(0.1, 0.0),
            Err(KdsError::NonPositiveCosmologicalConstant(_))
        ));
    }

    #[test]
    fn small_rotation_limit() {
        let p = build_extreme_params(1e-8, 1.0).unwrap();
        assert!(p.mass < 1e-6);
        assert!(p.r_e < 1e-6);
        assert!((p.mass / 1e-8 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identities_hold() {
        let p = build_extreme_params(0.1, 1.0).unwrap();
        for c in p.identity_checks(1e-12) {
            assert!(c.pass, "{c:?}");
        }
        let m = TortoiseMap::new(p);
        for c in m.coefficient_checks(1e-12) {
            assert!(c.pass, "{c:?}");
        }
    }

    #[test]
    fn forward_out_of_domain() {
        let m = TortoiseMap::from_al(0.1, 1.0).unwrap();
        assert!(m.forward(m.params.r_e).is_err());
        assert!(m.forward(m.params.r_plus + 0.1).is_err());
    }

    #[test]
    fn cosmological_normalisation() {
        let m = TortoiseMap::from_al(0.1, 1.0).unwrap();
        let p = m.params;
        let r = p.r_plus - 1e-12 * p.mass;
        let rs = m.forward(r).unwrap();
        assert!(rs > 10.0 / m.kappa());
        let lim = rs + (p.r_plus - r).ln() / (2.0 * m.kappa());
        assert!(lim.abs() < 1e-6, "{lim}");
    }

    #[test]
    fn inverse_extremes() {
        let m = TortoiseMap::from_al(0.1, 1.0).unwrap();
        let big = 1e4 / m.params.mass;
        for rs in [-big, -1e3, -1.0, 0.0, 1.0, 1e3, big] {
            let q = m.inverse_point(rs).unwrap();
            let back = m.forward_point(&q);
            assert!((back - rs).abs() <= 1e-12 * (1.0 + rs.abs()), "{rs} {back}");
        }
    }
}
