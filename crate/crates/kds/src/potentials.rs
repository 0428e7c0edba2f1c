//! Radial symbols g, f, the conformal factor h and the matrix potentials.
//!
//! Conventions: Γ⁰ = i[[0, I],[−I, 0]], Γ¹ = diag(−1, 1, 1, −1), Γ² = diag(−σx, σx),
//! Γ³ = diag(σy, −σy), γ̃ = diag(σx, σx). All of Γ⁰, Γ², Γ³, γ̃ anticommute with Γ¹.

use crate::error::{KdsError, Result};
use crate::geometry::{ExtremeKdSParams, RadialPoint, TortoiseMap};
use nalgebra::{Matrix2, Matrix4};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub type C64 = Complex64;
pub type M4 = Matrix4<C64>;
pub type M2 = Matrix2<C64>;

const fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

const O: C64 = c(0.0, 0.0);
const I1: C64 = c(1.0, 0.0);
const IM: C64 = c(0.0, 1.0);

pub fn sigma_x() -> M2 {
    M2::new(O, I1, I1, O)
}

pub fn sigma_y() -> M2 {
    M2::new(O, -IM, IM, O)
}

pub fn sigma_z() -> M2 {
    M2::new(I1, O, O, -I1)
}

pub fn block_diag(a: &M2, b: &M2) -> M4 {
    let mut m = M4::zeros();
    m.fixed_view_mut::<2, 2>(0, 0).copy_from(a);
    m.fixed_view_mut::<2, 2>(2, 2).copy_from(b);
    m
}

pub fn gamma0() -> M4 {
    let mut m = M4::zeros();
    m[(0, 2)] = IM;
    m[(1, 3)] = IM;
    m[(2, 0)] = -IM;
    m[(3, 1)] = -IM;
    m
}

pub fn gamma1() -> M4 {
    M4::from_diagonal(&nalgebra::Vector4::new(-I1, I1, I1, -I1))
}

pub fn gamma2() -> M4 {
    block_diag(&(-sigma_x()), &sigma_x())
}

pub fn gamma3() -> M4 {
    block_diag(&sigma_y(), &(-sigma_y()))
}

pub fn gamma_tilde() -> M4 {
    block_diag(&sigma_x(), &sigma_x())
}

/// Diagonal of Γ¹.
pub const GAMMA1_DIAG: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];

/// c ⊠ A = diag(c·A₁, c̄·A₂) for block-diagonal A.
pub fn boxtimes(cz: C64, a: &M4) -> Result<M4> {
    let off = a.fixed_view::<2, 2>(0, 2).norm() + a.fixed_view::<2, 2>(2, 0).norm();
    if off > 0.0 {
        return Err(KdsError::NotBlockDiagonal);
    }
    Ok(boxtimes_unchecked(cz, a))
}

fn boxtimes_unchecked(cz: C64, a: &M4) -> M4 {
    let mut m = *a;
    for i in 0..2 {
        for j in 0..2 {
            m[(i, j)] *= cz;
            m[(i + 2, j + 2)] *= cz.conj();
        }
    }
    m
}

pub fn hermitian_part(m: &M4) -> M4 {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// Frobenius norm of the anti-Hermitian part relative to the norm.
pub fn anti_hermitian_residual(m: &M4) -> f64 {
    let n = m.norm();
    if n == 0.0 {
        0.0
    } else {
        ((m - m.adjoint()) * c(0.5, 0.0)).norm() / n
    }
}

fn re(x: f64) -> C64 {
    c(x, 0.0)
}

/// The scalar radial data of one symmetric mode: g, f and the rotation constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialSymbolSet {
    pub map: TortoiseMap,
    pub p: f64,
    pub field_mass: f64,
    pub c_plus: f64,
    pub c0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialSymbols {
    pub g: f64,
    pub f: f64,
}

impl RadialSymbolSet {
    pub fn new(map: TortoiseMap, p: f64, field_mass: f64) -> Self {
        let pr = &map.params;
        let a2 = pr.a * pr.a;
        let c0 = pr.a / (pr.r_e * pr.r_e + a2);
        let c_plus = pr.a / (pr.r_plus * pr.r_plus + a2) - c0;
        RadialSymbolSet {
            map,
            p,
            field_mass,
            c_plus,
            c0,
        }
    }

    pub fn at_point(&self, q: &RadialPoint) -> RadialSymbols {
        let pr = &self.map.params;
        let a2 = pr.a * pr.a;
        let x = q.r * q.r + a2;
        let sqrt_dr = pr.l * q.lo * ((pr.r_e - pr.r_minus) + q.lo).sqrt() * (0.5 * q.ln_hi).exp();
        let g = sqrt_dr / (pr.xi * x);
        // ap/(r²+a²) − ap/(r_e²+a²) through the gap r − r_e
        let f = -pr.a * self.p * q.lo * (q.r + pr.r_e) / (x * (pr.r_e * pr.r_e + a2));
        RadialSymbols { g, f }
    }

    /// g and f at r*.
    pub fn radial_symbols(&self, rstar: f64) -> Result<RadialSymbols> {
        let q = self.map.inverse_point(rstar)?;
        Ok(self.at_point(&q))
    }

    /// Limit of f at the cosmological end.
    pub fn f_plus(&self) -> f64 {
        self.c_plus * self.p
    }
}

/// Geometric scalars at (r, θ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geo {
    pub r: f64,
    pub theta: f64,
    pub s: f64,
    pub c: f64,
    pub dr: f64,
    pub drp: f64,
    pub sqrt_dr: f64,
    pub dt: f64,
    pub x: f64,
    pub rho2: f64,
    pub sigma2: f64,
    pub sigma: f64,
}

/// Evaluators for the matrix-valued coefficients of the full operator at fixed p.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixPotentialSet {
    pub map: TortoiseMap,
    pub p: f64,
    pub field_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixPotentials {
    pub vc: M4,
    pub vs: M4,
    pub h: f64,
}

impl MatrixPotentialSet {
    pub fn new(map: TortoiseMap, p: f64, field_mass: f64) -> Self {
        MatrixPotentialSet { map, p, field_mass }
    }

    pub fn symbols(&self) -> RadialSymbolSet {
        RadialSymbolSet::new(self.map, self.p, self.field_mass)
    }

    pub fn geo(&self, q: &RadialPoint, theta: f64) -> Geo {
        let pr = &self.map.params;
        let (a, l) = (pr.a, pr.l);
        let a2 = a * a;
        let r = q.r;
        let (s, c) = theta.sin_cos();
        let rm = (pr.r_e - pr.r_minus) + q.lo;
        let hi = q.hi;
        let lo = q.lo;
        let dr = l * l * rm * lo * lo * hi;
        let drp = l * l * (lo * lo * hi + 2.0 * rm * lo * hi - rm * lo * lo);
        let sqrt_dr = l * lo * rm.sqrt() * (0.5 * q.ln_hi).exp();
        let dt = 1.0 + a2 * l * l * c * c;
        let x = r * r + a2;
        let rho2 = r * r + a2 * c * c;
        let sigma2 = dt * x * x - dr * a2 * s * s;
        Geo {
            r,
            theta,
            s,
            c,
            dr,
            drp,
            sqrt_dr,
            dt,
            x,
            rho2,
            sigma2,
            sigma: sigma2.sqrt(),
        }
    }

    pub fn h2(&self, g: &Geo) -> f64 {
        g.dt.sqrt() * g.x / g.sigma
    }

    /// h² − 1 without cancellation.
    pub fn h2_minus_one(&self, g: &Geo) -> f64 {
        let a2 = self.map.params.a.powi(2);
        g.dr * a2 * g.s * g.s / (g.sigma * (g.sigma + g.dt.sqrt() * g.x))
    }

    pub fn h(&self, g: &Geo) -> f64 {
        self.h2(g).sqrt()
    }

    /// b = √Δ_r Δ_θ/(Ξσ), the coefficient of Γ²D_θ.
    pub fn b(&self, g: &Geo) -> f64 {
        g.sqrt_dr * g.dt / (self.map.params.xi * g.sigma)
    }

    /// (ρ²/σ − √Δ_θ/Ξ)/sin θ in a form regular at the poles.
    fn rho_sigma_over_sin(&self, g: &Geo) -> f64 {
        let pr = &self.map.params;
        let (a, l, xi) = (pr.a, pr.l, pr.xi);
        let a2 = a * a;
        let inner = g.dt * g.dr
            + 2.0 * xi * g.x * (l * l * g.r * g.r - 1.0)
            + a2 * g.s * g.s * (xi * xi - l.powi(4) * g.x * g.x);
        a2 * g.s * inner / (g.sigma * xi * (xi * g.rho2 + g.dt.sqrt() * g.sigma))
    }

    /// Coulomb-type part V_C.
    pub fn v_c(&self, g: &Geo) -> M4 {
        let pr = &self.map.params;
        let sdt = g.dt.sqrt();
        let k3 = g.sqrt_dr * sdt / g.sigma * self.rho_sigma_over_sin(g) * self.p;
        let k0 = g.sqrt_dr * sdt / (pr.xi * g.sigma) * g.rho2.sqrt() * self.field_mass;
        let kt = pr.a * g.sqrt_dr * g.s * g.r * g.dt / (2.0 * g.rho2 * g.sigma * pr.xi);
        gamma3() * re(k3) + gamma0() * re(k0) - gamma_tilde() * re(kt)
    }

    /// Short-range part V_S (γ̃ term carries the sin θ of the underlying G̃ term).
    pub fn v_s(&self, g: &Geo) -> M4 {
        let pr = &self.map.params;
        let a = pr.a;
        let p = self.p;
        let sdt = g.dt.sqrt();
        let scal = -a * p * sdt / g.sigma + a * g.dt * g.x * p / g.sigma2 - a * g.dr * p / g.sigma2
            + a * p * self.h2_minus_one(g) / (pr.r_e * pr.r_e + a * a);
        let w = 2.0 * g.r * g.dr - 0.5 * g.drp * g.x;
        let c2 = IM * (a * g.s * g.dt * g.sqrt_dr / (2.0 * g.sigma.powi(3) * pr.xi) * w);
        let c1 = IM
            * (g.dr * sdt * a * g.c / (2.0 * g.rho2 * g.sigma * pr.xi)
                - a * g.dr * sdt * g.x * g.c / (2.0 * g.sigma.powi(3)));
        M4::identity() * re(scal) + boxtimes_unchecked(c2, &gamma2()) * IM
            - boxtimes_unchecked(c1, &gamma1()) * IM
    }

    pub fn matrix_potentials(&self, r: f64, theta: f64) -> Result<MatrixPotentials> {
        let s = theta.sin();
        if s < 1e-12 {
            return Err(KdsError::PoleProximity(s));
        }
        let q = self.map.point(r)?;
        let g = self.geo(&q, theta);
        Ok(MatrixPotentials {
            vc: self.v_c(&g),
            vs: self.v_s(&g),
            h: self.h(&g),
        })
    }

    /// Θ(r, θ), with h⁻²V_C = g·Θ.
    pub fn theta_big(&self, g: &Geo) -> M4 {
        let pr = &self.map.params;
        let sdt = g.dt.sqrt();
        let k3 = pr.xi * self.rho_sigma_over_sin(g) * self.p;
        let k0 = g.rho2.sqrt() * self.field_mass;
        let kt = pr.a * g.s * g.r * sdt / (2.0 * g.rho2);
        gamma3() * re(k3) + gamma0() * re(k0) - gamma_tilde() * re(kt)
    }

    /// ϑ(θ) = Θ(r_e, θ).
    pub fn vartheta(&self, theta: f64) -> M4 {
        vartheta(&self.map.params, self.p, self.field_mass, theta, true)
    }

    pub fn f_tilde(&self, g: &Geo) -> C64 {
        let pr = &self.map.params;
        let a = pr.a;
        let rho = g.rho2.sqrt();
        IM * (g.sqrt_dr * a * g.c / (2.0 * rho.powi(3)))
            - IM * (a * g.sqrt_dr * g.x * g.c * pr.xi / (2.0 * g.sigma2 * rho))
            + re(g.sqrt_dr * a * a * g.s * g.s / (2.0 * rho * g.sigma2 * g.x)
                * (0.5 * g.drp * g.x - 2.0 * g.r * g.dr))
    }

    pub fn g_tilde(&self, g: &Geo) -> C64 {
        let pr = &self.map.params;
        let (a, l) = (pr.a, pr.l);
        let rho = g.rho2.sqrt();
        let sdt = g.dt.sqrt();
        let num = c(
            g.c * g.rho2 * pr.xi - 3.0 * a * a * l * l * g.s * g.s * g.c * g.rho2,
            a * g.dt * g.s * g.s * g.r,
        );
        num / (2.0 * sdt * g.s * rho.powi(3))
            + re(sdt * a * a * g.s * g.c / (2.0 * rho * g.sigma2)
                * (g.x * pr.xi - 2.0 * pr.mass * g.r))
            - IM * (a * g.s * sdt / (2.0 * g.sigma2 * rho) * (2.0 * g.r * g.dr - 0.5 * g.drp * g.x))
    }

    /// Ṽ₁ = F̃ ⊠ Γ¹ + (G̃ − cot θ √Δ_θ/(2ρ)) ⊠ Γ².
    pub fn v1_tilde(&self, g: &Geo) -> M4 {
        let rho = g.rho2.sqrt();
        let cot = g.c / g.s;
        boxtimes_unchecked(self.f_tilde(g), &gamma1())
            + boxtimes_unchecked(
                self.g_tilde(g) - re(cot * g.dt.sqrt() / (2.0 * rho)),
                &gamma2(),
            )
    }

    /// Order-zero coefficient of the operator with D_φ → p, rotated by c₀,
    /// written for the variable sin^{1/2}θ·u: H^p = h²Γ¹D_{r*} + bΓ²D_θ + C.
    pub fn zeroth_order_direct(&self, g: &Geo) -> M4 {
        let pr = &self.map.params;
        let a = pr.a;
        let p = self.p;
        let b = self.b(g);
        let sdt = g.dt.sqrt();
        let q2 = (g.dt * g.x - g.dr) / g.rho2;
        let c0 = a / (pr.r_e * pr.r_e + a * a);
        let rho = g.rho2.sqrt();
        let scal = a * q2 * g.rho2 / g.sigma2 * p - c0 * p;
        let k3 = b * p / g.s + g.sqrt_dr * sdt / g.sigma * self.rho_sigma_over_sin(g) * p;
        let kv = g.sqrt_dr * sdt * rho / (g.sigma * pr.xi);
        let k0 = g.sqrt_dr * sdt / (pr.xi * g.sigma) * rho * self.field_mass;
        M4::identity() * re(scal) + gamma3() * re(k3) - self.v1_tilde(g) * (IM * kv)
            + gamma0() * re(k0)
    }

    /// Same coefficient assembled as h²f + b p/sin θ Γ³ + V_C + V_S.
    pub fn zeroth_order_split(&self, g: &Geo, f: f64) -> M4 {
        let b = self.b(g);
        M4::identity() * re(self.h2(g) * f)
            + gamma3() * re(b * self.p / g.s)
            + self.v_c(g)
            + self.v_s(g)
    }
}

/// ϑ(θ); `with_re = false` drops r_e from the γ̃ coefficient (alternative display).
pub fn vartheta(pr: &ExtremeKdSParams, p: f64, field_mass: f64, theta: f64, with_re: bool) -> M4 {
    let (a, l, r_e) = (pr.a, pr.l, pr.r_e);
    let (s, c) = theta.sin_cos();
    let dt = 1.0 + a * a * l * l * c * c;
    let sdt = dt.sqrt();
    let rho_e2 = r_e * r_e + a * a * c * c;
    let k3 = a * a * s / sdt * (l * l * r_e * r_e - 1.0) / (r_e * r_e + a * a) * p;
    let k0 = rho_e2.sqrt() * field_mass;
    let kt = a * s * if with_re { r_e } else { 1.0 } / (2.0 * rho_e2) * sdt;
    gamma3() * re(k3) + gamma0() * re(k0) - gamma_tilde() * re(kt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum End {
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// m for the plus end (rate in units of κ), n for the minus end (power).
    pub exponent: f64,
    pub intercept: f64,
    pub residual: f64,
}

/// Least-squares decay fit: ln|v| = −mκ r* + b at +∞, ln|v| = −n ln|r*| + b at −∞.
pub fn decay_fit(samples: &[(f64, f64)], end: End, kappa: f64) -> Result<DecayFit> {
    if samples.len() < 20 {
        return Err(KdsError::InsufficientSamples {
            need: 20,
            got: samples.len(),
        });
    }
    let mut xs = Vec::with_capacity(samples.len());
    let mut ys = Vec::with_capacity(samples.len());
    for &(rs, v) in samples {
        let av = v.abs();
        if !(av > 0.0) || !av.is_finite() {
            return Err(KdsError::DegenerateFit(format!("value {v} at r* = {rs}")));
        }
        xs.push(match end {
            End::Plus => rs,
            End::Minus => rs.abs().ln(),
        });
        ys.push(av.ln());
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(KdsError::DegenerateFit("abscissae coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let exponent = match end {
        End::Plus => -slope / kappa,
        End::Minus => -slope,
    };
    Ok(DecayFit {
        exponent,
        intercept,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anti(a: &M4, b: &M4) -> f64 {
        (a * b + b * a).norm()
    }

    #[test]
    fn gamma_algebra() {
        let g1 = gamma1();
        assert!((g1 * g1 - M4::identity()).norm() < 1e-15);
        for m in [gamma0(), gamma2(), gamma3(), gamma_tilde()] {
            assert!(anti(&g1, &m) < 1e-15);
            assert!((m * m - M4::identity()).norm() < 1e-15);
            assert!((m - m.adjoint()).norm() < 1e-15);
        }
        assert!(anti(&gamma2(), &gamma3()) < 1e-15);
        assert!(anti(&gamma0(), &gamma2()) < 1e-15);
    }

    #[test]
    fn boxtimes_rules() {
        let id = M4::identity();
        let b = boxtimes(IM, &id).unwrap();
        let want = M4::from_diagonal(&nalgebra::Vector4::new(IM, IM, -IM, -IM));
        assert!((b - want).norm() < 1e-15);
        assert!(boxtimes(IM, &gamma0()).is_err());
        let z = c(0.3, -1.2);
        let a = gamma2() * c(0.0, 1.0) + gamma3();
        let lhs = boxtimes(z, &a).unwrap().adjoint();
        let rhs = boxtimes(z.conj(), &a.adjoint()).unwrap();
        assert!((lhs - rhs).norm() < 1e-15);
        assert!((boxtimes(re(2.5), &a).unwrap() - a * re(2.5)).norm() < 1e-15);
    }

    #[test]
    fn vartheta_massless_p0() {
        let map = TortoiseMap::from_al(0.1, 1.0).unwrap();
        let v = vartheta(&map.params, 0.0, 0.0, 0.7, true);
        let kt = v[(0, 1)].re;
        assert!((v - gamma_tilde() * re(kt)).norm() < 1e-16);
    }
    fn setup() -> MatrixPotentialSet {
        MatrixPotentialSet::new(TortoiseMap::from_al(0.1, 1.0).unwrap(), 1.5, 0.7)
    }

    fn radii(m: &MatrixPotentialSet) -> Vec<f64> {
        let pr = &m.map.params;
        vec![pr.r_e * 1.01, 0.5 * (pr.r_e + pr.r_plus), pr.r_plus * 0.99]
    }

    #[test]
    fn direct_and_split_agree() {
        let m = setup();
        let sym = m.symbols();
        for r in radii(&m) {
            let q = m.map.point(r).unwrap();
            let f = sym.at_point(&q).f;
            for th in [0.3, 1.0, 2.0, 3.0] {
                let g = m.geo(&q, th);
                let d = hermitian_part(&m.zeroth_order_direct(&g));
                let s = m.zeroth_order_split(&g, f);
                assert!((d - s).norm() < 1e-12 * (1.0 + s.norm()), "r={r} th={th}");
            }
        }
    }

    // The anti-Hermitian part of the direct coefficient is −iΓ¹h∂h − iΓ²s∂s.
    #[test]
    fn anti_hermitian_part_is_commutator() {
        let m = setup();
        let hf = |r: f64, th: f64| {
            let g = m.geo(&m.map.point(r).unwrap(), th);
            m.h(&g)
        };
        let sf = |r: f64, th: f64| {
            let g = m.geo(&m.map.point(r).unwrap(), th);
            m.b(&g).sqrt()
        };
        for r in radii(&m) {
            for th in [0.3, 1.0, 2.0] {
                let e = 1e-6;
                let dh = (hf(r + e, th) - hf(r - e, th)) / (2.0 * e) / m.map.drstar_dr(r);
                let ds = (sf(r, th + e) - sf(r, th - e)) / (2.0 * e);
                let g = m.geo(&m.map.point(r).unwrap(), th);
                let cm = m.zeroth_order_direct(&g);
                let ah = (cm - cm.adjoint()) * re(0.5);
                let want = (gamma1() * re(hf(r, th) * dh) + gamma2() * re(sf(r, th) * ds)) * (-IM);
                assert!((ah - want).norm() < 1e-7, "r={r} th={th}");
            }
        }
    }

    #[test]
    fn coulomb_part_factorises() {
        let m = setup();
        let sym = m.symbols();
        for r in radii(&m) {
            let q = m.map.point(r).unwrap();
            let gg = sym.at_point(&q).g;
            for th in [0.2, 1.3, 2.9] {
                let g = m.geo(&q, th);
                let lhs = m.v_c(&g);
                let rhs = m.theta_big(&g) * re(m.h2(&g) * gg);
                assert!((lhs - rhs).norm() < 1e-14);
                assert!(anti_hermitian_residual(&lhs) < 1e-15);
                assert!(anti_hermitian_residual(&m.v_s(&g)) < 1e-15);
            }
        }
    }

    #[test]
    fn theta_at_double_horizon() {
        let m = setup();
        let r_e = m.map.params.r_e;
        for th in [0.1, 0.8, 1.6, 2.7] {
            let g = m.geo(&m.map.point(r_e * (1.0 + 1e-13)).unwrap(), th);
            assert!((m.theta_big(&g) - m.vartheta(th)).norm() < 1e-9, "th={th}");
        }
    }

    #[test]
    fn h_bounds() {
        let m = setup();
        let al2 = 0.01;
        for r in radii(&m) {
            for th in [0.1, 1.0, 1.5707963, 2.5] {
                let g = m.geo(&m.map.point(r).unwrap(), th);
                let e = m.h2_minus_one(&g);
                assert!(e >= 0.0 && e <= 1.0 - al2);
                assert!((m.h2(&g) - 1.0 - e).abs() < 1e-14);
            }
        }
        assert!(matches!(
            m.matrix_potentials(0.5, 0.0),
            Err(KdsError::PoleProximity(_))
        ));
    }

    #[test]
    fn decay_classes() {
        let kappa = 0.3;
        let plus: Vec<_> = (0..40)
            .map(|i| {
                let x = 5.0 + i as f64;
                (x, 2.0 * (-2.0 * kappa * x).exp())
            })
            .collect();
        let fit = decay_fit(&plus, End::Plus, kappa).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-10);
        let minus: Vec<_> = (0..40)
            .map(|i| {
                let x = -10.0 - 5.0 * i as f64;
                (x, 3.0 / x.abs())
            })
            .collect();
        assert!((decay_fit(&minus, End::Minus, kappa).unwrap().exponent - 1.0).abs() < 1e-10);
        assert!(matches!(
            decay_fit(&minus[..5], End::Minus, kappa),
            Err(KdsError::InsufficientSamples { .. })
        ));
    }
}
