//! Spectra of the angular operators 𝔇 = diag(−S̃, S̃) and 𝔇_e = 𝔇 + ϑ at fixed
//! azimuthal number n.
//!
//! Everything acts on v = sin^{1/2}θ·u in L²((0, π), dθ), where the operators read
//! Δ_θ^{1/4}(Γ²D_θ + (n/sinθ)Γ³)Δ_θ^{1/4} + ϑ. Shooting integrates w = Δ_θ^{1/4}v.
//! The dense oracle is a Galerkin method in weighted Jacobi polynomials.

use crate::error::{KdsError, Result};
use crate::geometry::ExtremeKdSParams;
use crate::ode::{self, Tolerances};
use crate::potentials::{gamma2, gamma3, vartheta, C64, M4};
use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, SMatrix};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

const IM: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AngularKind {
    /// S̃, the upper-left block of 𝔇 up to sign (two components).
    PerturbedSphere,
    /// 𝔇_e (four components).
    DoubleHorizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum A5Convention {
    /// γ̃ coefficient as in ϑ, with the factor r_e.
    #[default]
    FromTheta,
    /// γ̃ coefficient without r_e.
    FromA5Display,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularOperatorSpec {
    pub kind: AngularKind,
    pub params: ExtremeKdSParams,
    pub n: f64,
    pub p: f64,
    pub mass: f64,
    pub a5: A5Convention,
}

impl AngularOperatorSpec {
    pub fn sphere(params: ExtremeKdSParams, n: f64) -> Self {
        AngularOperatorSpec {
            kind: AngularKind::PerturbedSphere,
            params,
            n,
            p: 0.5,
            mass: 0.0,
            a5: A5Convention::FromTheta,
        }
    }

    pub fn double_horizon(params: ExtremeKdSParams, n: f64, p: f64, mass: f64) -> Self {
        AngularOperatorSpec {
            kind: AngularKind::DoubleHorizon,
            params,
            n,
            p,
            mass,
            a5: A5Convention::FromTheta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_half_integer(self.n)?;
        if self.kind == AngularKind::DoubleHorizon {
            check_half_integer(self.p)?;
            if !(self.mass.is_finite() && self.mass >= 0.0) {
                return Err(KdsError::Validation(vec![format!("mass = {}", self.mass)]));
            }
        }
        Ok(())
    }

    pub fn components(&self) -> usize {
        match self.kind {
            AngularKind::PerturbedSphere => 2,
            AngularKind::DoubleHorizon => 4,
        }
    }

    fn x(&self) -> f64 {
        (self.params.a * self.params.l).powi(2)
    }

    fn delta_theta(&self, th: f64) -> f64 {
        1.0 + self.x() * th.cos().powi(2)
    }

    /// ϑ(θ) or zero, as a 4×4 matrix.
    fn potential(&self, th: f64) -> M4 {
        match self.kind {
            AngularKind::PerturbedSphere => M4::zeros(),
            AngularKind::DoubleHorizon => vartheta(
                &self.params,
                self.p,
                self.mass,
                th,
                self.a5 == A5Convention::FromTheta,
            ),
        }
    }

    /// Independent blocks of the operator: S̃ alone, 𝔇_e whole, or its two
    /// diagonal blocks when the Γ⁰ coupling vanishes.
    fn blocks(&self) -> Vec<Block> {
        match self.kind {
            AngularKind::PerturbedSphere => vec![Block::Lower],
            AngularKind::DoubleHorizon if self.mass == 0.0 => vec![Block::Upper, Block::Lower],
            AngularKind::DoubleHorizon => vec![Block::Full],
        }
    }
}

pub fn check_half_integer(x: f64) -> Result<()> {
    let t = 2.0 * x;
    if x.is_finite() && (t - t.round()).abs() < 1e-12 && (t.round() as i64).rem_euclid(2) == 1 {
        Ok(())
    } else {
        Err(KdsError::NotHalfInteger(x))
    }
}

/// Frobenius exponents at either pole for the unknown u: (|n| − 1/2, −|n| − 1/2).
pub fn indicial_exponents(n: f64) -> Result<(f64, f64)> {
    check_half_integer(n)?;
    Ok((n.abs() - 0.5, -n.abs() - 0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Full,
    Upper,
    Lower,
}

impl Block {
    fn offset(self) -> usize {
        match self {
            Block::Full | Block::Upper => 0,
            Block::Lower => 2,
        }
    }
}

fn restrict<const N: usize>(m: &M4, off: usize) -> SMatrix<C64, N, N> {
    SMatrix::from_fn(|i, j| m[(i + off, j + off)])
}

// ---------------------------------------------------------------------------
// Dense Galerkin oracle

fn ln_gamma_half(twice: u32) -> f64 {
    // ln Γ(twice/2) for a positive integer `twice`
    let (mut z, mut acc) = if twice % 2 == 0 {
        (1.0, 0.0)
    } else {
        (0.5, 0.5 * PI.ln())
    };
    while 2.0 * z < twice as f64 - 0.5 {
        acc += z.ln();
        z += 1.0;
    }
    acc
}

/// (sin θ/2)^a (cos θ/2)^b P_k^{(a−1/2, b−1/2)}(cos θ), orthonormal in L²(dθ),
/// with θ-derivatives. Takes 2a and 2b, both odd.
fn jacobi_basis(a2: u32, b2: u32, k_count: usize, theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (a, b) = (0.5 * a2 as f64, 0.5 * b2 as f64);
    let al = a - 0.5;
    let be = b - 0.5;
    let ab = al + be;
    let p0 =
        (0.5 * (ln_gamma_half(a2 + b2 + 2) - ln_gamma_half(a2 + 1) - ln_gamma_half(b2 + 1))).exp();
    let acoef: Vec<f64> = (0..k_count)
        .map(|k| {
            let s = 2.0 * k as f64 + ab;
            (be * be - al * al) / (s * (s + 2.0))
        })
        .collect();
    let bcoef: Vec<f64> = (0..=k_count)
        .map(|k| {
            if k == 0 {
                return 0.0;
            }
            let kf = k as f64;
            let s = 2.0 * kf + ab;
            2.0 / s * (kf * (kf + al) * (kf + be) * (kf + ab) / ((s + 1.0) * (s - 1.0))).sqrt()
        })
        .collect();
    let mut f = DMatrix::zeros(k_count, theta.len());
    let mut df = DMatrix::zeros(k_count, theta.len());
    for (q, &th) in theta.iter().enumerate() {
        let x = th.cos();
        let (s2, c2) = (0.5 * th).sin_cos();
        let pre = s2.powf(a) * c2.powf(b);
        let dpre = 0.5
            * (a * s2.powf(a - 1.0) * c2.powf(b + 1.0) - b * s2.powf(a + 1.0) * c2.powf(b - 1.0));
        let (mut pm, mut p) = (0.0, p0);
        let (mut dpm, mut dp) = (0.0, 0.0);
        for k in 0..k_count {
            f[(k, q)] = pre * p;
            df[(k, q)] = dpre * p - pre * dp * th.sin();
            let pn = ((x - acoef[k]) * p - bcoef[k] * pm) / bcoef[k + 1];
            let dpn = ((x - acoef[k]) * dp + p - bcoef[k] * dpm) / bcoef[k + 1];
            pm = p;
            p = pn;
            dpm = dp;
            dp = dpn;
        }
    }
    (f, df)
}

/// Doubled exponents (2a, 2b) of the weight attached to a component: the
/// regular solution of that component starts like θ^a at θ = 0 and (π − θ)^b at π.
fn component_weights(n: f64, comp: usize) -> (u32, u32) {
    let m2 = (2.0 * n.abs()).round() as u32;
    // near θ = 0 the leading system is w' = (n/θ)·diag(−1, 1)w in each block
    if (n > 0.0) == (comp % 2 == 0) {
        (m2 + 2, m2)
    } else {
        (m2, m2 + 2)
    }
}

/// Dense Galerkin matrix for one block; returns all eigenvalues, ascending.
fn galerkin_block<const N: usize>(
    spec: &AngularOperatorSpec,
    block: Block,
    k_count: usize,
) -> Result<Vec<f64>> {
    let (h, _) = galerkin_matrix::<N>(spec, block, k_count);
    let eig = nalgebra::SymmetricEigen::try_new(h, 1e-15, 10_000)
        .ok_or_else(|| KdsError::EigensolverFailure("no convergence".into()))?;
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if ev.iter().any(|v| !v.is_finite()) {
        return Err(KdsError::EigensolverFailure("non-finite eigenvalue".into()));
    }
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

fn galerkin_matrix<const N: usize>(
    spec: &AngularOperatorSpec,
    block: Block,
    k_count: usize,
) -> (DMatrix<C64>, f64) {
    let off = block.offset();
    let g2: SMatrix<C64, N, N> = restrict(&gamma2(), off);
    let g3: SMatrix<C64, N, N> = restrict(&gamma3(), off);
    let nq = 3 * k_count + 40;
    let rule = GaussLegendre::new(std::num::NonZeroUsize::new(nq).unwrap());
    let (theta, wts): (Vec<f64>, Vec<f64>) = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| ((x + 1.0) * FRAC_PI_2, w * FRAC_PI_2))
        .unzip();
    let n = spec.n;
    let bases: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..N)
        .map(|c| {
            let (a, b) = component_weights(n, c + off);
            jacobi_basis(a, b, k_count, &theta)
        })
        .collect();
    let x = spec.x();
    let q: Vec<f64> = theta
        .iter()
        .map(|&t| spec.delta_theta(t).powf(0.25))
        .collect();
    let dq: Vec<f64> = theta
        .iter()
        .map(|&t| {
            let d = spec.delta_theta(t);
            -0.5 * x * t.cos() * t.sin() * d.powf(-0.75)
        })
        .collect();
    let pots: Vec<SMatrix<C64, N, N>> = theta
        .iter()
        .map(|&t| restrict(&spec.potential(t), off))
        .collect();
    let dim = N * k_count;
    let mut h = DMatrix::<C64>::zeros(dim, dim);
    for c in 0..N {
        for d in c..N {
            let (fc, _) = &bases[c];
            let (fd, dfd) = &bases[d];
            let d2 = g2[(c, d)];
            let d3 = g3[(c, d)];
            let has_pot = pots.iter().any(|p| p[(c, d)].norm() > 0.0);
            if d2.norm() == 0.0 && d3.norm() == 0.0 && !has_pot {
                continue;
            }
            for i in 0..k_count {
                for j in 0..k_count {
                    let mut acc = C64::new(0.0, 0.0);
                    for qi in 0..theta.len() {
                        let s = theta[qi].sin();
                        let u = fc[(i, qi)];
                        let mut val = C64::new(0.0, 0.0);
                        if d2.norm() > 0.0 || d3.norm() > 0.0 {
                            let deriv = q[qi] * dfd[(j, qi)] + dq[qi] * fd[(j, qi)];
                            val +=
                                q[qi] * (d2 * (-IM * deriv) + d3 * (n / s * q[qi] * fd[(j, qi)]));
                        }
                        val += pots[qi][(c, d)] * fd[(j, qi)];
                        acc += val * (u * wts[qi]);
                    }
                    h[(c * k_count + i, d * k_count + j)] = acc;
                    if c != d {
                        h[(d * k_count + j, c * k_count + i)] = acc.conj();
                    }
                }
            }
        }
    }
    // diagonal potential blocks must be Hermitian too
    let asym = (&h - h.adjoint()).norm();
    let herm = (&h + h.adjoint()) * C64::new(0.5, 0.0);
    (herm, asym)
}

fn block_dispatch<T>(
    block: Block,
    two: impl FnOnce(Block) -> T,
    four: impl FnOnce(Block) -> T,
) -> T {
    match block {
        Block::Full => four(block),
        _ => two(block),
    }
}

fn block_eigenvalues(spec: &AngularOperatorSpec, block: Block, k_count: usize) -> Result<Vec<f64>> {
    block_dispatch(
        block,
        |b| galerkin_block::<2>(spec, b, k_count),
        |b| galerkin_block::<4>(spec, b, k_count),
    )
}

/// Picks the `k_max` smallest positive and the `k_max` largest negative values.
fn central(ev: &[f64], k_max: usize) -> Vec<f64> {
    let mut pos: Vec<f64> = ev.iter().copied().filter(|v| *v > 0.0).collect();
    let mut neg: Vec<f64> = ev.iter().copied().filter(|v| *v <= 0.0).collect();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(|a, b| b.total_cmp(a));
    pos.truncate(k_max);
    neg.truncate(k_max);
    let mut out: Vec<f64> = neg.into_iter().rev().chain(pos).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Eigenvalues of the dense Galerkin discretisation with `grid_size` basis
/// functions per component: the `k_max` smallest positive and `k_max` largest
/// negative ones, ascending.
pub fn dense_spectrum_oracle(
    spec: &AngularOperatorSpec,
    grid_size: usize,
    k_max: usize,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if grid_size < 64 {
        return Err(KdsError::Validation(vec![format!(
            "gridSize {grid_size} < 64"
        )]));
    }
    if 2 * k_max > grid_size {
        return Err(KdsError::Validation(vec![format!(
            "kMax {k_max} too large for gridSize {grid_size}"
        )]));
    }
    let mut all = Vec::new();
    for b in spec.blocks() {
        let ev = block_eigenvalues(spec, b, grid_size)?;
        all.extend(central(&ev, k_max));
    }
    Ok(central(&all, k_max))
}

/// Sizes of clusters of eigenvalues closer than `tol`.
pub fn cluster_multiplicities(sorted: &[f64], tol: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] - sorted[j - 1] < tol {
            j += 1;
        }
        out.push(j - i);
        i = j;
    }
    out
}

// ---------------------------------------------------------------------------
// Shooting

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingOptions {
    /// Distance from the poles at which the Frobenius series is evaluated.
    pub theta0: f64,
    pub rtol: f64,
    /// Staggered sample points θ_j = (j + 1/2)π/N.
    pub samples: usize,
    /// Basis size of the oracle that seeds the brackets.
    pub oracle_size: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            theta0: 1e-4,
            rtol: 1e-12,
            samples: 256,
            oracle_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularMode {
    pub spec: AngularOperatorSpec,
    pub k: i64,
    pub eigenvalue: f64,
    pub theta: Vec<f64>,
    pub components: usize,
    /// v(θ_j) row-major: θ then component.
    pub samples: Vec<C64>,
    pub norm_squared: f64,
    /// Fitted exponent of u = v/sin^{1/2}θ at θ = 0 and θ = π.
    pub pole_exponents: (f64, f64),
}

impl AngularMode {
    pub fn at(&self, j: usize) -> &[C64] {
        &self.samples[j * self.components..(j + 1) * self.components]
    }

    pub fn inner(&self, other: &AngularMode) -> C64 {
        let dth = PI / self.theta.len() as f64;
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a.conj() * b)
            .sum::<C64>()
            * dth
    }
}

struct Shooter<const N: usize> {
    spec: AngularOperatorSpec,
    off: usize,
    g2: SMatrix<C64, N, N>,
    g3: SMatrix<C64, N, N>,
    opts: ShootingOptions,
}

impl<const N: usize> Shooter<N> {
    fn new(spec: AngularOperatorSpec, block: Block, opts: ShootingOptions) -> Self {
        let off = block.offset();
        Shooter {
            spec,
            off,
            g2: restrict(&gamma2(), off),
            g3: restrict(&gamma3(), off),
            opts,
        }
    }

    fn tol(&self) -> Tolerances {
        Tolerances {
            rtol: self.opts.rtol,
            atol: 1e-300,
            ..Tolerances::default()
        }
    }

    fn pot(&self, th: f64, lam: f64) -> SMatrix<C64, N, N> {
        let p: SMatrix<C64, N, N> = restrict(&self.spec.potential(th), self.off);
        (p - SMatrix::<C64, N, N>::identity() * C64::new(lam, 0.0))
            * C64::new(self.spec.delta_theta(th).powf(-0.5), 0.0)
    }

    /// w' = −iΓ²[(n/sinθ)Γ³ + Δ_θ^{−1/2}(ϑ − λ)]w
    fn generator(&self, th: f64, lam: f64) -> SMatrix<C64, N, N> {
        let m = self.g3 * C64::new(self.spec.n / th.sin(), 0.0) + self.pot(th, lam);
        self.g2 * m * (-IM)
    }

    /// Two-term Frobenius start for the regular solutions, at distance t from the pole.
    fn frobenius(&self, lam: f64, at_pi: bool, t: f64) -> SMatrix<C64, N, N> {
        let sign = if at_pi { -1.0 } else { 1.0 };
        let a0 = self.g2 * self.g3 * (-IM * self.spec.n * sign);
        let b0 = self.g2 * self.pot(if at_pi { PI } else { 0.0 }, lam) * (-IM * sign);
        let alpha = self.spec.n.abs();
        let mut y = SMatrix::<C64, N, N>::zeros();
        let mut col = 0;
        for j in 0..N {
            if (a0[(j, j)].re - alpha).abs() < 1e-9 {
                let mut c0 = SMatrix::<C64, N, 1>::zeros();
                c0[j] = C64::new(1.0, 0.0);
                let rhs = b0 * c0;
                for i in 0..N {
                    let c1 = rhs[i] / (alpha + 1.0 - a0[(i, i)].re);
                    y[(i, col)] = c0[i] + c1 * t;
                }
                col += 1;
            }
        }
        debug_assert_eq!(col, N / 2);
        y
    }

    fn run(&self, lam: f64, at_pi: bool, stops: &[f64]) -> Result<Vec<SMatrix<C64, N, N>>> {
        let t0 = self.opts.theta0;
        let start = if at_pi { PI - t0 } else { t0 };
        let y0 = self.frobenius(lam, at_pi, t0);
        ode::integrate(
            |th, y| self.generator(th, lam) * y,
            start,
            y0,
            stops,
            self.tol(),
        )
    }

    fn matching_matrix(&self, lam: f64) -> Result<SMatrix<C64, N, N>> {
        let l = self.run(lam, false, &[FRAC_PI_2])?[0];
        let r = self.run(lam, true, &[FRAC_PI_2])?[0];
        let h = N / 2;
        let mut m = SMatrix::<C64, N, N>::zeros();
        for c in 0..h {
            let lc = l.column(c);
            let rc = r.column(c);
            m.column_mut(c).copy_from(&(lc / C64::new(lc.norm(), 0.0)));
            m.column_mut(c + h)
                .copy_from(&(rc / C64::new(rc.norm(), 0.0)));
        }
        Ok(m)
    }

    fn mismatch(&self, lam: f64) -> Result<C64> {
        Ok(dyn_mat(&self.matching_matrix(lam)?).determinant())
    }

    /// Root of the matching determinant near `seed`.
    fn refine(&self, seed: f64, half_width: f64) -> Result<f64> {
        let mut delta = half_width;
        let (mut lo, mut hi, mut flo, mut fhi);
        let mut tries = 0;
        loop {
            lo = seed - delta;
            hi = seed + delta;
            let dhi = self.mismatch(hi)?;
            let dlo = self.mismatch(lo)?;
            let phase = dhi.conj() / dhi.norm();
            fhi = dhi.norm();
            flo = (dlo * phase).re;
            if flo < 0.0 {
                break;
            }
            tries += 1;
            if tries > 3 {
                return Err(KdsError::BracketingFailure(seed));
            }
            delta *= 0.25;
        }
        let phase = self.mismatch(hi)?.conj() / fhi;
        let f = |lam: f64| -> Result<f64> { Ok((self.mismatch(lam)? * phase).re) };
        // Illinois false position
        let mut side = 0;
        for _ in 0..200 {
            let mid = (lo * fhi - hi * flo) / (fhi - flo);
            let fm = f(mid)?;
            if (hi - lo).abs() < 1e-14 * seed.abs().max(1.0) || fm == 0.0 {
                return Ok(mid);
            }
            if fm < 0.0 {
                lo = mid;
                flo = fm;
                if side == -1 {
                    fhi *= 0.5;
                }
                side = -1;
            } else {
                hi = mid;
                fhi = fm;
                if side == 1 {
                    flo *= 0.5;
                }
                side = 1;
            }
            if (hi - lo).abs() < 1e-13 * seed.abs().max(1.0) {
                return Ok(0.5 * (lo + hi));
            }
        }
        Err(KdsError::ConvergenceFailure(
            "angular eigenvalue refinement".into(),
        ))
    }

    /// Eigenfunction samples (embedded into `ncomp` components) and pole exponents.
    fn eigenfunction(
        &self,
        lam: f64,
        grid: &[f64],
        ncomp: usize,
    ) -> Result<(Vec<C64>, (f64, f64))> {
        let t0 = self.opts.theta0;
        let m = self.matching_matrix(lam)?;
        let svd = dyn_mat(&m).svd(false, true);
        let vt = svd
            .v_t
            .ok_or_else(|| KdsError::EigensolverFailure("svd".into()))?;
        let imin = (0..N)
            .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
            .unwrap();
        let null: Vec<C64> = vt.row(imin).iter().copied().collect();
        let h = N / 2;
        // undo the column normalisation used in the matching matrix
        let l_mid = self.run(lam, false, &[FRAC_PI_2])?[0];
        let r_mid = self.run(lam, true, &[FRAC_PI_2])?[0];
        let mut cl = SMatrix::<C64, N, 1>::zeros();
        let mut cr = SMatrix::<C64, N, 1>::zeros();
        for c in 0..h {
            cl[c] = null[c].conj() / l_mid.column(c).norm();
            cr[c] = null[c + h].conj() / r_mid.column(c).norm();
        }
        let probe = [1e-3, 2e-3];
        let mut left_stops: Vec<f64> = probe.to_vec();
        left_stops.extend(grid.iter().copied().filter(|&t| t < FRAC_PI_2 && t > 2e-3));
        left_stops.push(FRAC_PI_2);
        let mut right_stops: Vec<f64> = probe.iter().map(|t| PI - t).collect();
        right_stops.extend(
            grid.iter()
                .rev()
                .copied()
                .filter(|&t| t >= FRAC_PI_2 && t < PI - 2e-3),
        );
        let ls = self.run(lam, false, &left_stops)?;
        let rs = self.run(lam, true, &right_stops)?;
        let wl = |y: &SMatrix<C64, N, N>| y * cl;
        let wr = |y: &SMatrix<C64, N, N>| y * cr;
        let v_of = |th: f64, w: SMatrix<C64, N, 1>| {
            w / C64::new(self.spec.delta_theta(th).powf(0.25), 0.0)
        };
        let exponent = |w1: SMatrix<C64, N, 1>, w2: SMatrix<C64, N, 1>, t1: f64, t2: f64| {
            let j = (0..N)
                .max_by(|&a, &b| w1[a].norm().total_cmp(&w1[b].norm()))
                .unwrap();
            let u1 = w1[j].norm() / t1.sin().sqrt();
            let u2 = w2[j].norm() / t2.sin().sqrt();
            (u2 / u1).ln() / (t2.sin() / t1.sin()).ln()
        };
        let e_left = exponent(wl(&ls[0]), wl(&ls[1]), probe[0], probe[1]);
        let e_right = exponent(wr(&rs[0]), wr(&rs[1]), probe[0], probe[1]);
        let mut samples = vec![C64::new(0.0, 0.0); grid.len() * ncomp];
        let mut li = 2;
        let mut ri = 2;
        // grid points closer to a pole than the probes use the series directly
        for (gj, &th) in grid.iter().enumerate() {
            let w = if th <= 2e-3 {
                let t = th.min(t0.max(th));
                self.frobenius(lam, false, t) * cl
            } else if th >= PI - 2e-3 {
                self.frobenius(lam, true, PI - th) * cr
            } else if th < FRAC_PI_2 {
                let w = wl(&ls[li]);
                li += 1;
                w
            } else {
                let w = wr(&rs[ri]);
                ri += 1;
                w
            };
            let v = v_of(th, w);
            for c in 0..N {
                samples[gj * ncomp + c + self.off.min(ncomp - N)] = v[c];
            }
        }
        Ok((samples, (e_left, e_right)))
    }
}

fn dyn_mat<const N: usize>(m: &SMatrix<C64, N, N>) -> DMatrix<C64> {
    DMatrix::from_iterator(N, N, m.iter().copied())
}

fn staggered(n: usize) -> Vec<f64> {
    (0..n).map(|j| (j as f64 + 0.5) * PI / n as f64).collect()
}

fn shoot_block<const N: usize>(
    spec: &AngularOperatorSpec,
    block: Block,
    k_max: usize,
    opts: &ShootingOptions,
) -> Result<Vec<(f64, Vec<C64>, (f64, f64))>> {
    let seeds = central(&block_eigenvalues(spec, block, opts.oracle_size)?, k_max);
    let sh = Shooter::<N>::new(*spec, block, *opts);
    let grid = staggered(opts.samples);
    let ncomp = spec.components();
    seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let gap = [i.checked_sub(1), Some(i + 1)]
                .iter()
                .filter_map(|&j| j.and_then(|j| seeds.get(j)))
                .map(|s| (s - seed).abs())
                .fold(f64::INFINITY, f64::min);
            let lam = sh.refine(seed, (1e-3 * seed.abs().max(1.0)).min(0.3 * gap))?;
            let (samples, ex) = sh.eigenfunction(lam, &grid, ncomp)?;
            Ok((lam, samples, ex))
        })
        .collect()
}

/// Eigenpairs by shooting from both poles, seeded by the dense oracle: the
/// `k_max` smallest positive eigenvalues (k = 1, 2, …) and their negatives
/// (k = −1, −2, …). Eigenfunctions are normalised in L²(dθ) on the sample grid.
pub fn shoot_spectrum(spec: &AngularOperatorSpec, k_max: usize) -> Result<Vec<AngularMode>> {
    shoot_spectrum_with(spec, k_max, &ShootingOptions::default())
}

pub fn shoot_spectrum_with(
    spec: &AngularOperatorSpec,
    k_max: usize,
    opts: &ShootingOptions,
) -> Result<Vec<AngularMode>> {
    spec.validate()?;
    if k_max == 0 {
        return Err(KdsError::Validation(vec!["kMax must be at least 1".into()]));
    }
    let mut raw = Vec::new();
    for b in spec.blocks() {
        let r = match b {
            Block::Full => shoot_block::<4>(spec, b, k_max, opts)?,
            _ => shoot_block::<2>(spec, b, k_max, opts)?,
        };
        raw.extend(r);
    }
    let grid = staggered(opts.samples);
    let dth = PI / opts.samples as f64;
    let mut pos: Vec<_> = raw.iter().filter(|r| r.0 > 0.0).cloned().collect();
    let mut neg: Vec<_> = raw.iter().filter(|r| r.0 <= 0.0).cloned().collect();
    pos.sort_by(|a, b| a.0.total_cmp(&b.0));
    neg.sort_by(|a, b| b.0.total_cmp(&a.0));
    pos.truncate(k_max);
    neg.truncate(k_max);
    let mut modes = Vec::new();
    for (sign, list) in [(1i64, pos), (-1i64, neg)] {
        for (i, (lam, mut s, ex)) in list.into_iter().enumerate() {
            let nrm: f64 = s.iter().map(|z| z.norm_sqr()).sum::<f64>() * dth;
            let scale = 1.0 / nrm.sqrt();
            s.iter_mut().for_each(|z| *z *= scale);
            let ns = s.iter().map(|z| z.norm_sqr()).sum::<f64>() * dth;
            modes.push(AngularMode {
                spec: *spec,
                k: sign * (i as i64 + 1),
                eigenvalue: lam,
                theta: grid.clone(),
                components: spec.components(),
                samples: s,
                norm_squared: ns,
                pole_exponents: ex,
            });
        }
    }
    modes.sort_by_key(|m| m.k);
    Ok(modes)
}

/// Shoots several independent problems in parallel.
pub fn shoot_many(specs: &[AngularOperatorSpec], k_max: usize) -> Vec<Result<Vec<AngularMode>>> {
    specs.par_iter().map(|s| shoot_spectrum(s, k_max)).collect()
}

// ---------------------------------------------------------------------------
// Γ¹ pairing and the b_{k,n} identification

fn gamma1_diag(components: usize) -> &'static [f64] {
    if components == 2 {
        // Γ¹ restricted to the block carrying S̃
        &[1.0, -1.0]
    } else {
        &[-1.0, 1.0, 1.0, -1.0]
    }
}

pub fn apply_gamma1(mode: &AngularMode) -> Vec<C64> {
    let d = gamma1_diag(mode.components);
    mode.samples
        .iter()
        .enumerate()
        .map(|(i, z)| z * d[i % mode.components])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaPair {
    pub k: i64,
    pub plus: AngularMode,
    /// Partner with eigenvalue −λ_k, phased so that Γ¹ψ_k = ψ_{−k}.
    pub minus: AngularMode,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedBasis {
    pub pairs: Vec<GammaPair>,
}

/// Pairs each positive mode with the Γ¹ image in the −λ eigenspace.
pub fn pair_under_gamma1(modes: &[AngularMode]) -> Result<PairedBasis> {
    let mut pairs = Vec::new();
    for m in modes.iter().filter(|m| m.eigenvalue > 0.0) {
        let tol = 1e-6 * m.eigenvalue.abs().max(1.0);
        let cands: Vec<&AngularMode> = modes
            .iter()
            .filter(|c| (c.eigenvalue + m.eigenvalue).abs() < tol)
            .collect();
        if cands.is_empty() {
            return Err(KdsError::PairingAmbiguity(f64::INFINITY));
        }
        let img = apply_gamma1(m);
        let dth = PI / m.theta.len() as f64;
        let dot =
            |a: &[C64], b: &[C64]| a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>() * dth;
        let mut proj = vec![C64::new(0.0, 0.0); img.len()];
        for c in &cands {
            let co = dot(&c.samples, &img);
            for (p, s) in proj.iter_mut().zip(&c.samples) {
                *p += co * s;
            }
        }
        let miss = dot(&img, &img).re - dot(&proj, &proj).re;
        let pre_residual = miss.max(0.0).sqrt();
        if pre_residual > 1e-4 {
            return Err(KdsError::PairingAmbiguity(pre_residual));
        }
        let nrm = dot(&proj, &proj).re.sqrt();
        proj.iter_mut().for_each(|z| *z /= nrm);
        let diff: Vec<C64> = img.iter().zip(&proj).map(|(a, b)| a - b).collect();
        let residual = dot(&diff, &diff).re.sqrt();
        let mut minus = cands[0].clone();
        minus.k = -m.k;
        minus.samples = proj;
        minus.norm_squared = dot(&minus.samples, &minus.samples).re;
        pairs.push(GammaPair {
            k: m.k,
            plus: m.clone(),
            minus,
            residual,
        });
    }
    Ok(PairedBasis { pairs })
}

/// b_{k,n}: coefficients on (ψ⁺_k, ψ⁺_{−k}, ψ⁻_k, ψ⁻_{−k}) to the four radial components.
pub fn b_kn(u: [C64; 4]) -> [C64; 4] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        (u[0] - u[1]) * s,
        (u[0] + u[1]) * s,
        (u[2] + u[3]) * s,
        (u[2] - u[3]) * s,
    ]
}

pub fn b_kn_inverse(v: [C64; 4]) -> [C64; 4] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    [
        (v[0] + v[1]) * s,
        (v[1] - v[0]) * s,
        (v[2] + v[3]) * s,
        (v[2] - v[3]) * s,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_extreme_params;

    fn params(a: f64, l: f64) -> ExtremeKdSParams {
        build_extreme_params(a, l).unwrap()
    }

    #[test]
    fn indicial() {
        assert_eq!(indicial_exponents(0.5).unwrap(), (0.0, -1.0));
        assert_eq!(indicial_exponents(-0.5).unwrap(), (0.0, -1.0));
        assert_eq!(indicial_exponents(3.5).unwrap(), (3.0, -4.0));
        assert!(matches!(
            indicial_exponents(1.0),
            Err(KdsError::NotHalfInteger(_))
        ));
    }

    #[test]
    fn basis_is_orthonormal() {
        let rule = GaussLegendre::new(std::num::NonZeroUsize::new(200).unwrap());
        let (th, w): (Vec<f64>, Vec<f64>) = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| ((x + 1.0) * FRAC_PI_2, w * FRAC_PI_2))
            .unzip();
        for (a2, b2) in [(3, 1), (1, 3), (7, 5)] {
            let (f, _) = jacobi_basis(a2, b2, 20, &th);
            for i in 0..20 {
                for j in 0..20 {
                    let g: f64 = (0..th.len()).map(|q| f[(i, q)] * f[(j, q)] * w[q]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((g - want).abs() < 1e-12, "{a2} {b2} {i} {j} {g}");
                }
            }
        }
    }

    #[test]
    fn round_sphere_oracle() {
        let pr = params(1e-8, 1.0);
        for n in [0.5, -1.5, 2.5] {
            let ev = dense_spectrum_oracle(&AngularOperatorSpec::sphere(pr, n), 64, 6).unwrap();
            let base = n.abs() + 0.5;
            for (i, v) in ev.iter().rev().take(6).enumerate() {
                assert!((v - (base + (5 - i) as f64)).abs() < 1e-10, "n={n} {ev:?}");
            }
        }
    }

    #[test]
    fn shooting_matches_oracle() {
        let pr = params(0.1, 1.0);
        for spec in [
            AngularOperatorSpec::sphere(pr, 0.5),
            AngularOperatorSpec::sphere(pr, -2.5),
            AngularOperatorSpec::double_horizon(pr, 1.5, 0.5, 0.3),
            AngularOperatorSpec::double_horizon(pr, -0.5, -1.5, 0.0),
        ] {
            let modes = shoot_spectrum(&spec, 4).unwrap();
            let ev = dense_spectrum_oracle(&spec, 96, 4).unwrap();
            let shot: Vec<f64> = {
                let mut v: Vec<f64> = modes.iter().map(|m| m.eigenvalue).collect();
                v.sort_by(f64::total_cmp);
                v
            };
            for (a, b) in shot.iter().zip(&ev) {
                assert!((a - b).abs() < 1e-8, "{spec:?}: {shot:?} vs {ev:?}");
            }
            let want = spec.n.abs() - 0.5;
            for m in &modes {
                assert!((m.norm_squared - 1.0).abs() < 1e-12);
                assert!(
                    (m.pole_exponents.0 - want).abs() < 0.05,
                    "{:?}",
                    m.pole_exponents
                );
                assert!(
                    (m.pole_exponents.1 - want).abs() < 0.05,
                    "{:?}",
                    m.pole_exponents
                );
            }
            let paired = pair_under_gamma1(&modes).unwrap();
            assert_eq!(paired.pairs.len(), 4);
            for p in &paired.pairs {
                assert!(p.residual < 1e-8, "residual {}", p.residual);
            }
        }
    }

    #[test]
    fn b_kn_round_trip() {
        let u = [
            C64::new(1.0, 2.0),
            C64::new(-0.5, 0.1),
            C64::new(0.0, 3.0),
            C64::new(2.0, -1.0),
        ];
        let v = b_kn(u);
        let back = b_kn_inverse(v);
        let n1: f64 = u.iter().map(|z| z.norm_sqr()).sum();
        let n2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        assert!((n1 - n2).abs() < 1e-12);
        for (a, b) in u.iter().zip(&back) {
            assert!((a - b).norm() < 1e-15);
        }
    }
}
