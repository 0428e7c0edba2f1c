//! Reduced one-dimensional Dirac operators on the r* line.
//!
//! Fields live on a uniform periodic grid of [−L, L). The free part Γ¹D is diagonal,
//! so with Δt = Δ it is an exact lattice shift of each branch and the split-step
//! propagator is unitary up to rounding. Runs that let mass reach the edge cells
//! are rejected instead of being allowed to wrap.

use crate::error::{KdsError, Result};
use crate::ode::{self, Tolerances};
use crate::potentials::{RadialSymbolSet, C64};
use crate::quad::{self, QuadOptions};
use nalgebra::{DMatrix, SMatrix, SymmetricEigen};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub n: usize,
    pub delta: f64,
}

impl Grid1D {
    /// Points −L + jΔ, j = 0..2L/Δ.
    pub fn new(half_length: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0) || !(half_length > 0.0) {
            return Err(KdsError::Validation(vec![format!(
                "grid needs L > 0 and delta > 0 (L = {half_length}, delta = {delta})"
            )]));
        }
        let cells = 2.0 * half_length / delta;
        let n = cells.round();
        if (cells - n).abs() > 1e-9 * cells || n < 8.0 || n as usize % 2 == 1 {
            return Err(KdsError::Validation(vec![format!(
                "2L/delta = {cells} must be an even integer >= 8"
            )]));
        }
        Ok(Grid1D {
            n: n as usize,
            delta,
        })
    }

    pub fn half_length(&self) -> f64 {
        0.5 * self.n as f64 * self.delta
    }

    pub fn x(&self, j: usize) -> f64 {
        (j as f64 - 0.5 * self.n as f64) * self.delta
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Offset of `sub` inside `self` when the two grids share lattice points.
    pub fn offset_of(&self, sub: &Grid1D) -> Result<usize> {
        let same = (self.delta - sub.delta).abs() <= 1e-14 * self.delta;
        if !same || sub.n > self.n || (self.n - sub.n) % 2 == 1 {
            return Err(KdsError::Validation(vec![format!(
                "grid of {} points at spacing {} does not embed in {} points at spacing {}",
                sub.n, sub.delta, self.n, self.delta
            )]));
        }
        Ok((self.n - sub.n) / 2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReducedKind {
    ReducedH0,
    ReducedHe,
    ProfilePlus,
    ProfileMinus,
    Free,
}

/// Γ¹ eigenvalue of each component. Component pairs (0,1) and (2,3) are the
/// blocks that the σx coupling mixes.
pub fn gamma1_signs(dim: usize) -> &'static [f64] {
    match dim {
        2 => &[-1.0, 1.0],
        _ => &[-1.0, 1.0, 1.0, -1.0],
    }
}

// sign of the coupling in block b: −Γ² restricted to (0,1) is +σx, to (2,3) is −σx
fn block_sign(b: usize) -> f64 {
    if b == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducedHamiltonian {
    pub kind: ReducedKind,
    pub coupling: f64,
    pub p: f64,
    pub dim: usize,
    pub grid: Grid1D,
    pub symbols: RadialSymbolSet,
    /// scalar part on the grid
    pub f: Vec<f64>,
    /// coupling·g on the grid
    pub cg: Vec<f64>,
}

/// Samples the reduced operator on `grid`. Blockwise the potential is f + (±)coupling·g·σx;
/// the 2-dim form is the (0,1) block, i.e. −σz D + coupling·g·σx + f.
pub fn build_reduced(
    kind: ReducedKind,
    coupling: f64,
    p: f64,
    symbols: &RadialSymbolSet,
    grid: Grid1D,
    dim: usize,
) -> Result<ReducedHamiltonian> {
    if dim != 2 && dim != 4 {
        return Err(KdsError::Validation(vec![format!(
            "dim must be 2 or 4, got {dim}"
        )]));
    }
    crate::angular::check_half_integer(p).or_else(|e| if p == 0.0 { Ok(()) } else { Err(e) })?;
    let symbols = RadialSymbolSet::new(symbols.map, p, symbols.field_mass);
    let n = grid.n;
    let (f, cg) = match kind {
        ReducedKind::ReducedH0 | ReducedKind::ReducedHe => {
            let samples: Vec<(f64, f64)> = (0..n)
                .into_par_iter()
                .map(|j| {
                    symbols
                        .radial_symbols(grid.x(j))
                        .map(|s| (s.f, coupling * s.g))
                })
                .collect::<Result<_>>()?;
            samples.into_iter().unzip()
        }
        ReducedKind::ProfilePlus => (vec![symbols.f_plus(); n], vec![0.0; n]),
        ReducedKind::ProfileMinus | ReducedKind::Free => (vec![0.0; n], vec![0.0; n]),
    };
    Ok(ReducedHamiltonian {
        kind,
        coupling,
        p,
        dim,
        grid,
        symbols,
        f,
        cg,
    })
}

impl ReducedHamiltonian {
    /// Same operator resampled on another grid.
    pub fn on_grid(&self, grid: Grid1D) -> Result<Self> {
        build_reduced(
            self.kind,
            self.coupling,
            self.p,
            &self.symbols,
            grid,
            self.dim,
        )
    }

    pub fn blocks(&self) -> usize {
        self.dim / 2
    }

    /// Γ¹ signs of the two components of block b.
    pub fn block_signs(&self, b: usize) -> (f64, f64) {
        let s = gamma1_signs(self.dim);
        (s[2 * b], s[2 * b + 1])
    }

    /// Dense Hermitian matrix Γ¹(−i∂_F) + V, ordered component-major.
    pub fn dense_matrix(&self) -> DMatrix<C64> {
        let n = self.grid.n;
        let d = fourier_derivative(n, self.grid.delta);
        let signs = gamma1_signs(self.dim);
        let mut m = DMatrix::<C64>::zeros(self.dim * n, self.dim * n);
        for c in 0..self.dim {
            for j in 0..n {
                for k in 0..n {
                    m[(c * n + j, c * n + k)] = -I * signs[c] * d[(j, k)];
                }
                m[(c * n + j, c * n + j)] += self.f[j];
            }
        }
        for b in 0..self.blocks() {
            let (c0, c1) = (2 * b, 2 * b + 1);
            for j in 0..n {
                let v = C64::from(block_sign(b) * self.cg[j]);
                m[(c0 * n + j, c1 * n + j)] = v;
                m[(c1 * n + j, c0 * n + j)] = v;
            }
        }
        m
    }

    /// Real symmetric form of block b after the rotation e^{−iπσx/4}, which takes
    /// the Γ¹ part ±σz to ∓σy, so that −i∂ ⊗ σy is real.
    pub fn real_block(&self, b: usize) -> DMatrix<f64> {
        let n = self.grid.n;
        let d = fourier_derivative(n, self.grid.delta);
        let eps = self.block_signs(b).0;
        let s = block_sign(b);
        let mut m = DMatrix::<f64>::zeros(2 * n, 2 * n);
        for j in 0..n {
            for k in 0..n {
                m[(j, n + k)] = eps * d[(j, k)];
                m[(n + j, k)] = -eps * d[(j, k)];
            }
            m[(j, j)] = self.f[j];
            m[(n + j, n + j)] = self.f[j];
            m[(j, n + j)] += s * self.cg[j];
            m[(n + j, j)] += s * self.cg[j];
        }
        m
    }
}

/// Periodic spectral derivative on n points of spacing Δ.
pub fn fourier_derivative(n: usize, delta: f64) -> DMatrix<f64> {
    let scale = 2.0 * std::f64::consts::PI / (n as f64 * delta);
    DMatrix::from_fn(n, n, |j, k| {
        if j == k {
            0.0
        } else {
            let m = j as i64 - k as i64;
            let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            0.5 * scale * sign / (std::f64::consts::PI * m as f64 / n as f64).tan()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinorField1D {
    pub grid: Grid1D,
    /// comps[c][j]
    pub comps: Vec<Vec<C64>>,
    pub norm_squared: f64,
    pub time: f64,
    /// energy window of the last spectral filter applied
    pub window: Option<(f64, f64)>,
}

impl SpinorField1D {
    pub fn zeros(grid: Grid1D, dim: usize) -> Self {
        SpinorField1D {
            grid,
            comps: vec![vec![C64::new(0.0, 0.0); grid.n]; dim],
            norm_squared: 0.0,
            time: 0.0,
            window: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn compute_norm_squared(&self) -> f64 {
        self.grid.delta
            * self
                .comps
                .iter()
                .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>())
                .sum::<f64>()
    }

    pub fn refresh_norm(&mut self) {
        self.norm_squared = self.compute_norm_squared();
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared.sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.comps {
            for z in c {
                *z *= s;
            }
        }
        self.refresh_norm();
    }

    pub fn distance(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.comps.iter().zip(&other.comps) {
            acc += a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).norm_sqr())
                .sum::<f64>();
        }
        (acc * self.grid.delta).sqrt()
    }

    pub fn inner(&self, other: &Self) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (a, b) in self.comps.iter().zip(&other.comps) {
            acc += a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<C64>();
        }
        acc * self.grid.delta
    }

    /// ⟨Γ¹⟩ / ‖ψ‖².
    pub fn gamma1_expectation(&self) -> f64 {
        let signs = gamma1_signs(self.dim());
        let mut acc = 0.0;
        for (c, v) in self.comps.iter().enumerate() {
            acc += signs[c] * v.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        acc * self.grid.delta / self.norm_squared
    }

    /// Squared norm of the Γ¹ = ±1 parts.
    pub fn branch_masses(&self) -> (f64, f64) {
        let signs = gamma1_signs(self.dim());
        let (mut minus, mut plus) = (0.0, 0.0);
        for (c, v) in self.comps.iter().enumerate() {
            let m = self.grid.delta * v.iter().map(|z| z.norm_sqr()).sum::<f64>();
            if signs[c] > 0.0 {
                plus += m
            } else {
                minus += m
            }
        }
        (minus, plus)
    }

    /// Norm squared in the first and last `cells` points.
    pub fn boundary_mass(&self, cells: usize) -> f64 {
        let n = self.grid.n;
        let k = cells.min(n / 2);
        let mut acc = 0.0;
        for c in &self.comps {
            acc += c[..k]
                .iter()
                .chain(&c[n - k..])
                .map(|z| z.norm_sqr())
                .sum::<f64>();
        }
        acc * self.grid.delta
    }

    /// Multiplies every component by a real function of r*.
    pub fn multiply(&mut self, w: impl Fn(f64) -> f64) {
        let g = self.grid;
        for c in &mut self.comps {
            for (j, z) in c.iter_mut().enumerate() {
                *z *= w(g.x(j));
            }
        }
        self.refresh_norm();
    }

    /// Mean spectral momentum ⟨−i∂⟩/‖ψ‖².
    pub fn momentum_expectation(&self) -> f64 {
        let n = self.grid.n;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let dk = 2.0 * std::f64::consts::PI / (n as f64 * self.grid.delta);
        let (mut num, mut den) = (0.0, 0.0);
        for c in &self.comps {
            let mut buf = c.clone();
            fft.process(&mut buf);
            for (m, z) in buf.iter().enumerate() {
                let k = if m <= n / 2 {
                    m as f64
                } else {
                    m as f64 - n as f64
                } * dk;
                // the Nyquist mode has no sign; it carries no weight for resolved data
                let k = if 2 * m == n { 0.0 } else { k };
                num += k * z.norm_sqr();
                den += z.norm_sqr();
            }
        }
        num / den
    }
}

/// Normalised Gaussian exp(−(r−c)²/(4w²) + ikr) on the first component with Γ¹ = `branch`.
pub fn gaussian_packet(
    grid: Grid1D,
    dim: usize,
    center: f64,
    width: f64,
    momentum: f64,
    branch: f64,
) -> Result<SpinorField1D> {
    if center.abs() + 5.0 * width > grid.half_length() {
        return Err(KdsError::SupportOverflow(format!(
            "|center| + 5 width = {} exceeds L = {}",
            center.abs() + 5.0 * width,
            grid.half_length()
        )));
    }
    if !(width > 0.0) {
        return Err(KdsError::Validation(vec![format!(
            "packet width {width} must be positive"
        )]));
    }
    let comp = gamma1_signs(dim)
        .iter()
        .position(|&s| s == branch.signum())
        .ok_or_else(|| KdsError::Validation(vec![format!("branch {branch} is not ±1")]))?;
    let mut psi = SpinorField1D::zeros(grid, dim);
    for j in 0..grid.n {
        let x = grid.x(j) - center;
        psi.comps[comp][j] = (-x * x / (4.0 * width * width) + I * momentum * grid.x(j)).exp();
    }
    psi.refresh_norm();
    let s = 1.0 / psi.norm();
    psi.scale(s);
    Ok(psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// e^{−itH}
    Forward,
    /// e^{+itH}
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitStepOptions {
    pub check_boundary: bool,
    pub boundary_cells: usize,
    pub boundary_tol: f64,
}

impl Default for SplitStepOptions {
    fn default() -> Self {
        SplitStepOptions {
            check_boundary: true,
            boundary_cells: 16,
            boundary_tol: 1e-8,
        }
    }
}

// exp(−iτ(f + vσx)) = ph·(c − i s σx). Kept in this factored form (real c, s and a
// unimodular phase) so the cross terms of the 2×2 product cancel identically.
#[derive(Clone, Copy)]
struct Kick {
    ph: C64,
    c: f64,
    s: f64,
}

// x² + y² − 1 to well below an ulp
fn unit_residual(x: f64, y: f64) -> f64 {
    let (p, q) = (x * x, y * y);
    let (ep, eq) = (x.mul_add(x, -p), y.mul_add(y, -q));
    ((p - 1.0) + q) + (ep + eq)
}

fn ulp(x: f64) -> f64 {
    let x = x.abs();
    x.next_up() - x
}

// Picks (x, y) on the unit circle as exactly as doubles allow: the smaller
// entry is re-solved from the larger, and the larger is nudged by a few ulps
// where that costs less than 1e−13 relative in the smaller. A fixed per-site
// excess |x|² + |y|² − 1 would otherwise accumulate linearly over long runs.
fn unit_pair(x: f64, y: f64) -> (f64, f64) {
    let n = x.hypot(y);
    let (x, y) = (x / n, y / n);
    let swap = x.abs() < y.abs();
    let (big, small) = if swap { (y, x) } else { (x, y) };
    let k_max = (1e-13 * small * small / (big.abs() * ulp(big))).clamp(0.0, 64.0) as i64;
    let mut best = (big, small, unit_residual(big, small).abs());
    let mut b = big;
    for _ in 0..k_max {
        b = b.next_down();
    }
    for _ in -k_max..=k_max {
        // 1 − b² with one rounding
        let p = b * b;
        let t = (1.0 - p) - b.mul_add(b, -p);
        let mut s = t.max(0.0).sqrt().copysign(small);
        for _ in 0..2 {
            s = s.next_down();
        }
        for _ in 0..5 {
            let r = unit_residual(b, s).abs();
            if r < best.2 {
                best = (b, s, r);
            }
            s = s.next_up();
        }
        b = b.next_up();
    }
    if swap {
        (best.1, best.0)
    } else {
        (best.0, best.1)
    }
}

fn kick(tau: f64, f: f64, v: f64) -> Kick {
    let (ps, pc) = (-tau * f).sin_cos();
    let (pc, ps) = unit_pair(pc, ps);
    let (s, c) = (tau * v).sin_cos();
    let (c, s) = unit_pair(c, s);
    Kick {
        ph: C64::new(pc, ps),
        c,
        s,
    }
}

fn kicks(h: &ReducedHamiltonian, tau: f64) -> Vec<Vec<Kick>> {
    (0..h.blocks())
        .map(|b| {
            let s = block_sign(b);
            (0..h.grid.n)
                .map(|j| kick(tau, h.f[j], s * h.cg[j]))
                .collect()
        })
        .collect()
}

// (c + is)·z with one rounding per real component
fn rot(c: f64, s: f64, z: C64) -> C64 {
    C64::new(c.mul_add(z.re, -s * z.im), c.mul_add(z.im, s * z.re))
}

fn apply_kicks(psi: &mut SpinorField1D, k: &[Vec<Kick>]) {
    for (b, kb) in k.iter().enumerate() {
        let (lo, hi) = psi.comps.split_at_mut(2 * b + 1);
        let (x, y) = (&mut lo[2 * b], &mut hi[0]);
        x.par_chunks_mut(4096)
            .zip(y.par_chunks_mut(4096))
            .zip(kb.par_chunks(4096))
            .for_each(|((x, y), kb)| kick_chunk(x, y, kb));
    }
}

fn kick_chunk(x: &mut [C64], y: &mut [C64], kb: &[Kick]) {
    for (j, q) in kb.iter().enumerate() {
        let (u, v) = (x[j], y[j]);
        // c·u − i s·v
        let xu = C64::new(
            q.c.mul_add(u.re, q.s * v.im),
            q.c.mul_add(u.im, -q.s * v.re),
        );
        let yv = C64::new(
            q.c.mul_add(v.re, q.s * u.im),
            q.c.mul_add(v.im, -q.s * u.re),
        );
        x[j] = rot(q.ph.re, q.ph.im, xu);
        y[j] = rot(q.ph.re, q.ph.im, yv);
    }
}

/// Strang split-step e^{∓i·steps·Δ·H} with Δt = Δ.
pub fn evolve_split_step(
    h: &ReducedHamiltonian,
    psi: &SpinorField1D,
    steps: usize,
) -> Result<SpinorField1D> {
    evolve_split_step_with(
        h,
        psi,
        steps,
        Direction::Forward,
        SplitStepOptions::default(),
    )
}

pub fn evolve_split_step_with(
    h: &ReducedHamiltonian,
    psi: &SpinorField1D,
    steps: usize,
    dir: Direction,
    opts: SplitStepOptions,
) -> Result<SpinorField1D> {
    if psi.grid != h.grid || psi.dim() != h.dim {
        return Err(KdsError::Validation(vec![
            "field and operator live on different grids or dimensions".into(),
        ]));
    }
    let mut out = psi.clone();
    if steps == 0 {
        return Ok(out);
    }
    let dt = h.grid.delta;
    let sgn = match dir {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    if h.cg.iter().all(|&v| v == 0.0) && h.f.iter().all(|&v| v == h.f[0]) {
        return transport(h, out, steps, sgn, opts);
    }
    let half = kicks(h, sgn * 0.5 * dt);
    let full = kicks(h, sgn * dt);
    let signs = gamma1_signs(h.dim);
    apply_kicks(&mut out, &half);
    for step in 0..steps {
        for (c, v) in out.comps.iter_mut().enumerate() {
            if signs[c] * sgn > 0.0 {
                v.rotate_right(1);
            } else {
                v.rotate_left(1);
            }
        }
        apply_kicks(&mut out, if step + 1 == steps { &half } else { &full });
        out.time += sgn * dt;
        if opts.check_boundary {
            let mass = out.boundary_mass(opts.boundary_cells);
            if mass > opts.boundary_tol {
                return Err(KdsError::BoundaryTouch { t: out.time, mass });
            }
        }
    }
    out.refresh_norm();
    Ok(out)
}

// Constant scalar potential: the split-step reduces to a shift by `steps` cells and
// one phase. The edge-cell mass at every intermediate step is recovered from
// prefix sums, so the boundary policy is the same as for the stepped run.
fn transport(
    h: &ReducedHamiltonian,
    mut out: SpinorField1D,
    steps: usize,
    sgn: f64,
    opts: SplitStepOptions,
) -> Result<SpinorField1D> {
    let n = h.grid.n;
    let dt = h.grid.delta;
    let signs = gamma1_signs(h.dim);
    if opts.check_boundary {
        let c = opts.boundary_cells.min(n / 2);
        let prefix: Vec<Vec<f64>> = out
            .comps
            .iter()
            .map(|v| {
                let mut p = Vec::with_capacity(2 * n + 1);
                p.push(0.0);
                let mut acc = 0.0;
                for k in 0..2 * n {
                    acc += v[k % n].norm_sqr();
                    p.push(acc);
                }
                p
            })
            .collect();
        // mass originally at positions [a, a + len) mod n
        let range = |p: &[f64], a: i64, len: usize| {
            let a = a.rem_euclid(n as i64) as usize;
            p[a + len] - p[a]
        };
        for k in 1..=steps.min(n) {
            let mut mass = 0.0;
            for (comp, p) in prefix.iter().enumerate() {
                let d = if signs[comp] * sgn > 0.0 { 1 } else { -1 };
                // cells [−c, c) after k steps came from [−c − dk, c − dk)
                mass += range(p, -(c as i64) - d * k as i64, 2 * c);
            }
            mass *= dt;
            if mass > opts.boundary_tol {
                return Err(KdsError::BoundaryTouch {
                    t: out.time + sgn * k as f64 * dt,
                    mass,
                });
            }
        }
        if steps > n {
            return Err(KdsError::BoundaryTouch {
                t: out.time + sgn * n as f64 * dt,
                mass: out.norm_squared,
            });
        }
    }
    let ph = C64::from_polar(1.0, -sgn * steps as f64 * dt * h.f[0]);
    for (comp, v) in out.comps.iter_mut().enumerate() {
        if signs[comp] * sgn > 0.0 {
            v.rotate_right(steps % n);
        } else {
            v.rotate_left(steps % n);
        }
        for z in v.iter_mut() {
            *z *= ph;
        }
    }
    out.time += sgn * steps as f64 * dt;
    out.refresh_norm();
    Ok(out)
}

/// Quintic smooth step: 0 for x ≤ 0, 1 for x ≥ 1, C² in between.
pub fn smooth_step(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * x * (10.0 + x * (-15.0 + 6.0 * x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffShape {
    /// j = 1 below `start`
    pub start: f64,
    /// j = 0 above `end`
    pub end: f64,
}

impl Default for CutoffShape {
    fn default() -> Self {
        CutoffShape {
            start: 0.5,
            end: 1.0,
        }
    }
}

impl CutoffShape {
    pub fn j(&self, s: f64) -> f64 {
        1.0 - smooth_step((s - self.start) / (self.end - self.start))
    }
}

/// U(t) = exp(−i∫₀ᵗ f̃(sΓ¹) ds), one phase per Γ¹ branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DollardPropagator {
    pub p: f64,
    pub t: f64,
    pub phase_plus: f64,
    pub phase_minus: f64,
    pub cutoff: CutoffShape,
}

fn dollard_quad() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-13,
        rel_tol: 1e-14,
        max_intervals: 20_000,
    }
}

/// f̃(s) = j(s) f(s) at r* = s.
pub fn modified_symbol(symbols: &RadialSymbolSet, cutoff: &CutoffShape, s: f64) -> Result<f64> {
    let j = cutoff.j(s);
    if j == 0.0 {
        return Ok(0.0);
    }
    Ok(j * symbols.radial_symbols(s)?.f)
}

pub fn dollard_propagator(symbols: &RadialSymbolSet, t: f64) -> Result<DollardPropagator> {
    dollard_propagator_with(symbols, t, CutoffShape::default())
}

pub fn dollard_propagator_with(
    symbols: &RadialSymbolSet,
    t: f64,
    cutoff: CutoffShape,
) -> Result<DollardPropagator> {
    if !(t >= 0.0) {
        return Err(KdsError::Validation(vec![format!(
            "Dollard time {t} must be >= 0"
        )]));
    }
    let phase = |sign: f64, upper: f64| -> Result<f64> {
        let failed = std::cell::Cell::new(None);
        let r = quad::integrate(
            |s| match modified_symbol(symbols, &cutoff, sign * s) {
                Ok(v) => v,
                Err(e) => {
                    failed.set(Some(e.to_string()));
                    f64::NAN
                }
            },
            0.0,
            upper,
            dollard_quad(),
        );
        if let Some(msg) = failed.take() {
            return Err(KdsError::QuadratureFailure(msg));
        }
        Ok(r?.value)
    };
    Ok(DollardPropagator {
        p: symbols.p,
        t,
        phase_plus: phase(1.0, t.min(cutoff.end))?,
        phase_minus: phase(-1.0, t)?,
        cutoff,
    })
}

impl DollardPropagator {
    /// ψ ↦ U(t)ψ, or U(t)*ψ when `adjoint`.
    pub fn apply(&self, psi: &mut SpinorField1D, adjoint: bool) {
        let sgn = if adjoint { 1.0 } else { -1.0 };
        let signs = gamma1_signs(psi.dim());
        for (c, v) in psi.comps.iter_mut().enumerate() {
            let ph = if signs[c] > 0.0 {
                self.phase_plus
            } else {
                self.phase_minus
            };
            let z = C64::from_polar(1.0, sgn * ph);
            for x in v.iter_mut() {
                *x *= z;
            }
        }
        psi.refresh_norm();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DysonCheck {
    pub t: f64,
    pub terms: usize,
    pub error_plus: f64,
    pub error_minus: f64,
}

/// Truncated Dyson series Σ_{n<6} (−i)ⁿ Iₙ(t), Iₙ' = f̃ Iₙ₋₁, integrated as an ODE
/// and compared with exp(−i·phase) on both branches.
pub fn dyson_check(symbols: &RadialSymbolSet, t: f64) -> Result<DysonCheck> {
    let u = dollard_propagator(symbols, t)?;
    let cutoff = u.cutoff;
    let branch = |sign: f64, phase: f64| -> Result<f64> {
        let rhs = |s: f64, y: &SMatrix<C64, 6, 1>| {
            let v = modified_symbol(symbols, &cutoff, sign * s).unwrap_or(f64::NAN);
            let mut d = SMatrix::<C64, 6, 1>::zeros();
            for n in 1..6 {
                d[n] = y[n - 1] * v;
            }
            d
        };
        let mut y0 = SMatrix::<C64, 6, 1>::zeros();
        y0[0] = C64::new(1.0, 0.0);
        let tol = Tolerances {
            rtol: 1e-13,
            atol: 1e-16,
            max_steps: 1_000_000,
        };
        let y = ode::integrate(rhs, 0.0, y0, &[t], tol)?[0];
        let mut series = C64::new(0.0, 0.0);
        let mut pw = C64::new(1.0, 0.0);
        for n in 0..6 {
            series += pw * y[n];
            pw *= -I;
        }
        Ok((series - C64::from_polar(1.0, -phase)).norm())
    };
    Ok(DysonCheck {
        t,
        terms: 6,
        error_plus: branch(1.0, u.phase_plus)?,
        error_minus: branch(-1.0, u.phase_minus)?,
    })
}

/// Dense spectral data for one operator on its own periodic grid.
#[derive(Debug, Clone)]
pub struct MatrixOracle {
    pub h: ReducedHamiltonian,
    blocks: Vec<SymmetricEigen<f64, nalgebra::Dyn>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpacing {
    pub half_length: f64,
    pub levels: usize,
    pub mean_spacing: f64,
    /// mean spacing × L
    pub scaled: f64,
}

/// Builds the oracle for `h` resampled on `grid` (periodic box).
pub fn matrix_oracle(h: &ReducedHamiltonian, grid: Grid1D) -> Result<MatrixOracle> {
    if grid.n * h.dim > 4096 * h.dim {
        return Err(KdsError::Validation(vec![format!(
            "{} points is beyond dense reach",
            grid.n
        )]));
    }
    let h = if grid == h.grid {
        h.clone()
    } else {
        h.on_grid(grid)?
    };
    let blocks = (0..h.blocks())
        .into_par_iter()
        .map(|b| {
            let e = SymmetricEigen::new(h.real_block(b));
            if e.eigenvalues.iter().any(|v| !v.is_finite()) {
                return Err(KdsError::EigensolverFailure(format!("block {b}")));
            }
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MatrixOracle { h, blocks })
}

fn rotate(x: C64, y: C64, adjoint: bool) -> (C64, C64) {
    // e^{∓iπσx/4} = (1 ∓ iσx)/√2
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let m = if adjoint { I } else { -I };
    ((x + m * y) * s, (m * x + y) * s)
}

impl MatrixOracle {
    pub fn dense_matrix(&self) -> DMatrix<C64> {
        self.h.dense_matrix()
    }

    /// All eigenvalues, ascending.
    pub fn spectrum(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self
            .blocks
            .iter()
            .flat_map(|e| e.eigenvalues.iter().copied())
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Projects ψ (on a grid containing the oracle's box) onto the eigenvectors with
    /// eigenvalues in [lo, hi]. Mass outside the box is dropped.
    pub fn spectral_filter(
        &self,
        psi: &SpinorField1D,
        window: (f64, f64),
    ) -> Result<SpinorField1D> {
        let (lo, hi) = window;
        if !(lo < hi) {
            return Err(KdsError::Validation(vec![format!(
                "empty window [{lo}, {hi}]"
            )]));
        }
        if psi.dim() != self.h.dim {
            return Err(KdsError::Validation(vec!["dimension mismatch".into()]));
        }
        let off = psi.grid.offset_of(&self.h.grid)?;
        let n = self.h.grid.n;
        let mut out = SpinorField1D::zeros(psi.grid, psi.dim());
        for (b, e) in self.blocks.iter().enumerate() {
            let mut rot = vec![C64::new(0.0, 0.0); 2 * n];
            for j in 0..n {
                let (x, y) = rotate(
                    psi.comps[2 * b][off + j],
                    psi.comps[2 * b + 1][off + j],
                    false,
                );
                rot[j] = x;
                rot[n + j] = y;
            }
            let mut proj = vec![C64::new(0.0, 0.0); 2 * n];
            for (k, &lam) in e.eigenvalues.iter().enumerate() {
                if lam < lo || lam > hi {
                    continue;
                }
                let v = e.eigenvectors.column(k);
                let c: C64 = v.iter().zip(&rot).map(|(a, z)| z * *a).sum();
                for (pz, a) in proj.iter_mut().zip(v.iter()) {
                    *pz += c * *a;
                }
            }
            for j in 0..n {
                let (x, y) = rotate(proj[j], proj[n + j], true);
                out.comps[2 * b][off + j] = x;
                out.comps[2 * b + 1][off + j] = y;
            }
        }
        out.refresh_norm();
        out.time = psi.time;
        out.window = Some(window);
        Ok(out)
    }

    /// Mean spacing of block-0 levels in `window` on boxes [−L, L) at this oracle's Δ.
    /// Levels closer than `cluster_tol` count once.
    pub fn level_spacings(
        &self,
        lengths: &[f64],
        window: (f64, f64),
        cluster_tol: f64,
    ) -> Result<Vec<LevelSpacing>> {
        lengths
            .par_iter()
            .map(|&l| {
                let grid = Grid1D::new(l, self.h.grid.delta)?;
                let h = self.h.on_grid(grid)?;
                let e = SymmetricEigen::new(h.real_block(0));
                let mut vals: Vec<f64> = e
                    .eigenvalues
                    .iter()
                    .copied()
                    .filter(|v| *v >= window.0 && *v <= window.1)
                    .collect();
                vals.sort_by(f64::total_cmp);
                let mut levels = 0;
                let mut last = f64::NEG_INFINITY;
                for v in vals {
                    if v - last > cluster_tol {
                        levels += 1;
                    }
                    last = v;
                }
                if levels == 0 {
                    return Err(KdsError::EigensolverFailure(format!(
                        "no levels in [{}, {}] at L = {l}",
                        window.0, window.1
                    )));
                }
                let mean = (window.1 - window.0) / levels as f64;
                Ok(LevelSpacing {
                    half_length: l,
                    levels,
                    mean_spacing: mean,
                    scaled: mean * l,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroenwallReport {
    pub lambda: f64,
    pub half_length: f64,
    /// ∫₀ᴸ ‖I‖
    pub integral: f64,
    pub lower_bound_factor: f64,
    pub observed_factor: f64,
}

/// Integrates (H − λ)u = 0 from r* = L down to 0 in the variable
/// w = e^{−iΓ¹(λ − c₊p)r*}u, ‖w(L)‖ = 1. Then w' = I w with
/// ‖I‖ = |f − c₊p| + |coupling|·g, and Grönwall gives ‖w‖ ≥ exp(−∫‖I‖) on [0, L].
pub fn groenwall_no_eigenvalue(
    h: &ReducedHamiltonian,
    lambda: f64,
    half_length: f64,
) -> Result<GroenwallReport> {
    if lambda == 0.0 {
        return Err(KdsError::Validation(vec![
            "Grönwall test needs lambda != 0".into(),
        ]));
    }
    if !matches!(h.kind, ReducedKind::ReducedH0 | ReducedKind::ReducedHe) {
        return Err(KdsError::Validation(vec![format!(
            "Grönwall test needs ReducedH0 or ReducedHe, got {:?}",
            h.kind
        )]));
    }
    let sym = h.symbols;
    let coupling = h.coupling;
    let fp = sym.f_plus();
    let bad = std::cell::Cell::new(None);
    let norm_i = |r: f64| match sym.radial_symbols(r) {
        Ok(s) => (s.f - fp).abs() + coupling.abs() * s.g,
        Err(e) => {
            bad.set(Some(e.to_string()));
            f64::NAN
        }
    };
    let integral = quad::integrate(norm_i, 0.0, half_length, QuadOptions::default())?.value;
    if let Some(msg) = bad.take() {
        return Err(KdsError::StiffIntegration(msg));
    }
    let stops: Vec<f64> = (0..=2000)
        .map(|k| half_length * (1.0 - k as f64 / 2000.0))
        .collect();
    let tol = Tolerances {
        rtol: 1e-11,
        atol: 1e-14,
        max_steps: 2_000_000,
    };
    let mut norms2 = vec![0.0; stops.len()];
    let nb = h.blocks();
    for b in 0..nb {
        let (e0, e1) = h.block_signs(b);
        let s = block_sign(b);
        let mu = lambda - fp;
        let rhs = |r: f64, w: &SMatrix<C64, 2, 1>| {
            let (f, g) = match sym.radial_symbols(r) {
                Ok(q) => (q.f - fp, s * coupling * q.g),
                Err(_) => (f64::NAN, f64::NAN),
            };
            // w' = −iΓ¹ e^{−iΓ¹μr}(f − c₊p + vσx)e^{iΓ¹μr} w
            let z = C64::from_polar(1.0, (e1 - e0) * mu * r);
            SMatrix::<C64, 2, 1>::new(
                -I * e0 * (f * w[0] + g * z * w[1]),
                -I * e1 * (f * w[1] + g * z.conj() * w[0]),
            )
        };
        let w = (2.0 * nb as f64).sqrt().recip();
        let u0 = SMatrix::<C64, 2, 1>::new(C64::from(w), C64::from(w));
        let ws = ode::integrate(rhs, half_length, u0, &stops, tol)?;
        for (acc, w) in norms2.iter_mut().zip(&ws) {
            *acc += w.norm_squared();
        }
    }
    let observed = norms2.iter().copied().fold(f64::INFINITY, f64::min).sqrt();
    Ok(GroenwallReport {
        lambda,
        half_length,
        integral,
        lower_bound_factor: (-integral).exp(),
        observed_factor: observed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TortoiseMap;

    fn symbols(a: f64, p: f64) -> RadialSymbolSet {
        RadialSymbolSet::new(TortoiseMap::from_al(a, 0.1).unwrap(), p, 0.0)
    }

    fn h0(l: f64, delta: f64, coupling: f64) -> ReducedHamiltonian {
        let g = Grid1D::new(l, delta).unwrap();
        build_reduced(
            ReducedKind::ReducedH0,
            coupling,
            0.5,
            &symbols(1.0, 0.5),
            g,
            4,
        )
        .unwrap()
    }

    #[test]
    fn free_transport_is_exact() {
        let g = Grid1D::new(64.0, 0.25).unwrap();
        let h = build_reduced(ReducedKind::Free, 0.0, 0.5, &symbols(1.0, 0.5), g, 4).unwrap();
        let mut psi = gaussian_packet(g, 4, 0.0, 3.0, 1.0, 1.0).unwrap();
        psi.comps[0] = psi.comps[1].iter().map(|z| z * I).collect();
        psi.refresh_norm();
        let out = evolve_split_step(&h, &psi, 40).unwrap();
        for j in 0..g.n - 40 {
            assert_eq!(out.comps[1][j + 40], psi.comps[1][j]);
            assert_eq!(out.comps[0][j], psi.comps[0][j + 40]);
        }
    }

    #[test]
    fn packet_properties() {
        let g = Grid1D::new(64.0, 0.25).unwrap();
        let psi = gaussian_packet(g, 4, 5.0, 4.0, -0.8, -1.0).unwrap();
        assert!((psi.norm_squared - 1.0).abs() < 1e-12);
        assert!((psi.gamma1_expectation() + 1.0).abs() < 1e-12);
        assert!((psi.momentum_expectation() + 0.8).abs() < 0.008);
        assert!(matches!(
            gaussian_packet(g, 4, 50.0, 4.0, 1.0, 1.0),
            Err(KdsError::SupportOverflow(_))
        ));
    }

    #[test]
    fn reduced_h0_hermitian_and_reduces_to_free() {
        let h = h0(16.0, 0.25, 1.3);
        let m = h.dense_matrix();
        let res = (&m - m.adjoint()).norm();
        assert!(res <= 1e-12, "{res}");
        let g = h.grid;
        let h00 =
            build_reduced(ReducedKind::ReducedH0, 0.0, 0.0, &symbols(1.0, 0.5), g, 4).unwrap();
        let free = build_reduced(ReducedKind::Free, 0.0, 0.0, &symbols(1.0, 0.5), g, 4).unwrap();
        assert_eq!(h00.dense_matrix(), free.dense_matrix());
    }

    #[test]
    fn plane_wave_eigenvalue() {
        let g = Grid1D::new(8.0, 0.25).unwrap();
        let h = build_reduced(
            ReducedKind::ProfileMinus,
            0.0,
            0.5,
            &symbols(1.0, 0.5),
            g,
            2,
        )
        .unwrap();
        let m = h.dense_matrix();
        let xi = 2.0 * std::f64::consts::PI * 5.0 / (g.n as f64 * g.delta);
        for (c, sign) in [(0usize, -1.0), (1, 1.0)] {
            let mut v = nalgebra::DVector::<C64>::zeros(2 * g.n);
            for j in 0..g.n {
                v[c * g.n + j] = (I * xi * g.x(j)).exp();
            }
            let r = (&m * &v - &v * C64::from(sign * xi)).norm();
            assert!(r < 1e-12 * v.norm(), "{r}");
        }
    }

    #[test]
    fn norm_drift_over_many_steps() {
        let h = h0(16.0, 0.25, 1.0);
        let psi = gaussian_packet(h.grid, 4, 0.0, 2.0, 1.0, 1.0).unwrap();
        let opts = SplitStepOptions {
            check_boundary: false,
            ..Default::default()
        };
        let out = evolve_split_step_with(&h, &psi, 100_000, Direction::Forward, opts).unwrap();
        let drift = (out.norm_squared - psi.norm_squared).abs();
        assert!(drift <= 1e-12, "{drift}");
    }

    #[test]
    fn forward_then_backward_returns() {
        let h = h0(64.0, 0.25, 1.0);
        let psi = gaussian_packet(h.grid, 4, 0.0, 3.0, 1.0, -1.0).unwrap();
        let fwd = evolve_split_step(&h, &psi, 100).unwrap();
        let back =
            evolve_split_step_with(&h, &fwd, 100, Direction::Backward, Default::default()).unwrap();
        assert!(back.distance(&psi) < 1e-10);
    }

    #[test]
    fn boundary_touch_is_reported() {
        let h = h0(16.0, 0.25, 1.0);
        let psi = gaussian_packet(h.grid, 4, 0.0, 2.0, 1.0, 1.0).unwrap();
        let r = evolve_split_step(&h, &psi, 200);
        assert!(matches!(r, Err(KdsError::BoundaryTouch { .. })));
    }

    #[test]
    fn dollard_phases() {
        let sym = symbols(1.0, 0.5);
        let u1 = dollard_propagator(&sym, 1.5).unwrap();
        let u2 = dollard_propagator(&sym, 40.0).unwrap();
        assert!((u1.phase_plus - u2.phase_plus).abs() < 1e-14);
        let g = Grid1D::new(16.0, 0.25).unwrap();
        let psi = gaussian_packet(g, 4, 0.0, 2.0, 1.0, 1.0).unwrap();
        let mut x = psi.clone();
        u2.apply(&mut x, false);
        u2.apply(&mut x, true);
        assert!(x.distance(&psi) <= 1e-14);
        let d = dyson_check(&sym, 0.25).unwrap();
        assert!(d.error_plus.max(d.error_minus) <= 1e-10, "{d:?}");
    }

    #[test]
    fn dollard_increment_matches_gauss_legendre() {
        use gauss_quad::GaussLegendre;
        let sym = symbols(1.0, 0.5);
        let t = 200.0;
        let u1 = dollard_propagator(&sym, t).unwrap();
        let u2 = dollard_propagator(&sym, 2.0 * t).unwrap();
        let rule = GaussLegendre::new(40.try_into().unwrap());
        let mut oracle = 0.0;
        for k in 0..20 {
            let (a, b) = (t + t * k as f64 / 20.0, t + t * (k + 1) as f64 / 20.0);
            oracle += rule.integrate(a, b, |s| sym.radial_symbols(-s).unwrap().f);
        }
        let got = u2.phase_minus - u1.phase_minus;
        assert!((got - oracle).abs() <= 1e-10, "{got} {oracle}");
    }

    #[test]
    fn free_level_spacing() {
        let h = build_reduced(
            ReducedKind::Free,
            0.0,
            0.5,
            &symbols(1.0, 0.5),
            Grid1D::new(100.0, 1.0).unwrap(),
            2,
        )
        .unwrap();
        let o = matrix_oracle(&h, h.grid).unwrap();
        let ls = o.level_spacings(&[100.0, 200.0], (0.5, 1.5), 1e-8).unwrap();
        for s in ls {
            let want = std::f64::consts::PI / s.half_length;
            assert!((s.mean_spacing / want - 1.0).abs() < 0.05, "{s:?}");
        }
    }

    #[test]
    fn mirror_spectrum_under_a_reversal() {
        let g = Grid1D::new(16.0, 0.25).unwrap();
        let hp = build_reduced(ReducedKind::ReducedH0, 1.0, 0.5, &symbols(1.0, 0.5), g, 4).unwrap();
        let hm =
            build_reduced(ReducedKind::ReducedH0, 1.0, 0.5, &symbols(-1.0, 0.5), g, 4).unwrap();
        let sp = matrix_oracle(&hp, g).unwrap().spectrum();
        let mut sm: Vec<f64> = matrix_oracle(&hm, g)
            .unwrap()
            .spectrum()
            .iter()
            .map(|x| -x)
            .collect();
        sm.sort_by(f64::total_cmp);
        let err = sp
            .iter()
            .zip(&sm)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn filter_is_a_projector() {
        let h = h0(64.0, 0.25, 1.0);
        let big = Grid1D::new(128.0, 0.25).unwrap();
        let psi = gaussian_packet(big, 4, 0.0, 4.0, 1.0, 1.0).unwrap();
        let o = matrix_oracle(&h, h.grid).unwrap();
        let f1 = o.spectral_filter(&psi, (0.5, 1.5)).unwrap();
        let f2 = o.spectral_filter(&f1, (0.5, 1.5)).unwrap();
        assert!(f1.norm_squared > 0.9);
        assert!(f2.norm_squared >= 0.999 * f1.norm_squared);
        assert!(f2.distance(&f1) < 1e-10);
    }

    #[test]
    fn groenwall_bounds() {
        let sym = symbols(1.0, 0.0);
        let g = Grid1D::new(8.0, 0.25).unwrap();
        let h = build_reduced(ReducedKind::ReducedH0, 0.0, 0.0, &sym, g, 4).unwrap();
        let r = groenwall_no_eigenvalue(&h, 1.0, 200.0).unwrap();
        assert!((r.observed_factor - 1.0).abs() < 1e-10);
        assert_eq!(r.lower_bound_factor, 1.0);
        let h = build_reduced(ReducedKind::ReducedH0, 1.0, 0.5, &symbols(1.0, 0.5), g, 4).unwrap();
        let r1 = groenwall_no_eigenvalue(&h, 1.0, 400.0).unwrap();
        let r2 = groenwall_no_eigenvalue(&h, 1.0, 800.0).unwrap();
        assert!(r1.observed_factor >= r1.lower_bound_factor * (1.0 - 1e-3));
        assert!((r1.integral - r2.integral).abs() <= 1e-6);
    }
}
