//! Full per-azimuthal-mode operators on the (r*, θ) strip and Crank–Nicolson evolution.
//!
//! Fields are v = sin^{1/2}θ·u on the periodic Fourier grid of radial1d in r* times the
//! staggered grid θ_j = (j + ½)π/N_θ. D_θ is the centred difference with zero values
//! beyond the poles, so every discrete operator here is Hermitian in the plain ℓ²
//! product. The centred stencil pairs each angular level with a high-frequency copy;
//! smooth data do not excite the copies.
//!
//! Storage is row-major in (r*, θ, component).

use crate::error::{KdsError, Result};
use crate::geometry::RadialPoint;
use crate::potentials::{gamma2, gamma3, hermitian_part, MatrixPotentialSet, C64, GAMMA1_DIAG, M4};
use crate::radial1d::{
    build_reduced, evolve_split_step_with, Direction, Grid1D, ReducedKind, SpinorField1D,
    SplitStepOptions,
};
use crate::scattering::{CutoffPair, Side};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

const I: C64 = C64::new(0.0, 1.0);
const ZERO: C64 = C64::new(0.0, 0.0);

pub const MIN_THETA_POINTS: usize = 32;
pub const DUMP_MAGIC: &[u8; 6] = b"KDS2D\0";
pub const DUMP_VERSION: u16 = 1;
pub const DUMP_HEADER_BYTES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub r: Grid1D,
    pub n_theta: usize,
}

impl Grid2D {
    pub fn new(r: Grid1D, n_theta: usize) -> Result<Self> {
        if n_theta < MIN_THETA_POINTS {
            return Err(KdsError::GridTooCoarse(format!(
                "N_theta = {n_theta} < {MIN_THETA_POINTS}"
            )));
        }
        Ok(Grid2D { r, n_theta })
    }

    pub fn dtheta(&self) -> f64 {
        PI / self.n_theta as f64
    }

    pub fn theta(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.dtheta()
    }

    /// Number of complex unknowns.
    pub fn len(&self) -> usize {
        self.r.n * self.n_theta * 4
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell(&self) -> f64 {
        self.r.delta * self.dtheta()
    }

    pub fn index(&self, i: usize, j: usize, c: usize) -> usize {
        (i * self.n_theta + j) * 4 + c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinorField2D {
    pub grid: Grid2D,
    pub p: f64,
    pub data: Vec<C64>,
    /// cached ∫|v|² dr* dθ
    pub charge: f64,
    pub time: f64,
    pub window: Option<(f64, f64)>,
}

impl SpinorField2D {
    pub fn zeros(grid: Grid2D, p: f64) -> Self {
        SpinorField2D {
            grid,
            p,
            data: vec![ZERO; grid.len()],
            charge: 0.0,
            time: 0.0,
            window: None,
        }
    }

    pub fn compute_charge(&self) -> f64 {
        self.grid.cell() * self.data.iter().map(|z| z.norm_sqr()).sum::<f64>()
    }

    pub fn refresh_charge(&mut self) {
        self.charge = self.compute_charge();
    }

    pub fn norm(&self) -> f64 {
        self.charge.sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|z| *z *= s);
        self.charge *= s * s;
    }

    pub fn inner(&self, other: &Self) -> C64 {
        self.grid.cell()
            * self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.conj() * b)
                .sum::<C64>()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum();
        (s * self.grid.cell()).sqrt()
    }

    /// Charge carried by the first and last `cells` rows in r*.
    pub fn boundary_mass(&self, cells: usize) -> f64 {
        let row = self.grid.n_theta * 4;
        let n = self.grid.r.n;
        let cells = cells.min(n / 2);
        let head: f64 = self.data[..cells * row].iter().map(|z| z.norm_sqr()).sum();
        let tail: f64 = self.data[(n - cells) * row..]
            .iter()
            .map(|z| z.norm_sqr())
            .sum();
        (head + tail) * self.grid.cell()
    }

    /// Pointwise multiplication by w(r*).
    pub fn multiply_radial(&mut self, w: impl Fn(f64) -> f64) {
        let row = self.grid.n_theta * 4;
        for (i, chunk) in self.data.chunks_mut(row).enumerate() {
            let s = w(self.grid.r.x(i));
            chunk.iter_mut().for_each(|z| *z *= s);
        }
        self.refresh_charge();
    }

    /// ⟨Γ¹⟩ / charge.
    pub fn gamma1_expectation(&self) -> f64 {
        let s: f64 = self
            .data
            .iter()
            .enumerate()
            .map(|(k, z)| GAMMA1_DIAG[k % 4] * z.norm_sqr())
            .sum();
        s * self.grid.cell() / self.charge
    }

    /// φ(r*)·a(θ, c), normalised to unit charge. `angular` holds 4·N_θ values.
    pub fn product(
        grid: Grid2D,
        p: f64,
        radial: impl Fn(f64) -> C64,
        angular: &[C64],
    ) -> Result<Self> {
        if angular.len() != 4 * grid.n_theta {
            return Err(KdsError::Validation(vec![format!(
                "angular profile has {} values, expected {}",
                angular.len(),
                4 * grid.n_theta
            )]));
        }
        let mut psi = SpinorField2D::zeros(grid, p);
        let row = 4 * grid.n_theta;
        for (i, chunk) in psi.data.chunks_mut(row).enumerate() {
            let phi = radial(grid.r.x(i));
            for (z, a) in chunk.iter_mut().zip(angular) {
                *z = phi * a;
            }
        }
        psi.refresh_charge();
        if !(psi.charge > 0.0) {
            return Err(KdsError::Validation(vec!["product state vanishes".into()]));
        }
        let s = 1.0 / psi.norm();
        psi.scale(s);
        Ok(psi)
    }

    /// CSV with columns r*, θ and the real and imaginary parts of the four components.
    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "rstar,theta,re0,im0,re1,im1,re2,im2,re3,im3")?;
        for i in 0..self.grid.r.n {
            for j in 0..self.grid.n_theta {
                write!(w, "{:.16e},{:.16e}", self.grid.r.x(i), self.grid.theta(j))?;
                for c in 0..4 {
                    let z = self.data[self.grid.index(i, j, c)];
                    write!(w, ",{:.16e},{:.16e}", z.re, z.im)?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Binary dump: 64-byte header, then little-endian (re, im) pairs in storage order.
    /// Header bytes 28..36 carry Δr*; the rest of the header is zero.
    pub fn write_dump(&self, w: &mut impl Write) -> Result<()> {
        let mut head = [0u8; DUMP_HEADER_BYTES];
        head[..6].copy_from_slice(DUMP_MAGIC);
        head[6..8].copy_from_slice(&DUMP_VERSION.to_le_bytes());
        head[8..12].copy_from_slice(&(self.grid.r.n as u32).to_le_bytes());
        head[12..16].copy_from_slice(&(self.grid.n_theta as u32).to_le_bytes());
        head[16..20].copy_from_slice(&((2.0 * self.p).round() as i32).to_le_bytes());
        head[20..28].copy_from_slice(&self.time.to_le_bytes());
        head[28..36].copy_from_slice(&self.grid.r.delta.to_le_bytes());
        w.write_all(&head)?;
        let mut buf = Vec::with_capacity(16 * self.data.len());
        for z in &self.data {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_dump(r: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; DUMP_HEADER_BYTES];
        r.read_exact(&mut head)?;
        let bad = |m: &str| KdsError::Io(format!("KDS2D dump: {m}"));
        if &head[..6] != DUMP_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([head[6], head[7]]);
        if version != DUMP_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let word = |k: usize| [head[k], head[k + 1], head[k + 2], head[k + 3]];
        let dword = |k: usize| {
            let mut b = [0u8; 8];
            b.copy_from_slice(&head[k..k + 8]);
            f64::from_le_bytes(b)
        };
        let nr = u32::from_le_bytes(word(8)) as usize;
        let nt = u32::from_le_bytes(word(12)) as usize;
        let p = i32::from_le_bytes(word(16)) as f64 / 2.0;
        let time = dword(20);
        let delta = dword(28);
        let grid = Grid2D::new(Grid1D::new(0.5 * nr as f64 * delta, delta)?, nt)?;
        let mut raw = vec![0u8; 16 * grid.len()];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(16)
            .map(|b| {
                let mut re = [0u8; 8];
                let mut im = [0u8; 8];
                re.copy_from_slice(&b[..8]);
                im.copy_from_slice(&b[8..]);
                C64::new(f64::from_le_bytes(re), f64::from_le_bytes(im))
            })
            .collect();
        let mut psi = SpinorField2D {
            grid,
            p,
            data,
            charge: 0.0,
            time,
            window: None,
        };
        psi.refresh_charge();
        Ok(psi)
    }

    pub fn save_dump(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_dump(&mut f)?;
        f.flush()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Operators

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    /// The full operator with D_φ → p, rotated by c₀.
    Hp,
    /// H₀ + h⁻¹V_C h⁻¹.
    H1,
    /// Γ¹D_{r*} + f + g𝔇.
    H0,
    /// Γ¹D_{r*} + f + g𝔇_e.
    He,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Assembly {
    /// Γ¹hDh + Γ²sDs + Herm(C), s² = b.
    #[default]
    Direct,
    /// h·H₀·h + V_C + V_S. Only differs from Direct for Hp.
    Split,
}

#[derive(Clone)]
pub struct FullOperator2D {
    pub kind: OperatorKind,
    pub assembly: Assembly,
    pub p: f64,
    pub mass: f64,
    pub grid: Grid2D,
    pub potentials: MatrixPotentialSet,
    /// weight on both sides of Γ¹D_{r*}, per (i, j)
    radial_w: Vec<f64>,
    /// weight on both sides of Γ²D_θ, per (i, j)
    angular_w: Vec<f64>,
    zeroth: Vec<M4>,
    /// split form: outer factor h and V_C + V_S per (i, j)
    outer: Option<(Vec<f64>, Vec<M4>)>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    wavenumbers: Vec<f64>,
}

impl std::fmt::Debug for FullOperator2D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FullOperator2D")
            .field("kind", &self.kind)
            .field("assembly", &self.assembly)
            .field("p", &self.p)
            .field("mass", &self.mass)
            .field("grid", &self.grid)
            .finish()
    }
}

struct Row {
    radial_w: Vec<f64>,
    angular_w: Vec<f64>,
    zeroth: Vec<M4>,
    outer: Vec<(f64, M4)>,
}

fn scalar(x: f64) -> M4 {
    M4::identity() * C64::new(x, 0.0)
}

/// Zeroth-order coefficient of H₀, H₁ or H_e at one point.
fn reduced_zeroth(kind: OperatorKind, set: &MatrixPotentialSet, q: &RadialPoint, theta: f64) -> M4 {
    let sym = set.symbols().at_point(q);
    let geo = set.geo(q, theta);
    let mut m = scalar(sym.f) + gamma3() * C64::new(sym.g * geo.dt.sqrt() * set.p / geo.s, 0.0);
    match kind {
        OperatorKind::H1 => m += set.theta_big(&geo) * C64::new(sym.g, 0.0),
        OperatorKind::He => m += set.vartheta(theta) * C64::new(sym.g, 0.0),
        _ => {}
    }
    m
}

/// Zeroth-order coefficient at (r*, θ) for the kinds whose first-order part is Γ¹D + gΓ²Δ^{1/4}D_θΔ^{1/4}.
pub fn pointwise_zeroth(
    kind: OperatorKind,
    set: &MatrixPotentialSet,
    rstar: f64,
    theta: f64,
) -> Result<M4> {
    if kind == OperatorKind::Hp {
        return Err(KdsError::Validation(vec![
            "Hp has r- and θ-dependent principal weights; no reduced zeroth order".into(),
        ]));
    }
    let q = set.map.inverse_point(rstar)?;
    Ok(reduced_zeroth(kind, set, &q, theta))
}

/// max_θ ‖(H₁ − H_e)(r*, θ)‖_F on an N_θ staggered grid.
pub fn double_horizon_defect(set: &MatrixPotentialSet, rstar: f64, n_theta: usize) -> Result<f64> {
    let q = set.map.inverse_point(rstar)?;
    let d = PI / n_theta as f64;
    Ok((0..n_theta)
        .map(|j| {
            let th = (j as f64 + 0.5) * d;
            (reduced_zeroth(OperatorKind::H1, set, &q, th)
                - reduced_zeroth(OperatorKind::He, set, &q, th))
            .norm()
        })
        .fold(0.0, f64::max))
}

fn assemble_row(
    kind: OperatorKind,
    assembly: Assembly,
    set: &MatrixPotentialSet,
    grid: &Grid2D,
    i: usize,
) -> Result<Row> {
    let q = set.map.inverse_point(grid.r.x(i))?;
    let sym = set.symbols().at_point(&q);
    let nt = grid.n_theta;
    let mut row = Row {
        radial_w: Vec::with_capacity(nt),
        angular_w: Vec::with_capacity(nt),
        zeroth: Vec::with_capacity(nt),
        outer: Vec::new(),
    };
    for j in 0..nt {
        let th = grid.theta(j);
        let geo = set.geo(&q, th);
        match (kind, assembly) {
            (OperatorKind::Hp, Assembly::Direct) => {
                row.radial_w.push(set.h(&geo));
                row.angular_w.push(set.b(&geo).sqrt());
                row.zeroth
                    .push(hermitian_part(&set.zeroth_order_direct(&geo)));
            }
            _ => {
                let base = if kind == OperatorKind::Hp {
                    OperatorKind::H0
                } else {
                    kind
                };
                row.radial_w.push(1.0);
                row.angular_w.push((sym.g * geo.dt.sqrt()).sqrt());
                row.zeroth.push(reduced_zeroth(base, set, &q, th));
                if kind == OperatorKind::Hp {
                    row.outer.push((set.h(&geo), set.v_c(&geo) + set.v_s(&geo)));
                }
            }
        }
    }
    Ok(row)
}

/// Assembles the operator on `grid` with the direct form.
pub fn assemble_operator(
    kind: OperatorKind,
    set: &MatrixPotentialSet,
    grid: Grid2D,
) -> Result<FullOperator2D> {
    assemble_operator_with(kind, Assembly::Direct, set, grid)
}

pub fn assemble_operator_with(
    kind: OperatorKind,
    assembly: Assembly,
    set: &MatrixPotentialSet,
    grid: Grid2D,
) -> Result<FullOperator2D> {
    crate::angular::check_half_integer(set.p)?;
    if grid.n_theta < MIN_THETA_POINTS {
        return Err(KdsError::GridTooCoarse(format!(
            "N_theta = {}",
            grid.n_theta
        )));
    }
    let assembly = if kind == OperatorKind::Hp {
        assembly
    } else {
        Assembly::Direct
    };
    let rows: Vec<Row> = (0..grid.r.n)
        .into_par_iter()
        .map(|i| assemble_row(kind, assembly, set, &grid, i))
        .collect::<Result<_>>()?;
    let mut radial_w = Vec::with_capacity(grid.r.n * grid.n_theta);
    let mut angular_w = Vec::with_capacity(grid.r.n * grid.n_theta);
    let mut zeroth = Vec::with_capacity(grid.r.n * grid.n_theta);
    let mut h = Vec::new();
    let mut v = Vec::new();
    for row in rows {
        radial_w.extend(row.radial_w);
        angular_w.extend(row.angular_w);
        zeroth.extend(row.zeroth);
        for (a, b) in row.outer {
            h.push(a);
            v.push(b);
        }
    }
    let outer = (assembly == Assembly::Split).then_some((h, v));
    let n = grid.r.n;
    let mut planner = FftPlanner::new();
    let scale = 2.0 * PI / (n as f64 * grid.r.delta);
    let wavenumbers = (0..n)
        .map(|m| {
            if 2 * m < n {
                m as f64 * scale
            } else if 2 * m == n {
                0.0
            } else {
                (m as f64 - n as f64) * scale
            }
        })
        .collect();
    Ok(FullOperator2D {
        kind,
        assembly,
        p: set.p,
        mass: set.field_mass,
        grid,
        potentials: *set,
        radial_w,
        angular_w,
        zeroth,
        outer,
        fft: planner.plan_fft_forward(n),
        ifft: planner.plan_fft_inverse(n),
        wavenumbers,
    })
}

impl FullOperator2D {
    fn apply_core(&self, x: &[C64], y: &mut [C64]) {
        let nr = self.grid.r.n;
        let nt = self.grid.n_theta;
        let ncol = 4 * nt;
        // Γ¹ w D w along r*, one FFT per (θ, component) column
        let mut buf = vec![ZERO; nr * ncol];
        for i in 0..nr {
            for col in 0..ncol {
                buf[col * nr + i] = x[i * ncol + col] * self.radial_w[i * nt + col / 4];
            }
        }
        self.fft.process(&mut buf);
        let inv = 1.0 / nr as f64;
        buf.par_chunks_mut(nr).for_each(|column| {
            for (z, k) in column.iter_mut().zip(&self.wavenumbers) {
                *z *= k * inv;
            }
        });
        self.ifft.process(&mut buf);
        let g2 = gamma2();
        let dth = self.grid.dtheta();
        y.par_chunks_mut(ncol).enumerate().for_each(|(i, yrow)| {
            let xrow = &x[i * ncol..(i + 1) * ncol];
            let aw = &self.angular_w[i * nt..(i + 1) * nt];
            let weighted = |j: usize, c: usize| xrow[4 * j + c] * aw[j];
            for j in 0..nt {
                let k = i * nt + j;
                let wr = self.radial_w[k];
                let mut d = [ZERO; 4];
                for (c, dc) in d.iter_mut().enumerate() {
                    let up = if j + 1 < nt { weighted(j + 1, c) } else { ZERO };
                    let dn = if j > 0 { weighted(j - 1, c) } else { ZERO };
                    *dc = -I * (up - dn) / (2.0 * dth);
                }
                let p = &self.zeroth[k];
                for c in 0..4 {
                    let mut acc = GAMMA1_DIAG[c] * wr * buf[(4 * j + c) * nr + i];
                    let mut ang = ZERO;
                    for e in 0..4 {
                        ang += g2[(c, e)] * d[e];
                        acc += p[(c, e)] * xrow[4 * j + e];
                    }
                    yrow[4 * j + c] = acc + aw[j] * ang;
                }
            }
        });
    }

    /// y = Hx on raw coefficient vectors.
    pub fn apply(&self, x: &[C64], y: &mut [C64]) {
        match &self.outer {
            None => self.apply_core(x, y),
            Some((h, v)) => {
                let w: Vec<C64> = x.iter().enumerate().map(|(k, z)| z * h[k / 4]).collect();
                self.apply_core(&w, y);
                y.par_chunks_mut(4).enumerate().for_each(|(k, yk)| {
                    let xk = &x[4 * k..4 * k + 4];
                    for c in 0..4 {
                        let mut acc = yk[c] * h[k];
                        for e in 0..4 {
                            acc += v[k][(c, e)] * xk[e];
                        }
                        yk[c] = acc;
                    }
                });
            }
        }
    }

    pub fn apply_field(&self, psi: &SpinorField2D) -> SpinorField2D {
        let mut out = psi.clone();
        self.apply(&psi.data, &mut out.data);
        out.refresh_charge();
        out.window = None;
        out
    }

    /// Upper bound on ‖H‖ from the pieces of the assembly.
    pub fn spectral_bound(&self) -> f64 {
        let kmax = PI / self.grid.r.delta;
        let max = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x * x));
        let pmax = self.zeroth.iter().fold(0.0f64, |m, p| m.max(p.norm()));
        let core = max(&self.radial_w) * kmax + max(&self.angular_w) / self.grid.dtheta() + pmax;
        match &self.outer {
            None => core,
            Some((h, v)) => max(h) * core + v.iter().fold(0.0f64, |m, p| m.max(p.norm())),
        }
    }

    /// Dense matrix in the storage basis (small grids only).
    pub fn dense_matrix(&self) -> DMatrix<C64> {
        let n = self.grid.len();
        let mut m = DMatrix::zeros(n, n);
        let mut e = vec![ZERO; n];
        let mut col = vec![ZERO; n];
        for k in 0..n {
            e[k] = C64::new(1.0, 0.0);
            self.apply(&e, &mut col);
            for (r, z) in col.iter().enumerate() {
                m[(r, k)] = *z;
            }
            e[k] = ZERO;
        }
        m
    }

    /// Angular part 𝔇 or 𝔇_e at fixed r* as a dense 4N_θ matrix (H0 and He only).
    pub fn angular_matrix(&self) -> Result<DMatrix<C64>> {
        let with_theta = match self.kind {
            OperatorKind::H0 => false,
            OperatorKind::He => true,
            _ => {
                return Err(KdsError::Validation(vec![format!(
                    "{:?} does not separate into radial and angular parts",
                    self.kind
                )]))
            }
        };
        let nt = self.grid.n_theta;
        let set = &self.potentials;
        let pr = &set.map.params;
        let x = (pr.a * pr.l).powi(2);
        let dth = self.grid.dtheta();
        let q: Vec<f64> = (0..nt)
            .map(|j| (1.0 + x * self.grid.theta(j).cos().powi(2)).powf(0.25))
            .collect();
        let g2 = gamma2();
        let g3 = gamma3();
        let mut m = DMatrix::zeros(4 * nt, 4 * nt);
        for j in 0..nt {
            let th = self.grid.theta(j);
            let mut pot = g3 * C64::new(q[j] * q[j] * set.p / th.sin(), 0.0);
            if with_theta {
                pot += set.vartheta(th);
            }
            for c in 0..4 {
                for e in 0..4 {
                    m[(4 * j + c, 4 * j + e)] += pot[(c, e)];
                    if g2[(c, e)] != ZERO {
                        let coef = -I * g2[(c, e)] / (2.0 * dth);
                        if j + 1 < nt {
                            m[(4 * j + c, 4 * (j + 1) + e)] += coef * q[j] * q[j + 1];
                        }
                        if j > 0 {
                            m[(4 * j + c, 4 * (j - 1) + e)] -= coef * q[j] * q[j - 1];
                        }
                    }
                }
            }
        }
        Ok(m)
    }
}

/// max |⟨x, Hy⟩ − ⟨Hx, y⟩| / (‖x‖‖Hy‖ + ‖Hx‖‖y‖) over `trials` random pairs.
pub fn hermiticity_residual(h: &FullOperator2D, trials: usize, seed: u64) -> f64 {
    let n = h.grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_vector(&mut rng, n);
        let y = random_vector(&mut rng, n);
        let mut hx = vec![ZERO; n];
        let mut hy = vec![ZERO; n];
        h.apply(&x, &mut hx);
        h.apply(&y, &mut hy);
        let a: C64 = x.iter().zip(&hy).map(|(u, v)| u.conj() * v).sum();
        let b: C64 = hx.iter().zip(&y).map(|(u, v)| u.conj() * v).sum();
        let scale = norm(&x) * norm(&hy) + norm(&hx) * norm(&y);
        worst = worst.max((a - b).norm() / scale);
    }
    worst
}

/// max ‖H_a x − H_b x‖ / ‖H_a x‖ over random x.
pub fn assembly_residual(
    a: &FullOperator2D,
    b: &FullOperator2D,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if a.grid != b.grid {
        return Err(KdsError::Validation(vec![
            "operators live on different grids".into(),
        ]));
    }
    let n = a.grid.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x = random_vector(&mut rng, n);
        let mut ya = vec![ZERO; n];
        let mut yb = vec![ZERO; n];
        a.apply(&x, &mut ya);
        b.apply(&x, &mut yb);
        let d: f64 = ya
            .iter()
            .zip(&yb)
            .map(|(u, v)| (u - v).norm_sqr())
            .sum::<f64>()
            .sqrt();
        worst = worst.max(d / norm(&ya));
    }
    Ok(worst)
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
    (0..n)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

fn norm(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn norm_sqr(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

// ---------------------------------------------------------------------------
// Crank–Nicolson

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnOptions {
    /// relative residual ‖b − Ax‖/‖b‖ of each solve
    pub tol: f64,
    pub max_iter: usize,
    pub check_boundary: bool,
    pub boundary_cells: usize,
    pub boundary_tol: f64,
}

impl Default for CnOptions {
    fn default() -> Self {
        CnOptions {
            tol: 1e-12,
            max_iter: 2000,
            check_boundary: true,
            boundary_cells: 8,
            boundary_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CnStats {
    pub steps: usize,
    pub iterations: usize,
    pub max_residual: f64,
}

impl CnStats {
    fn absorb(&mut self, o: CnStats) {
        self.steps += o.steps;
        self.iterations += o.iterations;
        self.max_residual = self.max_residual.max(o.max_residual);
    }
}

/// Solves (I + iτH)x = b by CGLS, starting from `x`.
fn cn_solve(
    h: &FullOperator2D,
    tau: f64,
    b: &[C64],
    x: &mut [C64],
    opts: &CnOptions,
) -> Result<(usize, f64)> {
    let n = b.len();
    let it_tau = I * tau;
    let mut hv = vec![ZERO; n];
    let apply_a = |v: &[C64], out: &mut [C64], hv: &mut [C64], sign: f64| {
        h.apply(v, hv);
        out.par_iter_mut()
            .zip(v.par_iter().zip(hv.par_iter()))
            .for_each(|(o, (a, b))| *o = a + it_tau * sign * b);
    };
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|z| *z = ZERO);
        return Ok((0, 0.0));
    }
    let mut r = vec![ZERO; n];
    apply_a(x, &mut r, &mut hv, 1.0);
    r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
    let mut s = vec![ZERO; n];
    apply_a(&r, &mut s, &mut hv, -1.0);
    let mut p = s.clone();
    let mut gamma = norm_sqr(&s);
    let mut q = vec![ZERO; n];
    for it in 0..opts.max_iter {
        let res = norm(&r) / bnorm;
        if !res.is_finite() {
            return Err(KdsError::SolverStall(format!(
                "non-finite residual after {it} iterations"
            )));
        }
        if res <= opts.tol {
            return Ok((it, res));
        }
        apply_a(&p, &mut q, &mut hv, 1.0);
        let alpha = gamma / norm_sqr(&q);
        x.par_iter_mut()
            .zip(p.par_iter())
            .for_each(|(xi, pi)| *xi += alpha * pi);
        r.par_iter_mut()
            .zip(q.par_iter())
            .for_each(|(ri, qi)| *ri -= alpha * qi);
        apply_a(&r, &mut s, &mut hv, -1.0);
        let gn = norm_sqr(&s);
        let beta = gn / gamma;
        gamma = gn;
        p.par_iter_mut()
            .zip(s.par_iter())
            .for_each(|(pi, si)| *pi = si + beta * *pi);
    }
    Err(KdsError::SolverStall(format!(
        "residual {:e} after {} iterations",
        norm(&r) / bnorm,
        opts.max_iter
    )))
}

/// e^{−i·steps·Δt·H}ψ by Crank–Nicolson.
pub fn evolve_cn(
    h: &FullOperator2D,
    psi: &SpinorField2D,
    dt: f64,
    steps: usize,
) -> Result<SpinorField2D> {
    evolve_cn_with(h, psi, dt, steps, Direction::Forward, CnOptions::default()).map(|(f, _)| f)
}

pub fn evolve_cn_with(
    h: &FullOperator2D,
    psi: &SpinorField2D,
    dt: f64,
    steps: usize,
    dir: Direction,
    opts: CnOptions,
) -> Result<(SpinorField2D, CnStats)> {
    if psi.grid != h.grid {
        return Err(KdsError::Validation(vec![
            "field and operator grids differ".into(),
        ]));
    }
    if !(dt > 0.0) {
        return Err(KdsError::Validation(vec![format!(
            "time step {dt} must be positive"
        )]));
    }
    let sgn = match dir {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let tau = 0.5 * sgn * dt;
    let n = psi.data.len();
    let mut cur = psi.clone();
    let mut stats = CnStats::default();
    let mut hv = vec![ZERO; n];
    let mut b = vec![ZERO; n];
    let mut x = vec![ZERO; n];
    for _ in 0..steps {
        h.apply(&cur.data, &mut hv);
        b.par_iter_mut()
            .zip(cur.data.par_iter().zip(hv.par_iter()))
            .for_each(|(bi, (v, w))| *bi = v - I * tau * w);
        // second-order predictor 2b − ψ ≈ (I − 2iτH)ψ
        x.par_iter_mut()
            .zip(b.par_iter().zip(cur.data.par_iter()))
            .for_each(|(xi, (bi, v))| *xi = 2.0 * bi - v);
        let (its, res) = cn_solve(h, tau, &b, &mut x, &opts)?;
        std::mem::swap(&mut cur.data, &mut x);
        cur.time += sgn * dt;
        stats.absorb(CnStats {
            steps: 1,
            iterations: its,
            max_residual: res,
        });
        if opts.check_boundary {
            let mass = cur.boundary_mass(opts.boundary_cells);
            if mass > opts.boundary_tol * psi.charge {
                return Err(KdsError::BoundaryTouch { t: cur.time, mass });
            }
        }
    }
    cur.refresh_charge();
    Ok((cur, stats))
}

// ---------------------------------------------------------------------------
// Energy filter

/// Chebyshev expansion of a window with Gaussian-smoothed edges,
/// χ(E) = ½[erf((E − lo)/σ) − erf((E − hi)/σ)], applied matrix-free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevFilter {
    pub window: (f64, f64),
    pub edge: f64,
    pub degree: usize,
    pub bound: f64,
    coefficients: Vec<f64>,
}

/// Energies closer to zero than this are never admitted by a filter window.
pub const ZERO_ENERGY_EXCLUSION: f64 = 0.25;

impl ChebyshevFilter {
    /// The window plus three edge widths must stay clear of [−0.25, 0.25].
    pub fn new(h: &FullOperator2D, window: (f64, f64), edge: f64) -> Result<Self> {
        let (lo, hi) = window;
        let z = ZERO_ENERGY_EXCLUSION;
        if !(lo < hi) || !(edge > 0.0) || !(lo - 3.0 * edge >= z || hi + 3.0 * edge <= -z) {
            return Err(KdsError::UnfilteredState(format!(
                "window [{lo}, {hi}] with edge {edge} reaches into [−{z}, {z}]"
            )));
        }
        let bound = 1.01 * h.spectral_bound();
        let chi = |e: f64| 0.5 * (libm::erf((e - lo) / edge) - libm::erf((e - hi) / edge));
        // Gaussian edges: coefficients fall like exp(−(kσ/2B)²)
        let max_degree = (12.0 * bound / edge).ceil() as usize + 8;
        let nodes = 2 * max_degree + 2;
        let samples: Vec<(f64, f64)> = (0..nodes)
            .map(|j| {
                let t = PI * (j as f64 + 0.5) / nodes as f64;
                (t, chi(bound * t.cos()))
            })
            .collect();
        let mut coefficients: Vec<f64> = (0..=max_degree)
            .map(|k| {
                let s: f64 = samples.iter().map(|(t, v)| v * (k as f64 * t).cos()).sum();
                s * if k == 0 { 1.0 } else { 2.0 } / nodes as f64
            })
            .collect();
        while coefficients.len() > 2 && coefficients.last().is_some_and(|c| c.abs() < 1e-15) {
            coefficients.pop();
        }
        Ok(ChebyshevFilter {
            window,
            edge,
            degree: coefficients.len() - 1,
            bound,
            coefficients,
        })
    }

    /// Value of the polynomial at energy e.
    pub fn response(&self, e: f64) -> f64 {
        let x = (e / self.bound).clamp(-1.0, 1.0);
        let t = x.acos();
        self.coefficients
            .iter()
            .enumerate()
            .map(|(k, c)| c * (k as f64 * t).cos())
            .sum()
    }

    /// χ(H)ψ, unnormalised, tagged with the window.
    pub fn apply(&self, h: &FullOperator2D, psi: &SpinorField2D) -> SpinorField2D {
        let n = psi.data.len();
        let s = 1.0 / self.bound;
        let mut prev = psi.data.clone();
        let mut cur = vec![ZERO; n];
        h.apply(&prev, &mut cur);
        cur.iter_mut().for_each(|z| *z *= s);
        let mut acc: Vec<C64> = prev
            .iter()
            .zip(&cur)
            .map(|(a, b)| a * self.coefficients[0] + b * self.coefficients[1])
            .collect();
        let mut next = vec![ZERO; n];
        for c in &self.coefficients[2..] {
            h.apply(&cur, &mut next);
            next.par_iter_mut()
                .zip(prev.par_iter())
                .for_each(|(nx, pv)| *nx = 2.0 * s * *nx - pv);
            acc.par_iter_mut()
                .zip(next.par_iter())
                .for_each(|(a, v)| *a += c * v);
            std::mem::swap(&mut prev, &mut cur);
            std::mem::swap(&mut cur, &mut next);
        }
        let mut out = psi.clone();
        out.data = acc;
        out.refresh_charge();
        out.window = Some(self.window);
        out
    }
}

/// Filters ψ and renormalises to its input charge.
pub fn energy_filter(
    h: &FullOperator2D,
    psi: &SpinorField2D,
    filter: &ChebyshevFilter,
) -> Result<SpinorField2D> {
    let mut out = filter.apply(h, psi);
    if !(out.charge > 1e-300) {
        return Err(KdsError::UnfilteredState(
            "no spectral weight in the window".into(),
        ));
    }
    let s = (psi.charge / out.charge).sqrt();
    out.scale(s);
    Ok(out)
}

/// ‖χ(H)φ‖²/‖φ‖²: close to one exactly when φ already sits in the window.
pub fn window_mass(h: &FullOperator2D, phi: &SpinorField2D, filter: &ChebyshevFilter) -> f64 {
    filter.apply(h, phi).charge / phi.charge
}

// ---------------------------------------------------------------------------
// Ladders

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveOperatorEstimate2D {
    pub cutoff: Option<Side>,
    pub times: Vec<f64>,
    pub increments: Vec<f64>,
    pub image_norms: Vec<f64>,
    pub input_norm: f64,
    pub stats: CnStats,
}

impl WaveOperatorEstimate2D {
    pub fn final_increment(&self) -> f64 {
        self.increments.last().copied().unwrap_or(0.0)
    }

    /// Increments after the first never grow.
    pub fn monotone_from_second(&self) -> bool {
        self.increments
            .get(1..)
            .unwrap_or(&[])
            .windows(2)
            .all(|w| w[1] <= w[0])
    }
}

fn steps_for(t: f64, dt: f64) -> Result<usize> {
    let s = t / dt;
    if (s - s.round()).abs() > 1e-9 * s.max(1.0) || s < 0.0 {
        return Err(KdsError::Validation(vec![format!(
            "time {t} is not a multiple of the step {dt}"
        )]));
    }
    Ok(s.round() as usize)
}

/// Ladder of e^{itH_b}·c·e^{−itH_a}ψ for t = t0·2^i, with Cauchy increments.
#[allow(clippy::too_many_arguments)]
pub fn compare_dynamics_2d(
    ha: &FullOperator2D,
    hb: &FullOperator2D,
    cutoff: Option<(Side, CutoffPair)>,
    psi: &SpinorField2D,
    dt: f64,
    t0: f64,
    levels: usize,
    opts: CnOptions,
) -> Result<WaveOperatorEstimate2D> {
    match psi.window {
        Some((lo, hi)) if lo > 0.0 || hi < 0.0 => {}
        _ => {
            return Err(KdsError::UnfilteredState(
                "compare_dynamics_2d needs an energy-filtered state".into(),
            ))
        }
    }
    let times = crate::scattering::ladder(t0, levels);
    let mut stats = CnStats::default();
    let mut forward = psi.clone();
    let mut done = 0;
    let mut images: Vec<SpinorField2D> = Vec::with_capacity(levels);
    for &t in &times {
        let n = steps_for(t, dt)?;
        let (f, s) = evolve_cn_with(ha, &forward, dt, n - done, Direction::Forward, opts)?;
        stats.absorb(s);
        forward = f;
        done = n;
        let mut mid = forward.clone();
        if let Some((side, pair)) = cutoff {
            mid.multiply_radial(|r| pair.on(side, r));
        }
        let (img, s) = evolve_cn_with(hb, &mid, dt, n, Direction::Backward, opts)?;
        stats.absorb(s);
        images.push(img);
    }
    let increments = images.windows(2).map(|w| w[1].distance(&w[0])).collect();
    Ok(WaveOperatorEstimate2D {
        cutoff: cutoff.map(|c| c.0),
        times,
        increments,
        image_norms: images.iter().map(|f| f.norm()).collect(),
        input_norm: psi.norm(),
        stats,
    })
}

// ---------------------------------------------------------------------------
// Mode expansion

/// Orthonormal eigenvectors e_k of the discrete angular operator with eigenvalue μ_k > 0.
/// The partners Γ¹e_k carry −μ_k.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularBasis2D {
    pub coupling: Vec<f64>,
    pub vectors: Vec<Vec<C64>>,
}

pub fn gamma1_apply(v: &[C64]) -> Vec<C64> {
    v.iter()
        .enumerate()
        .map(|(k, z)| z * GAMMA1_DIAG[k % 4])
        .collect()
}

pub fn angular_basis(h: &FullOperator2D) -> Result<AngularBasis2D> {
    let m = h.angular_matrix()?;
    let dim = m.nrows();
    let eig = SymmetricEigen::try_new(m, 1e-15, 10_000)
        .ok_or_else(|| KdsError::EigensolverFailure("angular matrix".into()))?;
    let mut pos: Vec<(f64, Vec<C64>)> = Vec::new();
    for (k, &mu) in eig.eigenvalues.iter().enumerate() {
        if mu.abs() < 1e-8 {
            return Err(KdsError::EigensolverFailure(format!(
                "near-zero angular eigenvalue {mu:e}"
            )));
        }
        if mu > 0.0 {
            pos.push((mu, eig.eigenvectors.column(k).iter().copied().collect()));
        }
    }
    if 2 * pos.len() != dim {
        return Err(KdsError::EigensolverFailure(format!(
            "{} positive eigenvalues out of {dim}",
            pos.len()
        )));
    }
    pos.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (coupling, vectors) = pos.into_iter().unzip();
    Ok(AngularBasis2D { coupling, vectors })
}

impl AngularBasis2D {
    /// (e_k + s·Γ¹e_k)/√2, the part of mode k with Γ¹ = s.
    pub fn branch_vector(&self, k: usize, branch: f64) -> Vec<C64> {
        let e = &self.vectors[k];
        let g = gamma1_apply(e);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        e.iter()
            .zip(&g)
            .map(|(a, b)| (a + branch.signum() * b) * s)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeExpansionReport {
    pub t: f64,
    pub modes: usize,
    /// ‖ψ − Σ projections‖/‖ψ‖ at t = 0
    pub completeness: f64,
    /// ‖2D evolution − recombined 1D evolutions‖/‖ψ‖ at t
    pub deviation: f64,
}

/// Evolves ψ for `steps` steps of Δt = Δr* with Crank–Nicolson in 2D and, mode by mode,
/// with the reduced split-step propagator, then compares.
pub fn mode_expansion_check(
    h: &FullOperator2D,
    psi: &SpinorField2D,
    steps: usize,
) -> Result<ModeExpansionReport> {
    let reduced_kind = match h.kind {
        OperatorKind::H0 => ReducedKind::ReducedH0,
        OperatorKind::He => ReducedKind::ReducedHe,
        k => {
            return Err(KdsError::Validation(vec![format!(
                "{k:?} has no mode expansion"
            )]));
        }
    };
    let basis = angular_basis(h)?;
    let grid = h.grid;
    let nr = grid.r.n;
    let row = 4 * grid.n_theta;
    let dt = grid.r.delta;
    let symbols = h.potentials.symbols();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let opts = SplitStepOptions {
        check_boundary: false,
        ..Default::default()
    };
    let evolved: Vec<(Vec<C64>, Vec<C64>)> = basis
        .coupling
        .par_iter()
        .zip(basis.vectors.par_iter())
        .map(|(&mu, e)| {
            let ge = gamma1_apply(e);
            let mut f = SpinorField1D::zeros(grid.r, 2);
            for i in 0..nr {
                let v = &psi.data[i * row..(i + 1) * row];
                let u: C64 = e.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
                let w: C64 = ge.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
                f.comps[0][i] = (u - w) * s;
                f.comps[1][i] = (u + w) * s;
            }
            f.refresh_norm();
            let red = build_reduced(reduced_kind, mu, h.p, &symbols, grid.r, 2)?;
            let out = evolve_split_step_with(&red, &f, steps, Direction::Forward, opts)?;
            let u: Vec<C64> = (0..nr)
                .map(|i| (f.comps[0][i] + f.comps[1][i]) * s)
                .collect();
            let u_t: Vec<C64> = (0..nr)
                .map(|i| (out.comps[0][i] + out.comps[1][i]) * s)
                .collect();
            let w_t: Vec<C64> = (0..nr)
                .map(|i| (out.comps[1][i] - out.comps[0][i]) * s)
                .collect();
            let w: Vec<C64> = (0..nr)
                .map(|i| (f.comps[1][i] - f.comps[0][i]) * s)
                .collect();
            let mut at0 = vec![ZERO; grid.len()];
            let mut at_t = vec![ZERO; grid.len()];
            for i in 0..nr {
                for k in 0..row {
                    at0[i * row + k] = u[i] * e[k] + w[i] * ge[k];
                    at_t[i * row + k] = u_t[i] * e[k] + w_t[i] * ge[k];
                }
            }
            Ok((at0, at_t))
        })
        .collect::<Result<_>>()?;
    let mut sum0 = vec![ZERO; grid.len()];
    let mut sum_t = vec![ZERO; grid.len()];
    for (a, b) in &evolved {
        sum0.iter_mut().zip(a).for_each(|(x, y)| *x += y);
        sum_t.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    }
    let cn_opts = CnOptions {
        check_boundary: false,
        ..Default::default()
    };
    let (two_d, _) = evolve_cn_with(h, psi, dt, steps, Direction::Forward, cn_opts)?;
    let scale = grid.cell().sqrt() / psi.norm();
    let dist = |a: &[C64], b: &[C64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt()
            * scale
    };
    Ok(ModeExpansionReport {
        t: steps as f64 * dt,
        modes: basis.coupling.len(),
        completeness: dist(&sum0, &psi.data),
        deviation: dist(&sum_t, &two_d.data),
    })
}

/// Gaussian in r* times an angular profile, unit charge.
pub fn packet_2d(
    grid: Grid2D,
    p: f64,
    center: f64,
    width: f64,
    momentum: f64,
    angular: &[C64],
) -> Result<SpinorField2D> {
    if center.abs() + 5.0 * width > grid.r.half_length() {
        return Err(KdsError::SupportOverflow(format!(
            "|center| + 5 width = {} exceeds L = {}",
            center.abs() + 5.0 * width,
            grid.r.half_length()
        )));
    }
    SpinorField2D::product(
        grid,
        p,
        |r| {
            let x = r - center;
            (C64::new(-x * x / (4.0 * width * width), momentum * r)).exp()
        },
        angular,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TortoiseMap;

    fn set(p: f64, mass: f64) -> MatrixPotentialSet {
        MatrixPotentialSet::new(TortoiseMap::from_al(1.0, 0.1).unwrap(), p, mass)
    }

    fn grid(l: f64, d: f64, nt: usize) -> Grid2D {
        Grid2D::new(Grid1D::new(l, d).unwrap(), nt).unwrap()
    }

    #[test]
    fn coarse_theta_grid_is_rejected() {
        let g = Grid2D::new(Grid1D::new(8.0, 0.5).unwrap(), 16);
        assert!(matches!(g, Err(KdsError::GridTooCoarse(_))));
    }

    #[test]
    fn operators_are_hermitian() {
        let g = grid(8.0, 0.5, 32);
        for kind in [
            OperatorKind::Hp,
            OperatorKind::H1,
            OperatorKind::H0,
            OperatorKind::He,
        ] {
            for asm in [Assembly::Direct, Assembly::Split] {
                let h = assemble_operator_with(kind, asm, &set(0.5, 0.3), g).unwrap();
                let r = hermiticity_residual(&h, 3, 7);
                assert!(r < 1e-13, "{kind:?} {asm:?}: {r:e}");
            }
        }
    }

    #[test]
    fn dense_matrix_is_hermitian() {
        let g = grid(4.0, 0.5, 32);
        let h = assemble_operator(OperatorKind::Hp, &set(1.5, 0.0), g).unwrap();
        let m = h.dense_matrix();
        let r = (&m - m.adjoint()).norm() / m.norm();
        assert!(r < 1e-14, "{r:e}");
    }

    #[test]
    fn two_assemblies_agree() {
        let g = grid(16.0, 0.5, 32);
        for p in [0.5, -1.5] {
            let s = set(p, 0.2);
            let a = assemble_operator_with(OperatorKind::Hp, Assembly::Direct, &s, g).unwrap();
            let b = assemble_operator_with(OperatorKind::Hp, Assembly::Split, &s, g).unwrap();
            let r = assembly_residual(&a, &b, 3, 11).unwrap();
            assert!(r < 1e-12, "p = {p}: {r:e}");
        }
    }

    #[test]
    fn angular_spectrum_is_symmetric_and_gapped() {
        let g = grid(4.0, 0.5, 64);
        let h = assemble_operator(OperatorKind::H0, &set(0.5, 0.0), g).unwrap();
        let b = angular_basis(&h).unwrap();
        // the lowest level of the perturbed sphere operator sits just above 1
        assert!(
            b.coupling[0] > 0.99 && b.coupling[0] < 1.2,
            "{}",
            b.coupling[0]
        );
        for (k, e) in b.vectors.iter().enumerate().take(6) {
            let ge = gamma1_apply(e);
            let overlap: C64 = e.iter().zip(&ge).map(|(a, b)| a.conj() * b).sum();
            assert!(overlap.norm() < 1e-10, "mode {k}");
        }
    }

    #[test]
    fn dump_round_trip() {
        let g = grid(4.0, 0.5, 32);
        let h = assemble_operator(OperatorKind::He, &set(0.5, 0.0), g).unwrap();
        let b = angular_basis(&h).unwrap();
        let mut psi = packet_2d(g, 0.5, 0.0, 0.5, 1.0, &b.branch_vector(0, 1.0)).unwrap();
        psi.time = 1.25;
        let mut bytes = Vec::new();
        psi.write_dump(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 64 + 16 * g.len());
        assert_eq!(&bytes[..6], b"KDS2D\0");
        let back = SpinorField2D::read_dump(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.data, psi.data);
        assert_eq!(back.grid, psi.grid);
        assert_eq!(back.p, 0.5);
        assert_eq!(back.time, 1.25);
    }

    #[test]
    fn cn_conserves_charge_and_reverses() {
        let g = grid(16.0, 0.25, 32);
        let h = assemble_operator(OperatorKind::Hp, &set(0.5, 0.0), g).unwrap();
        let hb = assemble_operator(OperatorKind::H0, &set(0.5, 0.0), g).unwrap();
        let b = angular_basis(&hb).unwrap();
        let psi = packet_2d(g, 0.5, 0.0, 1.5, 1.0, &b.branch_vector(0, 1.0)).unwrap();
        let (fwd, st) =
            evolve_cn_with(&h, &psi, 0.1, 40, Direction::Forward, CnOptions::default()).unwrap();
        assert!((fwd.charge - 1.0).abs() < 1e-11, "{}", fwd.charge);
        assert!((fwd.compute_charge() - fwd.charge).abs() < 1e-13);
        assert!(st.max_residual <= 1e-12);
        let (back, _) =
            evolve_cn_with(&h, &fwd, 0.1, 40, Direction::Backward, CnOptions::default()).unwrap();
        assert!(back.distance(&psi) < 1e-9, "{:e}", back.distance(&psi));
    }

    #[test]
    fn filter_window_mass() {
        let g = grid(32.0, 0.5, 32);
        let h = assemble_operator(OperatorKind::He, &set(0.5, 0.0), g).unwrap();
        let b = angular_basis(&h).unwrap();
        let psi = packet_2d(g, 0.5, 4.0, 4.0, 1.5, &b.branch_vector(0, 1.0)).unwrap();
        let f = ChebyshevFilter::new(&h, (0.6, 3.0), 0.1).unwrap();
        let phi = energy_filter(&h, &psi, &f).unwrap();
        let m = window_mass(&h, &phi, &f);
        assert!(m >= 0.999, "window mass {m}");
        assert!(ChebyshevFilter::new(&h, (0.4, 2.0), 0.1).is_err());
        assert!((f.response(1.5) - 1.0).abs() < 1e-12 && f.response(-1.5).abs() < 1e-12);
    }

    #[test]
    fn mode_expansion_matches_reduced_evolution() {
        let g = grid(6.4, 0.05, 32);
        let h = assemble_operator(OperatorKind::He, &set(0.5, 0.0), g).unwrap();
        let b = angular_basis(&h).unwrap();
        let psi = packet_2d(g, 0.5, 0.0, 1.0, 0.5, &b.branch_vector(0, 1.0)).unwrap();
        let rep = mode_expansion_check(&h, &psi, 50).unwrap();
        assert!(rep.completeness < 1e-12, "{rep:?}");
        assert!(rep.deviation < 1e-3, "{rep:?}");
    }

    #[test]
    fn theta_independent_data_follow_the_mode_sum() {
        let g = grid(6.4, 0.025, 32);
        let h = assemble_operator(OperatorKind::H0, &set(0.5, 0.0), g).unwrap();
        // u independent of θ, i.e. v = sin^{1/2}θ
        let mut flat = vec![ZERO; 4 * g.n_theta];
        for j in 0..g.n_theta {
            flat[4 * j + 1] = C64::new(g.theta(j).sin().sqrt(), 0.0);
        }
        let psi = packet_2d(g, 0.5, 0.0, 1.0, 0.0, &flat).unwrap();
        let rep = mode_expansion_check(&h, &psi, 50).unwrap();
        assert!(rep.completeness < 1e-12, "{rep:?}");
        assert!(rep.deviation < 1e-4, "{rep:?}");
    }

    #[test]
    fn crank_nicolson_is_second_order() {
        let g = grid(16.0, 0.25, 32);
        let h = assemble_operator(OperatorKind::Hp, &set(0.5, 0.0), g).unwrap();
        let b = angular_basis(&assemble_operator(OperatorKind::H0, &set(0.5, 0.0), g).unwrap())
            .unwrap();
        let psi = packet_2d(g, 0.5, 0.0, 1.5, 1.0, &b.branch_vector(0, 1.0)).unwrap();
        let run = |dt: f64, n: usize| evolve_cn(&h, &psi, dt, n).unwrap();
        let a = run(0.2, 10);
        let bb = run(0.1, 20);
        let c = run(0.05, 40);
        let ratio = a.distance(&bb) / bb.distance(&c);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn h1_minus_he_decays_like_inverse_square() {
        let s = set(0.5, 0.4);
        let m = s.map.params.mass;
        let scaled: Vec<f64> = [1e3, 2e3, 4e3]
            .iter()
            .map(|x| {
                let r = -x / m;
                double_horizon_defect(&s, r, 64).unwrap() * r * r
            })
            .collect();
        assert!(
            scaled.windows(2).all(|w| (w[1] / w[0] - 1.0).abs() < 0.05),
            "{scaled:?}"
        );
    }
}
