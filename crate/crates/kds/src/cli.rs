//! Run configuration, manifests and the workflows behind the `kds` binary.
//!
//! Configuration files are line oriented:
//!
//! ```text
//! # comment
//! a = 1.0            # keys before any header belong to [params]
//! l = 0.1
//! [grid1d]
//! half_length = 400
//! ```

use crate::angular::{shoot_spectrum, AngularOperatorSpec};
use crate::error::{KdsError, LineError, Result};
use crate::field2d::{
    angular_basis, assemble_operator_with, energy_filter, evolve_cn_with, packet_2d, Assembly,
    ChebyshevFilter, CnOptions, Grid2D, OperatorKind, SpinorField2D,
};
use crate::geometry::{build_extreme_params, TortoiseMap};
use crate::potentials::{MatrixPotentialSet, RadialSymbolSet};
use crate::radial1d::{
    build_reduced, evolve_split_step_with, gaussian_packet, matrix_oracle, Direction, Grid1D,
    ReducedHamiltonian, ReducedKind, SpinorField1D, SplitStepOptions,
};
use crate::scattering::{
    chain_compose_with, ladder, velocity_cone_report, wave_operator_estimate_with, CutoffPair, Side,
};
use crate::verify;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

// ---------------------------------------------------------------------------
// Line format

/// One `key = value` line with the section it sits in and its trailing comment.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub section: String,
    pub key: String,
    pub value: String,
    pub note: Option<String>,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Splits text into entries. Keys before the first header go to `default_section`.
/// Every malformed line is reported.
pub fn parse_entries(text: &str, default_section: &str) -> (Vec<Entry>, Vec<LineError>) {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    let mut section = default_section.to_string();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let (body, note) = match raw.split_once('#') {
            Some((b, n)) => (
                b.trim(),
                Some(n.trim().to_string()).filter(|n| !n.is_empty()),
            ),
            None => (raw.trim(), None),
        };
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| LineError { line, msg };
        if let Some(rest) = body.strip_prefix('[') {
            match rest.strip_suffix(']') {
                Some(name) if is_ident(name.trim()) => section = name.trim().to_string(),
                _ => errors.push(err(format!("malformed section header `{body}`"))),
            }
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            errors.push(err(format!("expected `key = value`, found `{body}`")));
            continue;
        };
        let (k, v) = (k.trim(), v.trim());
        if !is_ident(k) {
            errors.push(err(format!("malformed key `{k}`")));
            continue;
        }
        if v.is_empty() {
            errors.push(err(format!("missing value for `{k}`")));
            continue;
        }
        if let Some(first) = seen.insert((section.clone(), k.to_string()), line) {
            errors.push(err(format!(
                "`{k}` in [{section}] already set on line {first}"
            )));
            continue;
        }
        out.push(Entry {
            line,
            section: section.clone(),
            key: k.to_string(),
            value: v.to_string(),
            note,
        });
    }
    (out, errors)
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub a: f64,
    pub l: f64,
    pub p: f64,
    /// field mass m
    pub mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1dConfig {
    pub half_length: f64,
    pub delta: f64,
    /// box of the dense spectral filter
    pub oracle_half_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketConfig {
    pub center: f64,
    pub width: f64,
    pub momentum: f64,
    /// the seed shifts the center uniformly within ±jitter
    pub jitter: f64,
    pub window_lo: f64,
    pub window_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderConfig {
    pub t0: f64,
    pub levels: usize,
    pub dollard: bool,
    pub cutoff_lo: f64,
    pub cutoff_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evolve1dConfig {
    pub steps: usize,
    pub every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularConfig {
    pub n: f64,
    pub k_max: usize,
    pub grid_size: usize,
    /// k of the mode whose eigenvalue couples the reduced radial operators
    pub mode: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2dConfig {
    pub nr: usize,
    pub delta: f64,
    pub n_theta: usize,
    pub dt: f64,
    pub steps: usize,
    pub every: usize,
    pub kind: OperatorKind,
    pub assembly: Assembly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ladder2dConfig {
    pub t0: f64,
    pub levels: usize,
    pub width: f64,
    pub momentum: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    pub edge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSection {
    pub seed: u64,
    /// 0 leaves the choice to the thread pool
    pub threads: usize,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub params: Params,
    pub grid1d: Grid1dConfig,
    pub packet: PacketConfig,
    pub ladder: LadderConfig,
    pub evolve1d: Evolve1dConfig,
    pub angular: AngularConfig,
    pub grid2d: Grid2dConfig,
    pub ladder2d: Ladder2dConfig,
    pub run: RunSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: Params {
                a: 1.0,
                l: 0.1,
                p: 0.5,
                mass: 0.0,
            },
            grid1d: Grid1dConfig {
                half_length: 4000.0,
                delta: 0.25,
                oracle_half_length: 64.0,
            },
            packet: PacketConfig {
                center: 0.0,
                width: 4.0,
                momentum: 1.2,
                jitter: 0.0,
                window_lo: 0.5,
                window_hi: 1.5,
            },
            ladder: LadderConfig {
                t0: 200.0,
                levels: 4,
                dollard: true,
                cutoff_lo: -5.0,
                cutoff_hi: 5.0,
            },
            evolve1d: Evolve1dConfig {
                steps: 4000,
                every: 400,
            },
            angular: AngularConfig {
                n: 0.5,
                k_max: 8,
                grid_size: 64,
                mode: 1,
            },
            grid2d: Grid2dConfig {
                nr: 512,
                delta: 0.5,
                n_theta: 64,
                dt: 0.25,
                steps: 1000,
                every: 100,
                kind: OperatorKind::Hp,
                assembly: Assembly::Direct,
            },
            ladder2d: Ladder2dConfig {
                t0: 10.0,
                levels: 4,
                width: 4.0,
                momentum: 2.0,
                window_lo: 0.8,
                window_hi: 3.0,
                edge: 0.15,
            },
            run: RunSection {
                seed: 0,
                threads: 0,
                out: PathBuf::from("out"),
            },
        }
    }
}

fn parse_f64(v: &str) -> std::result::Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("`{v}` is not a finite number")),
    }
}

fn parse_usize(v: &str) -> std::result::Result<usize, String> {
    v.parse()
        .map_err(|_| format!("`{v}` is not a non-negative integer"))
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("`{v}` is not true or false")),
    }
}

fn parse_kind(v: &str) -> std::result::Result<OperatorKind, String> {
    match v.to_ascii_lowercase().as_str() {
        "hp" => Ok(OperatorKind::Hp),
        "h1" => Ok(OperatorKind::H1),
        "h0" => Ok(OperatorKind::H0),
        "he" => Ok(OperatorKind::He),
        _ => Err(format!("`{v}` is not one of Hp, H1, H0, He")),
    }
}

fn kind_name(k: OperatorKind) -> &'static str {
    match k {
        OperatorKind::Hp => "Hp",
        OperatorKind::H1 => "H1",
        OperatorKind::H0 => "H0",
        OperatorKind::He => "He",
    }
}

fn parse_assembly(v: &str) -> std::result::Result<Assembly, String> {
    match v.to_ascii_lowercase().as_str() {
        "direct" => Ok(Assembly::Direct),
        "split" => Ok(Assembly::Split),
        _ => Err(format!("`{v}` is not direct or split")),
    }
}

impl RunConfig {
    fn set(&mut self, e: &Entry) -> std::result::Result<(), String> {
        let v = e.value.as_str();
        match (e.section.as_str(), e.key.as_str()) {
            ("params", "a") => self.params.a = parse_f64(v)?,
            ("params", "l") => self.params.l = parse_f64(v)?,
            ("params", "p") => self.params.p = parse_f64(v)?,
            ("params", "mass") => self.params.mass = parse_f64(v)?,
            ("grid1d", "half_length") => self.grid1d.half_length = parse_f64(v)?,
            ("grid1d", "delta") => self.grid1d.delta = parse_f64(v)?,
            ("grid1d", "oracle_half_length") => self.grid1d.oracle_half_length = parse_f64(v)?,
            ("packet", "center") => self.packet.center = parse_f64(v)?,
            ("packet", "width") => self.packet.width = parse_f64(v)?,
            ("packet", "momentum") => self.packet.momentum = parse_f64(v)?,
            ("packet", "jitter") => self.packet.jitter = parse_f64(v)?,
            ("packet", "window_lo") => self.packet.window_lo = parse_f64(v)?,
            ("packet", "window_hi") => self.packet.window_hi = parse_f64(v)?,
            ("ladder", "t0") => self.ladder.t0 = parse_f64(v)?,
            ("ladder", "levels") => self.ladder.levels = parse_usize(v)?,
            ("ladder", "dollard") => self.ladder.dollard = parse_bool(v)?,
            ("ladder", "cutoff_lo") => self.ladder.cutoff_lo = parse_f64(v)?,
            ("ladder", "cutoff_hi") => self.ladder.cutoff_hi = parse_f64(v)?,
            ("evolve1d", "steps") => self.evolve1d.steps = parse_usize(v)?,
            ("evolve1d", "every") => self.evolve1d.every = parse_usize(v)?,
            ("angular", "n") => self.angular.n = parse_f64(v)?,
            ("angular", "k_max") => self.angular.k_max = parse_usize(v)?,
            ("angular", "grid_size") => self.angular.grid_size = parse_usize(v)?,
            ("angular", "mode") => self.angular.mode = parse_usize(v)?,
            ("grid2d", "nr") => self.grid2d.nr = parse_usize(v)?,
            ("grid2d", "delta") => self.grid2d.delta = parse_f64(v)?,
            ("grid2d", "n_theta") => self.grid2d.n_theta = parse_usize(v)?,
            ("grid2d", "dt") => self.grid2d.dt = parse_f64(v)?,
            ("grid2d", "steps") => self.grid2d.steps = parse_usize(v)?,
            ("grid2d", "every") => self.grid2d.every = parse_usize(v)?,
            ("grid2d", "kind") => self.grid2d.kind = parse_kind(v)?,
            ("grid2d", "assembly") => self.grid2d.assembly = parse_assembly(v)?,
            ("ladder2d", "t0") => self.ladder2d.t0 = parse_f64(v)?,
            ("ladder2d", "levels") => self.ladder2d.levels = parse_usize(v)?,
            ("ladder2d", "width") => self.ladder2d.width = parse_f64(v)?,
            ("ladder2d", "momentum") => self.ladder2d.momentum = parse_f64(v)?,
            ("ladder2d", "window_lo") => self.ladder2d.window_lo = parse_f64(v)?,
            ("ladder2d", "window_hi") => self.ladder2d.window_hi = parse_f64(v)?,
            ("ladder2d", "edge") => self.ladder2d.edge = parse_f64(v)?,
            ("run", "seed") => {
                self.run.seed = v.parse().map_err(|_| format!("`{v}` is not a u64 seed"))?
            }
            ("run", "threads") => self.run.threads = parse_usize(v)?,
            ("run", "out") => self.run.out = PathBuf::from(v),
            (s, k) => return Err(format!("unknown key `{k}` in [{s}]")),
        }
        Ok(())
    }

    /// Canonical text form; `parse_config(c.to_text())` returns `c`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = &self.params;
        let _ = writeln!(
            s,
            "[params]\na = {:?}\nl = {:?}\np = {:?}\nmass = {:?}",
            p.a, p.l, p.p, p.mass
        );
        let g = &self.grid1d;
        let _ = writeln!(
            s,
            "\n[grid1d]\nhalf_length = {:?}\ndelta = {:?}\noracle_half_length = {:?}",
            g.half_length, g.delta, g.oracle_half_length
        );
        let k = &self.packet;
        let _ = writeln!(
            s,
            "\n[packet]\ncenter = {:?}\nwidth = {:?}\nmomentum = {:?}\njitter = {:?}\nwindow_lo = {:?}\nwindow_hi = {:?}",
            k.center, k.width, k.momentum, k.jitter, k.window_lo, k.window_hi
        );
        let d = &self.ladder;
        let _ = writeln!(
            s,
            "\n[ladder]\nt0 = {:?}\nlevels = {}\ndollard = {}\ncutoff_lo = {:?}\ncutoff_hi = {:?}",
            d.t0, d.levels, d.dollard, d.cutoff_lo, d.cutoff_hi
        );
        let e = &self.evolve1d;
        let _ = writeln!(s, "\n[evolve1d]\nsteps = {}\nevery = {}", e.steps, e.every);
        let a = &self.angular;
        let _ = writeln!(
            s,
            "\n[angular]\nn = {:?}\nk_max = {}\ngrid_size = {}\nmode = {}",
            a.n, a.k_max, a.grid_size, a.mode
        );
        let g = &self.grid2d;
        let asm = match g.assembly {
            Assembly::Direct => "direct",
            Assembly::Split => "split",
        };
        let _ = writeln!(
            s,
            "\n[grid2d]\nnr = {}\ndelta = {:?}\nn_theta = {}\ndt = {:?}\nsteps = {}\nevery = {}\nkind = {}\nassembly = {}",
            g.nr, g.delta, g.n_theta, g.dt, g.steps, g.every, kind_name(g.kind), asm
        );
        let l = &self.ladder2d;
        let _ = writeln!(
            s,
            "\n[ladder2d]\nt0 = {:?}\nlevels = {}\nwidth = {:?}\nmomentum = {:?}\nwindow_lo = {:?}\nwindow_hi = {:?}\nedge = {:?}",
            l.t0, l.levels, l.width, l.momentum, l.window_lo, l.window_hi, l.edge
        );
        let r = &self.run;
        let _ = writeln!(
            s,
            "\n[run]\nseed = {}\nthreads = {}\nout = {}",
            r.seed,
            r.threads,
            r.out.display()
        );
        s
    }

    /// Every violated bound, each as one message.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let p = &self.params;
        if let Err(e) = build_extreme_params(p.a, p.l) {
            v.push(format!("params: {e}"));
        }
        if crate::angular::check_half_integer(p.p).is_err() {
            v.push(format!("params.p = {} must be a half-integer", p.p));
        }
        if p.mass < 0.0 {
            v.push(format!("params.mass = {} must be >= 0", p.mass));
        }
        let g = &self.grid1d;
        let grid = Grid1D::new(g.half_length, g.delta);
        if let Err(e) = &grid {
            v.push(format!("grid1d: {e}"));
        }
        match Grid1D::new(g.oracle_half_length, g.delta) {
            Err(e) => v.push(format!("grid1d.oracle_half_length: {e}")),
            Ok(sub) => {
                if let Ok(grid) = &grid {
                    if grid.offset_of(&sub).is_err() {
                        v.push("grid1d.oracle_half_length must fit inside half_length".into());
                    }
                }
                if sub.n > 4096 {
                    v.push(format!(
                        "grid1d: oracle box of {} points exceeds 4096",
                        sub.n
                    ));
                }
            }
        }
        let k = &self.packet;
        if k.width <= 0.0 {
            v.push(format!("packet.width = {} must be > 0", k.width));
        }
        if k.jitter < 0.0 {
            v.push(format!("packet.jitter = {} must be >= 0", k.jitter));
        }
        let reach = k.center.abs() + k.jitter + 5.0 * k.width;
        if reach > g.oracle_half_length {
            v.push(format!(
                "packet: |center| + jitter + 5 width = {reach} exceeds grid1d.oracle_half_length = {}",
                g.oracle_half_length
            ));
        }
        if !(k.window_lo < k.window_hi) || (k.window_lo <= 0.0 && k.window_hi >= 0.0) {
            v.push(format!(
                "packet window [{}, {}] must be non-empty and exclude zero energy",
                k.window_lo, k.window_hi
            ));
        }
        let d = &self.ladder;
        if d.t0 <= 0.0 || !is_multiple(d.t0, g.delta) {
            v.push(format!(
                "ladder.t0 = {} must be a positive multiple of grid1d.delta",
                d.t0
            ));
        }
        if d.levels < 2 {
            v.push(format!("ladder.levels = {} must be >= 2", d.levels));
        }
        if !(d.cutoff_lo < d.cutoff_hi) {
            v.push("ladder.cutoff_lo must be below ladder.cutoff_hi".into());
        }
        if self.evolve1d.steps == 0 || self.evolve1d.every == 0 {
            v.push("evolve1d.steps and evolve1d.every must be >= 1".into());
        }
        let a = &self.angular;
        if crate::angular::check_half_integer(a.n).is_err() {
            v.push(format!("angular.n = {} must be a half-integer", a.n));
        }
        if a.grid_size < 64 {
            v.push(format!("angular.grid_size = {} must be >= 64", a.grid_size));
        }
        if a.k_max == 0 || 2 * a.k_max > a.grid_size {
            v.push(format!(
                "angular.k_max = {} must lie in 1..=grid_size/2",
                a.k_max
            ));
        }
        if a.mode == 0 || a.mode > a.k_max {
            v.push(format!("angular.mode = {} must lie in 1..=k_max", a.mode));
        }
        let g2 = &self.grid2d;
        if g2.nr < 4 || g2.nr % 2 == 1 {
            v.push(format!("grid2d.nr = {} must be even and >= 4", g2.nr));
        }
        if g2.delta <= 0.0 {
            v.push(format!("grid2d.delta = {} must be > 0", g2.delta));
        }
        if g2.n_theta < crate::field2d::MIN_THETA_POINTS {
            v.push(format!(
                "grid2d.n_theta = {} must be >= {}",
                g2.n_theta,
                crate::field2d::MIN_THETA_POINTS
            ));
        }
        if g2.dt <= 0.0 {
            v.push(format!("grid2d.dt = {} must be > 0", g2.dt));
        }
        if g2.steps == 0 || g2.every == 0 {
            v.push("grid2d.steps and grid2d.every must be >= 1".into());
        }
        let l = &self.ladder2d;
        if l.t0 <= 0.0 || !is_multiple(l.t0, g2.dt) {
            v.push(format!(
                "ladder2d.t0 = {} must be a positive multiple of grid2d.dt",
                l.t0
            ));
        }
        if l.levels < 2 {
            v.push(format!("ladder2d.levels = {} must be >= 2", l.levels));
        }
        if l.width <= 0.0 || l.edge <= 0.0 {
            v.push("ladder2d.width and ladder2d.edge must be > 0".into());
        }
        let excl = crate::field2d::ZERO_ENERGY_EXCLUSION;
        if !(l.window_lo < l.window_hi)
            || !(l.window_lo - 3.0 * l.edge >= excl || l.window_hi + 3.0 * l.edge <= -excl)
        {
            v.push(format!(
                "ladder2d window [{}, {}] with edge {} must stay {excl} away from zero energy",
                l.window_lo, l.window_hi, l.edge
            ));
        }
        if 5.0 * l.width > 0.25 * g2.nr as f64 * g2.delta {
            v.push("ladder2d.width is too wide for grid2d".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(KdsError::Validation(v))
        }
    }

    pub fn map(&self) -> Result<TortoiseMap> {
        TortoiseMap::from_al(self.params.a, self.params.l)
    }

    pub fn symbols(&self) -> Result<RadialSymbolSet> {
        Ok(RadialSymbolSet::new(
            self.map()?,
            self.params.p,
            self.params.mass,
        ))
    }

    pub fn grid1d(&self) -> Result<Grid1D> {
        Grid1D::new(self.grid1d.half_length, self.grid1d.delta)
    }

    pub fn oracle_grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.grid1d.oracle_half_length, self.grid1d.delta)
    }

    pub fn grid2d(&self) -> Result<Grid2D> {
        let g = &self.grid2d;
        Grid2D::new(
            Grid1D::new(0.5 * g.nr as f64 * g.delta, g.delta)?,
            g.n_theta,
        )
    }

    pub fn cutoff(&self) -> CutoffPair {
        CutoffPair {
            lo: self.ladder.cutoff_lo,
            hi: self.ladder.cutoff_hi,
        }
    }

    /// Packet center after the seeded shift.
    pub fn packet_center(&self) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.run.seed);
        let u: f64 = rng.random_range(-1.0..1.0);
        self.packet.center + self.packet.jitter * u
    }
}

fn is_multiple(t: f64, dt: f64) -> bool {
    if dt <= 0.0 {
        return false;
    }
    let s = t / dt;
    (s - s.round()).abs() <= 1e-9 * s.max(1.0)
}

/// Parses and validates a configuration. All malformed lines are reported together;
/// a well-formed file then gets every violated bound reported together.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let (entries, mut errors) = parse_entries(text, "params");
    let mut cfg = RunConfig::default();
    for e in &entries {
        if let Err(msg) = cfg.set(e) {
            errors.push(LineError { line: e.line, msg });
        }
    }
    if !errors.is_empty() {
        errors.sort_by_key(|e| e.line);
        return Err(KdsError::Parse(errors));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text =
        fs::read_to_string(path).map_err(|e| KdsError::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

// ---------------------------------------------------------------------------
// Thresholds

/// A calibrated or fixed bound with its provenance note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub key: String,
    pub value: f64,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub entries: BTreeMap<String, Threshold>,
}

const BUILTIN_THRESHOLDS: &str = include_str!("../fixtures/thresholds.cfg");

impl Thresholds {
    pub fn parse(text: &str) -> Result<Self> {
        let (entries, mut errors) = parse_entries(text, "");
        let mut out = BTreeMap::new();
        for e in entries {
            if e.section.is_empty() {
                errors.push(LineError {
                    line: e.line,
                    msg: "threshold outside a section".into(),
                });
                continue;
            }
            match parse_f64(&e.value) {
                Ok(value) => {
                    let key = format!("{}.{}", e.section, e.key);
                    let provenance = match e.note {
                        Some(n) if n.contains("[DERIVED]") => n,
                        _ => "acceptance bound".to_string(),
                    };
                    out.insert(
                        key.clone(),
                        Threshold {
                            key,
                            value,
                            provenance,
                        },
                    );
                }
                Err(msg) => errors.push(LineError { line: e.line, msg }),
            }
        }
        if errors.is_empty() {
            Ok(Thresholds { entries: out })
        } else {
            Err(KdsError::Parse(errors))
        }
    }

    /// The set compiled in from `fixtures/thresholds.cfg`.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_THRESHOLDS).expect("built-in threshold fixture parses")
    }

    pub fn get(&self, key: &str) -> Result<f64> {
        self.entries
            .get(key)
            .map(|t| t.value)
            .ok_or_else(|| KdsError::Validation(vec![format!("missing threshold `{key}`")]))
    }
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invariant {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub results: BTreeMap<String, f64>,
    pub invariants: Vec<Invariant>,
    /// wall-clock seconds per stage
    pub timings: BTreeMap<String, f64>,
    pub thresholds: Vec<Threshold>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(command: Command, config: &RunConfig) -> Self {
        RunManifest {
            command: command.name().to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            results: BTreeMap::new(),
            invariants: Vec::new(),
            timings: BTreeMap::new(),
            thresholds: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|i| i.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| KdsError::Io(format!("manifest encoding: {e}")))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| KdsError::Io(format!("manifest decoding: {e}")))
    }

    /// Records a scalar result. Non-finite values are kept out of the JSON and
    /// noted as a failed invariant instead.
    pub fn value(&mut self, key: impl Into<String>, v: f64) {
        let key = key.into();
        if v.is_finite() {
            self.results.insert(key, v);
        } else {
            self.invariants.push(Invariant {
                name: format!("{key} is finite"),
                pass: false,
                detail: format!("{v}"),
            });
        }
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.invariants.push(Invariant {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn use_threshold(&mut self, th: &Thresholds, key: &str) -> Result<f64> {
        let t = th
            .entries
            .get(key)
            .ok_or_else(|| KdsError::Validation(vec![format!("missing threshold `{key}`")]))?;
        if !self.thresholds.iter().any(|x| x.key == key) {
            self.thresholds.push(t.clone());
        }
        Ok(t.value)
    }

    fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f();
        self.timings
            .insert(stage.to_string(), t.elapsed().as_secs_f64());
        r
    }
}

// ---------------------------------------------------------------------------
// Output

/// Writes `bytes` to `path` through a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| KdsError::Io(format!("{} has no file name", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let io = |e: std::io::Error| KdsError::Io(format!("{}: {e}", path.display()));
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV table kept in memory until it is written in one piece.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    text: String,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv {
            text: header.join(",") + "\n",
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn nums(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|&x| num(x)).collect();
        self.row(&cells);
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

struct Output<'a> {
    dir: &'a Path,
}

impl Output<'_> {
    fn csv(&self, m: &mut RunManifest, name: &str, csv: &Csv) -> Result<()> {
        write_atomic(&self.dir.join(name), csv.as_str().as_bytes())?;
        m.artifacts.push(name.to_string());
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Commands

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    Geometry,
    Angular,
    Evolve1d,
    Scatter1d,
    Evolve2d,
    Chain,
    Verify,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Geometry,
        Command::Angular,
        Command::Evolve1d,
        Command::Scatter1d,
        Command::Evolve2d,
        Command::Chain,
        Command::Verify,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Geometry => "geometry",
            Command::Angular => "angular",
            Command::Evolve1d => "evolve1d",
            Command::Scatter1d => "scatter1d",
            Command::Evolve2d => "evolve2d",
            Command::Chain => "chain",
            Command::Verify => "verify",
        }
    }
}

impl FromStr for Command {
    type Err = KdsError;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| KdsError::Validation(vec![format!("unknown command `{s}`")]))
    }
}

/// Runs one workflow into `out`. Artifacts are written first, the manifest
/// (`manifest.json`) last. Failed invariants are reported in the manifest, not as errors.
pub fn run_command(cmd: Command, cfg: &RunConfig, out: &Path) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| KdsError::Io(format!("{}: {e}", out.display())))?;
    let th = Thresholds::builtin();
    let mut m = RunManifest::new(cmd, cfg);
    let o = Output { dir: out };
    let t = Instant::now();
    match cmd {
        Command::Geometry => geometry(cfg, &th, &o, &mut m),
        Command::Angular => angular(cfg, &th, &o, &mut m),
        Command::Evolve1d => evolve1d(cfg, &th, &o, &mut m),
        Command::Scatter1d => scatter1d(cfg, &th, &o, &mut m),
        Command::Evolve2d => evolve2d(cfg, &th, &o, &mut m),
        Command::Chain => chain(cfg, &o, &mut m),
        Command::Verify => verify_all(cfg, &th, &o, &mut m),
    }
    .map_err(|e| e.context("cli", cmd.name()))?;
    m.timings.insert("total".into(), t.elapsed().as_secs_f64());
    write_atomic(&out.join("manifest.json"), m.to_json()?.as_bytes())?;
    Ok(m)
}

fn geometry(cfg: &RunConfig, th: &Thresholds, o: &Output, m: &mut RunManifest) -> Result<()> {
    let map = cfg.map()?;
    let sym = cfg.symbols()?;
    let p = map.params;
    for (k, v) in [
        ("mass", p.mass),
        ("xi", p.xi),
        ("r_e", p.r_e),
        ("r_minus", p.r_minus),
        ("r_plus", p.r_plus),
        ("kappa", map.kappa()),
        ("double_horizon_constant", map.double_horizon_constant()),
    ] {
        m.value(k, v);
    }
    let tol = m.use_threshold(th, "geometry.identity_tol")?;
    for c in p
        .identity_checks(tol)
        .into_iter()
        .chain(map.coefficient_checks(tol))
    {
        m.check(c.name, c.pass, format!("residual {:e}", c.residual));
    }
    let n = 1000;
    let half = cfg.grid1d.half_length;
    let rows = m.timed("sampling", || {
        (0..n)
            .map(|k| {
                let rs = -half + 2.0 * half * k as f64 / (n - 1) as f64;
                let q = map.inverse_point(rs)?;
                let s = sym.at_point(&q);
                let dr = p.l * p.l * (q.r - p.r_minus) * q.lo * q.lo * q.hi;
                Ok([q.r, rs, dr, s.g, s.f])
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut csv = Csv::new(&["r", "rstar", "delta_r", "g", "f"]);
    for r in &rows {
        csv.nums(r);
    }
    o.csv(m, "geometry.csv", &csv)
}

fn angular(cfg: &RunConfig, th: &Thresholds, o: &Output, m: &mut RunManifest) -> Result<()> {
    let params = cfg.map()?.params;
    let a = &cfg.angular;
    let specs = [
        AngularOperatorSpec::sphere(params, a.n),
        AngularOperatorSpec::double_horizon(params, a.n, cfg.params.p, cfg.params.mass),
    ];
    let tol = m.use_threshold(th, "angular.agreement_tol")?;
    let sym_tol = m.use_threshold(th, "angular.symmetry_tol")?;
    let mut csv = Csv::new(&["kind", "n", "k", "eigenvalue", "oracle"]);
    for (label, spec) in ["sphere", "double_horizon"].iter().zip(specs) {
        let modes = m.timed(label, || shoot_spectrum(&spec, a.k_max))?;
        let oracle = crate::angular::dense_spectrum_oracle(&spec, a.grid_size, a.k_max)?;
        let mut shot: Vec<(i64, f64)> = modes.iter().map(|x| (x.k, x.eigenvalue)).collect();
        shot.sort_by(|x, y| x.1.total_cmp(&y.1));
        let mut worst = 0.0f64;
        for ((k, lam), o) in shot.iter().zip(&oracle) {
            worst = worst.max((lam - o).abs());
            csv.row(&[
                label.to_string(),
                format!("{}", a.n),
                k.to_string(),
                num(*lam),
                num(*o),
            ]);
        }
        m.value(format!("{label}.oracle_deviation"), worst);
        m.check(
            format!("{label}: shooting agrees with the dense oracle"),
            worst <= tol,
            format!("{worst:e}"),
        );
        let asym = symmetry_defect(&shot);
        m.value(format!("{label}.symmetry_defect"), asym);
        m.check(
            format!("{label}: spectrum symmetric about 0"),
            asym <= sym_tol,
            format!("{asym:e}"),
        );
    }
    o.csv(m, "angular.csv", &csv)
}

/// max_k |λ_k + λ_{−k}| over shot pairs.
fn symmetry_defect(shot: &[(i64, f64)]) -> f64 {
    let mut worst = 0.0f64;
    for &(k, lam) in shot.iter().filter(|x| x.0 > 0) {
        if let Some(&(_, neg)) = shot.iter().find(|x| x.0 == -k) {
            worst = worst.max((lam + neg).abs());
        }
    }
    worst
}

/// Eigenvalue of the configured angular mode: S̃ for the H0 family, 𝔇_e for He.
pub fn mode_coupling(cfg: &RunConfig, kind: ReducedKind) -> Result<f64> {
    let params = cfg.map()?.params;
    let a = &cfg.angular;
    let spec = match kind {
        ReducedKind::ReducedHe => {
            AngularOperatorSpec::double_horizon(params, a.n, cfg.params.p, cfg.params.mass)
        }
        _ => AngularOperatorSpec::sphere(params, a.n),
    };
    let modes =
        shoot_spectrum(&spec, a.mode).map_err(|e| e.context("angular", "shoot_spectrum"))?;
    modes
        .iter()
        .find(|x| x.k == a.mode as i64)
        .map(|x| x.eigenvalue)
        .ok_or_else(|| KdsError::EigensolverFailure(format!("mode k = {} not found", a.mode)))
}

/// Reduced operator and a packet moving toward one end, filtered into the
/// configured energy window on the oracle box.
pub fn scattering_setup(
    cfg: &RunConfig,
    side: Side,
) -> Result<(ReducedHamiltonian, SpinorField1D)> {
    let (kind, dim, sign) = match side {
        Side::Cosmological => (ReducedKind::ReducedH0, 4, 1.0),
        Side::DoubleHorizon => (ReducedKind::ReducedHe, 2, -1.0),
    };
    let coupling = mode_coupling(cfg, kind)?;
    let grid = cfg.grid1d()?;
    let h = build_reduced(kind, coupling, cfg.params.p, &cfg.symbols()?, grid, dim)
        .map_err(|e| e.context("radial1d", "build_reduced"))?;
    let k = &cfg.packet;
    let psi = gaussian_packet(
        grid,
        dim,
        cfg.packet_center(),
        k.width,
        sign * k.momentum,
        sign,
    )
    .map_err(|e| e.context("radial1d", "gaussian_packet"))?;
    let psi = matrix_oracle(&h, cfg.oracle_grid()?)
        .and_then(|o| o.spectral_filter(&psi, (k.window_lo, k.window_hi)))
        .map_err(|e| e.context("radial1d", "matrix_oracle"))?;
    Ok((h, psi))
}

fn field_csv(psi: &SpinorField1D) -> Csv {
    let mut header = vec!["rstar".to_string()];
    for c in 0..psi.dim() {
        header.push(format!("re{c}"));
        header.push(format!("im{c}"));
    }
    let hdr: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = Csv::new(&hdr);
    for j in 0..psi.grid.n {
        let mut row = vec![psi.grid.x(j)];
        for c in &psi.comps {
            row.push(c[j].re);
            row.push(c[j].im);
        }
        csv.nums(&row);
    }
    csv
}

fn evolve1d(cfg: &RunConfig, th: &Thresholds, o: &Output, m: &mut RunManifest) -> Result<()> {
    let coupling = mode_coupling(cfg, ReducedKind::ReducedH0)?;
    m.value("coupling", coupling);
    let grid = cfg.grid1d()?;
    let h = build_reduced(
        ReducedKind::ReducedH0,
        coupling,
        cfg.params.p,
        &cfg.symbols()?,
        grid,
        4,
    )?;
    let k = &cfg.packet;
    let psi0 = gaussian_packet(grid, 4, cfg.packet_center(), k.width, k.momentum, 1.0)?;
    let e = &cfg.evolve1d;
    let mut csv = Csv::new(&["t", "norm_squared", "gamma1", "momentum"]);
    csv.nums(&[
        0.0,
        psi0.norm_squared,
        psi0.gamma1_expectation(),
        psi0.momentum_expectation(),
    ]);
    let mut psi = psi0.clone();
    let mut done = 0;
    m.timed("evolution", || {
        while done < e.steps {
            let n = e.every.min(e.steps - done);
            psi = evolve_split_step_with(
                &h,
                &psi,
                n,
                Direction::Forward,
                SplitStepOptions::default(),
            )
            .map_err(|e| e.context("radial1d", "evolve_split_step"))?;
            done += n;
            csv.nums(&[
                psi.time,
                psi.norm_squared,
                psi.gamma1_expectation(),
                psi.momentum_expectation(),
            ]);
        }
        Ok(())
    })?;
    let drift = (psi.norm_squared - psi0.norm_squared).abs();
    m.value("norm_drift", drift);
    let tol = m.use_threshold(th, "evolve1d.norm_drift_tol")?;
    m.check(
        "norm conserved",
        drift <= tol,
        format!("{drift:e} after {} steps", e.steps),
    );
    o.csv(m, "evolve1d_series.csv", &csv)?;
    o.csv(m, "evolve1d_final.csv", &field_csv(&psi))
}

fn scatter1d(cfg: &RunConfig, th: &Thresholds, o: &Output, m: &mut RunManifest) -> Result<()> {
    let times = ladder(cfg.ladder.t0, cfg.ladder.levels);
    let mut csv = Csv::new(&["side", "modified", "level", "t", "image_norm", "increment"]);
    let push = |csv: &mut Csv, label: &str, est: &crate::scattering::WaveOperatorEstimate| {
        let norms = est.image_norms();
        for (i, t) in est.times.iter().enumerate() {
            let inc = if i == 0 { 0.0 } else { est.increments[i - 1] };
            csv.row(&[
                label.to_string(),
                est.modified.to_string(),
                i.to_string(),
                num(*t),
                num(norms[i]),
                num(inc),
            ]);
        }
    };
    let ratio = m.use_threshold(th, "ladder1d.cosmological_ratio")?;
    let (h, psi) = m.timed("setup_cosmological", || {
        scattering_setup(cfg, Side::Cosmological)
    })?;
    m.value("cosmological.filtered_norm", psi.norm());
    let prof = build_reduced(
        ReducedKind::ProfilePlus,
        0.0,
        h.p,
        &h.symbols,
        h.grid,
        h.dim,
    )?;
    let est = m.timed("ladder_cosmological", || {
        wave_operator_estimate_with(
            &h,
            &prof,
            false,
            &psi,
            Side::Cosmological,
            &times,
            cfg.cutoff(),
        )
    })?;
    for (i, d) in est.increments.iter().enumerate() {
        m.value(format!("cosmological.increment.{i}"), *d);
    }
    let shrink = est.increments.windows(2).all(|w| w[1] * ratio <= w[0]);
    m.check(
        format!("cosmological increments shrink by {ratio}x per level"),
        shrink,
        format!("{:?}", est.increments),
    );
    push(&mut csv, "cosmological", &est);

    let vel = m.timed("velocity", || {
        velocity_cone_report(&h, &psi, 0.1, 0.1, &times)
    })?;
    let mut vcsv = Csv::new(&[
        "t",
        "weight_minus_one",
        "weight_plus_one",
        "cone_inner",
        "cone_outer",
    ]);
    for i in 0..times.len() {
        vcsv.nums(&[
            times[i],
            vel.weight_minus_one[i],
            vel.weight_plus_one[i],
            vel.cone_inner[i],
            vel.cone_outer[i],
        ]);
    }
    o.csv(m, "velocity.csv", &vcsv)?;

    let (he, psi) = m.timed("setup_double_horizon", || {
        scattering_setup(cfg, Side::DoubleHorizon)
    })?;
    m.value("double_horizon.filtered_norm", psi.norm());
    let prof = build_reduced(
        ReducedKind::ProfileMinus,
        0.0,
        he.p,
        &he.symbols,
        he.grid,
        he.dim,
    )?;
    let modified = m.timed("ladder_double_horizon_modified", || {
        wave_operator_estimate_with(
            &he,
            &prof,
            true,
            &psi,
            Side::DoubleHorizon,
            &times,
            cfg.cutoff(),
        )
    })?;
    for (i, d) in modified.increments.iter().enumerate() {
        m.value(format!("double_horizon.modified.increment.{i}"), *d);
    }
    let frac = m.use_threshold(th, "ladder1d.final_fraction")?;
    let fin = modified.final_increment();
    let mono = modified.increments.windows(2).all(|w| w[1] <= w[0]);
    m.check(
        "modified double-horizon ladder converges",
        mono && fin <= frac * modified.input_norm,
        format!("{:?}", modified.increments),
    );
    push(&mut csv, "double_horizon", &modified);
    if !cfg.ladder.dollard {
        let plain = m.timed("ladder_double_horizon_unmodified", || {
            wave_operator_estimate_with(
                &he,
                &prof,
                false,
                &psi,
                Side::DoubleHorizon,
                &times,
                cfg.cutoff(),
            )
        })?;
        for (i, d) in plain.increments.iter().enumerate() {
            m.value(format!("double_horizon.unmodified.increment.{i}"), *d);
        }
        let factor = m.use_threshold(th, "ladder1d.stall_factor")?;
        let stalled = plain.final_increment() >= factor * fin;
        m.check(
            "unmodified double-horizon ladder stalls",
            stalled,
            format!(
                "final increment {:e} vs modified {:e} (factor {factor})",
                plain.final_increment(),
                fin
            ),
        );
        push(&mut csv, "double_horizon", &plain);
    }
    o.csv(m, "ladder1d.csv", &csv)
}

fn angular_profile(
    h: &crate::field2d::FullOperator2D,
    branch: f64,
) -> Result<Vec<crate::potentials::C64>> {
    let kind = match h.kind {
        OperatorKind::He => OperatorKind::He,
        _ => OperatorKind::H0,
    };
    let h_ang = if kind == h.kind {
        None
    } else {
        Some(assemble_operator_with(
            kind,
            Assembly::Direct,
            &h.potentials,
            h.grid,
        )?)
    };
    let basis = angular_basis(h_ang.as_ref().unwrap_or(h))?;
    Ok(basis.branch_vector(0, branch))
}

fn field2d_csv(psi: &SpinorField2D) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    psi.write_csv(&mut buf)?;
    Ok(buf)
}

fn evolve2d(cfg: &RunConfig, th: &Thresholds, o: &Output, m: &mut RunManifest) -> Result<()> {
    let g = cfg.grid2d()?;
    let set = MatrixPotentialSet::new(cfg.map()?, cfg.params.p, cfg.params.mass);
    let c = &cfg.grid2d;
    let h = m.timed("assembly", || {
        assemble_operator_with(c.kind, c.assembly, &set, g)
    })?;
    m.value("spectral_bound", h.spectral_bound());
    let l = &cfg.ladder2d;
    let profile = angular_profile(&h, 1.0)?;
    let psi0 = packet_2d(g, cfg.params.p, 0.0, l.width, l.momentum, &profile)?;
    let opts = CnOptions {
        check_boundary: false,
        ..Default::default()
    };
    let mut csv = Csv::new(&["t", "charge", "gamma1", "iterations"]);
    csv.nums(&[0.0, psi0.charge, psi0.gamma1_expectation(), 0.0]);
    let mut psi = psi0.clone();
    let mut done = 0;
    let mut worst_res = 0.0f64;
    m.timed("evolution", || {
        while done < c.steps {
            let n = c.every.min(c.steps - done);
            let (next, st) = evolve_cn_with(&h, &psi, c.dt, n, Direction::Forward, opts)
                .map_err(|e| e.context("field2d", "evolve_cn"))?;
            psi = next;
            done += n;
            worst_res = worst_res.max(st.max_residual);
            csv.nums(&[
                psi.time,
                psi.charge,
                psi.gamma1_expectation(),
                st.iterations as f64,
            ]);
        }
        Ok(())
    })?;
    let drift = (psi.charge - psi0.charge).abs();
    m.value("charge_drift", drift);
    m.value("max_residual", worst_res);
    let tol = m.use_threshold(th, "field2d.charge_drift_tol")?;
    let per = drift * 1000.0 / c.steps as f64;
    m.check(
        "charge conserved",
        per <= tol,
        format!("{drift:e} after {} steps", c.steps),
    );
    o.csv(m, "evolve2d_series.csv", &csv)?;
    write_atomic(&o.dir.join("evolve2d_final.csv"), &field2d_csv(&psi)?)?;
    m.artifacts.push("evolve2d_final.csv".into());
    let mut dump = Vec::new();
    psi.write_dump(&mut dump)?;
    write_atomic(&o.dir.join("evolve2d_final.kds2d"), &dump)?;
    m.artifacts.push("evolve2d_final.kds2d".into());
    Ok(())
}

/// Filtered 2D packet for a ladder of `h`: branch +1 moves outward, −1 inward.
pub fn ladder2d_state(
    cfg: &RunConfig,
    h: &crate::field2d::FullOperator2D,
    branch: f64,
) -> Result<(SpinorField2D, ChebyshevFilter)> {
    let l = &cfg.ladder2d;
    let profile = angular_profile(h, branch)?;
    let psi = packet_2d(
        h.grid,
        cfg.params.p,
        0.0,
        l.width,
        branch * l.momentum,
        &profile,
    )?;
    let f = ChebyshevFilter::new(h, (l.window_lo, l.window_hi), l.edge)?;
    Ok((energy_filter(h, &psi, &f)?, f))
}

fn chain(cfg: &RunConfig, o: &Output, m: &mut RunManifest) -> Result<()> {
    let (h, psi) = m.timed("setup", || scattering_setup(cfg, Side::Cosmological))?;
    let times = ladder(cfg.ladder.t0, cfg.ladder.levels);
    let mut csv = Csv::new(&[
        "t",
        "plus_norm",
        "minus_norm",
        "unitarity_defect",
        "intertwining_defect",
    ]);
    for (i, &t) in times.iter().enumerate() {
        let r = m.timed(&format!("chain_{i}"), || {
            chain_compose_with(&h, &psi, t, cfg.cutoff())
        })?;
        m.value(format!("chain.unitarity_defect.{i}"), r.unitarity_defect);
        m.value(
            format!("chain.intertwining_defect.{i}"),
            r.intertwining_defect,
        );
        csv.nums(&[
            t,
            r.plus.norm(),
            r.minus.norm(),
            r.unitarity_defect,
            r.intertwining_defect,
        ]);
    }
    o.csv(m, "chain1d.csv", &csv)?;

    let g = cfg.grid2d()?;
    let set = MatrixPotentialSet::new(cfg.map()?, cfg.params.p, cfg.params.mass);
    let asm = |k| assemble_operator_with(k, Assembly::Direct, &set, g);
    let (hp, h1, he) = m.timed("assembly2d", || {
        Ok((
            asm(OperatorKind::Hp)?,
            asm(OperatorKind::H1)?,
            asm(OperatorKind::He)?,
        ))
    })?;
    let l = &cfg.ladder2d;
    let mut csv = Csv::new(&["stage", "level", "t", "image_norm", "increment"]);
    let stages: [(
        &str,
        &crate::field2d::FullOperator2D,
        &crate::field2d::FullOperator2D,
        Option<(Side, CutoffPair)>,
        f64,
    ); 2] = [
        ("omega1", &hp, &h1, None, 1.0),
        (
            "omega2",
            &h1,
            &he,
            Some((Side::DoubleHorizon, cfg.cutoff())),
            -1.0,
        ),
    ];
    for (label, ha, hb, cut, branch) in stages {
        let (phi, _) = m.timed(&format!("{label}_filter"), || {
            ladder2d_state(cfg, ha, branch)
        })?;
        let est = m.timed(label, || {
            crate::field2d::compare_dynamics_2d(
                ha,
                hb,
                cut,
                &phi,
                cfg.grid2d.dt,
                l.t0,
                l.levels,
                CnOptions::default(),
            )
        })?;
        for (i, d) in est.increments.iter().enumerate() {
            m.value(format!("{label}.increment.{i}"), *d);
        }
        m.check(
            format!("{label} ladder monotone from level 2"),
            est.monotone_from_second(),
            format!("{:?}", est.increments),
        );
        for (i, t) in est.times.iter().enumerate() {
            let inc = if i == 0 { 0.0 } else { est.increments[i - 1] };
            csv.row(&[
                label.into(),
                i.to_string(),
                num(*t),
                num(est.image_norms[i]),
                num(inc),
            ]);
        }
    }
    o.csv(m, "chain2d.csv", &csv)
}

fn verify_all(cfg: &RunConfig, th: &Thresholds, o: &Output, m: &mut RunManifest) -> Result<()> {
    let mut csv = Csv::new(&["criterion", "name", "pass", "detail"]);
    for id in verify::CRITERIA {
        let r = verify::run_criterion(id, cfg, th);
        m.timings.insert(format!("criterion_{id}"), r.seconds);
        for k in &r.thresholds {
            let _ = m.use_threshold(th, k);
        }
        for c in &r.checks {
            m.check(format!("{id}: {}", c.name), c.pass, c.detail.clone());
        }
        m.check(
            format!("criterion {id}: {}", r.name),
            r.pass,
            r.summary.clone(),
        );
        csv.row(&[
            id.to_string(),
            r.name.clone(),
            r.pass.to_string(),
            format!("\"{}\"", r.summary.replace('"', "'")),
        ]);
    }
    o.csv(m, "verify.csv", &csv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("a = 1.0\nl = 0.1\n").unwrap();
        assert_eq!(c, RunConfig::default());
        let c = parse_config("# spin\n[params]\na = 0.5 # slower\nl = 0.2\n").unwrap();
        assert_eq!(c.params.a, 0.5);
        assert_eq!(c.grid1d, RunConfig::default().grid1d);
    }

    #[test]
    fn extremality_bound_is_cited() {
        let e = parse_config("a = 1.0\nl = 0.3\n").unwrap_err();
        match &e {
            KdsError::Validation(v) => {
                assert_eq!(v.len(), 1);
                assert!(v[0].contains("extremality"), "{v:?}");
            }
            _ => panic!("{e:?}"),
        }
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn all_malformed_lines_are_reported() {
        let e = parse_config("a = 1.0\na 0.1\n[grid1d]\ndelta = x\n[bad\nwho = 3\n").unwrap_err();
        let KdsError::Parse(lines) = &e else {
            panic!("{e:?}")
        };
        let at: Vec<usize> = lines.iter().map(|l| l.line).collect();
        assert_eq!(at, vec![2, 4, 5, 6]);
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn every_violated_bound_is_listed() {
        let text = "a = 1\nl = 0.1\np = 1\n[grid2d]\nn_theta = 16\n[ladder]\nlevels = 1\n";
        let KdsError::Validation(v) = parse_config(text).unwrap_err() else {
            panic!()
        };
        assert_eq!(v.len(), 3, "{v:?}");
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = RunConfig::default();
        c.params.a = 0.7;
        c.grid2d.kind = OperatorKind::He;
        c.grid2d.assembly = Assembly::Split;
        c.ladder.dollard = false;
        c.run.seed = u64::MAX;
        assert_eq!(parse_config(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn thresholds_fixture_is_complete() {
        let th = Thresholds::builtin();
        for key in verify::threshold_keys() {
            assert!(th.get(key).is_ok(), "{key}");
        }
        let d = &th.entries["field2d.defect_constant_max"];
        assert!(d.provenance.starts_with("[DERIVED]"));
    }

    #[test]
    fn manifest_round_trips() {
        let mut m = RunManifest::new(Command::Geometry, &RunConfig::default());
        m.value("x", 0.1 + 0.2);
        m.value("tiny", 5e-324);
        m.value("bad", f64::NAN);
        m.check("ok", true, "fine");
        m.timings.insert("total".into(), 1.0 / 3.0);
        let back = RunManifest::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert!(!m.passed());
    }

    #[test]
    fn seeded_center_is_reproducible() {
        let mut c = RunConfig::default();
        c.packet.jitter = 2.0;
        c.run.seed = 7;
        let x = c.packet_center();
        assert_eq!(x, c.packet_center());
        assert!(x.abs() <= 2.0);
        c.run.seed = 8;
        assert_ne!(x, c.packet_center());
    }
}
