//! The invariant suite run by `kds verify`, one function per criterion.

use crate::angular::{
    cluster_multiplicities, dense_spectrum_oracle, shoot_spectrum, AngularOperatorSpec,
};
use crate::cli::{
    ladder2d_state, mode_coupling, scattering_setup, Invariant, RunConfig, Thresholds,
};
use crate::error::{KdsError, Result};
use crate::field2d::{
    angular_basis, assemble_operator_with, assembly_residual, compare_dynamics_2d,
    double_horizon_defect, evolve_cn_with, hermiticity_residual, mode_expansion_check, packet_2d,
    window_mass, Assembly, CnOptions, Grid2D, OperatorKind,
};
use crate::geometry::{build_extreme_params, TortoiseMap};
use crate::potentials::{MatrixPotentialSet, RadialSymbolSet, C64};
use crate::radial1d::{
    build_reduced, dollard_propagator, dyson_check, evolve_split_step_with, gaussian_packet,
    groenwall_no_eigenvalue, matrix_oracle, Direction, Grid1D, ReducedKind, SpinorField1D,
    SplitStepOptions,
};
use crate::scattering::{ladder, velocity_cone_report, wave_operator_estimate_with, Side};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const CRITERIA: [u32; 10] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    pub pass: bool,
    pub summary: String,
    pub seconds: f64,
    pub checks: Vec<Invariant>,
    /// threshold keys consulted
    pub thresholds: Vec<String>,
}

struct Ctx<'a> {
    th: &'a Thresholds,
    checks: Vec<Invariant>,
    keys: Vec<String>,
}

impl Ctx<'_> {
    fn t(&mut self, key: &str) -> Result<f64> {
        if !self.keys.iter().any(|k| k == key) {
            self.keys.push(key.to_string());
        }
        self.th.get(key)
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Invariant {
            name: name.to_string(),
            pass,
            detail,
        });
    }
}

pub fn criterion_name(id: u32) -> &'static str {
    match id {
        1 => "geometry identities",
        2 => "tortoise round trip and derivative",
        3 => "horizon asymptotics",
        4 => "angular spectra",
        5 => "1D evolution",
        6 => "Dollard propagator",
        7 => "wave-operator ladders",
        8 => "asymptotic velocity",
        9 => "no point spectrum",
        10 => "2D operator and dynamics",
        _ => "unknown",
    }
}

/// Every threshold key the suite reads.
pub fn threshold_keys() -> &'static [&'static str] {
    &[
        "geometry.pairs",
        "geometry.identity_tol",
        "geometry.roundtrip_tol",
        "geometry.derivative_tol",
        "geometry.slope_tol",
        "geometry.double_constant_tol",
        "geometry.runtime_s",
        "angular.agreement_tol",
        "angular.symmetry_tol",
        "angular.gap_tol",
        "angular.round_sphere_tol",
        "angular.max_multiplicity",
        "angular.cluster_tol",
        "angular.runtime_s",
        "evolve1d.drift_steps",
        "evolve1d.norm_drift_tol",
        "evolve1d.richardson_lo",
        "evolve1d.richardson_hi",
        "dollard.phase_tol",
        "dollard.unitarity_tol",
        "ladder1d.cosmological_ratio",
        "ladder1d.final_fraction",
        "ladder1d.stall_factor",
        "ladder1d.runtime_s",
        "velocity.weight_total",
        "velocity.cone_tol",
        "spectrum.spacing_tol",
        "spectrum.spacing_delta",
        "spectrum.groenwall_half_length",
        "field2d.assembly_tol",
        "field2d.hermiticity_tol",
        "field2d.charge_steps",
        "field2d.charge_drift_tol",
        "field2d.mode_tol",
        "field2d.window_mass_min",
        "field2d.defect_constant_max",
        "field2d.runtime_s",
    ]
}

/// Runs one criterion. Errors count as failures and land in the summary.
pub fn run_criterion(id: u32, cfg: &RunConfig, th: &Thresholds) -> CriterionResult {
    let mut cx = Ctx {
        th,
        checks: Vec::new(),
        keys: Vec::new(),
    };
    let start = Instant::now();
    let r = match id {
        1 => geometry_identities(&mut cx),
        2 => tortoise_round_trip(&mut cx, cfg),
        3 => asymptotics(&mut cx, cfg),
        4 => angular_spectra(&mut cx, cfg),
        5 => evolution_1d(&mut cx, cfg),
        6 => dollard(&mut cx, cfg),
        7 => ladders_1d(&mut cx, cfg),
        8 => velocity(&mut cx, cfg),
        9 => no_point_spectrum(&mut cx, cfg),
        10 => field_2d(&mut cx, cfg),
        _ => Err(KdsError::Validation(vec![format!("no criterion {id}")])),
    };
    let seconds = start.elapsed().as_secs_f64();
    let (pass, summary) = match r {
        Ok(()) => {
            let failed: Vec<&str> = cx
                .checks
                .iter()
                .filter(|c| !c.pass)
                .map(|c| c.name.as_str())
                .collect();
            if failed.is_empty() {
                (
                    true,
                    cx.checks
                        .iter()
                        .map(|c| format!("{}: {}", c.name, c.detail))
                        .collect::<Vec<_>>()
                        .join("; "),
                )
            } else {
                (false, format!("failed: {}", failed.join(", ")))
            }
        }
        Err(e) => (false, format!("error: {e}")),
    };
    CriterionResult {
        id,
        name: criterion_name(id).to_string(),
        pass,
        summary,
        seconds,
        checks: cx.checks,
        thresholds: cx.keys,
    }
}

pub fn run_suite(cfg: &RunConfig, th: &Thresholds) -> Vec<CriterionResult> {
    CRITERIA
        .iter()
        .map(|&id| run_criterion(id, cfg, th))
        .collect()
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
        .collect()
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn slope(xy: &[(f64, f64)]) -> f64 {
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

// 1
fn geometry_identities(cx: &mut Ctx) -> Result<()> {
    let start = Instant::now();
    let n = cx.t("geometry.pairs")? as usize;
    let tol = cx.t("geometry.identity_tol")?;
    let ls = [0.1, 0.5, 1.0, 2.0];
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for k in 0..n {
        let x = 0.01 + 0.25 * k as f64 / (n - 1).max(1) as f64;
        let l = ls[k % ls.len()];
        let p = build_extreme_params(x / l, l)?;
        for c in p
            .identity_checks(tol)
            .into_iter()
            .chain(TortoiseMap::new(p).coefficient_checks(tol))
        {
            if c.tolerance > 0.0 {
                worst = worst.max(c.residual);
            }
            if !c.pass {
                failures.push(format!("a·l = {x:.4}: {} ({:e})", c.name, c.residual));
            }
        }
    }
    cx.check(
        &format!("identities at {n} pairs"),
        failures.is_empty(),
        if failures.is_empty() {
            format!("worst residual {worst:.2e}")
        } else {
            failures.join("; ")
        },
    );
    let limit = cx.t("geometry.runtime_s")?;
    let secs = start.elapsed().as_secs_f64();
    cx.check("runtime", secs < limit, format!("{secs:.3} s"));
    Ok(())
}

// 2
fn tortoise_round_trip(cx: &mut Ctx, cfg: &RunConfig) -> Result<()> {
    let map = cfg.map()?;
    let p = map.params;
    let m = p.mass;
    let tol = cx.t("geometry.roundtrip_tol")?;
    let mut rs = vec![0.0];
    for x in logspace(1e-3, 1e4 / m, 400) {
        rs.push(x);
        rs.push(-x);
    }
    let errs: Vec<f64> = rs
        .par_iter()
        .map(|&r| {
            let q = map.inverse_point(r)?;
            Ok((map.forward_point(&q) - r).abs() / (tol * m * (1.0 + r.abs() / m)))
        })
        .collect::<Result<_>>()?;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    cx.check(
        "round trip over |r*| <= 1e4 M",
        worst <= 1.0,
        format!("worst error {:.2e} of the bound", worst),
    );

    let dtol = cx.t("geometry.derivative_tol")?;
    let big_l = p.r_plus - p.r_e;
    let mut rr = Vec::new();
    for u in logspace(1e-6, 0.5, 60) {
        rr.push(p.r_e + big_l * u);
        rr.push(p.r_plus - big_l * u);
    }
    let derr: Vec<f64> = rr
        .par_iter()
        .map(|&r| {
            let h = 2f64.powi((1e-4 * (r - p.r_e).min(p.r_plus - r)).log2().floor() as i32);
            let f = |x: f64| map.forward(x);
            let d =
                (8.0 * (f(r + h)? - f(r - h)?) - (f(r + 2.0 * h)? - f(r - 2.0 * h)?)) / (12.0 * h);
            let want = map.drstar_dr(r);
            Ok((d / want - 1.0).abs())
        })
        .collect::<Result<_>>()?;
    let worst = derr.iter().copied().fold(0.0, f64::max);
    cx.check(
        "dr*/dr against finite differences",
        worst <= dtol,
        format!("worst relative {worst:.2e}"),
    );
    Ok(())
}

// 3
fn asymptotics(cx: &mut Ctx, cfg: &RunConfig) -> Result<()> {
    let map = cfg.map()?;
    let k = map.kappa();
    let stol = cx.t("geometry.slope_tol")?;
    let pts: Vec<(f64, f64)> = (0..=100)
        .map(|i| {
            let r = (50.0 + 0.5 * i as f64) / k;
            Ok((r, map.inverse_point(r)?.ln_hi))
        })
        .collect::<Result<_>>()?;
    let s = slope(&pts);
    let rel = (s / (-2.0 * k) - 1.0).abs();
    cx.check(
        "ln(r+ - r) slope = -2 kappa",
        rel <= stol,
        format!("slope {s:.6e}, relative {rel:.1e}"),
    );

    let ctol = cx.t("geometry.double_constant_tol")?;
    let c = map.double_horizon_constant();
    let m = map.params.mass;
    let mut vals = Vec::new();
    for x in [1e3, 2e3, 5e3, 1e4] {
        let r = -x / m;
        vals.push(map.inverse_point(r)?.lo * r);
    }
    let last = *vals.last().expect("four samples");
    let rel = (last / c - 1.0).abs();
    let closer = vals
        .windows(2)
        .all(|w| (w[1] - c).abs() <= (w[0] - c).abs());
    cx.check(
        "(r - r_e) r* -> C at r* = -1e4 M",
        rel <= ctol && closer,
        format!("{} vs C = {c:.6e}, relative {rel:.1e}", sci(&vals)),
    );
    Ok(())
}

// 4
fn angular_spectra(cx: &mut Ctx, cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let params = cfg.map()?.params;
    let grid = cfg.angular.grid_size;
    let (p, m) = (cfg.params.p, cfg.params.mass);
    let specs = vec![
        AngularOperatorSpec::sphere(params, 0.5),
        AngularOperatorSpec::sphere(params, -0.5),
        AngularOperatorSpec::sphere(params, 1.5),
        AngularOperatorSpec::sphere(params, -2.5),
        AngularOperatorSpec::double_horizon(params, 0.5, p, m),
        AngularOperatorSpec::double_horizon(params, -1.5, p, m),
        AngularOperatorSpec::double_horizon(params, 0.5, p, m + 0.4),
    ];
    let agree = cx.t("angular.agreement_tol")?;
    let sym_tol = cx.t("angular.symmetry_tol")?;
    let gap_tol = cx.t("angular.gap_tol")?;
    let results: Vec<(Vec<(i64, f64)>, Vec<f64>, Vec<f64>)> = specs
        .par_iter()
        .map(|spec| {
            let modes = shoot_spectrum(spec, 4)?;
            let mut shot: Vec<(i64, f64)> = modes.iter().map(|x| (x.k, x.eigenvalue)).collect();
            shot.sort_by(|a, b| a.1.total_cmp(&b.1));
            let oracle = dense_spectrum_oracle(spec, grid, 4)?;
            let wide = dense_spectrum_oracle(spec, grid, 8)?;
            Ok((shot, oracle, wide))
        })
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    let mut asym = 0.0f64;
    let mut gap = f64::INFINITY;
    let mut mult = 0usize;
    let ctol = cx.t("angular.cluster_tol")?;
    for (spec, (shot, oracle, wide)) in specs.iter().zip(&results) {
        if shot.len() != 8 || oracle.len() != 8 {
            return Err(KdsError::EigensolverFailure(format!(
                "{spec:?}: expected 8 eigenvalues"
            )));
        }
        for (s, o) in shot.iter().zip(oracle) {
            worst = worst.max((s.1 - o).abs());
        }
        for &(k, lam) in shot.iter().filter(|x| x.0 > 0) {
            if let Some(neg) = shot.iter().find(|x| x.0 == -k) {
                asym = asym.max((lam + neg.1).abs());
            }
        }
        match spec.kind {
            crate::angular::AngularKind::PerturbedSphere => {
                gap = gap.min(shot.iter().map(|x| x.1.abs()).fold(f64::INFINITY, f64::min));
            }
            crate::angular::AngularKind::DoubleHorizon => {
                mult = mult.max(
                    cluster_multiplicities(wide, ctol)
                        .into_iter()
                        .max()
                        .unwrap_or(0),
                );
            }
        }
    }
    cx.check(
        "shooting vs oracle, 8 eigenvalues per (kind, n)",
        worst <= agree,
        format!("{worst:.2e}"),
    );
    cx.check("spectral symmetry", asym <= sym_tol, format!("{asym:.2e}"));
    cx.check(
        "gap of the perturbed sphere",
        gap >= 1.0 - gap_tol,
        format!("min |lambda| = {gap:.9}"),
    );
    let max_mult = cx.t("angular.max_multiplicity")? as usize;
    cx.check("D_e multiplicity", mult <= max_mult, format!("max {mult}"));

    // round sphere: eigenvalues ±(|n| + 1/2 + j)
    let rtol = cx.t("angular.round_sphere_tol")?;
    let round = build_extreme_params(1e-3, 1.0)?;
    let mut dev = 0.0f64;
    for n in [0.5, -1.5] {
        for md in shoot_spectrum(&AngularOperatorSpec::sphere(round, n), 4)? {
            let want = (n.abs() + 0.5 + (md.k.abs() - 1) as f64) * md.k.signum() as f64;
            dev = dev.max((md.eigenvalue - want).abs());
        }
    }
    cx.check(
        "round-sphere limit",
        dev <= rtol,
        format!("{dev:.2e} at a·l = 1e-3"),
    );
    let limit = cx.t("angular.runtime_s")?;
    let secs = start.elapsed().as_secs_f64();
    cx.check("runtime", secs < limit, format!("{secs:.1} s"));
    Ok(())
}

// 5
fn evolution_1d(cx: &mut Ctx, cfg: &RunConfig) -> Result<()> {
    let sym = cfg.symbols()?;
    let p = cfg.params.p;
    let coupling = mode_coupling(cfg, ReducedKind::ReducedH0)?;
    let opts = SplitStepOptions {
        check_boundary: false,
        ..Default::default()
    };

    let steps = cx.t("evolve1d.drift_steps")? as usize;
    let tol = cx.t("evolve1d.norm_drift_tol")?;
    let g = Grid1D::new(16.0, 0.25)?;
    let h = build_reduced(ReducedKind::ReducedH0, coupling, p, &sym, g, 4)?;
    let psi = gaussian_packet(g, 4, 0.0, 2.0, 1.0, 1.0)?;
    let out = evolve_split_step_with(&h, &psi, steps, Direction::Forward, opts)?;
    let drift = (out.norm_squared - psi.norm_squared).abs();
    cx.check(
        &format!("norm drift over {steps} steps"),
        drift <= tol,
        format!("{drift:.2e}"),
    );

    let g = Grid1D::new(64.0, 0.25)?;
    let free = build_reduced(ReducedKind::Free, 0.0, p, &sym, g, 4)?;
    let mut psi = gaussian_packet(g, 4, 0.0, 3.0, 1.0, 1.0)?;
    // populate the left-moving components too
    psi.comps[0] = psi.comps[1]
        .iter()
        .map(|z| z * C64::new(0.0, 1.0))
        .collect();
    psi.comps[3] = psi.comps[2]
        .iter()
        .map(|z| z * C64::new(0.0, -1.0))
        .collect();
    psi.refresh_norm();
    let n = 40;
    let out = evolve_split_step_with(&free, &psi, n, Direction::Forward, opts)?;
    let signs = crate::radial1d::gamma1_signs(4);
    let mut exact = true;
    for (c, s) in signs.iter().enumerate() {
        for j in 0..g.n - n {
            // Γ¹ = +1 moves right, −1 moves left
            let (a, b) = if *s > 0.0 { (j + n, j) } else { (j, j + n) };
            exact &= out.comps[c][a] == psi.comps[c][b];
        }
    }
    cx.check(
        "zero-potential transport is an exact shift",
        exact,
        format!("{n} steps"),
    );

    let at_t = |delta: f64| -> Result<SpinorField1D> {
        let g = Grid1D::new(64.0, delta)?;
        let h = build_reduced(ReducedKind::ReducedH0, coupling, p, &sym, g, 4)?;
        let psi = gaussian_packet(g, 4, 0.0, 3.0, 1.0, 1.0)?;
        evolve_split_step_with(
            &h,
            &psi,
            (20.0 / delta).round() as usize,
            Direction::Forward,
            opts,
        )
    };
    let runs: Vec<SpinorField1D> = [0.25, 0.125, 0.0625]
        .par_iter()
        .map(|&d| at_t(d))
        .collect::<Result<_>>()?;
    // compare on the coarse points
    let diff = |a: &SpinorField1D, b: &SpinorField1D| -> f64 {
        let stride = b.grid.n / a.grid.n;
        let mut s = 0.0;
        for c in 0..a.dim() {
            for j in 0..a.grid.n {
                s += (a.comps[c][j] - b.comps[c][stride * j]).norm_sqr();
            }
        }
        s.sqrt()
    };
    let coarse = |f: &SpinorField1D, stride: usize| -> SpinorField1D {
        let mut out = SpinorField1D::zeros(Grid1D::new(64.0, 0.25).expect("valid grid"), f.dim());
        for c in 0..f.dim() {
            for j in 0..out.grid.n {
                out.comps[c][j] = f.comps[c][stride * j];
            }
        }
        out
    };
    let mid = coarse(&runs[1], 2);
    let ratio = diff(&runs[0], &runs[1]) / diff(&mid, &runs[2]);
    let (lo, hi) = (
        cx.t("evolve1d.richardson_lo")?,
        cx.t("evolve1d.richardson_hi")?,
    );
    cx.check(
        "Richardson ratio",
        (lo..=hi).contains(&ratio),
        format!("{ratio:.3}"),
    );
    Ok(())
}

// 6
fn dollard(cx: &mut Ctx, cfg: &RunConfig) -> Result<()> {
    let sym = cfg.symbols()?;
    let ptol = cx.t("dollard.phase_tol")?;
    let mut worst = 0.0f64;
    for t in [0.1, 0.2] {
        let d = dyson_check(&sym, t)?;
        worst = worst.max(d.error_plus).max(d.error_minus);
    }
    cx.check(
        "time-ordered exponential vs closed-form phase",
        worst <= ptol,
        format!("{worst:.2e}"),
    );
    let utol = cx.t("dollard.unitarity_tol")?;
    let t_end = *ladder(cfg.ladder.t0, cfg.ladder.levels)
        .last()
        .expect("levels >= 2");
    let u = dollard_propagator(&sym, t_end)?;
    let g = Grid1D::new(32.0, 0.25)?;
    let psi = gaussian_packet(g, 2, 0.0, 2.0, -1.0, -1.0)?;
    let mut x = psi.clone();
    u.apply(&mut x, false);
    let norm_err = (x.norm_squared - psi.norm_squared).abs();
    u.apply(&mut x, true);
    let back = x.distance(&psi);
    let err = norm_err.max(back);
    cx.check(
        "U(t) unitary",
        err <= utol,
        format!("{err:.2e} at t = {t_end}"),
    );
    Ok(())
}

// 7
fn ladders_1d(cx: &mut Ctx, cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let times = ladder(cfg.ladder.t0, cfg.ladder.levels);
    let cut = cfg.cutoff();
    let ratio = cx.t("ladder1d.cosmological_ratio")?;
    let (h, psi) = scattering_setup(cfg, Side::Cosmological)?;
    let prof = build_reduced(
        ReducedKind::ProfilePlus,
        0.0,
        h.p,
        &h.symbols,
        h.grid,
        h.dim,
    )?;
    let est = wave_operator_estimate_with(&h, &prof, false, &psi, Side::Cosmological, &times, cut)?;
    let shrink = est.increments.windows(2).all(|w| w[1] * ratio <= w[0]);
    cx.check(
        &format!("cosmological increments shrink >= {ratio}x per level"),
        shrink,
        sci(&est.increments),
    );

    let (he, psi) = scattering_setup(cfg, Side::DoubleHorizon)?;
    let prof = build_reduced(
        ReducedKind::ProfileMinus,
        0.0,
        he.p,
        &he.symbols,
        he.grid,
        he.dim,
    )?;
    let (modified, plain) = rayon::join(
        || wave_operator_estimate_with(&he, &prof, true, &psi, Side::DoubleHorizon, &times, cut),
        || wave_operator_estimate_with(&he, &prof, false, &psi, Side::DoubleHorizon, &times, cut),
    );
    let (modified, plain) = (modified?, plain?);
    let frac = cx.t("ladder1d.final_fraction")?;
    let fin = modified.final_increment();
    let mono = modified.increments.windows(2).all(|w| w[1] < w[0]);
    cx.check(
        "modified double-horizon increments decrease to <= 1e-2 |psi|",
        mono && fin <= frac * modified.input_norm,
        sci(&modified.increments),
    );
    let factor = cx.t("ladder1d.stall_factor")?;
    cx.check(
        "unmodified ladder stalls",
        plain.final_increment() >= factor * fin,
        sci(&plain.increments),
    );
    let limit = cx.t("ladder1d.runtime_s")?;
    let secs = start.elapsed().as_secs_f64();
    cx.check("runtime", secs < limit, format!("{secs:.1} s"));
    Ok(())
}

// 8
fn velocity(cx: &mut Ctx, cfg: &RunConfig) -> Result<()> {
    let times = ladder(cfg.ladder.t0, cfg.ladder.levels);
    let wmin = cx.t("velocity.weight_total")?;
    let ctol = cx.t("velocity.cone_tol")?;
    for (side, label) in [
        (Side::Cosmological, "cosmological"),
        (Side::DoubleHorizon, "double-horizon"),
    ] {
        let (h, psi) = scattering_setup(cfg, side)?;
        let v = velocity_cone_report(&h, &psi, 0.1, 0.1, &times)?;
        let i = times.len() - 1;
        let total = v.weight_minus_one[i] + v.weight_plus_one[i];
        cx.check(
            &format!("{label}: velocity weights on {{-1, +1}}"),
            total >= wmin,
            format!("{:.7} + {:.7}", v.weight_minus_one[i], v.weight_plus_one[i]),
        );
        let cone = v.cone_inner[i].max(v.cone_outer[i]);
        cx.check(
            &format!("{label}: cone diagnostics"),
            cone <= ctol,
            format!(
                "inner {:.1e}, outer {:.1e}",
                v.cone_inner[i], v.cone_outer[i]
            ),
        );
    }
    Ok(())
}

// 9
fn no_point_spectrum(cx: &mut Ctx, cfg: &RunConfig) -> Result<()> {
    let sym: RadialSymbolSet = cfg.symbols()?;
    let p = cfg.params.p;
    let delta = cx.t("spectrum.spacing_delta")?;
    let coupling = mode_coupling(cfg, ReducedKind::ReducedH0)?;
    let g = Grid1D::new(100.0, delta)?;
    let h = build_reduced(ReducedKind::ReducedH0, coupling, p, &sym, g, 4)?;
    let window = (cfg.packet.window_lo, cfg.packet.window_hi);
    let ls = matrix_oracle(&h, g)?.level_spacings(&[100.0, 200.0, 400.0], window, 1e-8)?;
    let scaled: Vec<f64> = ls.iter().map(|s| s.scaled).collect();
    let lo = scaled.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scaled.iter().copied().fold(0.0, f64::max);
    let stol = cx.t("spectrum.spacing_tol")?;
    cx.check(
        "spacing x L constant across L = 100, 200, 400",
        hi / lo - 1.0 <= stol,
        format!("{scaled:.4?}"),
    );

    let half = cx.t("spectrum.groenwall_half_length")?;
    let modes = shoot_spectrum(
        &AngularOperatorSpec::sphere(sym.map.params, cfg.angular.n),
        2,
    )?;
    let couplings: Vec<f64> = modes
        .iter()
        .filter(|m| m.k > 0)
        .map(|m| m.eigenvalue)
        .collect();
    let mut pairs = Vec::new();
    for &c in &couplings {
        for lam in [0.5, 1.0, 1.5, 2.0, 3.0] {
            pairs.push((lam, c));
        }
    }
    let reports: Vec<_> = pairs
        .par_iter()
        .map(|&(lam, c)| {
            let h = build_reduced(
                ReducedKind::ReducedH0,
                c,
                p,
                &sym,
                Grid1D::new(8.0, 0.25)?,
                4,
            )?;
            groenwall_no_eigenvalue(&h, lam, half)
        })
        .collect::<Result<_>>()?;
    let bad: Vec<String> = reports
        .iter()
        .zip(&pairs)
        .filter(|(r, _)| r.observed_factor < r.lower_bound_factor)
        .map(|(r, (l, c))| {
            format!(
                "(λ {l}, μ {c:.4}): {:.3e} < {:.3e}",
                r.observed_factor, r.lower_bound_factor
            )
        })
        .collect();
    let tightest = reports
        .iter()
        .map(|r| r.observed_factor / r.lower_bound_factor)
        .fold(f64::INFINITY, f64::min);
    cx.check(
        &format!(
            "Groenwall bound at {} (lambda, coupling) pairs",
            pairs.len()
        ),
        bad.is_empty() && pairs.len() == 10,
        if bad.is_empty() {
            format!("smallest observed/bound {tightest:.3}")
        } else {
            bad.join("; ")
        },
    );
    Ok(())
}

// 10
fn field_2d(cx: &mut Ctx, cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let g = cfg.grid2d()?;
    let map = cfg.map()?;
    let set = MatrixPotentialSet::new(map, cfg.params.p, cfg.params.mass);
    let seed = cfg.run.seed;
    let asm = |k, a| assemble_operator_with(k, a, &set, g);
    let hp = asm(OperatorKind::Hp, Assembly::Direct)?;
    let hs = asm(OperatorKind::Hp, Assembly::Split)?;
    let h1 = asm(OperatorKind::H1, Assembly::Direct)?;
    let h0 = asm(OperatorKind::H0, Assembly::Direct)?;
    let he = asm(OperatorKind::He, Assembly::Direct)?;

    let atol = cx.t("field2d.assembly_tol")?;
    let res = assembly_residual(&hp, &hs, 3, seed)?;
    cx.check(
        "direct and split assemblies agree",
        res <= atol,
        format!("{res:.2e}"),
    );
    let htol = cx.t("field2d.hermiticity_tol")?;
    let herm = [&hp, &hs, &h1, &h0, &he]
        .iter()
        .map(|h| hermiticity_residual(h, 2, seed))
        .fold(0.0, f64::max);
    cx.check(
        "discrete operators symmetric",
        herm <= htol,
        format!("{herm:.2e}"),
    );

    let steps = cx.t("field2d.charge_steps")? as usize;
    let dtol = cx.t("field2d.charge_drift_tol")?;
    let basis = angular_basis(&h0)?;
    let psi = packet_2d(
        g,
        cfg.params.p,
        0.0,
        cfg.ladder2d.width,
        cfg.ladder2d.momentum,
        &basis.branch_vector(0, 1.0),
    )?;
    let opts = CnOptions {
        check_boundary: false,
        ..Default::default()
    };
    let (out, st) = evolve_cn_with(&hp, &psi, cfg.grid2d.dt, steps, Direction::Forward, opts)?;
    let drift = (out.charge - psi.charge).abs();
    cx.check(
        &format!("charge drift over {steps} steps"),
        drift <= dtol,
        format!(
            "{drift:.2e}, {:.1} iterations per step",
            st.iterations as f64 / steps as f64
        ),
    );

    let wmin = cx.t("field2d.window_mass_min")?;
    let l = &cfg.ladder2d;
    let dt = cfg.grid2d.dt;
    for (label, ha, hb, cut, branch) in [
        ("Omega1 (Hp vs H1)", &hp, &h1, None, 1.0),
        (
            "Omega2 (H1 vs He, c-)",
            &h1,
            &he,
            Some((Side::DoubleHorizon, cfg.cutoff())),
            -1.0,
        ),
    ] {
        let (phi, f) = ladder2d_state(cfg, ha, branch)?;
        let mass = window_mass(ha, &phi, &f);
        let est = compare_dynamics_2d(ha, hb, cut, &phi, dt, l.t0, l.levels, CnOptions::default())?;
        cx.check(
            &format!("{label} ladder monotone from level 2"),
            est.monotone_from_second() && mass >= wmin,
            format!("{}, window mass {mass:.10}", sci(&est.increments)),
        );
    }

    let mtol = cx.t("field2d.mode_tol")?;
    let small = Grid2D::new(Grid1D::new(6.4, 0.05)?, 32)?;
    let hs_e = assemble_operator_with(OperatorKind::He, Assembly::Direct, &set, small)?;
    let b = angular_basis(&hs_e)?;
    let psi = packet_2d(small, cfg.params.p, 0.0, 1.0, 0.5, &b.branch_vector(0, 1.0))?;
    let rep = mode_expansion_check(&hs_e, &psi, 50)?;
    let hs_0 = assemble_operator_with(OperatorKind::H0, Assembly::Direct, &set, small)?;
    let mut flat = vec![C64::new(0.0, 0.0); 4 * small.n_theta];
    for j in 0..small.n_theta {
        flat[4 * j + 1] = C64::new(small.theta(j).sin().sqrt(), 0.0);
    }
    let psi = packet_2d(small, cfg.params.p, 0.0, 1.0, 0.0, &flat)?;
    let rep0 = mode_expansion_check(&hs_0, &psi, 50)?;
    let dev = rep.deviation.max(rep0.deviation);
    cx.check(
        "mode expansion matches 2D evolution",
        dev <= mtol,
        format!(
            "He {:.1e}, H0 {:.1e} at t = {}",
            rep.deviation, rep0.deviation, rep.t
        ),
    );

    let cmax = cx.t("field2d.defect_constant_max")?;
    let m = map.params.mass;
    let scaled: Vec<f64> = [1e3, 2e3, 4e3]
        .iter()
        .map(|x| {
            let r = -x / m;
            Ok(double_horizon_defect(&set, r, g.n_theta)? * r * r)
        })
        .collect::<Result<_>>()?;
    let worst = scaled.iter().copied().fold(0.0, f64::max);
    cx.check(
        "r*^2 |H1 - He| bounded",
        worst <= cmax,
        format!("{scaled:.3?}"),
    );

    let limit = cx.t("field2d.runtime_s")?;
    let secs = start.elapsed().as_secs_f64();
    cx.check("runtime", secs < limit, format!("{secs:.0} s"));
    Ok(())
}
