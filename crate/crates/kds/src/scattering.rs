//! Time-ladder estimates of wave operators and asymptotic velocities for the
//! reduced one-dimensional dynamics.

use crate::angular::{AngularKind, AngularMode};
use crate::error::{KdsError, Result};
use crate::potentials::RadialSymbolSet;
use crate::radial1d::{
    build_reduced, dollard_propagator, evolve_split_step_with, smooth_step, Direction,
    ReducedHamiltonian, ReducedKind, SpinorField1D, SplitStepOptions,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    DoubleHorizon,
    Cosmological,
}

/// c₊ = sin(π/2·S), c₋ = cos(π/2·S) with S the quintic step from `lo` to `hi`,
/// so c₊² + c₋² = 1 pointwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffPair {
    pub lo: f64,
    pub hi: f64,
}

impl Default for CutoffPair {
    fn default() -> Self {
        CutoffPair { lo: -5.0, hi: 5.0 }
    }
}

impl CutoffPair {
    fn angle(&self, r: f64) -> f64 {
        std::f64::consts::FRAC_PI_2 * smooth_step((r - self.lo) / (self.hi - self.lo))
    }

    pub fn c_plus(&self, r: f64) -> f64 {
        self.angle(r).sin()
    }

    pub fn c_minus(&self, r: f64) -> f64 {
        self.angle(r).cos()
    }

    pub fn on(&self, side: Side, r: f64) -> f64 {
        match side {
            Side::Cosmological => self.c_plus(r),
            Side::DoubleHorizon => self.c_minus(r),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WaveOperatorEstimate {
    pub side: Side,
    pub modified: bool,
    pub times: Vec<f64>,
    pub images: Vec<SpinorField1D>,
    /// ‖W(t_{i+1})ψ − W(t_i)ψ‖
    pub increments: Vec<f64>,
    pub input_norm: f64,
}

impl WaveOperatorEstimate {
    pub fn image_norms(&self) -> Vec<f64> {
        self.images.iter().map(|f| f.norm()).collect()
    }

    pub fn final_increment(&self) -> f64 {
        self.increments.last().copied().unwrap_or(0.0)
    }

    /// True when every increment after the first is no larger than its predecessor.
    pub fn monotone_from_second(&self) -> bool {
        self.increments
            .get(1..)
            .unwrap_or(&[])
            .windows(2)
            .all(|w| w[1] <= w[0])
    }
}

/// t_i = t0·2^i, i < levels.
pub fn ladder(t0: f64, levels: usize) -> Vec<f64> {
    (0..levels).map(|i| t0 * 2f64.powi(i as i32)).collect()
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

fn require_filtered(psi: &SpinorField1D) -> Result<()> {
    match psi.window {
        Some((lo, hi)) if lo > 0.0 || hi < 0.0 => Ok(()),
        Some((lo, hi)) => Err(KdsError::UnfilteredState(format!(
            "window [{lo}, {hi}] contains zero energy"
        ))),
        None => Err(KdsError::UnfilteredState(
            "no spectral filter applied".into(),
        )),
    }
}

/// e^{−itH}ψ along the ladder, each level continuing the previous run.
pub fn ladder_states(
    h: &ReducedHamiltonian,
    psi: &SpinorField1D,
    times: &[f64],
) -> Result<Vec<SpinorField1D>> {
    let dt = h.grid.delta;
    let mut out = Vec::with_capacity(times.len());
    let mut cur = psi.clone();
    let mut done = 0;
    for &t in times {
        let n = steps_for(t, dt)?;
        if n < done {
            return Err(KdsError::Validation(vec![
                "ladder times must increase".into()
            ]));
        }
        cur = evolve_split_step_with(
            h,
            &cur,
            n - done,
            Direction::Forward,
            SplitStepOptions::default(),
        )
        .map_err(|e| e.context("scattering", "ladder_states"))?;
        done = n;
        out.push(cur.clone());
    }
    Ok(out)
}

/// W(t)ψ = e^{itH_prof} c_side e^{−itH_full}ψ, composed with U(t)* on the double-horizon
/// side when `use_dollard`.
pub fn wave_operator_estimate(
    h_full: &ReducedHamiltonian,
    h_profile: &ReducedHamiltonian,
    use_dollard: bool,
    psi: &SpinorField1D,
    side: Side,
    t0: f64,
    levels: usize,
) -> Result<WaveOperatorEstimate> {
    wave_operator_estimate_with(
        h_full,
        h_profile,
        use_dollard,
        psi,
        side,
        &ladder(t0, levels),
        CutoffPair::default(),
    )
}

pub fn wave_operator_estimate_with(
    h_full: &ReducedHamiltonian,
    h_profile: &ReducedHamiltonian,
    use_dollard: bool,
    psi: &SpinorField1D,
    side: Side,
    times: &[f64],
    cutoff: CutoffPair,
) -> Result<WaveOperatorEstimate> {
    require_filtered(psi)?;
    if h_full.grid != h_profile.grid || h_full.dim != h_profile.dim {
        return Err(KdsError::Validation(vec![
            "full and profile operators must share grid and dimension".into(),
        ]));
    }
    let states = ladder_states(h_full, psi, times)?;
    let modified = use_dollard && side == Side::DoubleHorizon;
    let mut images = Vec::with_capacity(times.len());
    for (t, state) in times.iter().zip(states) {
        let mut phi = state;
        phi.multiply(|r| cutoff.on(side, r));
        let n = steps_for(*t, h_profile.grid.delta)?;
        let mut back = evolve_split_step_with(
            h_profile,
            &phi,
            n,
            Direction::Backward,
            SplitStepOptions::default(),
        )
        .map_err(|e| e.context("scattering", "wave_operator_estimate"))?;
        if modified {
            dollard_propagator(&h_full.symbols, *t)
                .map_err(|e| e.context("scattering", "wave_operator_estimate"))?
                .apply(&mut back, true);
        }
        images.push(back);
    }
    let increments = images.windows(2).map(|w| w[1].distance(&w[0])).collect();
    Ok(WaveOperatorEstimate {
        side,
        modified,
        times: times.to_vec(),
        images,
        increments,
        input_norm: psi.norm(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityReport {
    pub times: Vec<f64>,
    pub weight_minus_one: Vec<f64>,
    pub weight_plus_one: Vec<f64>,
    pub eps: f64,
    pub delta: f64,
    /// ‖1_{|r*| ≤ εt} ψ(t)‖
    pub cone_inner: Vec<f64>,
    /// ‖1_{|r*| ≥ (1+δ)t} ψ(t)‖
    pub cone_outer: Vec<f64>,
}

/// Smooth bump: 1 on |v − v0| ≤ 0.1, 0 beyond 0.2.
pub fn velocity_bump(v: f64, v0: f64) -> f64 {
    1.0 - smooth_step(((v - v0).abs() - 0.1) / 0.1)
}

fn weighted_mass(psi: &SpinorField1D, w: impl Fn(f64) -> f64) -> f64 {
    let g = psi.grid;
    let mut acc = 0.0;
    for c in &psi.comps {
        for (j, z) in c.iter().enumerate() {
            acc += w(g.x(j)) * z.norm_sqr();
        }
    }
    acc * g.delta
}

/// Bump weights ⟨J(r*/t)⟩ at ∓1 together with the cone norms, per ladder time.
pub fn velocity_cone_report(
    h: &ReducedHamiltonian,
    psi: &SpinorField1D,
    eps: f64,
    delta: f64,
    times: &[f64],
) -> Result<VelocityReport> {
    require_filtered(psi)?;
    velocity_report_unchecked(h, psi, eps, delta, times)
}

/// Same as `velocity_cone_report` with the default ε = δ = 0.1.
pub fn asymptotic_velocity_weights(
    h: &ReducedHamiltonian,
    psi: &SpinorField1D,
    times: &[f64],
) -> Result<VelocityReport> {
    velocity_report_unchecked(h, psi, 0.1, 0.1, times)
}

fn velocity_report_unchecked(
    h: &ReducedHamiltonian,
    psi: &SpinorField1D,
    eps: f64,
    delta: f64,
    times: &[f64],
) -> Result<VelocityReport> {
    let states = ladder_states(h, psi, times)?;
    let n2 = psi.norm_squared;
    let mut rep = VelocityReport {
        times: times.to_vec(),
        weight_minus_one: vec![],
        weight_plus_one: vec![],
        eps,
        delta,
        cone_inner: vec![],
        cone_outer: vec![],
    };
    for (t, s) in times.iter().zip(&states) {
        let t = *t;
        rep.weight_minus_one
            .push(weighted_mass(s, |r| velocity_bump(r / t, -1.0)) / n2);
        rep.weight_plus_one
            .push(weighted_mass(s, |r| velocity_bump(r / t, 1.0)) / n2);
        let inner = weighted_mass(s, |r| if r.abs() <= eps * t { 1.0 } else { 0.0 });
        let outer = weighted_mass(s, |r| {
            if r.abs() >= (1.0 + delta) * t {
                1.0
            } else {
                0.0
            }
        });
        rep.cone_inner.push(inner.sqrt());
        rep.cone_outer.push(outer.sqrt());
    }
    Ok(rep)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainReport {
    pub t: f64,
    pub shift: f64,
    /// image under the cosmological profile
    pub plus: SpinorField1D,
    /// Dollard-modified image under the double-horizon profile
    pub minus: SpinorField1D,
    pub unitarity_defect: f64,
    pub intertwining_defect: f64,
}

fn chain_images(
    state: &SpinorField1D,
    t: f64,
    plus_prof: &ReducedHamiltonian,
    minus_prof: &ReducedHamiltonian,
    symbols: &RadialSymbolSet,
    cutoff: CutoffPair,
) -> Result<(SpinorField1D, SpinorField1D)> {
    let n = steps_for(t, plus_prof.grid.delta)?;
    let mut a = state.clone();
    a.multiply(|r| cutoff.c_plus(r));
    let a = evolve_split_step_with(
        plus_prof,
        &a,
        n,
        Direction::Backward,
        SplitStepOptions::default(),
    )?;
    let mut b = state.clone();
    b.multiply(|r| cutoff.c_minus(r));
    let mut b = evolve_split_step_with(
        minus_prof,
        &b,
        n,
        Direction::Backward,
        SplitStepOptions::default(),
    )?;
    dollard_propagator(symbols, t)?.apply(&mut b, true);
    Ok((a, b))
}

/// Emulates the composed wave operator on one mode: full reduced dynamics, split by
/// c±, pulled back with the cosmological profile and the Dollard-modified
/// double-horizon profile. The intertwining defect compares
/// e^{−isH_±}(images of ψ) with the images of e^{−isH}ψ, s = 10Δ.
pub fn chain_compose(
    p: f64,
    mode: &AngularMode,
    symbols: &RadialSymbolSet,
    psi: &SpinorField1D,
    t: f64,
) -> Result<ChainReport> {
    let kind = match mode.spec.kind {
        AngularKind::PerturbedSphere => ReducedKind::ReducedH0,
        AngularKind::DoubleHorizon => ReducedKind::ReducedHe,
    };
    let h = build_reduced(kind, mode.eigenvalue, p, symbols, psi.grid, psi.dim())?;
    chain_compose_with(&h, psi, t, CutoffPair::default())
}

pub fn chain_compose_with(
    h: &ReducedHamiltonian,
    psi: &SpinorField1D,
    t: f64,
    cutoff: CutoffPair,
) -> Result<ChainReport> {
    require_filtered(psi)?;
    let ctx = |e: KdsError| e.context("scattering", "chain_compose");
    let plus_prof = build_reduced(
        ReducedKind::ProfilePlus,
        0.0,
        h.p,
        &h.symbols,
        h.grid,
        h.dim,
    )?;
    let minus_prof = build_reduced(
        ReducedKind::ProfileMinus,
        0.0,
        h.p,
        &h.symbols,
        h.grid,
        h.dim,
    )?;
    let shift_steps = 10;
    let s = shift_steps as f64 * h.grid.delta;
    let states = ladder_states(h, psi, &[t, t + s]).map_err(ctx)?;
    let (plus, minus) =
        chain_images(&states[0], t, &plus_prof, &minus_prof, &h.symbols, cutoff).map_err(ctx)?;
    let (plus_s, minus_s) =
        chain_images(&states[1], t, &plus_prof, &minus_prof, &h.symbols, cutoff).map_err(ctx)?;
    let opts = SplitStepOptions::default();
    let fp = evolve_split_step_with(&plus_prof, &plus, shift_steps, Direction::Forward, opts)
        .map_err(ctx)?;
    let fm = evolve_split_step_with(&minus_prof, &minus, shift_steps, Direction::Forward, opts)
        .map_err(ctx)?;
    let d2 = fp.distance(&plus_s).powi(2) + fm.distance(&minus_s).powi(2);
    Ok(ChainReport {
        t,
        shift: s,
        unitarity_defect: (plus.norm_squared + minus.norm_squared - psi.norm_squared).abs(),
        intertwining_defect: d2.sqrt(),
        plus,
        minus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::TortoiseMap;
    use crate::radial1d::{gaussian_packet, matrix_oracle, Grid1D};

    fn sym() -> RadialSymbolSet {
        RadialSymbolSet::new(TortoiseMap::from_al(1.0, 0.1).unwrap(), 0.5, 0.0)
    }

    #[test]
    fn cutoffs_partition_unity() {
        let c = CutoffPair::default();
        for k in -100..=100 {
            let r = k as f64 * 0.1;
            let s = c.c_plus(r).powi(2) + c.c_minus(r).powi(2);
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert_eq!(c.c_plus(-5.0), 0.0);
        assert_eq!(c.c_minus(5.0).abs() < 1e-16, true);
    }

    #[test]
    fn identical_dynamics_give_zero_increments() {
        let g = Grid1D::new(256.0, 0.25).unwrap();
        let h = build_reduced(ReducedKind::ProfileMinus, 0.0, 0.5, &sym(), g, 2).unwrap();
        let mut psi = gaussian_packet(g, 2, -20.0, 3.0, -1.0, -1.0).unwrap();
        psi.window = Some((0.5, 1.5));
        let w = wave_operator_estimate(&h, &h, false, &psi, Side::DoubleHorizon, 25.0, 4).unwrap();
        assert!(
            w.increments.iter().all(|&d| d <= 1e-10),
            "{:?}",
            w.increments
        );
        let psi = gaussian_packet(g, 2, 0.0, 3.0, -1.0, -1.0).unwrap();
        let v = asymptotic_velocity_weights(&h, &psi, &[100.0, 200.0]).unwrap();
        assert!((v.weight_minus_one[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn unfiltered_state_is_rejected() {
        let g = Grid1D::new(64.0, 0.25).unwrap();
        let h = build_reduced(ReducedKind::Free, 0.0, 0.5, &sym(), g, 2).unwrap();
        let mut psi = gaussian_packet(g, 2, 0.0, 3.0, 1.0, 1.0).unwrap();
        let r = wave_operator_estimate(&h, &h, false, &psi, Side::Cosmological, 4.0, 2);
        assert!(matches!(r, Err(KdsError::UnfilteredState(_))));
        psi.window = Some((-0.5, 0.5));
        let r = wave_operator_estimate(&h, &h, false, &psi, Side::Cosmological, 4.0, 2);
        assert!(matches!(r, Err(KdsError::UnfilteredState(_))));
    }

    #[test]
    fn short_chain_is_nearly_unitary() {
        // back-scattered pieces are pulled back to ≈ 2t, so L > 2t + box
        let g = Grid1D::new(320.0, 0.25).unwrap();
        let h = build_reduced(ReducedKind::ReducedH0, 1.0, 0.5, &sym(), g, 4).unwrap();
        let psi = gaussian_packet(g, 4, 0.0, 3.0, 1.2, 1.0).unwrap();
        let sub = Grid1D::new(48.0, 0.25).unwrap();
        let psi = matrix_oracle(&h, sub)
            .unwrap()
            .spectral_filter(&psi, (0.5, 1.5))
            .unwrap();
        let c = chain_compose_with(&h, &psi, 120.0, CutoffPair::default()).unwrap();
        assert!(c.unitarity_defect < 1e-12);
        assert!(c.intertwining_defect < 2e-2, "{}", c.intertwining_defect);
        assert!(c.minus.norm() < 1e-2);
    }
}
