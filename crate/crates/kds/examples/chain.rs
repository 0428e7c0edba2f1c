//! Composed wave operators. In 1D the cosmological and Dollard-modified double-horizon
//! pull-backs of a mode are checked for unitarity and intertwining; in 2D the two
//! comparison ladders Hp -> H1 and H1 -> He are run on energy-filtered packets.
//!
//! cargo run --release --example chain

use kds::cli::{ladder2d_state, parse_config, scattering_setup};
use kds::field2d::{assemble_operator, compare_dynamics_2d, window_mass, CnOptions, OperatorKind};
use kds::potentials::MatrixPotentialSet;
use kds::scattering::{chain_compose_with, ladder, Side};

fn main() -> kds::Result<()> {
    // the reduced grids of the smoke config; fixtures/default.cfg gives the full run
    let cfg = parse_config(include_str!("../fixtures/small.cfg"))?;

    let (h, psi) = scattering_setup(&cfg, Side::Cosmological)?;
    for t in ladder(cfg.ladder.t0, cfg.ladder.levels) {
        let r = chain_compose_with(&h, &psi, t, cfg.cutoff())?;
        println!(
            "t = {t:>6}: |plus| {:.6}, |minus| {:.6}, unitarity {:.1e}, intertwining {:.1e}",
            r.plus.norm(),
            r.minus.norm(),
            r.unitarity_defect,
            r.intertwining_defect
        );
    }

    let set = MatrixPotentialSet::new(cfg.map()?, cfg.params.p, cfg.params.mass);
    let g = cfg.grid2d()?;
    let hp = assemble_operator(OperatorKind::Hp, &set, g)?;
    let h1 = assemble_operator(OperatorKind::H1, &set, g)?;
    let he = assemble_operator(OperatorKind::He, &set, g)?;
    let l = &cfg.ladder2d;
    for (label, ha, hb, cut, branch) in [
        ("Hp -> H1", &hp, &h1, None, 1.0),
        (
            "H1 -> He",
            &h1,
            &he,
            Some((Side::DoubleHorizon, cfg.cutoff())),
            -1.0,
        ),
    ] {
        let (phi, filter) = ladder2d_state(&cfg, ha, branch)?;
        let est = compare_dynamics_2d(
            ha,
            hb,
            cut,
            &phi,
            cfg.grid2d.dt,
            l.t0,
            l.levels,
            CnOptions::default(),
        )?;
        let inc: Vec<String> = est.increments.iter().map(|d| format!("{d:.2e}")).collect();
        println!(
            "{label}: window mass {:.9}, increments [{}]",
            window_mass(ha, &phi, &filter),
            inc.join(", ")
        );
    }
    Ok(())
}
