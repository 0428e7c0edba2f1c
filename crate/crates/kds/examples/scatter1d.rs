//! Wave-operator ladders on both ends, with and without the Dollard modification
//! at the double horizon, and the asymptotic velocity of the scattered state.
//!
//! cargo run --release --example scatter1d

use kds::cli::{parse_config, scattering_setup};
use kds::radial1d::{build_reduced, ReducedKind};
use kds::scattering::{asymptotic_velocity_weights, ladder, wave_operator_estimate, Side};

fn main() -> kds::Result<()> {
    // the reduced grids of the smoke config; fixtures/default.cfg gives the full run
    let cfg = parse_config(include_str!("../fixtures/small.cfg"))?;
    let times = ladder(cfg.ladder.t0, cfg.ladder.levels);
    println!("ladder times {times:?}");

    for (side, kind, variants) in [
        (Side::Cosmological, ReducedKind::ProfilePlus, &[false][..]),
        (
            Side::DoubleHorizon,
            ReducedKind::ProfileMinus,
            &[true, false][..],
        ),
    ] {
        let (h, psi) = scattering_setup(&cfg, side)?;
        let profile = build_reduced(kind, 0.0, h.p, &h.symbols, h.grid, h.dim)?;
        for &dollard in variants {
            let w = wave_operator_estimate(
                &h,
                &profile,
                dollard,
                &psi,
                side,
                cfg.ladder.t0,
                cfg.ladder.levels,
            )?;
            let inc: Vec<String> = w.increments.iter().map(|d| format!("{d:.3e}")).collect();
            println!(
                "{side:?}, Dollard {dollard}: increments [{}]",
                inc.join(", ")
            );
        }
        let v = asymptotic_velocity_weights(&h, &psi, &times[times.len() - 1..])?;
        println!(
            "  velocity weight on -1: {:.7}, on +1: {:.7}",
            v.weight_minus_one[0], v.weight_plus_one[0]
        );
    }
    Ok(())
}
