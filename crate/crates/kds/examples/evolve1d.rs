//! Split-step evolution of the reduced radial Dirac equation for one angular mode.
//!
//! cargo run --release --example evolve1d

use kds::angular::{shoot_spectrum, AngularOperatorSpec};
use kds::geometry::TortoiseMap;
use kds::potentials::RadialSymbolSet;
use kds::radial1d::{build_reduced, evolve_split_step, gaussian_packet, Grid1D, ReducedKind};

fn main() -> kds::Result<()> {
    let map = TortoiseMap::from_al(1.0, 0.1)?;
    let symbols = RadialSymbolSet::new(map, 0.5, 0.0);
    let mode = shoot_spectrum(&AngularOperatorSpec::sphere(map.params, 0.5), 2)?
        .into_iter()
        .find(|m| m.k == 1)
        .expect("k = 1 mode");
    println!("coupling lambda = {:.12}", mode.eigenvalue);

    let grid = Grid1D::new(400.0, 0.25)?;
    let h = build_reduced(
        ReducedKind::ReducedH0,
        mode.eigenvalue,
        0.5,
        &symbols,
        grid,
        4,
    )?;
    let mut psi = gaussian_packet(grid, 4, 0.0, 4.0, 1.2, 1.0)?;
    println!("{:>8} {:>20} {:>14} {:>14}", "t", "norm", "<Gamma1>", "<p>");
    for k in 0..=8 {
        println!(
            "{:>8.1} {:>20.16} {:>14.8} {:>14.8}",
            k as f64 * 100.0 * grid.delta,
            psi.norm(),
            psi.gamma1_expectation(),
            psi.momentum_expectation()
        );
        psi = evolve_split_step(&h, &psi, 100)?;
    }
    Ok(())
}
