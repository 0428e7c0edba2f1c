//! Crank-Nicolson evolution of the full (r*, theta) Dirac operator, with a charge
//! check and a round trip through the binary dump format.
//!
//! cargo run --release --example evolve2d

use kds::field2d::{
    angular_basis, assemble_operator, evolve_cn, packet_2d, Grid2D, OperatorKind, SpinorField2D,
};
use kds::geometry::TortoiseMap;
use kds::potentials::MatrixPotentialSet;
use kds::radial1d::Grid1D;

fn main() -> kds::Result<()> {
    let map = TortoiseMap::from_al(1.0, 0.1)?;
    let set = MatrixPotentialSet::new(map, 0.5, 0.0);
    let grid = Grid2D::new(Grid1D::new(64.0, 0.5)?, 32)?;
    let h = assemble_operator(OperatorKind::Hp, &set, grid)?;
    println!(
        "{} x {} grid, spectral bound {:.4}",
        grid.r.n,
        grid.n_theta,
        h.spectral_bound()
    );

    // Hp does not separate; the packet takes its angular profile from H0.
    let h0 = assemble_operator(OperatorKind::H0, &set, grid)?;
    let mode = angular_basis(&h0)?.branch_vector(0, 1.0);
    let mut psi = packet_2d(grid, 0.5, 0.0, 4.0, 1.0, &mode)?;
    let q0 = psi.charge;
    for _ in 0..5 {
        psi = evolve_cn(&h, &psi, 0.25, 20)?;
        println!(
            "t = {:>5.1}  charge {:.16}  <Gamma1> {:+.6}",
            psi.time,
            psi.charge,
            psi.gamma1_expectation()
        );
    }
    println!("charge drift {:.2e}", (psi.charge - q0).abs());

    let mut buf = Vec::new();
    psi.write_dump(&mut buf)?;
    let back = SpinorField2D::read_dump(&mut buf.as_slice())?;
    println!(
        "dump: {} bytes, round-trip distance {:.1e}",
        buf.len(),
        back.distance(&psi)
    );
    Ok(())
}
