//! Angular spectra: the perturbed sphere operator and the double-horizon operator,
//! by shooting and by the dense Galerkin oracle.
//!
//! cargo run --release --example angular

use kds::angular::{dense_spectrum_oracle, shoot_spectrum, AngularOperatorSpec};
use kds::geometry::build_extreme_params;

fn main() -> kds::Result<()> {
    let params = build_extreme_params(1.0, 0.1)?;
    let specs = [
        ("sphere n = 1/2", AngularOperatorSpec::sphere(params, 0.5)),
        ("sphere n = -3/2", AngularOperatorSpec::sphere(params, -1.5)),
        (
            "double horizon n = 1/2",
            AngularOperatorSpec::double_horizon(params, 0.5, 0.5, 0.0),
        ),
        (
            "double horizon n = 1/2, m = 0.4",
            AngularOperatorSpec::double_horizon(params, 0.5, 0.5, 0.4),
        ),
    ];
    for (label, spec) in specs {
        let modes = shoot_spectrum(&spec, 4)?;
        let oracle = dense_spectrum_oracle(&spec, 64, 4)?;
        let mut shot: Vec<(i64, f64)> = modes.iter().map(|m| (m.k, m.eigenvalue)).collect();
        shot.sort_by(|x, y| x.1.total_cmp(&y.1));
        println!("{label}");
        for ((k, lam), o) in shot.iter().zip(&oracle) {
            println!(
                "  k = {k:>3}  {lam:>20.14}  oracle {o:>20.14}  diff {:.1e}",
                (lam - o).abs()
            );
        }
    }
    Ok(())
}
