//! Horizon structure and the tortoise coordinate of an extreme Kerr-de Sitter hole.
//!
//! cargo run --release --example geometry -- 1.0 0.1

use kds::geometry::TortoiseMap;

fn main() -> kds::Result<()> {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .filter_map(|s| s.parse().ok())
        .collect();
    let (a, l) = (
        args.first().copied().unwrap_or(1.0),
        args.get(1).copied().unwrap_or(0.1),
    );
    let map = TortoiseMap::from_al(a, l)?;
    let p = map.params;
    println!("a = {a}, l = {l}: M = {:.12}, xi = {:.12}", p.mass, p.xi);
    println!(
        "horizons r_e = {:.12}, r_- = {:.12}, r_+ = {:.12}",
        p.r_e, p.r_minus, p.r_plus
    );
    println!("surface gravity at r_+: {:.12}", map.kappa());
    println!(
        "(r - r_e) r* -> {:.12} as r* -> -inf",
        map.double_horizon_constant()
    );

    for c in p.identity_checks(1e-10) {
        println!(
            "  {:<40} {:.2e} {}",
            c.name,
            c.residual,
            if c.pass { "ok" } else { "FAIL" }
        );
    }

    println!("\n{:>12} {:>22} {:>22}", "r*", "r", "dr*/dr");
    for rs in [-1e4, -1e2, -1.0, 0.0, 1.0, 1e2, 1e4] {
        let r = map.inverse(rs)?;
        println!("{rs:>12.1} {r:>22.16} {:>22.6e}", map.drstar_dr(r));
    }
    Ok(())
}
