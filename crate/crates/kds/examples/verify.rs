//! Loads a config file, lists the thresholds in force and runs selected acceptance
//! criteria. With no ids, runs the cheap ones (1 to 6).
//!
//! cargo run --release --example verify -- fixtures/default.cfg 1 4 6

use kds::cli::{load_config, RunConfig, Thresholds};
use kds::verify::run_criterion;

fn main() -> kds::Result<()> {
    let mut args = std::env::args().skip(1).peekable();
    let cfg = match args.next_if(|a| a.parse::<u32>().is_err()) {
        Some(path) => load_config(path.as_ref())?,
        None => RunConfig::default(),
    };
    let mut ids: Vec<u32> = args.filter_map(|a| a.parse().ok()).collect();
    if ids.is_empty() {
        ids = (1..=6).collect();
    }
    let th = Thresholds::builtin();
    for id in ids {
        let r = run_criterion(id, &cfg, &th);
        println!(
            "[{}] {id:>2} {} ({:.1} s): {}",
            if r.pass { "PASS" } else { "FAIL" },
            r.name,
            r.seconds,
            r.summary
        );
        for c in &r.checks {
            println!(
                "        {} {}: {}",
                if c.pass { "ok  " } else { "FAIL" },
                c.name,
                c.detail
            );
        }
        for k in &r.thresholds {
            let t = &th.entries[k];
            println!("        {k} = {:e} ({})", t.value, t.provenance);
        }
    }
    Ok(())
}
