//! Runs `kds verify` on the default configuration and reports one line per criterion.
//! Takes several minutes in a release-optimized build.

use std::io::Write;
use std::process::Command;

use kds::cli::RunManifest;

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("verify");
    let o = Command::new(env!("CARGO_BIN_EXE_kds"))
        .args([
            "verify",
            "--config",
            concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/default.cfg"),
        ])
        .arg("--out")
        .arg(&out)
        .output()
        .expect("spawn kds");
    eprint!("{}", String::from_utf8_lossy(&o.stderr));
    let m = RunManifest::from_json(&std::fs::read_to_string(out.join("manifest.json")).unwrap())
        .unwrap();
    let criteria: Vec<_> = m
        .invariants
        .iter()
        .filter(|i| i.name.starts_with("criterion "))
        .collect();
    // straight to the stderr handle so the lines show without --nocapture
    let mut err = std::io::stderr();
    for c in &criteria {
        let _ = writeln!(
            err,
            "{} {}: {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    assert_eq!(criteria.len(), 10);
    assert_eq!(o.status.code(), Some(0));
    assert!(criteria.iter().all(|c| c.pass));
}
