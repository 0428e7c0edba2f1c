use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kds::cli::RunManifest;

const SMALL: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/small.cfg");

fn kds(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kds"))
        .args(args)
        .env_remove("KDS_THREADS")
        .current_dir(dir)
        .output()
        .expect("spawn kds")
}

fn run(cmd: &str, extra: &[&str]) -> (tempfile::TempDir, PathBuf, Output) {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let mut args = vec![cmd, "--config", SMALL, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = kds(&args, tmp.path());
    (tmp, out, o)
}

fn manifest(out: &Path) -> RunManifest {
    RunManifest::from_json(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn geometry_writes_csv_and_manifest() {
    let (_t, out, o) = run("geometry", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("geometry.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "r,rstar,delta_r,g,f");
    assert_eq!(lines.len(), 1001);
    for cell in lines[1].split(',') {
        let mantissa = cell.trim_start_matches('-').split('e').next().unwrap();
        assert_eq!(mantissa.replace('.', "").len(), 17, "{cell}");
    }
    let m = manifest(&out);
    assert_eq!(m.command, "geometry");
    assert!(m.passed());
    assert!(m.artifacts.contains(&"geometry.csv".to_string()));
    assert!(m
        .thresholds
        .iter()
        .any(|t| t.key == "geometry.identity_tol"));
}

#[test]
fn manifest_round_trips() {
    let (_t, out, o) = run("angular", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = fs::read_to_string(out.join("manifest.json")).unwrap();
    let m = RunManifest::from_json(&text).unwrap();
    assert_eq!(m.to_json().unwrap(), text);
    assert!(!out.join(".manifest.json.tmp").exists());
}

#[test]
fn seeded_runs_are_byte_identical() {
    let cfg = fs::read_to_string(SMALL).unwrap() + "\n[packet]\njitter = 1.5\n";
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("jitter.cfg");
    fs::write(&path, cfg).unwrap();
    let go = |name: &str, seed: &str| {
        let out = tmp.path().join(name);
        let o = kds(
            &[
                "evolve1d",
                "--config",
                path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--seed",
                seed,
                "--threads",
                "2",
            ],
            tmp.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (
            fs::read(out.join("evolve1d_series.csv")).unwrap(),
            fs::read(out.join("evolve1d_final.csv")).unwrap(),
        )
    };
    let a = go("a", "7");
    let b = go("b", "7");
    let c = go("c", "8");
    assert!(a == b);
    assert!(a.1 != c.1);
}

#[test]
fn unmodified_ladder_is_reported_as_stalled() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("nodollard.cfg");
    fs::write(
        &path,
        fs::read_to_string(SMALL).unwrap() + "\n[ladder]\ndollard = false\n",
    )
    .unwrap();
    let out = tmp.path().join("out");
    let o = kds(
        &[
            "scatter1d",
            "--config",
            path.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    let m = manifest(&out);
    let stall = m
        .invariants
        .iter()
        .find(|i| i.name.contains("stalls"))
        .expect("stall invariant");
    assert!(stall.pass, "{}", stall.detail);
    assert_eq!(o.status.code(), Some(if m.passed() { 0 } else { 3 }));
    assert!(fs::read_to_string(out.join("ladder1d.csv"))
        .unwrap()
        .starts_with("side,modified,level,t,image_norm,increment\n"));
}

#[test]
fn invalid_config_exits_2_with_every_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.cfg");
    fs::write(&path, "[params]\na = 1.0\nl = 0.3\n[grid1d]\ndelta = -1\n").unwrap();
    let o = kds(
        &["geometry", "--config", path.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("extremality") && e.contains("delta"), "{e}");

    fs::write(&path, "[params]\na 1.0\nl = x\n").unwrap();
    let o = kds(
        &["geometry", "--config", path.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("line 2") && e.contains("line 3"), "{e}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn io_failures_exit_4() {
    let tmp = tempfile::tempdir().unwrap();
    let o = kds(&["geometry", "--config", "missing.cfg"], tmp.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = blocker.join("out");
    let o = kds(&["geometry", "--out", out.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn bad_thread_env_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_kds"))
        .args(["geometry", "--out", "o"])
        .env("KDS_THREADS", "many")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("KDS_THREADS"));
}
