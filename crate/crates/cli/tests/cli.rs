use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_cauchy-maps"));
    c.env_remove("CAUCHY_MAP_CACHE");
    c
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[], dir.path());
    assert_eq!(code(&o), 64);
    assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    assert_eq!(code(&run(&["frobnicate"], dir.path())), 64);
    assert_eq!(code(&run(&["peel", "run", "--algo", "spiral", "--ell", "3"], dir.path())), 64);
    assert_eq!(code(&run(&["--help"], dir.path())), 0);
}

#[test]
fn kernel_build_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["kernel", "build", "--closed", "--K", "1000", "--out", "k.json"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let built: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(built["validation"]["passed"], true);
    let o = run(&["kernel", "show", "--kernel", "k.json"], dir.path());
    assert_eq!(code(&o), 0);
    let shown: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(shown["checksum"], built["checksum"]);
    let o = run(&["kernel", "show", "--kernel", "builtin:nothing"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn experiment_reports_ignore_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let base = [
        "experiment", "run", "--name", "theorem1", "--kernel", "builtin:type2-closed", "--ells", "30,60",
        "--samples", "200", "--seed", "7",
    ];
    let mut a = base.to_vec();
    a.extend(["--workers", "1", "--out-dir", "a"]);
    let mut b = base.to_vec();
    b.extend(["--workers", "3", "--out-dir", "b"]);
    let oa = run(&a, dir.path());
    let ob = run(&b, dir.path());
    assert!(matches!(code(&oa), 0 | 3));
    assert_eq!(oa.stdout, ob.stdout);
    assert!(String::from_utf8_lossy(&oa.stdout).starts_with("x,quantity,mean,sem,n,target"));
    let ra = std::fs::read(dir.path().join("a/theorem1.json")).unwrap();
    let rb = std::fs::read(dir.path().join("b/theorem1.json")).unwrap();
    assert_eq!(ra, rb);
    assert!(dir.path().join("a/theorem1.timing.json").exists());
    assert!(dir.path().join("a/plots/theorem1.graph_ratio.csv").exists());
    let o = run(&["report", "a/theorem1.json"], dir.path());
    assert_eq!(code(&o), code(&oa));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("theorem1 seed=7"));
}

#[test]
fn config_file_is_validated_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "seed = 1\nunknown_key = true\n").unwrap();
    let o = run(&["experiment", "run", "--name", "coupling", "--config", "bad.toml"], dir.path());
    assert_eq!(code(&o), 2);

    std::fs::write(
        dir.path().join("run.toml"),
        "kernel = \"builtin:type2-closed\"\nseed = 5\nexperiments = [\"upsilon_moment\"]\nells = [50]\nsamples = 100\n\
         output_dir = \"cfg\"\n[bands]\nupsilon = [0.9, 1.0]\n",
    )
    .unwrap();
    let o = run(&["experiment", "run", "--config", "run.toml"], dir.path());
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("cfg/upsilon_moment.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 5);
    assert_eq!(report["grid"], serde_json::json!([50]));

    let o = run(&["experiment", "run", "--config", "run.toml", "--seed", "6", "--ells", "40"], dir.path());
    assert_eq!(code(&o), 3);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("cfg/upsilon_moment.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 6);
    assert_eq!(report["grid"], serde_json::json!([40]));
}

#[test]
fn unknown_experiment_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["experiment", "run", "--name", "nope"], dir.path())), 2);
    let o = run(&["experiment", "list"], dir.path());
    assert!(String::from_utf8_lossy(&o.stdout).contains("identity_suite"));
}

#[test]
fn map_build_writes_json_binary_and_dual() {
    let dir = tempfile::tempdir().unwrap();
    let k = ["--kernel", "builtin:type2-closed", "--seed", "3"];
    let mut args = vec!["map", "build", "--ell", "20", "--out", "m.json", "--dual", "d.csv"];
    args.extend(k);
    let o = run(&args, dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("m.json")).unwrap()).unwrap();
    assert_eq!(doc["E"], summary["E"]);
    assert_eq!(doc["faces"].as_array().unwrap().len() as u64, summary["F"].as_u64().unwrap());
    let dual = std::fs::read_to_string(dir.path().join("d.csv")).unwrap();
    assert_eq!(dual.lines().next(), Some("edge,face_a,face_b"));
    assert_eq!(dual.lines().count() as u64 - 1, summary["E"].as_u64().unwrap());

    let mut args = vec!["map", "build", "--ell", "20", "--out", "m.bin"];
    args.extend(k);
    assert_eq!(code(&run(&args, dir.path())), 0);
    let bytes = std::fs::read(dir.path().join("m.bin")).unwrap();
    assert_eq!(&bytes[..8], b"CMAPBIN1");

    let mut args = vec!["map", "build", "--ell", "5", "--out", "t.json", "--target", "face:3"];
    args.extend(k);
    let o = run(&args, dir.path());
    assert_eq!(code(&o), 0);
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(summary["target"]["face"].is_u64());
}

#[test]
fn walk_and_peel_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "walk", "sample", "--transform", "down:4", "--samples", "50", "--path-out", "p.csv", "--kernel",
            "builtin:type2-closed",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["samples"], 50);
    let csv = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("step,state"));
    assert_eq!(csv.lines().last().unwrap().split(',').nth(1), Some("-4"));

    let o = run(
        &[
            "peel", "run", "--ell", "10", "--algo", "layers", "--samples", "50", "--trajectory", "t.csv", "--kernel",
            "builtin:type2-closed",
        ],
        dir.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["d_gr"]["mean"].as_f64().unwrap() >= 1.0);
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("n,P,D,H,T,event"));
}

#[test]
fn oracle_tables_are_cached() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let o = bin()
        .args(["oracle", "build", "--depth", "3", "--horizon", "200", "--kernel", "builtin:type2-closed"])
        .env("CAUCHY_MAP_CACHE", &cache)
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["mass"].as_f64().unwrap() <= 1.0 + 1e-12);
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 1);
}
