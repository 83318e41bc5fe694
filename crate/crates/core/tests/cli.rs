use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const CSVS: &[&str] = &[
    "prr_table.csv",
    "throughput_cdf_safety.csv",
    "throughput_cdf_video.csv",
    "summary.csv",
];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_v2xsim"))
}

fn smoke_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.conf")
}

fn v2xsim(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_into(dir: &Path, extra: &[&str]) -> Output {
    let config = smoke_config();
    let mut args = vec![
        "run",
        "--config",
        config.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "duration_ms=300",
    ];
    args.extend_from_slice(extra);
    v2xsim(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn same_config_and_seed_give_identical_csvs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let o = run_into(d.path(), &["--seed", "7"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for name in CSVS {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between identical runs");
    }
    let meta = std::fs::read_to_string(a.path().join("run_meta.txt")).unwrap();
    assert!(meta.contains("seed = 7"));
    assert!(meta.contains("sha256"));
    assert!(meta.contains("wall"));
}

#[test]
fn stdout_carries_the_prr_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into(dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0));
    let written = std::fs::read(dir.path().join("prr_table.csv")).unwrap();
    assert_eq!(o.stdout, written);
    assert!(String::from_utf8(written).unwrap().starts_with("scenario,technology,sigma,prr\n3,ns_relay,50,"));
}

#[test]
fn trace_files_follow_the_technology() {
    let rsu = tempfile::tempdir().unwrap();
    let o = run_into(rsu.path(), &["--trace", "--set", "technology=rsu"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(rsu.path().join("trace_sinr.csv").exists());
    assert!(!rsu.path().join("trace_plans.csv").exists());
    assert!(!rsu.path().join("trace_relays.csv").exists());

    let relay = tempfile::tempdir().unwrap();
    let o = run_into(relay.path(), &["--trace"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["trace_plans.csv", "trace_relays.csv", "trace_deliveries.csv", "trace_scenario.csv"] {
        assert!(relay.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn matrix_emits_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let o = v2xsim(&[
        "matrix",
        "--config",
        smoke_config().to_str().unwrap(),
        "--tech",
        "rsu,ns",
        "--seeds",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "duration_ms=200",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(dir.path().join("prr_table.csv")).unwrap();
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 9, "{table}");
    let keys: Vec<String> = rows.iter().map(|r| r.rsplit_once(',').unwrap().0.to_string()).collect();
    assert_eq!(
        keys,
        ["1,rsu,-", "1,ns,5", "1,ns,50", "2,rsu,-", "2,ns,5", "2,ns,50", "3,rsu,-", "3,ns,5", "3,ns,50"]
    );
}

#[test]
fn config_errors_exit_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into(dir.path(), &["--set", "warp_factor=9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("warp_factor"));

    let o = run_into(dir.path(), &["--set", "duration_ms=150"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("duration_ms"));

    let o = run_into(dir.path(), &["--set", "scenario=4"]);
    assert_eq!(o.status.code(), Some(1));

    let o = v2xsim(&["matrix", "--config", smoke_config().to_str().unwrap(), "--tech", "warp"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(v2xsim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(v2xsim(&["--help"]).status.code(), Some(0));

    // Nothing is left behind by failed runs.
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn config_command_echoes_a_parseable_config() {
    let o = v2xsim(&["config", "--config", smoke_config().to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("technology = ns_relay"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("echo.conf");
    std::fs::write(&path, &text).unwrap();
    let again = v2xsim(&["config", "--config", path.to_str().unwrap()]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn tables_command_regenerates_bundled_data() {
    let dir = tempfile::tempdir().unwrap();
    let o = v2xsim(&["tables", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    for f in ["mcs_table_v1.csv", "mi_curves_v1.csv"] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(data.join(f)).unwrap(), "{f}");
    }
}
