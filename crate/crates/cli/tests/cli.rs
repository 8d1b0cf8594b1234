use std::path::Path;
use std::process::{Command, Output};

fn ddelim(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddelim"))
        .args(args)
        .env("DDELIM_OUT", out)
        .output()
        .unwrap()
}

fn read_json(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("result.json")).unwrap()).unwrap()
}

#[test]
fn duffing_estimate_writes_history() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddelim(
        &["estimate", "--system", "duffing", "--seed", "42"],
        dir.path(),
    );
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let doc = read_json(dir.path());
    let row = &doc["rows"][0];
    assert_eq!(row["outcome"], "done");
    assert_eq!(row["detail"]["lim_history"].as_array().unwrap().len(), 50);
    assert_eq!(doc["config"]["seed"], 42);
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 51);
}

#[test]
fn rerun_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "estimate", "--system", "duffing", "--seed", "7", "--iters", "20",
    ];
    assert!(ddelim(&args, a.path()).status.success());
    assert!(ddelim(&args, b.path()).status.success());
    let ra = std::fs::read(a.path().join("result.json")).unwrap();
    let rb = std::fs::read(b.path().join("result.json")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn pendulum_beyond_stability_is_unstable() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddelim(
        &["estimate", "--system", "pendulum", "--param", "p=3.0"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let doc = read_json(dir.path());
    assert_eq!(doc["rows"][0]["detail"]["status"], "unstable");
    assert_eq!(doc["rows"][0]["detail"]["lim"], 0.0);
}

#[test]
fn sweep_rows_independent_of_jobs() {
    let one = tempfile::tempdir().unwrap();
    let many = tempfile::tempdir().unwrap();
    let base = [
        "sweep",
        "--system",
        "turning1",
        "--param",
        "omega_d=0.6987",
        "--sweep",
        "p:0.02:0.12:6",
        "--iters",
        "15",
        "--ndisc",
        "101",
    ];
    let mut a = base.to_vec();
    a.extend(["--jobs", "1"]);
    let mut b = base.to_vec();
    b.extend(["--jobs", "8"]);
    assert!(ddelim(&a, one.path()).status.success());
    assert!(ddelim(&b, many.path()).status.success());
    assert_eq!(
        std::fs::read(one.path().join("result.json")).unwrap(),
        std::fs::read(many.path().join("result.json")).unwrap()
    );

    let mut reader = csv::Reader::from_path(one.path().join("lim.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(
        &headers.iter().take(6).collect::<Vec<_>>(),
        &["p", "lim", "status", "n_traj", "n_steps", "wall_s"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 6);
    let doc = read_json(one.path());
    for (k, rec) in rows.iter().enumerate() {
        let lim: f64 = rec[1].parse().unwrap();
        let json_lim = doc["rows"][k]["detail"]["lim"].as_f64().unwrap();
        assert!((lim - json_lim).abs() <= 1e-9 * json_lim.abs().max(1.0));
    }
}

#[test]
fn single_point_sweep_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = ddelim(
        &[
            "sweep",
            "--system",
            "turning1",
            "--sweep",
            "p:0.05:0.05:1",
            "--iters",
            "5",
            "--ndisc",
            "51",
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("lim.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn saved_result_reruns_to_same_table() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let o = ddelim(
        &[
            "sweep",
            "--system",
            "turning1",
            "--sweep",
            "p:0.03:0.09:3",
            "--iters",
            "10",
            "--ndisc",
            "81",
            "--init",
            "jump",
        ],
        first.path(),
    );
    assert!(o.status.success());
    let saved = first.path().join("result.json");
    let o = ddelim(
        &["sweep", "--config", saved.to_str().unwrap()],
        second.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(&saved).unwrap(),
        std::fs::read(second.path().join("result.json")).unwrap()
    );
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 6] = [
        &["estimate", "--system", "lorenz"],
        &["estimate", "--system", "duffing", "--param", "p=1"],
        &["sweep", "--system", "duffing"],
        &["sweep", "--system", "duffing", "--sweep", "a:1:2:0"],
        &["estimate", "--system", "duffing", "--init", "sine"],
        &["estimate"],
    ];
    for args in cases {
        let o = ddelim(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn unwritable_output_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = ddelim(
        &["estimate", "--system", "duffing", "--iters", "3"],
        &blocker.join("sub"),
    );
    assert_eq!(o.status.code(), Some(3));
}
