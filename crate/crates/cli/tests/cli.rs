use std::path::Path;
use std::process::{Command, Output};

use idla::geometry::ball_count;
use idla_cli::RunManifest;

fn idla(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_idla"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = idla(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn header(path: &Path) -> String {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

#[test]
fn grow_snapshot_has_ball_count_sites() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("g");
    ok(&[
        "grow",
        "--dim",
        "2",
        "--n",
        "5",
        "--seed",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(out.join("snapshots/grow-r00000.txt")).unwrap();
    let (cluster, seed) = idla::cluster::Cluster::from_snapshot(&text).unwrap();
    assert_eq!(seed, 1);
    assert_eq!(cluster.len(), 69);
    assert_eq!(cluster.len(), ball_count(2, 5.0).unwrap());
    assert_eq!(header(&out.join("grow.csv")), "replica,n,delta_inner,delta_outer,seed");
}

#[test]
fn schemas_are_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    let (s, d, h, dh) = (dir("s"), dir("d"), dir("h"), dir("dh"));
    ok(&["shape", "--seed", "3", "--n", "8", "--replicas", "2", "--out", &s]);
    ok(&["directional", "--seed", "3", "--n", "8", "--replicas", "2", "--out", &d]);
    ok(&[
        "harmonic",
        "--seed",
        "3",
        "--probe",
        "hit-exit",
        "--z",
        "3,0",
        "--grid",
        "1,2",
        "--replicas",
        "50",
        "--out",
        &h,
    ]);
    ok(&[
        "deep-hole",
        "--seed",
        "3",
        "--dim",
        "3",
        "--n",
        "10",
        "--alpha",
        "0.4",
        "--beta",
        "0.4",
        "--gamma",
        "0.4",
        "--out",
        &dh,
    ]);
    assert_eq!(
        header(&tmp.path().join("s/shape.csv")),
        "replica,n,delta_inner,delta_outer,seed"
    );
    assert_eq!(header(&tmp.path().join("d/directional.csv")), "replica,n,gap,miss,seed");
    assert_eq!(
        header(&tmp.path().join("h/harmonic.csv")),
        "grid_value,estimate,stderr,replicas,seed"
    );
    assert_eq!(
        header(&tmp.path().join("dh/deep-hole.csv")),
        "replica,k,R_k,X_k,lambda_k,zk_norm,event_A,event_C,event_I,event_outer,seed"
    );
    // one row per replica and gap
    let m = manifest(&tmp.path().join("d"));
    assert_eq!(m.outputs[0].rows, 2 * 4);
    let rows = std::fs::read_to_string(tmp.path().join("d/directional.csv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(rows, 1 + 8);
}

#[test]
fn reruns_and_thread_counts_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("a");
    ok(&[
        "directional",
        "--seed",
        "9",
        "--n",
        "10",
        "--replicas",
        "24",
        "--threads",
        "1",
        "--out",
        first.to_str().unwrap(),
    ]);
    let m1 = manifest(&first);
    let config = first.join("manifest.json");
    for (threads, name) in [("8", "b"), ("1", "c")] {
        let out = tmp.path().join(name);
        ok(&[
            "directional",
            "--config",
            config.to_str().unwrap(),
            "--threads",
            threads,
            "--out",
            out.to_str().unwrap(),
        ]);
        let m = manifest(&out);
        assert_eq!(m.outputs, m1.outputs);
        assert_eq!(
            std::fs::read(out.join("directional.csv")).unwrap(),
            std::fs::read(first.join("directional.csv")).unwrap()
        );
    }
}

#[test]
fn exit_codes() {
    assert_eq!(idla(&["grow", "--n", "5"]).status.code(), Some(2));
    assert_eq!(
        idla(&["grow", "--seed", "1", "--n", "5", "--dim", "1"]).status.code(),
        Some(2)
    );
    assert_eq!(idla(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(idla(&["grow", "--bogus"]).status.code(), Some(2));
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    // a budget of ~0 steps cannot grow anything
    let r = idla(&[
        "grow",
        "--seed",
        "1",
        "--n",
        "6",
        "--budget-factor",
        "1e-9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(3));
    let msg = String::from_utf8_lossy(&r.stderr);
    assert!(msg.contains("replica 0") && msg.contains("seed 1"), "{msg}");
}

#[test]
fn config_file_with_flag_override() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    let out = tmp.path().join("o");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"dim": 2, "n": 4, "seed": 5, "replicas": 3, "out": "{}"}}"#,
            out.display()
        ),
    )
    .unwrap();
    ok(&["grow", "--config", cfg.to_str().unwrap(), "--replicas", "2"]);
    let m = manifest(&out);
    assert_eq!(m.config.replicas, 2);
    assert_eq!(m.config.n, Some(4));
    assert_eq!(m.outputs.len(), 3);
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"seed": 5, "n": 4, "radiuss": 2}"#).unwrap();
    let r = idla(&["grow", "--config", bad.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("radiuss"));
}

#[test]
fn plot_data_from_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    ok(&[
        "directional",
        "--seed",
        "4",
        "--n",
        "12",
        "--replicas",
        "200",
        "--out",
        d.to_str().unwrap(),
    ]);
    let plot = tmp.path().join("miss.csv");
    ok(&[
        "plot-data",
        "--input",
        d.join("directional.csv").to_str().unwrap(),
        "--kind",
        "missprob-vs-gap2",
        "--out",
        plot.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(&plot).unwrap();
    let probs: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(probs.len(), 4);
    assert!(probs.windows(2).all(|w| w[1] <= w[0]), "{probs:?}");
    assert!(probs[0] > probs[2], "{probs:?}");

    let empty = tmp.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = idla(&[
        "plot-data",
        "--input",
        empty.to_str().unwrap(),
        "--kind",
        "delta-vs-sqrtlog",
    ]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1);

    let wrong = idla(&[
        "plot-data",
        "--input",
        d.join("directional.csv").to_str().unwrap(),
        "--kind",
        "delta-vs-sqrtlog",
    ]);
    assert_eq!(wrong.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&wrong.stderr).contains("delta_inner"));
}

#[test]
fn remaining_experiments_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = |name: &str| tmp.path().join(name).to_str().unwrap().to_string();
    ok(&[
        "abelian-check",
        "--seed",
        "2",
        "--particles",
        "120",
        "--m",
        "60",
        "--radius",
        "4",
        "--replicas",
        "4",
        "--out",
        &dir("a"),
    ]);
    assert_eq!(manifest(&tmp.path().join("a")).summary["all_identical"], true);
    ok(&[
        "tentacle",
        "--seed",
        "2",
        "--n",
        "12",
        "--replicas",
        "2",
        "--out",
        &dir("t"),
    ]);
    assert_eq!(manifest(&tmp.path().join("t")).outputs[0].rows, 2);
    ok(&[
        "oracle-check",
        "--seed",
        "2",
        "--k",
        "2",
        "--replicas",
        "4000",
        "--out",
        &dir("o"),
    ]);
    let tv = manifest(&tmp.path().join("o")).summary["tv_distance"].as_f64().unwrap();
    assert!(tv < 0.05, "{tv}");
    ok(&[
        "harmonic",
        "--seed",
        "2",
        "--probe",
        "mean-visits",
        "--n",
        "6",
        "--grid",
        "1,2",
        "--replicas",
        "20",
        "--out",
        &dir("mv"),
    ]);
    ok(&[
        "harmonic",
        "--seed",
        "2",
        "--probe",
        "poisson-split",
        "--z",
        "3,0",
        "--grid",
        "20",
        "--replicas",
        "300",
        "--out",
        &dir("ps"),
    ]);
    ok(&[
        "harmonic",
        "--seed",
        "2",
        "--probe",
        "hit-far",
        "--dim",
        "3",
        "--z",
        "3,0,0",
        "--grid",
        "0,2",
        "--replicas",
        "100",
        "--out",
        &dir("hf"),
    ]);
    let hf = std::fs::read_to_string(tmp.path().join("hf/harmonic.csv")).unwrap();
    let first: f64 = hf.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert_eq!(first, 1.0);
}
