use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

use topbft_core::cco::{check_constraints, SolutionFile};
use topbft_core::model::{Instance, Micros, NodeId};
use topbft_core::sim::{SimSummary, TxRecord};

fn topbft(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topbft")).args(args).current_dir(dir).output().expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = topbft(args, dir);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn file(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

fn setup(n: usize) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    ok(&["gen-topology", "-n", &n.to_string(), "--seed", "5", "-o", "inst.json"], dir.path());
    let path = dir.path().to_path_buf();
    (dir, path)
}

#[test]
fn generated_uniform_instance_is_valid() {
    let dir = TempDir::new().unwrap();
    ok(&["gen-topology", "--kind", "uniform", "-n", "4", "-f", "1", "-o", "u.json"], dir.path());
    let inst = Instance::load(&dir.path().join("u.json")).unwrap();
    assert_eq!(inst.node_count(), 4);
    assert!(inst.validate().is_ok());
}

#[test]
fn clustered_topology_has_equal_clusters() {
    let dir = TempDir::new().unwrap();
    let out = ok(&["gen-topology", "--kind", "clustered", "--clusters", "5", "-n", "240"], dir.path());
    let inst = Instance::from_json(&String::from_utf8(out.stdout).unwrap()).unwrap();
    // group nodes by their intra-cluster neighbourhood
    let mut sizes = Vec::new();
    let mut seen = vec![false; 240];
    for i in 0..240 {
        if seen[i] {
            continue;
        }
        let group: Vec<usize> =
            (0..240).filter(|&j| j == i || inst.delays.delay(NodeId(i), NodeId(j)) == Micros(100)).collect();
        for &j in &group {
            seen[j] = true;
        }
        sizes.push(group.len());
    }
    assert_eq!(sizes, vec![48; 5]);
}

#[test]
fn too_few_nodes_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = topbft(&["gen-topology", "-n", "3", "-f", "1"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("n < 3f+1"));
    assert_eq!(code(&topbft(&["optimize"], dir.path())), 1);
    assert_eq!(code(&topbft(&["no-such-command"], dir.path())), 1);
}

#[test]
fn exact_optimize_reports_optimality() {
    let (_d, dir) = setup(8);
    ok(&["optimize", "-i", "inst.json", "--solver", "exact", "-o", "sol.json"], &dir);
    let text = file(&dir, "sol.json");
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["optimal"], serde_json::Value::Bool(true));
    let brute = ok(&["optimize", "-i", "inst.json", "--solver", "brute"], &dir);
    let b: serde_json::Value = serde_json::from_slice(&brute.stdout).unwrap();
    assert_eq!(b["latency"]["t_tr"], v["latency"]["t_tr"]);
    ok(&["check", "-i", "inst.json", "-c", "sol.json"], &dir);
}

#[test]
fn heuristic_solves_240_nodes() {
    let (_d, dir) = setup(240);
    ok(&["optimize", "-i", "inst.json", "--solver", "heuristic", "-o", "sol.json"], &dir);
    let inst = Instance::load(&dir.join("inst.json")).unwrap();
    let config = SolutionFile::load(&dir.join("sol.json")).unwrap().configuration.to_config(240).unwrap();
    assert!(check_constraints(&inst, &config).is_empty());
}

#[test]
fn ineligible_leaders_exit_2() {
    let (_d, dir) = setup(8);
    let mut inst = Instance::load(&dir.join("inst.json")).unwrap();
    for n in &mut inst.nodes {
        n.byzantine_rate = 0.9;
    }
    inst.save(&dir.join("bad.json")).unwrap();
    let out = topbft(&["optimize", "-i", "bad.json"], &dir);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn timeout_without_incumbent_exits_3() {
    let (_d, dir) = setup(12);
    let out =
        topbft(&["optimize", "-i", "inst.json", "--solver", "exact", "--time-budget", "0", "--require-optimal"], &dir);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}

#[test]
fn infeasible_configuration_exits_2() {
    let (_d, dir) = setup(8);
    ok(&["optimize", "-i", "inst.json", "-o", "sol.json"], &dir);
    let mut sol = SolutionFile::load(&dir.join("sol.json")).unwrap();
    sol.configuration.committees[0].active.clear();
    sol.save(&dir.join("broken.json")).unwrap();
    let out = topbft(&["check", "-i", "inst.json", "-c", "broken.json"], &dir);
    assert_eq!(code(&out), 2);
    assert!(!out.stdout.is_empty(), "violations are listed");
    assert_eq!(code(&topbft(&["simulate", "-i", "inst.json", "-c", "broken.json"], &dir)), 2);
}

#[test]
fn written_files_round_trip() {
    let (_d, dir) = setup(12);
    let inst_text = file(&dir, "inst.json");
    assert_eq!(Instance::from_json(&inst_text).unwrap().to_json() + "\n", inst_text);

    ok(&["optimize", "-i", "inst.json", "-o", "sol.json"], &dir);
    let sol_text = file(&dir, "sol.json");
    assert_eq!(SolutionFile::from_json(&sol_text).unwrap().to_json() + "\n", sol_text);

    ok(
        &["simulate", "-i", "inst.json", "-c", "sol.json", "--requests", "20", "--csv", "tx.csv", "--json", "sum.json"],
        &dir,
    );
    let csv_text = file(&dir, "tx.csv");
    let rows: Vec<TxRecord> =
        csv::Reader::from_reader(csv_text.as_bytes()).deserialize().collect::<Result<_, _>>().unwrap();
    assert_eq!(rows.len(), 20);
    let mut again = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        again.serialize(r).unwrap();
    }
    assert_eq!(String::from_utf8(again.into_inner().unwrap()).unwrap(), csv_text);

    let json_text = file(&dir, "sum.json");
    let summary: SimSummary = serde_json::from_str(&json_text).unwrap();
    assert_eq!(summary.committed, 20);
    assert_eq!(serde_json::to_string_pretty(&summary).unwrap() + "\n", json_text);
}

#[test]
fn simulation_matches_the_analytic_latency() {
    let (_d, dir) = setup(12);
    ok(&["optimize", "-i", "inst.json", "-o", "sol.json"], &dir);
    let sol = SolutionFile::load(&dir.join("sol.json")).unwrap();
    let out = ok(&["simulate", "-i", "inst.json", "-c", "sol.json", "--requests", "10"], &dir);
    let summary: SimSummary = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary.latency_mean_ms, sol.latency.unwrap().t_tr);
}

#[test]
fn faults_and_trace_are_accepted() {
    let (_d, dir) = setup(12);
    let out = ok(
        &[
            "simulate",
            "-i",
            "inst.json",
            "--requests",
            "30",
            "--tee-fail",
            "2@0,5@1.5",
            "--equivocate",
            "0",
            "--jitter",
            "0.2",
            "--trace",
            "trace.jsonl",
        ],
        &dir,
    );
    let summary: SimSummary = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary.audit.accepted_equivocations == 0 && summary.audit.equivocation_attempts > 0);
    assert!(file(&dir, "trace.jsonl").lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    assert_eq!(code(&topbft(&["simulate", "-i", "inst.json", "--crash", "3"], &dir)), 1);
    assert_eq!(code(&topbft(&["simulate", "-i", "inst.json", "--crash", "1@0,2@0,3@0,4@0"], &dir)), 1);
}

fn table(dir: &Path, name: &str) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(dir.join(name)).unwrap().records().collect::<Result<_, _>>().unwrap()
}

#[test]
fn node_sweep_writes_one_row_per_size_and_scheme() {
    let dir = TempDir::new().unwrap();
    ok(&["experiment", "node-sweep", "--rounds", "2", "--out-dir", "out"], dir.path());
    let rows = table(&dir.path().join("out"), "node_sweep.csv");
    for scheme in ["cco", "random", "hotstuff_like", "fastbft_like"] {
        assert_eq!(rows.iter().filter(|r| &r[2] == scheme).count(), 6, "{scheme}");
    }
    assert!(!dir.path().join("out/errors.csv").exists());
}

#[test]
fn payload_sweep_throughput_is_nonincreasing_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let args = |out: &'static str| {
        vec![
            "experiment",
            "payload-sweep",
            "--seeds",
            "1,2",
            "--rounds",
            "3",
            "--payloads",
            "0,10000,1000000",
            "--out-dir",
            out,
        ]
    };
    ok(&args("a"), dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_topbft"))
        .args(args("b"))
        .env("TOPBFT_THREADS", "1")
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let a = file(dir.path(), "a/payload_sweep.csv");
    assert_eq!(a, file(dir.path(), "b/payload_sweep.csv"));
    let rows = table(&dir.path().join("a"), "payload_sweep.csv");
    for seed in ["1", "2"] {
        for scheme in ["cco", "random"] {
            let tp: Vec<f64> =
                rows.iter().filter(|r| &r[0] == seed && &r[2] == scheme).map(|r| r[4].parse().unwrap()).collect();
            assert_eq!(tp.len(), 3);
            assert!(tp.windows(2).all(|w| w[1] <= w[0]), "{seed} {scheme} {tp:?}");
        }
    }
}

#[test]
fn adaptive_fallback_beats_static_fallback_on_every_seed() {
    let dir = TempDir::new().unwrap();
    ok(&["experiment", "fallback-compare", "--seeds", "0,1,2", "--rounds", "3", "--out-dir", "out"], dir.path());
    let rows = table(&dir.path().join("out"), "fallback_compare.csv");
    for seed in ["0", "1", "2"] {
        let tp = |scheme: &str| -> f64 {
            rows.iter().find(|r| &r[0] == seed && &r[3] == scheme).unwrap()[6].parse().unwrap()
        };
        assert!(tp("cco_adaptive") >= tp("random_fallback"), "seed {seed}");
    }
}

#[test]
fn bad_thread_count_and_empty_axes_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_topbft"))
        .args(["gen-topology", "-n", "4"])
        .env("TOPBFT_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
    assert_eq!(code(&topbft(&["experiment", "node-sweep", "--sizes", "", "--out-dir", "o"], dir.path())), 1);
    assert_eq!(code(&topbft(&["experiment", "node-sweep", "--sizes", "480", "--out-dir", "o"], dir.path())), 1);
}
