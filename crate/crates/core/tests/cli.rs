use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use taxi_sentinel::graph::load_graph;
use taxi_sentinel::sim::load_scenario;
use taxi_sentinel::travel_time::{link_time_dist, time_moments};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn fx(rel: &str) -> String {
    fixtures().join(rel).display().to_string()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taxi-sentinel"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn taxi-sentinel")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_json(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("stderr has an error line");
    serde_json::from_str(last).expect("error line is JSON")
}

fn rules_args() -> Vec<String> {
    vec![
        "--rules".into(),
        fx("rules/default_rules.json"),
        "--tables".into(),
        fx("rules/default_tables.json"),
    ]
}

#[test]
fn missing_rules_file_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "extract",
        "--rules",
        "/nonexistent/rules.json",
        "--transcript",
        &fx("haneda/transcript.jsonl"),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"], "IO_ERROR");
    assert!(e["message"].as_str().unwrap().contains("/nonexistent/rules.json"));
}

#[test]
fn usage_errors_are_json() {
    let out = run(&["plan", "--graph"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "USAGE");
    assert!(run(&["--help"]).status.success());
}

#[test]
fn computation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.json");
    std::fs::write(
        &graph,
        r#"{"nodes": [{"id": "A", "x": 0, "y": 0, "kind": "TAXIWAY"},
                      {"id": "B", "x": 10, "y": 0, "kind": "TAXIWAY"},
                      {"id": "C", "x": 50, "y": 0, "kind": "TAXIWAY"}],
            "links": [{"a": "A", "b": "B"}]}"#,
    )
    .unwrap();
    let g = graph.to_str().unwrap();
    let out = run(&["plan", "--graph", g, "--from", "A", "--to", "C"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "NO_PATH");
    let out = run(&["plan", "--graph", g, "--from", "A", "--to", "Z"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "UNKNOWN_NODE");
}

#[test]
fn empty_transcript_gives_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("empty.jsonl");
    std::fs::write(&t, "").unwrap();
    let out_dir = dir.path().join("out");
    let mut args = vec!["extract".to_string()];
    args.extend(rules_args());
    args.extend([
        "--transcript".into(),
        t.display().to_string(),
        "--out".into(),
        out_dir.display().to_string(),
    ]);
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let v = ok_json(&args);
    assert_eq!(v["rows"], 0);
    let csv = std::fs::read_to_string(out_dir.join("info_table.csv")).unwrap();
    assert_eq!(csv.trim_end(), "TIME,CALLSIGN,ACSTATE,DEST_RUNWAY,DESTINATION,DEST_NODE");
}

#[test]
fn eval_gold_against_itself_is_perfect() {
    let gold = fx("ner/gold.json");
    let v = ok_json(&["eval", "--gold", &gold, "--pred", &gold]);
    for k in ["precision", "recall", "f1"] {
        assert_eq!(v["prediction"][k], 1.0, "{k}");
    }
    assert_eq!(v["prediction"]["fp"], 0);
    assert_eq!(v["prediction"]["fn"], 0);
}

#[test]
fn eval_rejects_misaligned_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p.json");
    std::fs::write(&p, r#"[{"text": "Delta 295, go ahead.", "entities": []}]"#).unwrap();
    let out = run(&["eval", "--gold", &fx("ner/gold.json"), "--pred", p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"], "LENGTH_MISMATCH");
}

#[test]
fn plan_honours_via() {
    let v = ok_json(&[
        "plan",
        "--graph",
        &fx("haneda/graph.json"),
        "--from",
        "Apron_CG",
        "--to",
        "Rwy_03_010",
        "--via",
        "Txy_C5_C5B",
        "--callsign",
        "JA722A",
    ]);
    let nodes: Vec<&str> = v["plan"]["nodes"].as_array().unwrap().iter().map(|n| n.as_str().unwrap()).collect();
    assert_eq!(nodes[..5], ["Apron_CG", "Txy_C_003", "Txy_C_004", "Txy_C5_C5B", "Rwy_03_006"]);
    assert!((v["length_m"].as_f64().unwrap() - 1830.0).abs() < 1e-9);
}

#[test]
fn simulate_frame_count_follows_span() {
    let scenario = fx("haneda/scenario.json");
    let sc = load_scenario(Path::new(&scenario)).unwrap();
    let t0 = sc.aircraft.iter().map(|p| p.start_time).fold(f64::INFINITY, f64::min);
    let t1 = sc
        .aircraft
        .iter()
        .map(|p| {
            let links = p.resolved_links(&sc.graph).unwrap();
            let mean: f64 = links
                .iter()
                .map(|l| time_moments(&link_time_dist(l.length, l.speed()).unwrap()).0)
                .sum();
            p.start_time + mean
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let expected = (t1 - t0).ceil() as u64 + 1;

    let dir = tempfile::tempdir().unwrap();
    let v = ok_json(&[
        "simulate",
        "--scenario",
        &scenario,
        "--step",
        "1",
        "--no-oracle",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(v["frames"], expected);
    let jsonl = std::fs::read_to_string(dir.path().join("frames.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count() as u64, expected);
    let csv = std::fs::read_to_string(dir.path().join("frames.csv")).unwrap();
    assert_eq!(csv.lines().count() as u64, 1 + 2 * expected);
}

#[test]
fn risk_writes_geojson_for_geodetic_layouts() {
    let dir = tempfile::tempdir().unwrap();
    let graph = fx("katl/graph.json");
    let g = load_graph(Path::new(&graph)).unwrap();
    assert!(g.is_geodetic());
    let scenario = dir.path().join("katl.json");
    std::fs::write(
        &scenario,
        serde_json::json!({
            "graph": graph,
            "aircraft": [
                {"callsign": "EDV5526", "nodes": ["Txy_B_001", "Rwy_02_001", "Rwy_02_002", "Rwy_02_003", "Rwy_02_004", "Rwy_02_005"]},
                {"callsign": "DAL295", "nodes": ["Apron_N_001", "Txy_E_004", "Txy_V_003", "Rwy_02_004", "Rwy_02_005"], "start_time": 20.0}
            ],
            "r_c": 30.0,
            "seed": 7,
            "samples": 1000
        })
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("out");
    let v = ok_json(&[
        "risk",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(v["argmax"], "Rwy_02_004");
    let gj: Value = serde_json::from_str(&std::fs::read_to_string(out.join("risk_map.geojson")).unwrap()).unwrap();
    assert_eq!(gj["type"], "FeatureCollection");
    assert_eq!(gj["features"].as_array().unwrap().len(), 2);
}

#[test]
fn stats_reports_all_three_tests() {
    let samples = fx("tracks/katl_speed_samples.csv");
    let a = ok_json(&["stats", "--samples", &samples, "--test", "anova"]);
    assert_eq!(a["test"], "anova");
    assert_eq!(a["groups"].as_array().unwrap().len(), 4);
    let k = ok_json(&["stats", "--samples", &samples, "--test", "kw"]);
    assert_eq!(k["df"][0], 3.0);
    let s = ok_json(&["stats", "--samples", &samples, "--test", "ks", "--link", "Txy_E_002->Txy_E_003"]);
    let d = s["links"][0]["lognormal"]["statistic"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&d));
}

#[test]
fn rules_check_summarises_labels() {
    let mut args = vec!["rules-check".to_string()];
    args.extend(rules_args());
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let v = ok_json(&args);
    let total: u64 = v["by_label"].as_object().unwrap().values().map(|n| n.as_u64().unwrap()).sum();
    assert!(total > 0);
}
