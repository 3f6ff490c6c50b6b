use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use taxi_sentinel_ffi::*;

fn fixture(rel: &str) -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = ts_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_owned();
    ts_string_free(s);
    out
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(ts_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn rules_round_trip() {
    let rules = fixture("rules/default_rules.json");
    let tables = fixture("rules/default_tables.json");
    let text = CString::new("JA722A, taxi to holding point C5.").unwrap();
    unsafe {
        let mut set = ptr::null_mut();
        assert_eq!(ts_rules_load(rules.as_ptr(), tables.as_ptr(), &mut set), TsStatus::Ok);
        assert!(ts_last_error_message().is_null());
        let mut out = ptr::null_mut();
        assert_eq!(ts_rules_match_json(set, text.as_ptr(), &mut out), TsStatus::Ok);
        let spans: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        let labels: Vec<&str> = spans
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s["label"].as_str().unwrap())
            .collect();
        assert_eq!(labels, ["CALLSIGN", "ACSTATE", "DESTINATION"]);
        assert_eq!(spans[2]["surface"], "holding point C5");
        ts_rules_free(set);

        let mut none = ptr::null_mut();
        let missing = CString::new("/nonexistent/rules.json").unwrap();
        assert_eq!(ts_rules_load(missing.as_ptr(), ptr::null(), &mut none), TsStatus::InvalidInput);
        assert!(none.is_null());
        assert!(last_error().starts_with("IO_ERROR"));
    }
}

#[test]
fn graph_plan_and_errors() {
    let path = fixture("haneda/graph.json");
    let cs = CString::new("JA722A").unwrap();
    let from = CString::new("Apron_CG").unwrap();
    let to = CString::new("Rwy_03_010").unwrap();
    let bogus = CString::new("Nowhere").unwrap();
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(ts_graph_load(path.as_ptr(), &mut g), TsStatus::Ok);
        assert_eq!(ts_graph_node_count(g), 17);
        let mut out = ptr::null_mut();
        assert_eq!(
            ts_graph_plan_json(g, cs.as_ptr(), from.as_ptr(), to.as_ptr(), 18.0, &mut out),
            TsStatus::Ok
        );
        let plan: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(plan["nodes"][0], "Apron_CG");
        assert_eq!(plan["start_time"], 18.0);

        assert_eq!(
            ts_graph_plan_json(g, cs.as_ptr(), from.as_ptr(), bogus.as_ptr(), 0.0, &mut out),
            TsStatus::InvalidInput
        );
        assert!(last_error().starts_with("UNKNOWN_NODE"));
        assert_eq!(
            ts_graph_plan_json(g, ptr::null(), from.as_ptr(), to.as_ptr(), 0.0, &mut out),
            TsStatus::NullPointer
        );
        assert_eq!(ts_graph_node_count(ptr::null()), 0);
        ts_graph_free(g);
        ts_graph_free(ptr::null_mut());
    }
}

#[test]
fn invalid_utf8_is_reported() {
    let bad = [0xffu8 as c_char, 0];
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { ts_graph_load(bad.as_ptr(), &mut g) }, TsStatus::InvalidUtf8);
    assert!(last_error().contains("path"));
}

#[test]
fn scenario_risk_and_oracle() {
    let path = fixture("haneda/scenario.json");
    let spot = CString::new("Rwy_03_006").unwrap();
    let off_plan = CString::new("Apron_CG").unwrap();
    unsafe {
        let mut sc = ptr::null_mut();
        assert_eq!(ts_scenario_load(path.as_ptr(), &mut sc), TsStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(ts_scenario_risk_map_json(sc, &mut out), TsStatus::Ok);
        let scores: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        let first = &scores[0];
        assert_eq!(first["node"], "Rwy_03_006");
        let p = first["probability"].as_f64().unwrap();

        let mut est = TsOracleEstimate::default();
        assert_eq!(ts_scenario_oracle(sc, spot.as_ptr(), &mut est), TsStatus::Ok);
        assert_eq!(est.samples, 100_000);
        assert!((p - est.p_hat).abs() < 4.0 * est.standard_error, "{p} vs {est:?}");

        assert_eq!(ts_scenario_oracle(sc, off_plan.as_ptr(), &mut est), TsStatus::InvalidInput);
        assert!(last_error().starts_with("SPOT_NOT_SHARED"));
        ts_scenario_free(sc);
    }
}

#[test]
fn overlap_density_matches_library() {
    use taxi_sentinel::collision::overlap_density_closed;
    use taxi_sentinel::travel_time::LogNormalParams;

    let mut d = 0.0;
    let s = unsafe { ts_overlap_density(4.0, 0.2, 0.0, 4.3, 0.35, 0.0, &mut d) };
    assert_eq!(s, TsStatus::Ok);
    let a = LogNormalParams::new(4.0, 0.2).unwrap();
    let b = LogNormalParams::new(4.3, 0.35).unwrap();
    assert!((d - overlap_density_closed(&a, &b)).abs() <= 1e-14 * d);

    let s = unsafe { ts_overlap_density(4.0, 0.2, -1.0, 4.3, 0.35, 0.0, &mut d) };
    assert_eq!(s, TsStatus::InvalidInput);
    assert!(last_error().starts_with("NEGATIVE_OFFSET"));
    assert_eq!(
        unsafe { ts_overlap_density(4.0, 0.2, 0.0, 4.3, 0.35, 0.0, ptr::null_mut()) },
        TsStatus::NullPointer
    );
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = target_dir();
    assert!(
        lib_dir.join("libtaxi_sentinel_ffi.so").exists(),
        "cdylib missing in {}",
        lib_dir.display()
    );
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let cc = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-ltaxi_sentinel_ffi")
        .status()
        .expect("run cc");
    assert!(cc.success());

    let fixtures = dir.join("../core/fixtures/haneda");
    let run = Command::new(&exe)
        .arg(fixtures.join("graph.json"))
        .arg(fixtures.join("scenario.json"))
        .env("LD_LIBRARY_PATH", &lib_dir)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.contains("nodes 17"));
    assert!(stdout.contains("error UNKNOWN_NODE"));
    assert!(stdout.contains("risk [{\"clamped\":false"));
    assert!(stdout.contains("density 0.0260933650"));
}
