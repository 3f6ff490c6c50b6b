//! Reference values: hand arithmetic, independent implementations, and
//! published case-study outcomes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use taxi_sentinel::collision::{argmax, overlap_density_closed, risk_map};
use taxi_sentinel::graph::load_graph;
use taxi_sentinel::planning::{collision_callsigns, plans_from_table};
use taxi_sentinel::rules::compile_ruleset;
use taxi_sentinel::stats::{
    anova_f, fit_lognormal, group_by_weight_class, kolmogorov_sf, kruskal_wallis, ks_test, load_samples, Hypothesis,
};
use taxi_sentinel::transcript::{build_info_table, carry_forward, classify_dest_runway, load_transcript};
use taxi_sentinel::travel_time::{from_knots, LogNormalParams};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn anova_two_small_groups() {
    let r = anova_f(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
    assert!((r.statistic - 13.5).abs() <= 1e-10);
    assert_eq!(r.df, (1.0, 4.0));
    assert!(close(r.p_value, 0.02131164112875672, 1e-9), "{}", r.p_value);
}

#[test]
fn kruskal_wallis_matches_reference() {
    let g = vec![
        vec![2.9, 3.0, 2.5, 2.6, 3.2],
        vec![3.8, 2.7, 4.0, 2.4],
        vec![2.8, 3.4, 3.7, 2.2, 2.0],
    ];
    let r = kruskal_wallis(&g).unwrap();
    assert!(close(r.statistic, 0.7714285714285722, 1e-12));
    assert!(close(r.p_value, 0.6799647735788936, 1e-10));
}

#[test]
fn ks_statistic_matches_reference() {
    let x = [1.2, 0.4, 2.2, 3.1, 0.9, 1.7, 2.6, 0.3];
    let ln = ks_test(&x, &Hypothesis::LogNormal(LogNormalParams::new(0.2, 0.8).unwrap())).unwrap();
    assert!(close(ln.statistic, 0.16854686105717614, 1e-12));
    assert!(close(ln.p_value, 0.9769184844058806, 1e-10));
    let n = ks_test(&x, &Hypothesis::Normal { mean: 1.5, std: 0.9 }).unwrap();
    assert!(close(n.statistic, 0.15664998463862112, 1e-12));
}

#[test]
fn kolmogorov_tail_on_both_branches() {
    for (lambda, want) in [
        (0.3, 0.9999906941986655),
        (0.5, 0.9639452436648751),
        (1.0, 0.26999967167735456),
        (2.0, 0.0006709252557796953),
    ] {
        assert!(close(kolmogorov_sf(lambda), want, 1e-10), "lambda {lambda}");
    }
}

#[test]
fn bundled_samples_match_reference_tests() {
    let samples = load_samples(&fixtures().join("tracks/katl_speed_samples.csv")).unwrap();
    let groups: Vec<Vec<f64>> = group_by_weight_class(&samples).into_iter().map(|(_, v)| v).collect();
    assert_eq!(groups.iter().map(Vec::len).collect::<Vec<_>>(), [2407, 2518, 2670, 2733]);
    let a = anova_f(&groups).unwrap();
    assert!(close(a.statistic, 238.8175595588779, 1e-10));
    assert!(close(a.p_value, 7.955685886364071e-150, 1e-8));
    let k = kruskal_wallis(&groups).unwrap();
    assert!(close(k.statistic, 666.2248464154836, 1e-10));
    assert!(close(k.p_value, 4.420929954853726e-144, 1e-8));

    let link: Vec<f64> = samples
        .iter()
        .filter(|s| s.link == "Txy_E_002->Txy_E_003")
        .map(|s| s.speed)
        .collect();
    let p = fit_lognormal(&link).unwrap();
    assert!(close(p.mu_log, 2.0982958327701478, 1e-12));
    assert!(close(p.sigma_log, 0.19125997144700288, 1e-12));
    let ks = ks_test(&link, &Hypothesis::LogNormal(p)).unwrap();
    assert!(close(ks.statistic, 0.04886620575511835, 1e-10));
}

#[test]
fn knots_convert_to_log_space() {
    let p = from_knots(30.0, 10.0).unwrap();
    assert!(close(p.mu_log, 2.6838485506639067, 1e-13));
    assert!(close(p.sigma_log, 0.32459284597450133, 1e-13));
}

#[test]
fn equal_routes_overlap_closed_form() {
    let p = LogNormalParams::new(4.0, 0.2).unwrap();
    assert!(close(overlap_density_closed(&p, &p), 0.026093365012533412, 1e-13));
}

#[test]
fn runway_designators() {
    assert_eq!(classify_dest_runway("34R").as_deref(), Some("34R"));
    assert_eq!(classify_dest_runway("runway 08 right").as_deref(), Some("08R"));
    assert_eq!(classify_dest_runway("holding point C5"), None);
}

#[test]
fn haneda_table_plans_and_risk() {
    let dir = fixtures();
    let rules = compile_ruleset(
        &dir.join("rules/default_rules.json"),
        Some(&dir.join("rules/default_tables.json")),
    )
    .unwrap();
    let graph = load_graph(&dir.join("haneda/graph.json")).unwrap();
    let transcript = load_transcript(&dir.join("haneda/transcript.jsonl")).unwrap();
    let table = build_info_table(&transcript, &rules, None, Some(&graph)).unwrap();
    let rows = carry_forward(&table.rows);

    let aircraft = collision_callsigns(&rows);
    assert_eq!(aircraft, ["JAL516", "JA722A"]);
    let starts = BTreeMap::from([("JA722A".to_string(), "Apron_CG".to_string())]);
    let plans = plans_from_table(&rows, &graph, &aircraft, &starts).unwrap();
    assert_eq!(plans[0].nodes.first().map(String::as_str), Some("Rwy_03_001"));
    assert_eq!(plans[0].nodes.len(), 10);
    assert_eq!(plans[0].start_time, 0.0);
    assert_eq!(
        plans[1].nodes[..5],
        ["Apron_CG", "Txy_C_003", "Txy_C_004", "Txy_C5_C5B", "Rwy_03_006"]
    );
    assert_eq!(plans[1].start_time, 18.0);

    let scores = risk_map(&plans[0], &plans[1], &graph, 32.5).unwrap();
    let nodes: Vec<&str> = scores.iter().map(|s| s.node.as_str()).collect();
    assert_eq!(nodes, ["Rwy_03_006", "Rwy_03_007", "Rwy_03_008", "Rwy_03_009", "Rwy_03_010"]);
    let top = argmax(&scores).unwrap();
    assert_eq!(top.node, "Rwy_03_006");
    assert!(close(top.probability, 0.07833092079487203, 1e-9));
    assert!(!top.clamped);
    assert!(scores.windows(2).all(|w| w[0].probability >= w[1].probability));
}
