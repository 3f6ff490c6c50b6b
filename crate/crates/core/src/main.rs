use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::warn;
use serde_json::json;

use taxi_sentinel::collision::{self, argmax, risk_map};
use taxi_sentinel::error::{Error, Result};
use taxi_sentinel::graph::{load_graph, shortest_taxi_plan, AirportGraph, TaxiPlan};
use taxi_sentinel::ner::{load_annotated, merge_corpus, predict_with_rules, score, AnnotatedUtterance};
use taxi_sentinel::planning::{collision_callsigns, plans_from_table};
use taxi_sentinel::rules::{compile_ruleset, EntitySpan};
use taxi_sentinel::sim::{self, load_scenario, mc_collision_oracle, replay, ReplayPath, ScenarioConfig};
use taxi_sentinel::stats::{self, Hypothesis};
use taxi_sentinel::transcript::{self, build_info_table, carry_forward, load_transcript, parse_info_json};

/// Default collision radius (m): half the mean wingspan of a wide-body and a
/// regional jet.
const DEFAULT_R_C: f64 = 32.5;

#[derive(Parser)]
#[command(name = "taxi-sentinel", version, about = "ATC transcript extraction and surface collision risk")]
struct Cli {
    /// Overrides every seed read from input files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the information table from a transcript.
    Extract(ExtractArgs),
    /// Score predicted entity spans against gold annotations.
    Eval(EvalArgs),
    /// Shortest taxi plan between two nodes.
    Plan(PlanArgs),
    /// Collision risk at every node two plans share.
    Risk(RiskArgs),
    /// Replay frames and the Monte Carlo collision estimate for a scenario.
    Simulate(SimulateArgs),
    /// Map-match tracks to links and fit log-normal link speeds.
    Fit(FitArgs),
    /// Group tests on speed samples.
    Stats(StatsArgs),
    /// Compile a rule set and report its contents.
    RulesCheck(RulesCheckArgs),
}

#[derive(Args)]
struct RuleFiles {
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    tables: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    rules: RuleFiles,
    #[arg(long)]
    transcript: PathBuf,
    /// Annotated predictions aligned with the transcript lines.
    #[arg(long)]
    external_preds: Option<PathBuf>,
    /// Links destinations to nodes of this layout.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Also score the predictions after rule override.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, requires = "rules")]
    tables: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    from: String,
    #[arg(long)]
    to: String,
    #[arg(long, value_delimiter = ',')]
    via: Vec<String>,
    #[arg(long, default_value = "")]
    callsign: String,
    #[arg(long, default_value_t = 0.0)]
    start_time: f64,
}

#[derive(Args)]
struct RiskArgs {
    /// Layout; required with --table, overrides the scenario's otherwise.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, conflicts_with = "table")]
    scenario: Option<PathBuf>,
    /// Information table JSON written by `extract`.
    #[arg(long, requires = "graph")]
    table: Option<PathBuf>,
    /// Aircraft to pair (table mode); defaults to those in collision rows.
    #[arg(long, value_delimiter = ',')]
    aircraft: Vec<String>,
    /// `CALLSIGN=NODE` start positions for departing aircraft (table mode).
    #[arg(long = "start", value_parser = parse_start)]
    starts: Vec<(String, String)>,
    #[arg(long)]
    r_c: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    step: f64,
    /// Replay this Monte Carlo sample instead of mean link times.
    #[arg(long)]
    sample: Option<usize>,
    /// Run the collision oracle at this node (defaults to the scenario spot).
    #[arg(long)]
    spot: Option<String>,
    /// Skip the collision oracle.
    #[arg(long)]
    no_oracle: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    tracks: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = stats::DEFAULT_STATIONARY_CUTOFF)]
    cutoff: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TestKind {
    Anova,
    Kw,
    Ks,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupBy {
    WeightClass,
}

#[derive(Args)]
struct StatsArgs {
    /// Speed samples CSV (`link,time,speed,weight_class`).
    #[arg(long)]
    samples: PathBuf,
    #[arg(long, value_enum)]
    test: TestKind,
    #[arg(long, value_enum, default_value = "weight-class")]
    group_by: GroupBy,
    /// Restrict to one link.
    #[arg(long)]
    link: Option<String>,
}

#[derive(Args)]
struct RulesCheckArgs {
    #[command(flatten)]
    rules: RuleFiles,
    /// Print the matches on this text.
    #[arg(long)]
    text: Option<String>,
}

fn parse_start(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .ok_or_else(|| format!("expected CALLSIGN=NODE, got {s:?}"))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn out_dir(dir: &Path) -> Result<&Path> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(dir)
}

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output serializes");
    s.push('\n');
    s
}

fn spans_of(utts: Vec<AnnotatedUtterance>) -> Vec<Vec<EntitySpan>> {
    utts.into_iter().map(|u| u.gold).collect()
}

fn cmd_extract(a: &ExtractArgs) -> Result<()> {
    let rules = compile_ruleset(&a.rules.rules, a.rules.tables.as_deref())?;
    let utts = load_transcript(&a.transcript)?;
    let external = match &a.external_preds {
        Some(p) => {
            let preds = load_annotated(p)?;
            if let Some((i, _)) = preds.iter().zip(&utts).enumerate().find(|(_, (p, u))| p.text != u.text) {
                return Err(Error::malformed(
                    p.display().to_string(),
                    format!("entry {i} text differs from the transcript"),
                ));
            }
            Some(spans_of(preds))
        }
        None => None,
    };
    let graph = a.graph.as_deref().map(load_graph).transpose()?;
    let table = build_info_table(&utts, &rules, external.as_deref(), graph.as_ref())?;
    let rows = carry_forward(&table.rows);
    let dir = out_dir(&a.out)?;
    write(&dir.join("info_table.csv"), &transcript::to_csv(&rows)?)?;
    write(&dir.join("info_table.json"), &(transcript::to_json(&rows) + "\n"))?;
    write(&dir.join("skipped.json"), &pretty(&table.skipped))?;
    println!("{}", json!({"rows": rows.len(), "skipped": table.skipped.len()}));
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let gold = load_annotated(&a.gold)?;
    let pred = load_annotated(&a.pred)?;
    if pred.len() != gold.len() {
        return Err(Error::LengthMismatch {
            gold: gold.len(),
            predicted: pred.len(),
        });
    }
    let pred = spans_of(pred);
    let base = score(&gold, &pred)?;
    let report = match &a.rules {
        None => json!({"prediction": base}),
        Some(r) => {
            let rules = compile_ruleset(r, a.tables.as_deref())?;
            let rule_spans = predict_with_rules(&rules, &gold);
            let merged = merge_corpus(&pred, &rule_spans)?;
            json!({
                "prediction": base,
                "rules": score(&gold, &rule_spans)?,
                "override": score(&gold, &merged)?,
            })
        }
    };
    print!("{}", pretty(&report));
    Ok(())
}

fn cmd_plan(a: &PlanArgs) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let plan = shortest_taxi_plan(&g, &a.callsign, &a.from, &a.to, &a.via, a.start_time)?;
    let length: f64 = plan.resolved_links(&g)?.iter().map(|l| l.length).sum();
    print!("{}", pretty(&json!({"plan": plan, "length_m": length})));
    Ok(())
}

fn table_plans(a: &RiskArgs, table: &Path, graph: &AirportGraph) -> Result<Vec<TaxiPlan>> {
    let text = taxi_sentinel::error::read_to_string(table)?;
    let rows = parse_info_json(&text, &table.display().to_string())?;
    let aircraft = if a.aircraft.is_empty() {
        collision_callsigns(&rows)
    } else {
        a.aircraft.clone()
    };
    if aircraft.len() < 2 {
        return Err(Error::invalid("aircraft", format!("need two aircraft, found {}", aircraft.len())));
    }
    let starts: BTreeMap<String, String> = a.starts.iter().cloned().collect();
    plans_from_table(&rows, graph, &aircraft[..2], &starts)
}

fn cmd_risk(a: &RiskArgs) -> Result<()> {
    let (graph, plans, r_c) = match (&a.scenario, &a.table) {
        (Some(s), _) => {
            let mut sc = load_scenario(s)?;
            if let Some(g) = &a.graph {
                sc.graph = load_graph(g)?;
            }
            if sc.aircraft.len() < 2 {
                return Err(Error::invalid("aircraft", "scenario needs two aircraft"));
            }
            let r_c = a.r_c.unwrap_or(sc.r_c);
            (sc.graph, sc.aircraft, r_c)
        }
        (None, Some(t)) => {
            let g = load_graph(a.graph.as_deref().expect("clap requires --graph with --table"))?;
            let plans = table_plans(a, t, &g)?;
            (g, plans, a.r_c.unwrap_or(DEFAULT_R_C))
        }
        (None, None) => return Err(Error::invalid("scenario", "pass --scenario or --table")),
    };
    let scores = risk_map(&plans[0], &plans[1], &graph, r_c)?;
    if scores.is_empty() {
        warn!("plans of {} and {} share no node", plans[0].callsign, plans[1].callsign);
    }
    let dir = out_dir(&a.out)?;
    write(&dir.join("plans.json"), &pretty(&plans[..2].to_vec()))?;
    write(&dir.join("risk_map.json"), &pretty(&scores))?;
    write(&dir.join("risk_map.csv"), &collision::to_csv(&scores, &graph)?)?;
    if let Some(geo) = collision::to_geojson(&scores, &graph)? {
        write(&dir.join("risk_map.geojson"), &(geo + "\n"))?;
    }
    let best = argmax(&scores);
    println!(
        "{}",
        json!({
            "argmax": best.map(|s| s.node.as_str()),
            "probability": best.map(|s| s.probability),
            "nodes": scores.len(),
        })
    );
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs, seed: Option<u64>) -> Result<()> {
    let mut sc: ScenarioConfig = load_scenario(&a.scenario)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let path = a.sample.map_or(ReplayPath::Mean, ReplayPath::Sample);
    let frames = replay(&sc, path, a.step)?;
    let dir = out_dir(&a.out)?;
    write(&dir.join("frames.jsonl"), &sim::frames_to_jsonl(&frames))?;
    write(&dir.join("frames.csv"), &sim::frames_to_csv(&frames)?)?;

    let mut summary = json!({"frames": frames.len(), "seed": sc.seed});
    let spot = a.spot.clone().or_else(|| sc.spot.clone());
    if let (false, Some(spot), true) = (a.no_oracle, spot, sc.aircraft.len() >= 2) {
        let est = mc_collision_oracle(&sc, &spot)?;
        let analytic = risk_map(&sc.aircraft[0], &sc.aircraft[1], &sc.graph, sc.r_c)?
            .into_iter()
            .find(|s| s.node == spot);
        let report = json!({
            "spot": spot,
            "r_c": sc.r_c,
            "oracle": est,
            "analytic": analytic,
        });
        write(&dir.join("oracle.json"), &pretty(&report))?;
        summary["oracle"] = report;
    }
    println!("{summary}");
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let points = stats::load_tracks(&a.tracks, Some(&g))?;
    let samples = stats::link_speed_extract(&points, &g, a.cutoff)?;
    let reports = stats::fit_links(&samples);
    let dir = out_dir(&a.out)?;
    write(&dir.join("speed_samples.csv"), &stats::samples_to_csv(&samples)?)?;
    write(&dir.join("fit_report.json"), &pretty(&reports))?;
    println!("{}", json!({"samples": samples.len(), "links": reports.len()}));
    Ok(())
}

fn cmd_stats(a: &StatsArgs) -> Result<()> {
    let mut samples = stats::load_samples(&a.samples)?;
    if let Some(l) = &a.link {
        samples.retain(|s| &s.link == l);
    }
    let GroupBy::WeightClass = a.group_by;
    let report = match a.test {
        TestKind::Anova | TestKind::Kw => {
            let groups = stats::group_by_weight_class(&samples);
            let names: Vec<&str> = groups.iter().map(|(w, _)| w.as_str()).collect();
            let sizes: Vec<usize> = groups.iter().map(|(_, v)| v.len()).collect();
            let values: Vec<Vec<f64>> = groups.iter().map(|(_, v)| v.clone()).collect();
            let (name, r) = match a.test {
                TestKind::Anova => ("anova", stats::anova_f(&values)?),
                _ => ("kruskal_wallis", stats::kruskal_wallis(&values)?),
            };
            json!({
                "test": name,
                "link": a.link,
                "groups": names,
                "sizes": sizes,
                "statistic": r.statistic,
                "p_value": r.p_value,
                "df": r.df,
            })
        }
        TestKind::Ks => {
            let mut by_link: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for s in &samples {
                by_link.entry(&s.link).or_default().push(s.speed);
            }
            let test_link = |speeds: &[f64]| -> Result<serde_json::Value> {
                let p = stats::fit_lognormal(speeds)?;
                let ks = stats::ks_test(speeds, &Hypothesis::LogNormal(p))?;
                let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
                let sd = (speeds.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / speeds.len() as f64).sqrt();
                let normal = stats::ks_test(speeds, &Hypothesis::Normal { mean, std: sd })?;
                Ok(json!({
                    "n": speeds.len(),
                    "lognormal": {"params": p, "statistic": ks.statistic, "p_value": ks.p_value},
                    "normal": {"mean": mean, "std": sd, "statistic": normal.statistic, "p_value": normal.p_value},
                }))
            };
            let mut rows = Vec::new();
            let mut skipped = Vec::new();
            for (link, speeds) in &by_link {
                match test_link(speeds) {
                    Ok(mut row) => {
                        row["link"] = json!(link);
                        rows.push(row);
                    }
                    // A whole-file sweep reports untestable links instead of failing.
                    Err(e) if a.link.is_none() => {
                        warn!("link {link}: {e}");
                        skipped.push(json!({"link": link, "n": speeds.len(), "error": e.code()}));
                    }
                    Err(e) => return Err(e),
                }
            }
            if rows.is_empty() && skipped.is_empty() {
                return Err(Error::TooFewSamples {
                    needed: stats::KS_MIN_SAMPLES,
                    got: 0,
                });
            }
            json!({"test": "ks", "links": rows, "skipped": skipped})
        }
    };
    print!("{}", pretty(&report));
    Ok(())
}

fn cmd_rules_check(a: &RulesCheckArgs) -> Result<()> {
    let rules = compile_ruleset(&a.rules.rules, a.rules.tables.as_deref())?;
    let counts: BTreeMap<&str, usize> = rules
        .counts_by_label()
        .into_iter()
        .map(|(l, c)| (l.as_str(), c))
        .collect();
    let mut report = json!({"rules": rules.len(), "by_label": counts});
    if let Some(t) = &a.text {
        let spans: Vec<_> = rules
            .match_rules(t)
            .into_iter()
            .map(|s| json!({"start": s.start, "end": s.end, "label": s.label, "surface": s.surface, "rule": s.rule_id}))
            .collect();
        report["matches"] = json!(spans);
    }
    print!("{}", pretty(&report));
    Ok(())
}

fn init_threads() {
    let Ok(v) = std::env::var("TAXI_SENTINEL_THREADS") else {
        return;
    };
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                warn!("thread pool already configured: {e}");
            }
        }
        _ => warn!("ignoring TAXI_SENTINEL_THREADS={v:?}"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Extract(a) => cmd_extract(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Plan(a) => cmd_plan(a),
        Command::Risk(a) => cmd_risk(a),
        Command::Simulate(a) => cmd_simulate(a, cli.seed),
        Command::Fit(a) => cmd_fit(a),
        Command::Stats(a) => cmd_stats(a),
        Command::RulesCheck(a) => cmd_rules_check(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    init_threads();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            eprintln!("{}", json!({"error": "USAGE", "message": message.trim_end()}));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({"error": e.code(), "message": e.to_string()}));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
