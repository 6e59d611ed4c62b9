//! The four subcommands.

use crate::config::Resolved;
use crate::CliError;
use crlearn::estimate::Observations;
use crlearn::fisher::XI;
use crlearn::hal::{run_learner, RunRecord, Scenario};
use crlearn::metrics::{
    decoherence_fit_report, expected_testing_error, fit_scaling_slope, normalized_error, query_advantage,
    sample_test_queries, DecoherenceFit, SlopeFit,
};
use crlearn::model::{j_to_lambda, lambda_to_j};
use crlearn::oracle::{generate_dataset, Oracle, StreamPurpose};
use crlearn::qopt::QueryDistribution;
use crlearn::{Dataset, LambdaParams, RngStream, Simulator};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const VERSION: &str = concat!("crlearn ", env!("CARGO_PKG_VERSION"));

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn provenance(r: &Resolved, seed: u64) -> serde_json::Value {
    json!({ "version": VERSION, "seed": seed, "config": r.config })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

// ---- generate ----

pub fn generate(r: &Resolved, seed: u64, out: &Path) -> Result<PathBuf, CliError> {
    if r.config.shots_per_query == 0 {
        return Err(CliError::Config("`shots_per_query` must be at least 1".into()));
    }
    create_dir(out)?;
    let mut rng = RngStream::for_run(seed, 0, StreamPurpose::Dataset);
    let mut d = generate_dataset(&r.theta, &r.noise, &r.space, r.config.shots_per_query, &mut rng).map_err(runtime)?;
    d.set_provenance(provenance(r, seed));
    let path = out.join("dataset.jsonl");
    d.save(&path).map_err(runtime)?;
    println!(
        "wrote {}: {} queries x {} shots = {} records ({} readout)",
        path.display(),
        d.space().len(),
        d.shots_per_query(),
        d.total_remaining(),
        d.readout_kind()
    );
    Ok(path)
}

// ---- run ----

/// One row of the summary CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub run_id: usize,
    pub round: usize,
    pub n_tot: usize,
    pub scenario: Scenario,
    pub rmse: f64,
    pub testing_error: f64,
    pub t_max: f64,
    pub wall_ms: f64,
}

struct RunResult {
    scenario: Scenario,
    run_id: usize,
    record: RunRecord,
    failure: Option<String>,
    testing: Vec<f64>,
}

/// Per-run learning error: J over `XI` for full runs, the masked scaled
/// Lambda components otherwise.
fn learning_error(r: &Resolved, est: &LambdaParams) -> Result<f64, CliError> {
    let mask = r.config.learner.mask().map_err(|e| CliError::Config(e.to_string()))?;
    if mask.is_full() {
        return Ok(normalized_error(&lambda_to_j(est).to_array(), &lambda_to_j(&r.theta).to_array(), &[XI; 6]));
    }
    let (e, t) = (est.to_array(), r.theta.to_array());
    let scale = |i: usize| if LambdaParams::OMEGA_INDICES.contains(&i) { XI } else { 1.0 };
    let idx = mask.indices();
    Ok(normalized_error(
        &idx.iter().map(|&i| e[i]).collect::<Vec<_>>(),
        &idx.iter().map(|&i| t[i]).collect::<Vec<_>>(),
        &idx.iter().map(|&i| scale(i)).collect::<Vec<_>>(),
    ))
}

fn one_run(r: &Resolved, dataset: Option<&Dataset>, scenario: Scenario, run_id: usize, seed: u64) -> Result<RunResult, CliError> {
    let cfg = crlearn::hal::LearnerConfig { scenario, ..r.config.learner.clone() };
    let mut sim;
    let mut replay;
    let oracle: &mut dyn Oracle = match dataset {
        // each run owns a copy; the input ledger is never touched
        Some(d) => {
            replay = d.clone();
            &mut replay
        }
        None => {
            sim = Simulator::new(r.theta, r.noise.clone());
            &mut sim
        }
    };
    let mut rng = RngStream::for_run(seed, run_id as u64, StreamPurpose::Learner);
    let (record, failure) = match run_learner(oracle, &r.noise, &r.space, &cfg, r.prior.as_ref(), &mut rng) {
        Ok(rec) => (rec, None),
        Err(f) if !f.partial.rounds.is_empty() => (f.partial, Some(f.error.to_string())),
        Err(f) => return Err(CliError::Runtime(format!("{scenario:?} run {run_id}: {}", f.error))),
    };
    let p_test = match &r.config.learner.p_test {
        Some(w) => QueryDistribution::new(w.clone()).map_err(|e| CliError::Config(e.to_string()))?,
        None => QueryDistribution::uniform(r.space.len()),
    };
    let mut test_rng = RngStream::for_run(seed, run_id as u64, StreamPurpose::TestSet);
    let queries = sample_test_queries(&p_test, &r.space, r.config.test_queries, &mut test_rng);
    let testing = record
        .rounds
        .iter()
        .map(|round| expected_testing_error(&round.estimate, &r.theta, &r.noise, &queries).map_err(runtime))
        .collect::<Result<_, _>>()?;
    Ok(RunResult { scenario, run_id, record, failure, testing })
}

fn write_run_log(dir: &Path, r: &Resolved, seed: u64, res: &RunResult) -> Result<(), CliError> {
    let path = dir.join(format!("{}-{:04}.jsonl", res.scenario.label(), res.run_id));
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path).map_err(runtime)?);
    let header = json!({
        "provenance": provenance(r, seed),
        "scenario": res.scenario,
        "run_id": res.run_id,
        "partial": res.failure.is_some(),
        "error": res.failure,
    });
    writeln!(w, "{header}").map_err(runtime)?;
    for round in &res.record.rounds {
        writeln!(w, "{}", serde_json::to_string(round).map_err(runtime)?).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

pub fn run(r: &Resolved, seed: u64, jobs: usize, out: &Path) -> Result<Vec<Row>, CliError> {
    let dataset = match &r.config.dataset {
        Some(p) => {
            let d = Dataset::load(p).map_err(|e| CliError::Runtime(format!("cannot load {}: {e}", p.display())))?;
            if d.readout_kind() != r.noise.readout.kind() {
                return Err(CliError::Config(format!(
                    "dataset readout is {:?} but the noise model expects {:?}",
                    d.readout_kind(),
                    r.noise.readout.kind()
                )));
            }
            Some(d)
        }
        None => None,
    };
    let logs = out.join("runs");
    create_dir(&logs)?;
    let tasks: Vec<(Scenario, usize)> =
        r.scenarios.iter().flat_map(|&s| (0..r.config.n_runs).map(move |k| (s, k))).collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build().map_err(runtime)?;
    let mut results: Vec<RunResult> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(s, k)| one_run(r, dataset.as_ref(), s, k, seed))
            .collect::<Result<Vec<_>, _>>()
    })?;
    results.sort_by_key(|res| (res.scenario, res.run_id));

    let mut rows = Vec::new();
    for res in &results {
        write_run_log(&logs, r, seed, res)?;
        if let Some(e) = &res.failure {
            eprintln!("warning: {:?} run {} stopped after {} rounds: {e}", res.scenario, res.run_id, res.record.rounds.len());
        }
        for (round, te) in res.record.rounds.iter().zip(&res.testing) {
            rows.push(Row {
                run_id: res.run_id,
                round: round.round,
                n_tot: round.n_tot,
                scenario: res.scenario,
                rmse: learning_error(r, &round.estimate)?,
                testing_error: *te,
                t_max: round.t_max,
                wall_ms: round.wall_ms,
            });
        }
    }
    let path = out.join("summary.csv");
    write_csv(&path, &provenance(r, seed), &rows)?;
    for s in &r.scenarios {
        let finals: Vec<f64> = results
            .iter()
            .filter(|x| x.scenario == *s)
            .filter_map(|x| x.record.rounds.last())
            .map(|round| learning_error(r, &round.estimate))
            .collect::<Result<_, _>>()?;
        let rms = (finals.iter().map(|e| e * e).sum::<f64>() / finals.len().max(1) as f64).sqrt();
        println!("{:<13} {} runs, final RMSE {rms:.4e}", s.label(), finals.len());
    }
    println!("wrote {}", path.display());
    Ok(rows)
}

fn write_csv<T: Serialize>(path: &Path, provenance: &serde_json::Value, rows: &[T]) -> Result<(), CliError> {
    let mut f = std::fs::File::create(path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))?;
    writeln!(f, "# provenance: {provenance}").map_err(runtime)?;
    let mut w = csv::Writer::from_writer(f);
    for row in rows {
        w.serialize(row).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    rdr.deserialize().collect::<Result<Vec<Row>, _>>().map_err(runtime)
}

// ---- analyze ----

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub scenario: Scenario,
    pub round: usize,
    pub n_tot: f64,
    pub rmse: f64,
    pub testing_error: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeRow {
    pub scenario: Scenario,
    pub metric: &'static str,
    pub n_lo: f64,
    pub n_hi: f64,
    pub slope: f64,
    pub stderr: f64,
    pub n_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdvantageRow {
    pub scenario: Scenario,
    pub epsilon: f64,
    pub query_advantage: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Analysis {
    pub curves: Vec<CurvePoint>,
    pub slopes: Vec<SlopeRow>,
    pub query_advantage: Vec<AdvantageRow>,
    pub decoherence_fit: Vec<DecoherenceFit>,
}

/// RMSE over runs (root mean square of per-run errors) and mean testing error per round.
pub fn curves(rows: &[Row]) -> BTreeMap<Scenario, Vec<CurvePoint>> {
    let mut acc: BTreeMap<(Scenario, usize), (f64, f64, f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.scenario, r.round)).or_default();
        e.0 += r.n_tot as f64;
        e.1 += r.rmse * r.rmse;
        e.2 += r.testing_error;
        e.3 += 1;
    }
    let mut out: BTreeMap<Scenario, Vec<CurvePoint>> = BTreeMap::new();
    for ((scenario, round), (n, se, te, k)) in acc {
        let kf = k as f64;
        out.entry(scenario).or_default().push(CurvePoint {
            scenario,
            round,
            n_tot: n / kf,
            rmse: (se / kf).sqrt(),
            testing_error: te / kf,
            runs: k,
        });
    }
    out
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 || hi <= lo {
        return vec![lo];
    }
    (0..n).map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (n - 1) as f64).exp()).collect()
}

pub fn analyze(rows: &[Row], windows: &[(f64, f64)], decoherence: Vec<DecoherenceFit>) -> Result<Analysis, CliError> {
    let by = curves(rows);
    let base = by
        .get(&Scenario::Baseline)
        .ok_or_else(|| CliError::Analysis("query advantage needs a Baseline scenario in the run logs".into()))?;
    let pts = |c: &[CurvePoint], f: fn(&CurvePoint) -> f64| c.iter().map(|p| (p.n_tot, f(p))).collect::<Vec<_>>();
    let default_window = [(0.0, f64::INFINITY)];
    let windows = if windows.is_empty() { &default_window[..] } else { windows };
    let mut slopes = Vec::new();
    for (s, c) in &by {
        for (metric, f) in [("rmse", (|p: &CurvePoint| p.rmse) as fn(&CurvePoint) -> f64), ("testing_error", |p| p.testing_error)] {
            for &(lo, hi) in windows {
                if let Ok(SlopeFit { slope, stderr, n_points, .. }) = fit_scaling_slope(&pts(c, f), (lo, hi)) {
                    slopes.push(SlopeRow { scenario: *s, metric, n_lo: lo, n_hi: hi, slope, stderr, n_points });
                }
            }
        }
    }
    let base_rmse = pts(base, |p| p.rmse);
    let range = |c: &[(f64, f64)]| c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
    let mut advantage = Vec::new();
    for (s, c) in by.iter().filter(|(s, _)| **s != Scenario::Baseline) {
        let curve = pts(c, |p| p.rmse);
        let ((lo_a, hi_a), (lo_b, hi_b)) = (range(&curve), range(&base_rmse));
        for eps in log_grid(lo_a.max(lo_b), hi_a.min(hi_b), 12) {
            if let Ok(qa) = query_advantage(&curve, &base_rmse, eps) {
                advantage.push(AdvantageRow { scenario: *s, epsilon: eps, query_advantage: qa });
            }
        }
    }
    Ok(Analysis { curves: by.into_values().flatten().collect(), slopes, query_advantage: advantage, decoherence_fit: decoherence })
}

pub fn decoherence_table(r: &Resolved) -> Result<Vec<DecoherenceFit>, CliError> {
    let Some(path) = &r.config.dataset else { return Ok(Vec::new()) };
    let d = Dataset::load(path).map_err(|e| CliError::Runtime(format!("cannot load {}: {e}", path.display())))?;
    let obs = Observations::from_dataset(&d, r.noise.readout.clone()).map_err(runtime)?;
    let models = r.config.decoherence_models.clone().unwrap_or_else(|| vec![crlearn::DecoherenceModel::None, r.noise.decoherence]);
    decoherence_fit_report(&obs, &r.theta, &r.noise, &models).map_err(runtime)
}

pub fn write_analysis(a: &Analysis, out: &Path, provenance: &serde_json::Value) -> Result<(), CliError> {
    create_dir(out)?;
    write_csv(&out.join("curves.csv"), provenance, &a.curves)?;
    write_csv(&out.join("slopes.csv"), provenance, &a.slopes)?;
    write_csv(&out.join("query_advantage.csv"), provenance, &a.query_advantage)?;
    let table: Vec<_> = a
        .decoherence_fit
        .iter()
        .map(|f| json!({ "model": serde_json::to_string(&f.model).unwrap_or_default(), "rmse": f.rmse, "kl": f.kl }))
        .collect();
    if !a.decoherence_fit.is_empty() {
        let mut f = std::fs::File::create(out.join("decoherence_fit.csv")).map_err(runtime)?;
        writeln!(f, "# provenance: {provenance}").map_err(runtime)?;
        let mut w = csv::Writer::from_writer(f);
        w.write_record(["model", "rmse", "kl"]).map_err(runtime)?;
        for row in &table {
            w.write_record([row["model"].as_str().unwrap_or_default(), &row["rmse"].to_string(), &row["kl"].to_string()])
                .map_err(runtime)?;
        }
        w.flush().map_err(runtime)?;
    }
    let doc = json!({ "provenance": provenance, "analysis": a, "decoherence_fit_table": table });
    std::fs::write(out.join("analysis.json"), serde_json::to_string_pretty(&doc).map_err(runtime)?).map_err(runtime)?;
    for s in &a.slopes {
        println!("{:<13} {:<14} slope {:+.3} +- {:.3} ({} points)", s.scenario.label(), s.metric, s.slope, s.stderr, s.n_points);
    }
    if let Some(last) = a.query_advantage.iter().filter(|q| q.scenario != Scenario::Baseline).min_by(|x, y| x.epsilon.total_cmp(&y.epsilon)) {
        println!("smallest common error {:.4e}: QA({}) = {:.4}", last.epsilon, last.scenario.label(), last.query_advantage);
    }
    Ok(())
}

pub fn analysis_provenance(input: &Path, r: Option<&Resolved>) -> serde_json::Value {
    json!({ "version": VERSION, "input": input, "config": r.map(|r| &r.config) })
}

// ---- show-preset ----

pub fn show_preset(name: Option<&str>) -> Result<String, CliError> {
    let Some(name) = name else { return Ok(crlearn::config::preset_names().join("\n")) };
    let p = crlearn::config::preset(name).map_err(|e| CliError::Config(e.to_string()))?;
    let doc = json!({
        "name": p.name,
        "theta": p.theta,
        "lambda": j_to_lambda(&p.theta),
        "noise": p.noise,
        "provenance": p.provenance,
    });
    serde_json::to_string_pretty(&doc).map_err(runtime)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(scenario: Scenario, scale: f64) -> Vec<Row> {
        (0..6)
            .flat_map(|round| {
                (0..3).map(move |run_id| {
                    let n_tot = 1000 * (round + 1);
                    Row {
                        run_id,
                        round,
                        n_tot,
                        scenario,
                        rmse: scale * (1.0 + 0.1 * run_id as f64) / (n_tot as f64).sqrt(),
                        testing_error: scale / n_tot as f64,
                        t_max: 6e-7,
                        wall_ms: 0.0,
                    }
                })
            })
            .collect()
    }

    #[test]
    fn curves_take_root_mean_square_over_runs() {
        let c = curves(&rows(Scenario::Passive, 1.0));
        let first = &c[&Scenario::Passive][0];
        let want = ((1.0f64 + 1.21 + 1.44) / 3.0).sqrt() / 1000f64.sqrt();
        assert!((first.rmse - want).abs() < 1e-15);
        assert_eq!(first.runs, 3);
    }

    #[test]
    fn identical_curves_have_no_advantage() {
        let mut all = rows(Scenario::Baseline, 1.0);
        all.extend(rows(Scenario::Passive, 1.0));
        let a = analyze(&all, &[], Vec::new()).unwrap();
        assert!(!a.query_advantage.is_empty());
        for q in &a.query_advantage {
            assert!(q.query_advantage.abs() < 1e-12, "{q:?}");
        }
        let s = a.slopes.iter().find(|s| s.metric == "rmse").unwrap();
        assert!((s.slope + 0.5).abs() < 1e-12);
    }

    #[test]
    fn missing_baseline_is_an_analysis_error() {
        assert!(matches!(analyze(&rows(Scenario::Passive, 1.0), &[], Vec::new()), Err(CliError::Analysis(_))));
    }

    #[test]
    fn summary_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let r = rows(Scenario::HalFiFixed, 2.0);
        write_csv(&path, &json!({"k": 1}), &r).unwrap();
        assert_eq!(read_rows(&path).unwrap(), r);
    }
}
