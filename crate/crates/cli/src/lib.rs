//! Experiment workflows behind the `ecas-sim` binary: comparing algorithms
//! on a client mix, labeling traces with the parameter oracle, and
//! recomputing metrics from event logs.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::ValueEnum;
use log::{info, warn};
use rayon::prelude::*;

use ecas_core::config::ExperimentConfig;
use ecas_core::model::{
    extract_input_vectors, filter_max_length, load_trace, BitrateLadder, RadioTrace, TraceCategory,
    MIN_INPUT_SECONDS,
};
use ecas_core::oracle::{
    append_dataset_rows, grid_search, label_trace, read_dataset, shuffle_samples, write_dataset,
    OracleConfig, ParamGrid, TrainingSample, DATASET_HEADER,
};
use ecas_core::predictor::{load_prediction_table, ParamsSource, PredictionTable};
use ecas_core::qoe::{compute_metrics, export_p1203, session_records, QoeWeights, SessionMetrics, METRICS_COLUMNS};
use ecas_core::sim::events::{read_log, write_log, Event, LogRecord};
use ecas_core::sim::{run_session, Algorithm, SessionOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, ValueEnum)]
pub enum AlgorithmChoice {
    /// ECAS with the `[ecas] params` tuple for the whole session.
    EcasStatic,
    /// ECAS with parameters from the `[ecas] prediction_table` file.
    EcasTable,
    /// ECAS with parameters replayed from oracle labels of the client traces.
    EcasOracle,
    Tba,
    Bba,
    Sara,
    Gbba,
    Eadas,
}

impl AlgorithmChoice {
    pub fn label(self) -> &'static str {
        match self {
            AlgorithmChoice::EcasStatic => "ecas-static",
            AlgorithmChoice::EcasTable => "ecas-table",
            AlgorithmChoice::EcasOracle => "ecas-oracle",
            AlgorithmChoice::Tba => "tba",
            AlgorithmChoice::Bba => "bba",
            AlgorithmChoice::Sara => "sara",
            AlgorithmChoice::Gbba => "gbba",
            AlgorithmChoice::Eadas => "eadas",
        }
    }

    pub fn algorithm(self) -> Algorithm {
        match self {
            AlgorithmChoice::EcasStatic | AlgorithmChoice::EcasTable | AlgorithmChoice::EcasOracle => {
                Algorithm::Ecas
            }
            AlgorithmChoice::Tba => Algorithm::Tba,
            AlgorithmChoice::Bba => Algorithm::Bba,
            AlgorithmChoice::Sara => Algorithm::Sara,
            AlgorithmChoice::Gbba => Algorithm::Gbba,
            AlgorithmChoice::Eadas => Algorithm::Eadas,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunPlan {
    pub config: ExperimentConfig,
    pub algorithms: Vec<AlgorithmChoice>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Also write per-second buffer/throughput series.
    pub timeline: bool,
    /// Also write one P.1203 input file per client.
    pub p1203: bool,
    /// Labels for `ecas-oracle`; computed from the client traces when unset.
    pub oracle_table: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Per-client metrics, algorithms in plan order.
    pub metrics: Vec<SessionMetrics>,
    pub summary: Vec<SummaryRow>,
}

/// Means over clients of one algorithm's per-client metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub clients: usize,
    pub mean_bitrate_kbps: f64,
    pub mean_switch_magnitude_kbps: f64,
    pub mean_switch_magnitude_index: f64,
    pub stall_count: f64,
    pub mean_stall_duration_ms: f64,
    pub composite_qoe: f64,
    pub startup_delay_ms: f64,
}

pub const SUMMARY_COLUMNS: [&str; 9] = [
    "algorithm",
    "clients",
    "mean_bitrate_kbps",
    "mean_switch_magnitude_kbps",
    "mean_switch_magnitude_index",
    "stall_count",
    "mean_stall_duration_ms",
    "composite_qoe",
    "startup_delay_ms",
];

impl SummaryRow {
    pub fn from_metrics(algorithm: &str, rows: &[&SessionMetrics]) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&SessionMetrics) -> f64| rows.iter().map(|m| f(m)).fold(0.0, |a, b| a + b) / n;
        Self {
            algorithm: algorithm.to_string(),
            clients: rows.len(),
            mean_bitrate_kbps: mean(|m| m.mean_bitrate_kbps),
            mean_switch_magnitude_kbps: mean(|m| m.mean_switch_magnitude_kbps),
            mean_switch_magnitude_index: mean(|m| m.mean_switch_magnitude_index),
            stall_count: mean(|m| m.stall_count as f64),
            mean_stall_duration_ms: mean(|m| m.mean_stall_duration_ms),
            composite_qoe: mean(|m| m.composite_qoe),
            startup_delay_ms: mean(|m| m.startup_delay_ms),
        }
    }

    fn csv_row(&self) -> Vec<String> {
        vec![
            self.algorithm.clone(),
            self.clients.to_string(),
            self.mean_bitrate_kbps.to_string(),
            self.mean_switch_magnitude_kbps.to_string(),
            self.mean_switch_magnitude_index.to_string(),
            self.stall_count.to_string(),
            self.mean_stall_duration_ms.to_string(),
            self.composite_qoe.to_string(),
            self.startup_delay_ms.to_string(),
        ]
    }
}

/// Groups per-client rows by algorithm, keeping first-seen order.
pub fn summarize(metrics: &[SessionMetrics]) -> Vec<SummaryRow> {
    let mut order: Vec<&str> = Vec::new();
    for m in metrics {
        if !order.contains(&m.algorithm.as_str()) {
            order.push(&m.algorithm);
        }
    }
    order
        .into_iter()
        .map(|alg| {
            let rows: Vec<&SessionMetrics> = metrics.iter().filter(|m| m.algorithm == alg).collect();
            SummaryRow::from_metrics(alg, &rows)
        })
        .collect()
}

/// Metric rows by algorithm columns, as a Markdown table.
pub fn summary_markdown(rows: &[SummaryRow]) -> String {
    let mut s = String::from("| |");
    for r in rows {
        s += &format!(" {} |", r.algorithm);
    }
    s += "\n|---|";
    s += &"---:|".repeat(rows.len());
    s.push('\n');
    type Cell = fn(&SummaryRow) -> String;
    let lines: [(&str, Cell); 7] = [
        ("Mean bitrate (kbps)", |r| format!("{:.0}", r.mean_bitrate_kbps)),
        ("Mean switching magnitude (kbps)", |r| format!("{:.0}", r.mean_switch_magnitude_kbps)),
        ("Mean switching magnitude (quality index)", |r| format!("{:.2}", r.mean_switch_magnitude_index)),
        ("Number of stalls", |r| format!("{:.2}", r.stall_count)),
        ("Mean stall duration (ms)", |r| format!("{:.0}", r.mean_stall_duration_ms)),
        ("QoE score (surrogate)", |r| format!("{:.2}", r.composite_qoe)),
        ("Startup delay (ms)", |r| format!("{:.0}", r.startup_delay_ms)),
    ];
    for (name, cell) in lines {
        s += &format!("| {name} |");
        for r in rows {
            s += &format!(" {} |", cell(r));
        }
        s.push('\n');
    }
    s
}

pub fn write_metrics_csv(metrics: &[SessionMetrics], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(METRICS_COLUMNS)?;
    for m in metrics {
        w.write_record(m.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(rows: &[SummaryRow], out_dir: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;
    fs::write(out_dir.join("summary.md"), summary_markdown(rows))?;
    Ok(())
}

fn write_log_file(log: &[LogRecord], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_log(log, &mut out)?;
    out.flush()?;
    Ok(())
}

fn params_source(plan: &RunPlan, choice: AlgorithmChoice, ladder: &BitrateLadder, traces: &[RadioTrace]) -> Result<ParamsSource> {
    let cfg = &plan.config;
    Ok(match choice {
        AlgorithmChoice::EcasTable => {
            let path = cfg
                .prediction_table_path()
                .context("ecas-table needs `prediction_table` in the [ecas] section")?;
            let table = load_prediction_table(&path)
                .with_context(|| format!("loading prediction table {}", path.display()))?;
            ParamsSource::table(table, cfg.ecas.bootstrap)
        }
        AlgorithmChoice::EcasOracle => {
            let table = match &plan.oracle_table {
                Some(path) => load_prediction_table(path)
                    .with_context(|| format!("loading oracle table {}", path.display()))?,
                None => {
                    info!("labeling {} client traces for ecas-oracle", traces.len());
                    oracle_table_for(traces, &cfg.oracle.grid, &cfg.oracle_config(ladder))?
                }
            };
            ParamsSource::table(table, cfg.ecas.bootstrap)
        }
        _ => ParamsSource::Static(cfg.ecas.params),
    })
}

/// Oracle labels for every distinct trace, as a prediction table.
pub fn oracle_table_for(traces: &[RadioTrace], grid: &ParamGrid, cfg: &OracleConfig) -> Result<PredictionTable> {
    let mut seen = std::collections::HashSet::new();
    let mut samples = Vec::new();
    for t in traces {
        if seen.insert(t.id.clone()) {
            samples.extend(label_trace(t, grid, cfg).with_context(|| format!("labeling `{}`", t.id))?);
        }
    }
    Ok(PredictionTable::from_samples(&samples))
}

/// Runs every algorithm of the plan on the configured client mix and
/// writes metrics, summaries and event logs under `plan.out_dir`.
pub fn run_experiment(plan: &RunPlan) -> Result<RunResult> {
    ensure!(!plan.algorithms.is_empty(), "no algorithms selected");
    let cfg = &plan.config;
    ensure!(!cfg.clients.is_empty(), "the config lists no clients");
    let ladder = cfg.validate()?;
    let traces = cfg.load_traces()?;

    let mut algorithms = plan.algorithms.clone();
    let mut seen = std::collections::HashSet::new();
    algorithms.retain(|a| seen.insert(*a));
    let mut jobs = Vec::new();
    for &choice in &algorithms {
        let source = params_source(plan, choice, &ladder, &traces)?;
        let mut session = cfg.session(&ladder, &traces, choice.algorithm(), plan.seed);
        session.record_timeline = plan.timeline;
        session
            .validate(&source)
            .with_context(|| format!("{}: invalid session", choice.label()))?;
        jobs.push((choice, session, source));
    }

    let outcomes: Vec<(AlgorithmChoice, SessionOutcome)> = jobs
        .par_iter()
        .map(|(choice, session, source)| {
            let mut out = run_session(session, source)?;
            relabel(&mut out, choice.label());
            Ok((*choice, out))
        })
        .collect::<Result<_>>()?;

    let out_dir = &plan.out_dir;
    fs::create_dir_all(out_dir.join("logs"))?;
    let mut metrics = Vec::new();
    for (choice, out) in &outcomes {
        write_log_file(&out.log, &out_dir.join("logs").join(format!("{}.jsonl", choice.label())))?;
        if plan.timeline {
            let dir = out_dir.join("timeline");
            fs::create_dir_all(&dir)?;
            let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", choice.label())))?;
            for s in &out.timeline {
                w.serialize(s)?;
            }
            w.flush()?;
        }
        if plan.p1203 {
            let dir = out_dir.join("p1203").join(choice.label());
            fs::create_dir_all(&dir)?;
            for rec in session_records(&out.log)? {
                export_p1203(&rec, dir.join(format!("client{}.json", rec.client_id)))?;
            }
        }
        metrics.extend(out.metrics.iter().cloned());
    }
    write_metrics_csv(&metrics, &out_dir.join("metrics.csv"))?;
    let summary = summarize(&metrics);
    write_summary(&summary, out_dir)?;
    Ok(RunResult { metrics, summary })
}

fn relabel(out: &mut SessionOutcome, label: &str) {
    for r in &mut out.log {
        if let Event::SessionStart(s) = &mut r.event {
            s.algorithm = label.to_string();
        }
    }
    for m in &mut out.metrics {
        m.algorithm = label.to_string();
    }
}

#[derive(Debug, Clone)]
pub struct OraclePlan {
    pub trace_paths: Vec<PathBuf>,
    pub category: TraceCategory,
    pub grid: ParamGrid,
    pub oracle: OracleConfig,
    pub max_trace_len: Option<usize>,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Prefixes labeled per checkpoint.
    pub chunk: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSummary {
    pub traces: usize,
    pub samples: usize,
    /// Prefixes found in the checkpoint and not recomputed.
    pub resumed: usize,
    pub label_counts: Vec<(String, usize)>,
}

pub const DATASET_FILE: &str = "dataset.csv";
pub const PARTIAL_FILE: &str = "dataset.partial.csv";
pub const ORACLE_TABLE_FILE: &str = "oracle_table.csv";
pub const LABEL_COUNTS_FILE: &str = "label_counts.csv";

/// Trace files named by `paths`; directories contribute their regular
/// files in name order.
pub fn collect_trace_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            entries.retain(|e| {
                e.is_file() && !e.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'))
            });
            entries.sort();
            files.extend(entries);
        } else if p.is_file() {
            files.push(p.clone());
        } else {
            bail!("trace path {} does not exist", p.display());
        }
    }
    Ok(files)
}

/// Labels every prefix of every trace, checkpointing to
/// `dataset.partial.csv` so an interrupted run resumes where it stopped.
/// The final `dataset.csv` does not depend on where interruptions fell.
pub fn run_oracle(plan: &OraclePlan) -> Result<OracleSummary> {
    let files = collect_trace_files(&plan.trace_paths)?;
    let traces = files
        .iter()
        .map(|f| load_trace(f, plan.category))
        .collect::<ecas_core::Result<Vec<_>>>()?;
    let before = traces.len();
    let mut traces = filter_max_length(traces, plan.max_trace_len);
    if traces.len() < before {
        info!("{} traces dropped by the length limit", before - traces.len());
    }
    traces.retain(|t| {
        let keep = t.len() >= MIN_INPUT_SECONDS;
        if !keep {
            warn!("trace `{}` has {} s, fewer than {MIN_INPUT_SECONDS}; skipped", t.id, t.len());
        }
        keep
    });
    let mut ids = std::collections::HashSet::new();
    for t in &traces {
        ensure!(ids.insert(t.id.clone()), "two traces share the id `{}`", t.id);
    }
    plan.grid.validate(plan.oracle.ladder.segment_length_s(), plan.oracle.max_buffer_s)?;

    fs::create_dir_all(&plan.out_dir)?;
    let partial_path = plan.out_dir.join(PARTIAL_FILE);
    let done = load_checkpoint(&partial_path)?;
    let resumed = done.len();
    if resumed > 0 {
        info!("resuming: {resumed} prefixes already labeled");
    }
    let mut partial = OpenOptions::new().append(true).open(&partial_path)?;

    if traces.is_empty() {
        warn!("no traces to label; writing an empty dataset");
    }
    let total: usize = traces.iter().map(|t| t.len() + 1 - MIN_INPUT_SECONDS).sum();
    let mut labeled = resumed;
    let mut fresh: BTreeMap<(String, usize), TrainingSample> = BTreeMap::new();
    for t in &traces {
        let todo: Vec<_> = extract_input_vectors(t)?
            .into_iter()
            .filter(|v| !done.contains_key(&(t.id.clone(), v.upto_second)))
            .collect();
        for chunk in todo.chunks(plan.chunk.max(1)) {
            let samples: Vec<TrainingSample> = chunk
                .par_iter()
                .map(|input| {
                    let (label, achieved_qoe) = grid_search(t, input.upto_second, &plan.grid, &plan.oracle)?;
                    Ok(TrainingSample {
                        input: input.clone(),
                        label,
                        achieved_qoe,
                    })
                })
                .collect::<ecas_core::Result<_>>()?;
            append_dataset_rows(&samples, &mut partial)?;
            partial.sync_data()?;
            labeled += samples.len();
            info!("labeled {labeled}/{total} prefixes");
            for s in samples {
                fresh.insert((s.input.trace_id.clone(), s.input.upto_second), s);
            }
        }
    }

    let mut all = Vec::with_capacity(total);
    let mut done = done;
    for t in &traces {
        for upto in MIN_INPUT_SECONDS..=t.len() {
            let key = (t.id.clone(), upto);
            let s = fresh
                .remove(&key)
                .or_else(|| done.remove(&key))
                .with_context(|| format!("prefix {upto} of `{}` missing", t.id))?;
            all.push(s);
        }
    }
    let table = PredictionTable::from_samples(&all);
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in &all {
        *counts.entry(s.label.to_string()).or_default() += 1;
    }
    let mut label_counts: Vec<(String, usize)> = counts.into_iter().collect();
    label_counts.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    shuffle_samples(&mut all, plan.seed);
    write_atomic(&plan.out_dir.join(DATASET_FILE), |w| Ok(write_dataset(&all, w)?))?;
    write_atomic(&plan.out_dir.join(ORACLE_TABLE_FILE), |w| Ok(table.write(w)?))?;
    write_atomic(&plan.out_dir.join(LABEL_COUNTS_FILE), |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["params", "count", "share"])?;
        for (p, n) in &label_counts {
            let share = *n as f64 / all.len() as f64;
            c.write_record([p.clone(), n.to_string(), share.to_string()])?;
        }
        c.flush()?;
        Ok(())
    })?;
    drop(partial);
    fs::remove_file(&partial_path)?;

    Ok(OracleSummary {
        traces: traces.len(),
        samples: all.len(),
        resumed,
        label_counts,
    })
}

/// Loads the checkpoint, dropping a torn last line, and leaves the file
/// holding the header plus every complete row.
fn load_checkpoint(path: &Path) -> Result<BTreeMap<(String, usize), TrainingSample>> {
    let mut text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    if let Some(end) = text.rfind('\n') {
        text.truncate(end + 1);
    } else {
        text.clear();
    }
    if text.is_empty() {
        text = DATASET_HEADER.join(",") + "\n";
    }
    let samples = read_dataset(text.as_bytes()).with_context(|| format!("reading checkpoint {}", path.display()))?;
    fs::write(path, &text)?;
    Ok(samples
        .into_iter()
        .map(|s| ((s.input.trace_id.clone(), s.input.upto_second), s))
        .collect())
}

fn write_atomic(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp)?);
    f(&mut w)?;
    w.flush()?;
    drop(w);
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Recomputes metrics from an event log file.
pub fn metrics_from_log(path: &Path, weights: &QoeWeights) -> Result<Vec<SessionMetrics>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let log = read_log(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
    Ok(compute_metrics(&log, weights)?)
}

/// Writes one P.1203 input file per client of the log into `dir`.
pub fn export_log_p1203(path: &Path, dir: &Path) -> Result<usize> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let log = read_log(BufReader::new(file))?;
    fs::create_dir_all(dir)?;
    let records = session_records(&log)?;
    for rec in &records {
        export_p1203(rec, dir.join(format!("client{}.json", rec.client_id)))?;
    }
    Ok(records.len())
}
