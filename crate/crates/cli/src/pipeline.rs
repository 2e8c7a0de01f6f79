//! Rolling-window train/predict/evaluate loop behind `scalegp run`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;

use scalegp::admm::{train, StopStatus};
use scalegp::data::{generate, load_csv, mape_detail, rmse, rolling_windows, TimeSeriesDataset, Window, TIMESTAMP_FORMAT};
use scalegp::fusion::{predict_fused, split_validation};
use scalegp::gp::{default_init, estimate_noise};
use scalegp::{Error, Result};

use crate::config::{DataSource, NoisePolicy, RunConfig};

pub fn load_dataset(cfg: &RunConfig) -> Result<TimeSeriesDataset> {
    match &cfg.source {
        DataSource::Synthetic => generate(&cfg.synth),
        DataSource::Csv(path) => load_csv(path, cfg.impute),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AdmmSummary {
    pub rounds: usize,
    pub status: String,
    pub max_primal: f64,
    pub dual: f64,
    pub eps_pri: f64,
    pub eps_dual: f64,
    pub comm_rounds: usize,
    pub comm_scalars: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct WindowRecord {
    pub index: usize,
    pub train_start: usize,
    pub train_end: usize,
    pub test_start: usize,
    pub test_end: usize,
    pub error: Option<String>,
    pub rmse: Option<f64>,
    pub mape: Option<f64>,
    pub mape_excluded: usize,
    pub hyperparameters: Option<[f64; 7]>,
    pub admm: Option<AdmmSummary>,
    pub experts: usize,
    pub validation_objective: Option<f64>,
    pub uniform_fallback: bool,
    /// Critical-path training time (slowest worker per round plus coordinator).
    pub train_seconds: f64,
    pub train_wall_seconds: f64,
    pub predict_seconds: f64,
}

impl WindowRecord {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// One fused forecast for one test point.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub window: usize,
    /// 1-based horizon step.
    pub step: usize,
    pub index: usize,
    pub timestamp: String,
    pub truth: f64,
    pub mean: f64,
    pub variance: f64,
    pub beta: Vec<f64>,
    pub expert_means: Vec<f64>,
    pub expert_variances: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Aggregate {
    pub windows_ok: usize,
    pub windows_failed: usize,
    pub points: usize,
    pub rmse: Option<f64>,
    pub mape: Option<f64>,
    pub mape_excluded: usize,
    /// Entry `h` pools every window's step `h + 1`.
    pub rmse_by_step: Vec<Option<f64>>,
    pub mape_by_step: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timing {
    pub mean_train_seconds: f64,
    pub mean_train_wall_seconds: f64,
    pub mean_predict_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub version: String,
    pub seed: u64,
    pub config: String,
    pub series_length: usize,
    pub windows: Vec<WindowRecord>,
    pub aggregate: Aggregate,
    pub timing: Timing,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub rows: Vec<PredictionRow>,
    /// ADMM round table per successful window.
    pub traces: Vec<(usize, String)>,
}

fn opt_metric(r: Result<f64>) -> Option<f64> {
    r.ok().filter(|v| v.is_finite())
}

/// Pooled metrics, overall and per horizon step.
pub fn aggregate(rows: &[PredictionRow], windows: &[WindowRecord], horizon: usize) -> Aggregate {
    let pred: Vec<f64> = rows.iter().map(|r| r.mean).collect();
    let truth: Vec<f64> = rows.iter().map(|r| r.truth).collect();
    let overall = mape_detail(&pred, &truth).ok();
    let mut rmse_by_step = vec![];
    let mut mape_by_step = vec![];
    for h in 1..=horizon {
        let (p, t): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.step == h).map(|r| (r.mean, r.truth)).unzip();
        rmse_by_step.push(opt_metric(rmse(&p, &t)));
        mape_by_step.push(opt_metric(mape_detail(&p, &t).map(|m| m.percent)));
    }
    Aggregate {
        windows_ok: windows.iter().filter(|w| w.ok()).count(),
        windows_failed: windows.iter().filter(|w| !w.ok()).count(),
        points: rows.len(),
        rmse: opt_metric(rmse(&pred, &truth)),
        mape: overall.map(|m| m.percent),
        mape_excluded: overall.map_or(0, |m| m.excluded),
        rmse_by_step,
        mape_by_step,
    }
}

struct WindowResult {
    record: WindowRecord,
    rows: Vec<PredictionRow>,
    trace: Option<String>,
}

fn run_window(cfg: &RunConfig, data: &TimeSeriesDataset, times: &[f64], w: &Window) -> Result<WindowResult> {
    let train_values = &data.values[w.train.clone()];
    let level = train_values.iter().sum::<f64>() / train_values.len() as f64;
    let centered: Vec<f64> = train_values.iter().map(|v| v - level).collect();
    let (fit_part, validation) = split_validation(&times[w.train.clone()], &centered, cfg.fusion.validation_points)?;
    let noise = match cfg.noise {
        NoisePolicy::Estimate => estimate_noise(&fit_part.values),
        NoisePolicy::Fixed(v) => v,
    };
    let init = default_init(&fit_part.values, noise);

    let start = Instant::now();
    let trained = train(&fit_part.times, &fit_part.values, &cfg.admm, &cfg.kernel, &init, &cfg.gp)?;
    let train_wall = start.elapsed();
    if trained.status == StopStatus::Capped {
        warn!("window {}: ADMM hit the round cap", w.index);
    }

    let test_times = &times[w.test.clone()];
    let start = Instant::now();
    let fused = predict_fused(
        &trained.hp,
        &trained.shards,
        &validation,
        test_times,
        &cfg.kernel,
        &cfg.gp,
        &cfg.fusion,
    )?;
    let predict_time = start.elapsed();

    let p = &fused.prediction;
    let truth = &data.values[w.test.clone()];
    let pred: Vec<f64> = p.mean.iter().map(|m| m + level).collect();
    let rows = (0..pred.len())
        .map(|h| PredictionRow {
            window: w.index,
            step: h + 1,
            index: w.test.start + h,
            timestamp: data.timestamp(w.test.start + h).format(TIMESTAMP_FORMAT).to_string(),
            truth: truth[h],
            mean: pred[h],
            variance: p.variance[h],
            beta: p.weights[h].as_slice().to_vec(),
            expert_means: (0..p.locals.experts()).map(|i| p.locals.mean(i, h) + level).collect(),
            expert_variances: (0..p.locals.experts()).map(|i| p.locals.variance(i, h)).collect(),
        })
        .collect();
    let mape = mape_detail(&pred, truth).ok();
    let state = &trained.state;
    let last = state.last().expect("at least one round");
    let record = WindowRecord {
        index: w.index,
        train_start: w.train.start,
        train_end: w.train.end,
        test_start: w.test.start,
        test_end: w.test.end,
        error: None,
        rmse: opt_metric(rmse(&pred, truth)),
        mape: mape.map(|m| m.percent),
        mape_excluded: mape.map_or(0, |m| m.excluded),
        hyperparameters: Some(trained.hp.to_array()),
        admm: Some(AdmmSummary {
            rounds: state.round,
            status: format!("{:?}", trained.status),
            max_primal: last.max_primal(),
            dual: last.dual,
            eps_pri: last.eps_pri,
            eps_dual: last.eps_dual,
            comm_rounds: state.comm.rounds,
            comm_scalars: state.comm.scalars,
        }),
        experts: fused.experts.len(),
        validation_objective: fused.objective,
        uniform_fallback: fused.uniform_fallback,
        train_seconds: trained.critical_path().as_secs_f64(),
        train_wall_seconds: train_wall.as_secs_f64(),
        predict_seconds: predict_time.as_secs_f64(),
    };
    Ok(WindowResult {
        record,
        rows,
        trace: Some(state.trace_table()),
    })
}

fn failed_record(w: &Window, e: &Error) -> WindowRecord {
    WindowRecord {
        index: w.index,
        train_start: w.train.start,
        train_end: w.train.end,
        test_start: w.test.start,
        test_end: w.test.end,
        error: Some(e.to_string()),
        rmse: None,
        mape: None,
        mape_excluded: 0,
        hyperparameters: None,
        admm: None,
        experts: 0,
        validation_objective: None,
        uniform_fallback: false,
        train_seconds: 0.0,
        train_wall_seconds: 0.0,
        predict_seconds: 0.0,
    }
}

/// Runs every window in order. Per-window failures are recorded and skipped.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    let data = load_dataset(cfg)?;
    run_on(cfg, &data)
}

pub fn run_on(cfg: &RunConfig, data: &TimeSeriesDataset) -> Result<RunOutput> {
    let plan = &cfg.window;
    let mut windows = rolling_windows(data.len(), plan.train_len, plan.horizon, plan.step)?;
    if windows.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "a series of {} points holds no window of {} + {} points",
            data.len(),
            plan.train_len,
            plan.horizon
        )));
    }
    if plan.repeats > 0 && windows.len() > plan.repeats {
        windows.drain(..windows.len() - plan.repeats);
    }
    let times = data.times();
    let mut records = vec![];
    let mut rows = vec![];
    let mut traces = vec![];
    for w in &windows {
        match run_window(cfg, data, &times, w) {
            Ok(r) => {
                info!("window {}: rmse {:?}", w.index, r.record.rmse);
                records.push(r.record);
                rows.extend(r.rows);
                if let Some(t) = r.trace {
                    traces.push((w.index, t));
                }
            }
            Err(e) => {
                warn!("window {} failed: {e}", w.index);
                records.push(failed_record(w, &e));
            }
        }
    }
    let ok: Vec<&WindowRecord> = records.iter().filter(|r| r.ok()).collect();
    let mean = |f: fn(&WindowRecord) -> f64| {
        if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    let timing = Timing {
        mean_train_seconds: mean(|r| r.train_seconds),
        mean_train_wall_seconds: mean(|r| r.train_wall_seconds),
        mean_predict_seconds: mean(|r| r.predict_seconds),
    };
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: cfg.to_text(),
        series_length: data.len(),
        aggregate: aggregate(&rows, &records, plan.horizon),
        windows: records,
        timing,
    };
    Ok(RunOutput { report, rows, traces })
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub const PREDICTION_HEADER: &str = "window,step,index,timestamp,truth,mean,variance,beta,expert_means,expert_variances";

/// Per-point CSV. Contains no timings, so reruns are byte-identical.
pub fn predictions_csv(rows: &[PredictionRow]) -> String {
    let mut s = String::from(PREDICTION_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.window,
            r.step,
            r.index,
            r.timestamp,
            r.truth,
            r.mean,
            r.variance,
            join(&r.beta),
            join(&r.expert_means),
            join(&r.expert_variances)
        );
    }
    s
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    if s.is_empty() {
        return Ok(vec![]);
    }
    s.split(';').map(|v| v.parse::<f64>().map_err(|e| e.to_string())).collect()
}

/// Reads back what `predictions_csv` wrote.
pub fn parse_predictions(text: &str) -> std::result::Result<Vec<PredictionRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(PREDICTION_HEADER) {
        return Err("unexpected header".into());
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(format!("line {}: expected 10 fields", i + 2));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
            let int = |s: &str| s.parse::<usize>().map_err(|e| format!("line {}: {e}", i + 2));
            Ok(PredictionRow {
                window: int(f[0])?,
                step: int(f[1])?,
                index: int(f[2])?,
                timestamp: f[3].to_string(),
                truth: num(f[4])?,
                mean: num(f[5])?,
                variance: num(f[6])?,
                beta: parse_list(f[7])?,
                expert_means: parse_list(f[8])?,
                expert_variances: parse_list(f[9])?,
            })
        })
        .collect()
}

pub fn summary_text(report: &RunReport) -> String {
    let a = &report.aggregate;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.6}"));
    let mut s = String::new();
    let _ = writeln!(s, "windows: {} ok, {} failed", a.windows_ok, a.windows_failed);
    let _ = writeln!(s, "points:  {}", a.points);
    let _ = writeln!(s, "rmse:    {}", fmt(a.rmse));
    let _ = writeln!(s, "mape:    {} %", fmt(a.mape));
    for (h, (r, m)) in a.rmse_by_step.iter().zip(&a.mape_by_step).enumerate() {
        let _ = writeln!(s, "  step {:>2}: rmse {} mape {} %", h + 1, fmt(*r), fmt(*m));
    }
    let t = &report.timing;
    let _ = writeln!(
        s,
        "mean train {:.4} s (critical path), {:.4} s wall; mean predict {:.4} s",
        t.mean_train_seconds, t.mean_train_wall_seconds, t.mean_predict_seconds
    );
    s
}

/// Writes `report.json`, `predictions.csv`, `admm_trace.tsv` and `summary.txt`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(&out.report).map_err(std::io::Error::other)?;
    std::fs::write(dir.join("report.json"), json)?;
    std::fs::write(dir.join("predictions.csv"), predictions_csv(&out.rows))?;
    let mut trace = String::new();
    for (w, t) in &out.traces {
        let _ = writeln!(trace, "# window {w}");
        trace.push_str(t);
    }
    std::fs::write(dir.join("admm_trace.tsv"), trace)?;
    std::fs::write(dir.join("summary.txt"), summary_text(&out.report))?;
    Ok(())
}
