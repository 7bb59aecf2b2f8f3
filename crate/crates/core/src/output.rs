//! CSV tables and SVG figures for experiment results, and the readers that
//! let stored batches be re-summarised without re-running any trial.
//!
//! Every float is written as `{:.16e}` (17 significant digits), which
//! round-trips `f64` exactly and formats identically on every platform.

use std::fs;
use std::path::{Path, PathBuf};

use crate::consistency::{self, BatchStats, StepRecord, TrialTrace};
use crate::identifiability::{IndistinguishablePair, OutputSample};
use crate::montecarlo::{BatchResult, TrialSummary};
use crate::plot::{self, Panel, Series};
use crate::{Error, Result};

/// Steps reported in the summary table.
pub const SUMMARY_STEPS: [usize; 5] = [20, 40, 60, 80, 100];

pub const BATCH_SUMMARY: &str = "batch_summary.csv";
pub const PER_STEP_STATS: &str = "per_step_stats.csv";
pub const PER_TRIAL: &str = "per_trial.csv";
pub const TRIAL_STEPS: &str = "trial_steps.csv";
pub const BATCH_CONFIG: &str = "config.json";
pub const BATCH_PLOT: &str = "batch.svg";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_bool(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn to_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub const TRACE_COLUMNS: [&str; 15] = [
    "k",
    "t",
    "x_hat",
    "tau_hat",
    "p00",
    "p01",
    "p11",
    "innovation",
    "innovation_variance",
    "nis",
    "nees",
    "backward_time",
    "pos_error",
    "pos_error_alt",
    "delay_error",
];

fn step_fields(s: &StepRecord) -> Vec<String> {
    vec![
        s.k.to_string(),
        fmt_f64(s.t),
        fmt_f64(s.x_hat),
        fmt_f64(s.tau_hat),
        fmt_f64(s.p00),
        fmt_f64(s.p01),
        fmt_f64(s.p11),
        fmt_f64(s.innovation),
        fmt_f64(s.innovation_variance),
        fmt_f64(s.nis),
        fmt_f64(s.nees),
        fmt_bool(s.backward_time).to_string(),
        fmt_f64(s.pos_error),
        fmt_f64(s.pos_error_alt),
        fmt_f64(s.delay_error),
    ]
}

/// Per-step trace of a single trial.
pub fn trace_csv(trace: &TrialTrace) -> String {
    to_csv(&TRACE_COLUMNS, trace.steps.iter().map(step_fields))
}

/// Every step of every trial, prefixed with the trial index.
pub fn trial_steps_csv(traces: &[TrialTrace]) -> String {
    let header: Vec<&str> = std::iter::once("trial").chain(TRACE_COLUMNS).collect();
    to_csv(
        &header,
        traces.iter().flat_map(|t| {
            t.steps.iter().map(move |s| {
                let mut row = vec![t.trial.to_string()];
                row.extend(step_fields(s));
                row
            })
        }),
    )
}

pub fn per_trial_csv(dof: usize, trials: &[TrialSummary]) -> String {
    to_csv(
        &[
            "trial",
            "dof",
            "tau_true",
            "final_tau_hat",
            "diverged",
            "backward_time_count",
            "failure",
        ],
        trials.iter().map(|t| {
            vec![
                t.trial.to_string(),
                dof.to_string(),
                fmt_f64(t.tau_true),
                fmt_f64(t.final_tau_hat),
                fmt_bool(t.diverged).to_string(),
                t.backward_time_count.to_string(),
                t.failure.clone().unwrap_or_default(),
            ]
        }),
    )
}

pub fn per_step_stats_csv(stats: &BatchStats) -> String {
    to_csv(
        &[
            "k",
            "rms_position_m",
            "rms_position_alt_m",
            "rms_delay_ms",
            "anees",
            "anees_lo",
            "anees_hi",
            "mean_nis",
            "nis_exceed_frac",
            "containment_position_3sigma",
            "containment_delay_3sigma",
        ],
        stats.steps.iter().map(|s| {
            vec![
                s.k.to_string(),
                fmt_f64(s.rms_position),
                fmt_f64(s.rms_position_alt),
                fmt_f64(s.rms_delay_ms),
                fmt_f64(s.anees),
                fmt_f64(s.anees_lo),
                fmt_f64(s.anees_hi),
                fmt_f64(s.mean_nis),
                fmt_f64(s.nis_exceed_frac),
                fmt_f64(s.containment_position),
                fmt_f64(s.containment_delay),
            ]
        }),
    )
}

/// Metric rows by summary-step columns. Steps beyond the horizon are `NaN`.
pub fn batch_summary_csv(stats: &BatchStats) -> String {
    type Getter = fn(&consistency::StepStats) -> f64;
    let metrics: [(&str, Getter); 10] = [
        ("rms_position_m", |s| s.rms_position),
        ("rms_position_alt_m", |s| s.rms_position_alt),
        ("rms_delay_ms", |s| s.rms_delay_ms),
        ("anees", |s| s.anees),
        ("anees_lo", |s| s.anees_lo),
        ("anees_hi", |s| s.anees_hi),
        ("mean_nis", |s| s.mean_nis),
        ("nis_exceed_frac", |s| s.nis_exceed_frac),
        ("containment_position_3sigma", |s| s.containment_position),
        ("containment_delay_3sigma", |s| s.containment_delay),
    ];
    let header: Vec<String> = std::iter::once("metric".to_string())
        .chain(SUMMARY_STEPS.iter().map(|k| k.to_string()))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    to_csv(
        &header,
        metrics.iter().map(|(name, get)| {
            std::iter::once(name.to_string())
                .chain(
                    SUMMARY_STEPS
                        .iter()
                        .map(|&k| fmt_f64(stats.at(k).map_or(f64::NAN, get))),
                )
                .collect()
        }),
    )
}

pub fn identifiability_csv(samples: &[OutputSample]) -> String {
    to_csv(
        &["t", "y", "y_prime", "u", "u_prime"],
        samples.iter().map(|s| {
            vec![
                fmt_f64(s.t),
                fmt_f64(s.y),
                fmt_f64(s.y_prime),
                fmt_f64(s.u),
                fmt_f64(s.u_prime),
            ]
        }),
    )
}

fn xy<T>(items: &[T], f: impl Fn(&T) -> (f64, f64)) -> Vec<(f64, f64)> {
    items.iter().map(f).collect()
}

/// Error curves with ±3σ bounds, plus NIS and NEES.
pub fn trace_svg(trace: &TrialTrace) -> String {
    let s = &trace.steps;
    let pos = Panel::new("Position error", "step", "m")
        .with(Series::solid("position error", xy(s, |r| (r.k as f64, r.pos_error))))
        .with(Series::dashed("+3 sigma", xy(s, |r| (r.k as f64, 3.0 * r.p00.max(0.0).sqrt()))))
        .with(Series::dashed("-3 sigma", xy(s, |r| (r.k as f64, -3.0 * r.p00.max(0.0).sqrt()))));
    let delay = Panel::new("Delay error", "step", "ms")
        .with(Series::solid("delay error", xy(s, |r| (r.k as f64, 1e3 * r.delay_error))))
        .with(Series::dashed("+3 sigma", xy(s, |r| (r.k as f64, 3e3 * r.p11.max(0.0).sqrt()))))
        .with(Series::dashed("-3 sigma", xy(s, |r| (r.k as f64, -3e3 * r.p11.max(0.0).sqrt()))));
    let nis = Panel::new("NIS", "step", "").with(Series::solid("NIS", xy(s, |r| (r.k as f64, r.nis))));
    let nees = Panel::new("NEES", "step", "").with(Series::solid("NEES", xy(s, |r| (r.k as f64, r.nees))));
    plot::render(
        &format!("Trial {} (true delay {:.1} ms)", trace.trial, 1e3 * trace.tau_true),
        &[pos, delay, nis, nees],
    )
}

pub fn batch_svg(stats: &BatchStats) -> String {
    let s = &stats.steps;
    let rms = Panel::new("RMS position error", "step", "m")
        .with(Series::solid("rms position", xy(s, |r| (r.k as f64, r.rms_position))));
    let delay = Panel::new("RMS delay error", "step", "ms")
        .with(Series::solid("rms delay", xy(s, |r| (r.k as f64, r.rms_delay_ms))));
    let anees = Panel::new("ANEES", "step", "")
        .with(Series::solid("ANEES", xy(s, |r| (r.k as f64, r.anees))))
        .with(Series::dashed("95% lower", xy(s, |r| (r.k as f64, r.anees_lo))))
        .with(Series::dashed("95% upper", xy(s, |r| (r.k as f64, r.anees_hi))));
    let contain = Panel::new("3 sigma containment", "step", "fraction")
        .with(Series::solid("position", xy(s, |r| (r.k as f64, r.containment_position))))
        .with(Series::solid("delay", xy(s, |r| (r.k as f64, r.containment_delay))));
    plot::render(
        &format!("{} trials ({} excluded)", stats.n_trials, stats.n_excluded),
        &[rms, delay, anees, contain],
    )
}

pub fn identifiability_svg(pair: &IndistinguishablePair, samples: &[OutputSample]) -> String {
    let outputs = Panel::new("Outputs", "t (s)", "y")
        .with(Series::solid(format!("y, tau = {}", pair.tau), xy(samples, |r| (r.t, r.y))))
        .with(Series::dashed(format!("y', tau' = {}", pair.tau_prime), xy(samples, |r| (r.t, r.y_prime))));
    let inputs = Panel::new("Inputs", "t (s)", "u")
        .with(Series::solid("u", xy(samples, |r| (r.t, r.u))))
        .with(Series::dashed("u'", xy(samples, |r| (r.t, r.u_prime))));
    plot::render("Indistinguishable delays", &[outputs, inputs])
}

/// Writes `contents` to `dir/name`, creating `dir` if needed.
pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// The summary files derived from statistics alone.
pub fn write_summaries(dir: &Path, stats: &BatchStats) -> Result<Vec<PathBuf>> {
    Ok(vec![
        write_file(dir, BATCH_SUMMARY, &batch_summary_csv(stats))?,
        write_file(dir, PER_STEP_STATS, &per_step_stats_csv(stats))?,
        write_file(dir, BATCH_PLOT, &batch_svg(stats))?,
    ])
}

/// Everything a batch produces, including the raw per-trial steps that
/// [`read_batch_traces`] needs.
pub fn write_batch(dir: &Path, result: &BatchResult) -> Result<Vec<PathBuf>> {
    let mut paths = write_summaries(dir, &result.stats)?;
    paths.push(write_file(dir, PER_TRIAL, &per_trial_csv(result.stats.dof, &result.trials))?);
    paths.push(write_file(dir, TRIAL_STEPS, &trial_steps_csv(&result.traces))?);
    paths.push(write_file(dir, BATCH_CONFIG, &result.config.to_json())?);
    Ok(paths)
}

struct Table {
    path: PathBuf,
    header: csv::StringRecord,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        if !path.is_file() {
            return Err(Error::io(path, "missing batch file"));
        }
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e))?;
        let header = r.headers().map_err(|e| Error::io(path, e))?.clone();
        let rows = r
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::io(path, e))?;
        Ok(Table {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::io(&self.path, format!("missing column `{name}`")))
    }

    fn parse<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let raw = &self.rows[row][col];
        raw.parse().map_err(|_| {
            Error::io(
                &self.path,
                format!("line {}: cannot parse `{raw}` in column `{}`", row + 2, &self.header[col]),
            )
        })
    }

    fn flag(&self, row: usize, col: usize) -> Result<bool> {
        Ok(self.parse::<u8>(row, col)? != 0)
    }
}

/// Rebuilds trial traces from `per_trial.csv` and `trial_steps.csv`.
pub fn read_batch_traces(dir: &Path) -> Result<Vec<TrialTrace>> {
    if !dir.is_dir() {
        return Err(Error::io(dir, "not a directory"));
    }
    let trials = Table::read(&dir.join(PER_TRIAL))?;
    let steps = Table::read(&dir.join(TRIAL_STEPS))?;
    if trials.rows.is_empty() {
        return Err(Error::io(&trials.path, "no trials recorded"));
    }

    let [c_trial, c_dof, c_tau, c_div, c_fail] =
        ["trial", "dof", "tau_true", "diverged", "failure"].map(|n| trials.column(n));
    let (c_trial, c_dof, c_tau, c_div, c_fail) = (c_trial?, c_dof?, c_tau?, c_div?, c_fail?);
    let mut traces = Vec::with_capacity(trials.rows.len());
    let mut index = std::collections::BTreeMap::new();
    for r in 0..trials.rows.len() {
        let trial: usize = trials.parse(r, c_trial)?;
        let failure = trials.rows[r][c_fail].to_string();
        index.insert(trial, traces.len());
        traces.push(TrialTrace {
            trial,
            dof: trials.parse(r, c_dof)?,
            tau_true: trials.parse(r, c_tau)?,
            steps: Vec::new(),
            diverged: trials.flag(r, c_div)?,
            failure: (!failure.is_empty()).then_some(failure),
        });
    }

    let cols = std::iter::once("trial")
        .chain(TRACE_COLUMNS)
        .map(|n| steps.column(n))
        .collect::<Result<Vec<usize>>>()?;
    for r in 0..steps.rows.len() {
        let f = |i: usize| steps.parse::<f64>(r, cols[i]);
        let trial: usize = steps.parse(r, cols[0])?;
        let slot = *index.get(&trial).ok_or_else(|| {
            Error::io(&steps.path, format!("line {}: unknown trial {trial}", r + 2))
        })?;
        traces[slot].steps.push(StepRecord {
            k: steps.parse(r, cols[1])?,
            t: f(2)?,
            x_hat: f(3)?,
            tau_hat: f(4)?,
            p00: f(5)?,
            p01: f(6)?,
            p11: f(7)?,
            innovation: f(8)?,
            innovation_variance: f(9)?,
            nis: f(10)?,
            nees: f(11)?,
            backward_time: steps.flag(r, cols[12])?,
            pos_error: f(13)?,
            pos_error_alt: f(14)?,
            delay_error: f(15)?,
        });
    }
    for t in &mut traces {
        t.steps.sort_by_key(|s| s.k);
    }
    traces.sort_by_key(|t| t.trial);
    Ok(traces)
}
