//! Seeded Monte Carlo experiments.
//!
//! Every trial draws from its own ChaCha8 stream seeded by
//! [`derive_trial_seed`], so a trial depends only on `(config, index)` and a
//! batch is identical whatever the worker count or execution order.
//!
//! Per-trial draw order: true delay (sampled mode only), initial position
//! offset, one measurement noise draw per step, then the random-walk knots
//! when `truth_process_noise` is on.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consistency::{self, BatchStats, StepRecord, TrialTrace};
use crate::filter::{
    AugmentedEkf, ClockPolicy, CovarianceForm, FilterState, KnownDelayKf, NoiseModel, ScalarState,
};
use crate::plant::{self, control_stream_span, PlantConfig, RandomWalk, TruePath, TruthPath};
use crate::trajectory::{Preset, TrajectorySpec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayMode {
    /// Zero-mean Gaussian with the given standard deviation (s), unclamped.
    Sampled { std: f64 },
    /// Same delay (s) in every trial.
    Fixed { value: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// The `[x, τ]` EKF.
    #[default]
    Augmented,
    /// Scalar KF given the true delay.
    KnownDelay,
}

/// Which true position a filter estimate is compared against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorReference {
    /// `x(t_k + τ̂_k)`, the instant the filter believes its estimate holds.
    #[default]
    FilterTime,
    /// `x(t_k)`.
    Nominal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub trajectory: TrajectorySpec,
    pub filter: FilterKind,
    pub n_trials: usize,
    pub horizon_steps: usize,
    pub meas_rate: f64,
    pub control_rate: f64,
    /// Plant measurement noise standard deviation, m.
    pub meas_noise_std: f64,
    /// Measurement noise the filter assumes; defaults to `meas_noise_std`.
    pub filter_meas_noise_std: Option<f64>,
    /// Process-noise PSD on position, m²/s.
    pub qx: f64,
    pub p0: [[f64; 2]; 2],
    pub x0_hat: f64,
    pub tau0_hat: f64,
    pub delay: DelayMode,
    pub master_seed: u64,
    /// Position error magnitude (m) treated as divergence.
    pub divergence_cap: f64,
    pub error_reference: ErrorReference,
    /// Perturb the true trajectory with a random walk of PSD `qx`, matching
    /// the filter's process model.
    pub truth_process_noise: bool,
    pub covariance_form: CovarianceForm,
    pub clock: ClockPolicy,
    /// Seconds of reference-sensor samples kept before 0 and after the horizon.
    pub control_margin: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            trajectory: TrajectorySpec::Preset(Preset::Traj1),
            filter: FilterKind::Augmented,
            n_trials: 1000,
            horizon_steps: 100,
            meas_rate: 10.0,
            control_rate: 100.0,
            meas_noise_std: 0.25,
            filter_meas_noise_std: None,
            qx: 1.0,
            p0: [[0.01, 0.0], [0.0, 0.25]],
            x0_hat: 0.0,
            tau0_hat: 0.0,
            delay: DelayMode::Sampled { std: 0.05 },
            master_seed: 20_210_901,
            divergence_cap: 1e6,
            error_reference: ErrorReference::FilterTime,
            truth_process_noise: false,
            covariance_form: CovarianceForm::Simple,
            clock: ClockPolicy::Integrate,
            control_margin: 5.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_trials < 1 {
            return bad("n_trials must be at least 1");
        }
        if self.horizon_steps < 1 {
            return bad("horizon_steps must be at least 1");
        }
        self.trajectory.resolve()?.validate_for_experiment()?;
        self.plant(0.0).validate()?;
        self.noise().validate()?;
        let p = self.p0_matrix();
        if p.iter().any(|v| !v.is_finite())
            || p[(0, 1)] != p[(1, 0)]
            || p[(0, 0)] < 0.0
            || p[(1, 1)] < 0.0
            || p[(0, 0)] * p[(1, 1)] < p[(0, 1)] * p[(0, 1)]
        {
            return bad("p0 must be a symmetric positive semi-definite matrix");
        }
        if !(self.x0_hat.is_finite() && self.tau0_hat.is_finite()) {
            return bad("x0_hat and tau0_hat must be finite");
        }
        match self.delay {
            DelayMode::Sampled { std } if !(std > 0.0 && std.is_finite()) => {
                return bad("sampled delay std must be positive")
            }
            DelayMode::Fixed { value } if !value.is_finite() => {
                return bad("fixed delay must be finite")
            }
            _ => {}
        }
        if !(self.divergence_cap > 0.0) {
            return bad("divergence_cap must be positive");
        }
        if !(self.control_margin >= 0.0 && self.control_margin.is_finite()) {
            return bad("control_margin must be >= 0");
        }
        Ok(())
    }

    /// Parse a JSON config, applying defaults for absent fields.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Override one field by dotted path, e.g. `delay.value=-0.05` or
    /// `trajectory=traj2`. The value is parsed as JSON, falling back to a
    /// plain string.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let mut root = serde_json::to_value(self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed: serde_json::Value = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        let mut slot = &mut root;
        for part in key.split('.') {
            let obj = slot
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("cannot override `{key}`")))?;
            if !obj.contains_key(part) && !key.starts_with("delay.") {
                return Err(Error::Config(format!("unknown config field `{key}`")));
            }
            slot = obj.entry(part.to_string()).or_insert(serde_json::Value::Null);
        }
        *slot = parsed;
        let cfg: ExperimentConfig =
            serde_json::from_value(root).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn plant(&self, delay: f64) -> PlantConfig {
        PlantConfig {
            delay,
            meas_noise_std: self.meas_noise_std,
            meas_rate: self.meas_rate,
            control_rate: self.control_rate,
        }
    }

    pub fn noise(&self) -> NoiseModel {
        let std = self.filter_meas_noise_std.unwrap_or(self.meas_noise_std);
        NoiseModel {
            qx: self.qx,
            r: std * std,
        }
    }

    pub fn p0_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.p0[0][0], self.p0[0][1], self.p0[1][0], self.p0[1][1])
    }

    pub fn horizon(&self) -> f64 {
        self.horizon_steps as f64 / self.meas_rate
    }
}

const SEED_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 output number `trial_index + 1` of the stream started at
/// `master_seed`: `mix(master + (i + 1) · γ)` with the golden-ratio `γ`.
///
/// For a fixed master seed the map is a bijection on indices (γ is odd and
/// the finaliser is invertible), so distinct trials never share a seed.
pub fn derive_trial_seed(master_seed: u64, trial_index: u64) -> u64 {
    splitmix64_finalize(
        master_seed.wrapping_add(trial_index.wrapping_add(1).wrapping_mul(SEED_GAMMA)),
    )
}

pub fn trial_rng(master_seed: u64, trial_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_trial_seed(master_seed, trial_index as u64))
}

fn record_failure(trace: &mut TrialTrace, err: Error) {
    trace.diverged = true;
    trace.failure = Some(err.to_string());
}

/// Run one trial. Never fails: numerical trouble is recorded in the trace.
pub fn run_trial(cfg: &ExperimentConfig, trial_index: usize) -> TrialTrace {
    let mut rng = trial_rng(cfg.master_seed, trial_index);
    let tau_true = match cfg.delay {
        DelayMode::Sampled { std } => std * rng.sample::<f64, _>(StandardNormal),
        DelayMode::Fixed { value } => value,
    };
    let x0_true = cfg.x0_hat + cfg.p0[0][0].max(0.0).sqrt() * rng.sample::<f64, _>(StandardNormal);
    let meas_noise =
        Normal::new(0.0, cfg.meas_noise_std).expect("validated measurement noise std");
    let noise_draws: Vec<f64> = (0..cfg.horizon_steps)
        .map(|_| meas_noise.sample(&mut rng))
        .collect();

    let plant = cfg.plant(tau_true);
    let trajectory = cfg
        .trajectory
        .resolve()
        .expect("validated trajectory")
        .anchored_at(0.0, x0_true);
    let walk = cfg.truth_process_noise.then(|| {
        let knots: Vec<f64> = (1..=cfg.horizon_steps)
            .map(|k| plant.nominal_time(k) + tau_true)
            .collect();
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        RandomWalk::brownian(&knots, cfg.qx, &mut normal)
    });
    let controls = control_stream_span(
        &trajectory,
        cfg.control_rate,
        -cfg.control_margin,
        cfg.horizon() + cfg.control_margin,
    );
    let truth = TruthPath { trajectory, walk };

    let dof = match cfg.filter {
        FilterKind::Augmented => 2,
        FilterKind::KnownDelay => 1,
    };
    let mut trace = TrialTrace {
        trial: trial_index,
        dof,
        tau_true,
        steps: Vec::with_capacity(cfg.horizon_steps),
        diverged: false,
        failure: None,
    };

    let errors_at = |filter_time: f64, t_nominal: f64, x_hat: f64| {
        let at_filter = truth.position(filter_time) - x_hat;
        let at_nominal = truth.position(t_nominal) - x_hat;
        match cfg.error_reference {
            ErrorReference::FilterTime => (at_filter, at_nominal),
            ErrorReference::Nominal => (at_nominal, at_filter),
        }
    };

    match cfg.filter {
        FilterKind::Augmented => {
            let mut ekf = AugmentedEkf::new(cfg.noise());
            ekf.covariance_form = cfg.covariance_form;
            ekf.clock = cfg.clock;
            let mut state = FilterState::new(cfg.x0_hat, cfg.tau0_hat, cfg.p0_matrix(), 0.0);
            for (i, &draw) in noise_draws.iter().enumerate() {
                let meas = plant::measure(&truth, &plant, i + 1, draw);
                let (next, report) = match ekf.step(&state, &meas, &controls) {
                    Ok(r) => r,
                    Err(e) => {
                        record_failure(&mut trace, e);
                        break;
                    }
                };
                state = next;
                let (pos_error, pos_error_alt) = errors_at(state.filter_time, meas.t, state.x_hat);
                let delay_error = tau_true - state.tau_hat;
                let stats = consistency::nis(report.innovation, report.innovation_variance)
                    .and_then(|nis| {
                        consistency::nees(&Vector2::new(pos_error, delay_error), &state.p)
                            .map(|nees| (nis, nees))
                    });
                let (nis, nees) = match stats {
                    Ok(v) => v,
                    Err(e) => {
                        record_failure(&mut trace, e);
                        break;
                    }
                };
                trace.steps.push(StepRecord {
                    k: meas.k,
                    t: meas.t,
                    x_hat: state.x_hat,
                    tau_hat: state.tau_hat,
                    p00: state.p[(0, 0)],
                    p01: state.p[(0, 1)],
                    p11: state.p[(1, 1)],
                    innovation: report.innovation,
                    innovation_variance: report.innovation_variance,
                    pos_error,
                    pos_error_alt,
                    delay_error,
                    nis,
                    nees,
                    backward_time: report.backward_time,
                });
                if !state.covariance_is_valid() {
                    record_failure(
                        &mut trace,
                        Error::Numerical(format!("invalid covariance at step {}", meas.k)),
                    );
                    break;
                }
                if pos_error.abs() > cfg.divergence_cap {
                    record_failure(
                        &mut trace,
                        Error::Divergence(format!("position error {pos_error} beyond cap")),
                    );
                    break;
                }
            }
        }
        FilterKind::KnownDelay => {
            let kf = KnownDelayKf {
                noise: cfg.noise(),
                delay: tau_true,
            };
            let mut state = ScalarState {
                x_hat: cfg.x0_hat,
                p: cfg.p0[0][0],
                time: 0.0,
            };
            for (i, &draw) in noise_draws.iter().enumerate() {
                let meas = plant::measure(&truth, &plant, i + 1, draw);
                let (next, report) = match kf.step(&state, &meas, &controls) {
                    Ok(r) => r,
                    Err(e) => {
                        record_failure(&mut trace, e);
                        break;
                    }
                };
                state = next;
                let (pos_error, pos_error_alt) = errors_at(state.time, meas.t, state.x_hat);
                let stats = consistency::nis(report.innovation, report.innovation_variance)
                    .and_then(|nis| {
                        consistency::nees_scalar(pos_error, state.p).map(|nees| (nis, nees))
                    });
                let (nis, nees) = match stats {
                    Ok(v) => v,
                    Err(e) => {
                        record_failure(&mut trace, e);
                        break;
                    }
                };
                trace.steps.push(StepRecord {
                    k: meas.k,
                    t: meas.t,
                    x_hat: state.x_hat,
                    tau_hat: tau_true,
                    p00: state.p,
                    p01: 0.0,
                    p11: 0.0,
                    innovation: report.innovation,
                    innovation_variance: report.innovation_variance,
                    pos_error,
                    pos_error_alt,
                    delay_error: 0.0,
                    nis,
                    nees,
                    backward_time: false,
                });
                if pos_error.abs() > cfg.divergence_cap {
                    record_failure(
                        &mut trace,
                        Error::Divergence(format!("position error {pos_error} beyond cap")),
                    );
                    break;
                }
            }
        }
    }
    trace
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub tau_true: f64,
    pub final_tau_hat: f64,
    pub diverged: bool,
    pub backward_time_count: usize,
    pub failure: Option<String>,
}

impl From<&TrialTrace> for TrialSummary {
    fn from(t: &TrialTrace) -> Self {
        TrialSummary {
            trial: t.trial,
            tau_true: t.tau_true,
            final_tau_hat: t.steps.last().map_or(f64::NAN, |s| s.tau_hat),
            diverged: t.diverged,
            backward_time_count: t.backward_time_count(),
            failure: t.failure.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    pub config: ExperimentConfig,
    pub trials: Vec<TrialSummary>,
    pub stats: BatchStats,
    pub traces: Vec<TrialTrace>,
}

impl BatchResult {
    pub fn from_traces(config: ExperimentConfig, mut traces: Vec<TrialTrace>) -> Result<Self> {
        traces.sort_by_key(|t| t.trial);
        let stats = consistency::batch_stats(&traces)?;
        Ok(BatchResult {
            trials: traces.iter().map(TrialSummary::from).collect(),
            config,
            stats,
            traces,
        })
    }

    pub fn backward_time_events(&self) -> usize {
        self.trials.iter().map(|t| t.backward_time_count).sum()
    }

    /// Failure messages grouped by kind, for diagnostics.
    pub fn failure_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for t in self.trials.iter().filter_map(|t| t.failure.as_ref()) {
            let kind = t.split(':').next().unwrap_or(t).to_string();
            *out.entry(kind).or_insert(0) += 1;
        }
        out
    }
}

/// Run all trials on the global rayon pool.
pub fn run_batch(cfg: &ExperimentConfig) -> Result<BatchResult> {
    cfg.validate()?;
    let traces: Vec<TrialTrace> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|i| run_trial(cfg, i))
        .collect();
    BatchResult::from_traces(cfg.clone(), traces)
}

/// Run all trials on a dedicated pool of `threads` workers.
pub fn run_batch_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<BatchResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    pool.install(|| run_batch(cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small(trials: usize) -> ExperimentConfig {
        ExperimentConfig {
            n_trials: trials,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn trial_seeds_are_reproducible_and_distinct() {
        assert_eq!(derive_trial_seed(7, 3), derive_trial_seed(7, 3));
        let seeds: HashSet<u64> = (0..1_000_000).map(|i| derive_trial_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1_000_000);
        assert_ne!(derive_trial_seed(1, 0), derive_trial_seed(2, 0));
    }

    #[test]
    fn trial_stream_is_roughly_uniform() {
        let mut rng = trial_rng(99, 5);
        let n = 1_000_000;
        let mean = (0..n).map(|_| rng.random::<f64>()).sum::<f64>() / n as f64;
        assert!((0.498..=0.502).contains(&mean), "mean {mean}");
    }

    #[test]
    fn fixed_zero_delay_noiseless_trial_converges() {
        // Delay fixed at zero and (numerically) known, noiseless plant: the
        // observable delay-free case. P11 is tiny rather than zero so NEES
        // stays defined.
        let cfg = ExperimentConfig {
            delay: DelayMode::Fixed { value: 0.0 },
            meas_noise_std: 0.0,
            filter_meas_noise_std: Some(1e-7),
            p0: [[0.01, 0.0], [0.0, 1e-12]],
            n_trials: 1,
            ..ExperimentConfig::default()
        };
        let trace = run_trial(&cfg, 0);
        assert!(!trace.diverged, "{:?}", trace.failure);
        assert!(trace.step(10).unwrap().pos_error.abs() < 1e-9);

        let baseline = ExperimentConfig {
            filter: FilterKind::KnownDelay,
            ..cfg
        };
        let trace = run_trial(&baseline, 0);
        assert!(trace.step(10).unwrap().pos_error.abs() < 1e-9);
    }

    #[test]
    fn trials_replay_identically() {
        let cfg = small(3);
        assert_eq!(run_trial(&cfg, 2), run_trial(&cfg, 2));
        assert_ne!(run_trial(&cfg, 1).tau_true, run_trial(&cfg, 2).tau_true);
    }

    #[test]
    fn sampled_delay_spread() {
        let cfg = small(10_000);
        let taus: Vec<f64> = (0..cfg.n_trials)
            .map(|i| {
                let mut rng = trial_rng(cfg.master_seed, i);
                0.05 * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        // Same draw run_trial makes first.
        assert_eq!(taus[17], run_trial(&small(1), 17).tau_true);
        let mean = taus.iter().sum::<f64>() / taus.len() as f64;
        let std = (taus.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (taus.len() - 1) as f64)
            .sqrt();
        assert!((0.049..=0.051).contains(&std), "std {std}");
    }

    #[test]
    fn single_trial_batch_degenerates_to_trace_values() {
        let cfg = small(1);
        let batch = run_batch(&cfg).unwrap();
        let trace = &batch.traces[0];
        let s = batch.stats.at(50).unwrap();
        let r = trace.step(50).unwrap();
        assert_eq!(s.anees, r.nees);
        assert_eq!(s.rms_position, r.pos_error.abs());
        assert_eq!(s.mean_nis, r.nis);
    }

    #[test]
    fn batch_is_independent_of_trial_order() {
        let cfg = small(64);
        let batch = run_batch(&cfg).unwrap();
        let mut shuffled: Vec<TrialTrace> = batch.traces.iter().rev().cloned().collect();
        shuffled.rotate_left(17);
        let stats = consistency::batch_stats(&shuffled).unwrap();
        for (a, b) in batch.stats.steps.iter().zip(&stats.steps) {
            assert!((a.anees - b.anees).abs() <= 1e-12 * a.anees.abs().max(1.0));
            assert!((a.rms_delay_ms - b.rms_delay_ms).abs() <= 1e-12 * a.rms_delay_ms.max(1.0));
        }
        let threaded = run_batch_with_threads(&cfg, 3).unwrap();
        assert_eq!(threaded, batch);
    }

    #[test]
    fn config_round_trips_and_validates() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
        assert!(ExperimentConfig::from_json(r#"{"n_trials": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"p0": [[0.01, 0.2], [0.2, 0.25]]}"#).is_err());
        assert!(ExperimentConfig::from_json(
            r#"{"trajectory": {"terms": [{"amplitude": 1, "frequency": 0}]}}"#
        )
        .is_err());
    }

    #[test]
    fn overrides_by_dotted_path() {
        let cfg = ExperimentConfig::default();
        let c = cfg.with_override("trajectory", "traj2").unwrap();
        assert_eq!(c.trajectory, TrajectorySpec::Preset(Preset::Traj2));
        let c = cfg
            .with_override("delay", r#"{"mode":"fixed","value":-0.05}"#)
            .unwrap();
        assert_eq!(c.delay, DelayMode::Fixed { value: -0.05 });
        let c = c.with_override("delay.value", "-0.02").unwrap();
        assert_eq!(c.delay, DelayMode::Fixed { value: -0.02 });
        assert!(cfg.with_override("nope", "1").is_err());
        assert!(cfg.with_override("n_trials", "-3").is_err());
    }

    #[test]
    fn known_delay_baseline_runs_scalar_statistics() {
        let cfg = ExperimentConfig {
            filter: FilterKind::KnownDelay,
            truth_process_noise: true,
            ..small(20)
        };
        let batch = run_batch(&cfg).unwrap();
        assert_eq!(batch.stats.dof, 1);
        assert_eq!(batch.stats.n_excluded, 0);
        assert!(batch.traces.iter().all(|t| t.steps.len() == 100));
    }
}
