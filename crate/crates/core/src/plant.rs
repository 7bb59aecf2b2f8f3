//! Ground-truth delayed plant.
//!
//! The reference sensor samples the true velocity `u(t)` on its own clock.
//! The delayed sensor reports `x(t_k + τ) + v_k` stamped with the nominal
//! time `t_k = k / meas_rate`; the delay is only visible in the value.
//! This module owns no randomness: noise draws are passed in by the caller.

use serde::{Deserialize, Serialize};

use crate::trajectory::SinusoidSum;
use crate::{Error, Result};

/// Anything with a well-defined true position at every instant.
pub trait TruePath {
    fn position(&self, t: f64) -> f64;
}

impl TruePath for SinusoidSum {
    fn position(&self, t: f64) -> f64 {
        SinusoidSum::position(self, t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    /// Signed delay in seconds. Negative: the output lags the state.
    pub delay: f64,
    pub meas_noise_std: f64,
    pub meas_rate: f64,
    pub control_rate: f64,
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.delay.is_finite() {
            return Err(Error::Config("delay must be finite".into()));
        }
        if !(self.meas_noise_std >= 0.0 && self.meas_noise_std.is_finite()) {
            return Err(Error::Config("meas_noise_std must be >= 0".into()));
        }
        if !(self.meas_rate > 0.0 && self.control_rate > 0.0) {
            return Err(Error::Config("rates must be positive".into()));
        }
        if self.control_rate < self.meas_rate {
            return Err(Error::Config(
                "control_rate must be at least meas_rate".into(),
            ));
        }
        Ok(())
    }

    /// Nominal (reference-clock) timestamp of measurement `k`.
    pub fn nominal_time(&self, k: usize) -> f64 {
        k as f64 / self.meas_rate
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub k: usize,
    /// Nominal time `k / meas_rate`.
    pub t: f64,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSample {
    pub t: f64,
    pub u: f64,
}

/// Reference-sensor samples at `i / control_rate` for `i = 0..=⌊horizon · rate⌋`.
pub fn control_stream(traj: &SinusoidSum, control_rate: f64, horizon: f64) -> Vec<ControlSample> {
    control_stream_span(traj, control_rate, 0.0, horizon)
}

/// Reference-sensor samples on the rate grid covering `[start, end]`,
/// including negative sample indices when `start < 0`.
pub fn control_stream_span(
    traj: &SinusoidSum,
    control_rate: f64,
    start: f64,
    end: f64,
) -> Vec<ControlSample> {
    // Snap to the grid with a small slack so that e.g. 10.0 * 100.0 lands on 1000.
    let first = (start * control_rate - 1e-9).ceil() as i64;
    let last = (end * control_rate + 1e-9).floor() as i64;
    (first..=last)
        .map(|i| {
            let t = i as f64 / control_rate;
            ControlSample {
                t,
                u: traj.velocity(t),
            }
        })
        .collect()
}

/// `y_k = x(t_k + τ) + noise_draw`.
pub fn measure<P: TruePath + ?Sized>(
    path: &P,
    cfg: &PlantConfig,
    k: usize,
    noise_draw: f64,
) -> MeasurementRecord {
    let t = cfg.nominal_time(k);
    MeasurementRecord {
        k,
        t,
        y: path.position(t + cfg.delay) + noise_draw,
    }
}

/// Piecewise-linear random walk through Brownian knots, pinned to zero at
/// `t = 0` and held constant outside the knot range.
///
/// Used to give the true trajectory the same white-noise velocity
/// perturbation that the filter assumes. At the knot times the increments
/// are exactly Gaussian with variance `psd · Δt`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomWalk {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl RandomWalk {
    /// `knot_times` may be in any order and may include negative times.
    /// `standard_normals` must yield at least one draw per distinct nonzero knot.
    pub fn brownian(
        knot_times: &[f64],
        psd: f64,
        standard_normals: &mut dyn FnMut() -> f64,
    ) -> RandomWalk {
        let mut times: Vec<f64> = knot_times.iter().copied().chain([0.0]).collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let origin = times.partition_point(|&t| t < 0.0);
        let mut values = vec![0.0; times.len()];
        for i in origin + 1..times.len() {
            let dt = times[i] - times[i - 1];
            values[i] = values[i - 1] + (psd * dt).sqrt() * standard_normals();
        }
        for i in (0..origin).rev() {
            let dt = times[i + 1] - times[i];
            values[i] = values[i + 1] + (psd * dt).sqrt() * standard_normals();
        }
        RandomWalk { times, values }
    }

    pub fn value(&self, t: f64) -> f64 {
        let n = self.times.len();
        let i = self.times.partition_point(|&s| s <= t);
        if i == 0 {
            return self.values[0];
        }
        if i == n {
            return self.values[n - 1];
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }
}

/// The true position: an analytic trajectory plus an optional random walk.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthPath {
    pub trajectory: SinusoidSum,
    pub walk: Option<RandomWalk>,
}

impl TruePath for TruthPath {
    fn position(&self, t: f64) -> f64 {
        let walk = self.walk.as_ref().map_or(0.0, |w| w.value(t));
        self.trajectory.position(t) + walk
    }
}
