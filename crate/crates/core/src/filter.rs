//! Hybrid continuous-discrete EKF over the augmented state `[x, τ]`.
//!
//! Between measurements the mean is driven by zero-order-held reference
//! sensor samples (`ẋ = u`, `τ̇ = 0`) and the covariance grows as
//! `Ṗ = diag(Qx, 0)`. Measurement `k` is processed at the filter-clock
//! instant `t_k + τ̂_{k−1}` with the Jacobian `H = [1, u(t_k + τ̂_{k−1})]`.
//!
//! Every update changes `τ̂`, so the instant the next measurement will be
//! processed at moves too. The mean is always integrated from the instant it
//! was last propagated to, which makes the integration interval
//! `Δt + Δτ̂` and occasionally negative. Negative intervals integrate the mean
//! backwards with the same held controls while still adding process noise in
//! proportion to `|Δt|`, and the event is flagged in the [`UpdateReport`].

use nalgebra::{Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};

use crate::plant::{ControlSample, MeasurementRecord};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Process-noise power spectral density on position, m²/s.
    pub qx: f64,
    /// Measurement variance, m².
    pub r: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.qx >= 0.0 && self.qx.is_finite()) {
            return Err(Error::Config("Qx must be finite and >= 0".into()));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Config("R must be finite and > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceForm {
    /// `P⁺ = (I − K H) P⁻`, then symmetrised.
    #[default]
    Simple,
    /// `P⁺ = (I − K H) P⁻ (I − K H)ᵀ + K R Kᵀ`.
    Joseph,
}

/// What the filter does with its clock after an update moves `τ̂`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockPolicy {
    /// Keep integrating the mean from `t_k + τ̂_{k−1}`, where it was last
    /// propagated to. The next interval is `Δt + Δτ̂` and may be negative.
    #[default]
    Integrate,
    /// Re-stamp the mean as holding at `t_k + τ̂_k` without moving it, so the
    /// next interval is always `Δt`.
    Relabel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterState {
    pub x_hat: f64,
    pub tau_hat: f64,
    pub p: Matrix2<f64>,
    /// Time the filter attributes to its estimate: `t_k + τ̂_k` after update `k`.
    pub filter_time: f64,
    /// Instant the mean is integrated from on the next propagation.
    pub mean_time: f64,
    /// Instant the last measurement was processed at, `t_k + τ̂_{k−1}`.
    pub update_time: f64,
}

impl FilterState {
    pub fn new(x_hat: f64, tau_hat: f64, p: Matrix2<f64>, t0: f64) -> Self {
        FilterState {
            x_hat,
            tau_hat,
            p,
            filter_time: t0,
            mean_time: t0,
            update_time: t0,
        }
    }

    pub fn mean(&self) -> Vector2<f64> {
        Vector2::new(self.x_hat, self.tau_hat)
    }

    pub fn is_finite(&self) -> bool {
        self.x_hat.is_finite()
            && self.tau_hat.is_finite()
            && self.p.iter().all(|v| v.is_finite())
            && self.filter_time.is_finite()
            && self.mean_time.is_finite()
    }

    /// Symmetric to 1e-12 relative and PSD to `−1e-12 · tr(P)`.
    pub fn covariance_is_valid(&self) -> bool {
        covariance_is_valid(&self.p)
    }
}

pub fn covariance_is_valid(p: &Matrix2<f64>) -> bool {
    let scale = p.abs().max().max(f64::MIN_POSITIVE);
    if (p[(0, 1)] - p[(1, 0)]).abs() > 1e-12 * scale {
        return false;
    }
    let trace = p[(0, 0)] + p[(1, 1)];
    min_eigenvalue(p) >= -1e-12 * trace.abs()
}

fn min_eigenvalue(p: &Matrix2<f64>) -> f64 {
    let half_tr = 0.5 * (p[(0, 0)] + p[(1, 1)]);
    let half_diff = 0.5 * (p[(0, 0)] - p[(1, 1)]);
    let off = 0.5 * (p[(0, 1)] + p[(1, 0)]);
    half_tr - half_diff.hypot(off)
}

fn symmetrize(p: &Matrix2<f64>) -> Matrix2<f64> {
    (p + p.transpose()) * 0.5
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateReport {
    /// `e_y = y_k − x̂⁻`.
    pub innovation: f64,
    pub innovation_variance: f64,
    pub gain: Vector2<f64>,
    /// `τ̂_k − τ̂_{k−1}`.
    pub delta_tau: f64,
    /// This measurement is processed at an earlier filter-clock instant than
    /// the previous one (`Δt + Δτ̂ < 0`). Under [`ClockPolicy::Integrate`]
    /// the preceding propagation ran backwards.
    pub backward_time: bool,
}

/// Sample index of the held control active at `t`: the latest sample not
/// after `t`, or the first sample when `t` precedes them all.
fn held_index(controls: &[ControlSample], t: f64) -> usize {
    controls.partition_point(|s| s.t <= t).saturating_sub(1)
}

/// Held control value at `t` (nearest sample not after `t`).
pub fn control_at(controls: &[ControlSample], t: f64) -> Result<f64> {
    if controls.is_empty() {
        return Err(Error::InvalidArgument("no control samples".into()));
    }
    Ok(controls[held_index(controls, t)].u)
}

/// Signed integral `∫_from^to u(s) ds` of the zero-order-held controls.
pub fn zoh_integral(controls: &[ControlSample], from: f64, to: f64) -> Result<f64> {
    let (lo, hi) = if from <= to { (from, to) } else { (to, from) };
    match (controls.first(), controls.last()) {
        (Some(first), Some(last)) if first.t <= lo && last.t >= hi => {}
        (first, last) => {
            return Err(Error::Coverage {
                lo,
                hi,
                first: first.map_or(f64::NAN, |s| s.t),
                last: last.map_or(f64::NAN, |s| s.t),
            })
        }
    }
    if lo == hi {
        return Ok(0.0);
    }
    let mut i = held_index(controls, lo);
    let mut start = lo;
    let mut total = 0.0;
    while start < hi {
        let end = controls.get(i + 1).map_or(hi, |s| s.t.min(hi));
        total += controls[i].u * (end - start);
        start = end;
        i += 1;
    }
    Ok(if from <= to { total } else { -total })
}

/// Time update from `state.mean_time` to `t_target`.
///
/// Returns the propagated state and whether the interval was negative.
pub fn propagate(
    state: &FilterState,
    controls: &[ControlSample],
    t_target: f64,
    noise: &NoiseModel,
) -> Result<(FilterState, bool)> {
    let dt = t_target - state.mean_time;
    let mut next = *state;
    next.x_hat += zoh_integral(controls, state.mean_time, t_target)?;
    next.p[(0, 0)] += noise.qx * dt.abs();
    next.mean_time = t_target;
    next.filter_time = t_target;
    Ok((next, dt < 0.0))
}

/// `H = [1, u]`, where `u` is the held control at the linearisation instant.
pub fn measurement_jacobian(u_at_predicted_time: f64) -> RowVector2<f64> {
    RowVector2::new(1.0, u_at_predicted_time)
}

/// `S = H P Hᵀ + R`.
pub fn innovation_variance(h: &RowVector2<f64>, p: &Matrix2<f64>, r: f64) -> f64 {
    (h * p * h.transpose())[(0, 0)] + r
}

/// Measurement update with `h(x̂⁻) = x̂⁻` (the propagated position).
///
/// Times are left untouched; [`AugmentedEkf::step`] handles the clock.
pub fn update(
    state: &FilterState,
    y: f64,
    h: &RowVector2<f64>,
    r: f64,
    form: CovarianceForm,
) -> Result<(FilterState, UpdateReport)> {
    let p = &state.p;
    let s = innovation_variance(h, p, r);
    if !(s > 0.0) {
        return Err(Error::Numerical(format!(
            "innovation variance {s} is not positive"
        )));
    }
    // P Hᵀ written out so the u = 0 case yields K[1] = P₁₀ / S exactly.
    let pht = Vector2::new(
        p[(0, 0)] * h[0] + p[(0, 1)] * h[1],
        p[(1, 0)] * h[0] + p[(1, 1)] * h[1],
    );
    let gain = pht / s;
    let innovation = y - state.x_hat;

    let ikh = Matrix2::identity() - gain * h;
    let p_post = match form {
        CovarianceForm::Simple => ikh * p,
        CovarianceForm::Joseph => ikh * p * ikh.transpose() + gain * r * gain.transpose(),
    };

    let mut next = *state;
    next.x_hat += gain[0] * innovation;
    next.tau_hat += gain[1] * innovation;
    next.p = symmetrize(&p_post);
    if !next.is_finite() {
        return Err(Error::Divergence("non-finite state after update".into()));
    }
    let report = UpdateReport {
        innovation,
        innovation_variance: s,
        gain,
        delta_tau: next.tau_hat - state.tau_hat,
        backward_time: false,
    };
    Ok((next, report))
}

/// The augmented-state EKF.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentedEkf {
    pub noise: NoiseModel,
    pub covariance_form: CovarianceForm,
    pub clock: ClockPolicy,
}

impl AugmentedEkf {
    pub fn new(noise: NoiseModel) -> Self {
        AugmentedEkf {
            noise,
            covariance_form: CovarianceForm::Simple,
            clock: ClockPolicy::Integrate,
        }
    }

    /// Propagate to `t_k + τ̂_{k−1}`, linearise there, update, and stamp the
    /// result with `t_k + τ̂_k`.
    pub fn step(
        &self,
        state: &FilterState,
        meas: &MeasurementRecord,
        controls: &[ControlSample],
    ) -> Result<(FilterState, UpdateReport)> {
        let t_pred = meas.t + state.tau_hat;
        let inverted = t_pred < state.update_time;
        let (prior, _) = propagate(state, controls, t_pred, &self.noise)?;
        let h = measurement_jacobian(control_at(controls, t_pred)?);
        let (mut post, mut report) =
            update(&prior, meas.y, &h, self.noise.r, self.covariance_form)?;
        post.update_time = t_pred;
        post.filter_time = meas.t + post.tau_hat;
        if self.clock == ClockPolicy::Relabel {
            post.mean_time = post.filter_time;
        }
        report.backward_time = inverted;
        Ok((post, report))
    }
}

/// Scalar position estimate for the known-delay baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarState {
    pub x_hat: f64,
    pub p: f64,
    pub time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarReport {
    pub innovation: f64,
    pub innovation_variance: f64,
    pub gain: f64,
}

/// Linear Kalman filter that is told the true delay and processes each
/// measurement at `t_k + τ` with `H = 1`. With a correctly modelled plant it
/// is consistent, which makes it the control for the consistency tests.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KnownDelayKf {
    pub noise: NoiseModel,
    pub delay: f64,
}

impl KnownDelayKf {
    pub fn step(
        &self,
        state: &ScalarState,
        meas: &MeasurementRecord,
        controls: &[ControlSample],
    ) -> Result<(ScalarState, ScalarReport)> {
        let target = meas.t + self.delay;
        let x_prior = state.x_hat + zoh_integral(controls, state.time, target)?;
        let p_prior = state.p + self.noise.qx * (target - state.time).abs();
        let s = p_prior + self.noise.r;
        if !(s > 0.0) {
            return Err(Error::Numerical(format!(
                "innovation variance {s} is not positive"
            )));
        }
        let gain = p_prior / s;
        let innovation = meas.y - x_prior;
        let next = ScalarState {
            x_hat: x_prior + gain * innovation,
            p: (1.0 - gain) * p_prior,
            time: target,
        };
        if !(next.x_hat.is_finite() && next.p.is_finite()) {
            return Err(Error::Divergence("non-finite baseline state".into()));
        }
        Ok((
            next,
            ScalarReport {
                innovation,
                innovation_variance: s,
                gain,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{control_stream, control_stream_span, measure, PlantConfig};
    use crate::trajectory::{Preset, SinusoidSum};

    fn constant_controls(u: f64, t_end: f64, rate: f64) -> Vec<ControlSample> {
        (0..=(t_end * rate).round() as usize)
            .map(|i| ControlSample {
                t: i as f64 / rate,
                u,
            })
            .collect()
    }

    fn state(p: Matrix2<f64>) -> FilterState {
        FilterState::new(0.0, 0.0, p, 0.0)
    }

    #[test]
    fn zero_interval_propagation_is_identity() {
        let s = state(Matrix2::new(0.01, 0.002, 0.002, 0.25));
        let c = constant_controls(1.0, 1.0, 100.0);
        let noise = NoiseModel { qx: 1.0, r: 0.1 };
        let (p, back) = propagate(&s, &c, 0.0, &noise).unwrap();
        assert_eq!(p, s);
        assert!(!back);
    }

    #[test]
    fn constant_control_propagation() {
        let p0 = Matrix2::new(0.01, 0.002, 0.002, 0.25);
        let s = state(p0);
        let c = constant_controls(1.0, 1.0, 100.0);
        let noise = NoiseModel { qx: 1.0, r: 0.1 };
        let (p, _) = propagate(&s, &c, 0.1, &noise).unwrap();
        assert!((p.x_hat - 0.1).abs() < 1e-15);
        assert!((p.p[(0, 0)] - 0.11).abs() < 1e-15);
        assert_eq!(p.p[(0, 1)], 0.002);
        assert_eq!(p.p[(1, 1)], 0.25);
        assert_eq!(p.tau_hat, 0.0);
        assert_eq!(p.filter_time, 0.1);
    }

    #[test]
    fn piecewise_control_integrates_to_zero() {
        let c = vec![
            ControlSample { t: 0.0, u: 1.0 },
            ControlSample { t: 0.05, u: -1.0 },
            ControlSample { t: 0.1, u: -1.0 },
        ];
        let integral = zoh_integral(&c, 0.0, 0.1).unwrap();
        // Fine-step rectangle rule over the held signal.
        let n = 10_000;
        let fine: f64 = (0..n)
            .map(|i| {
                let t = i as f64 * 1e-5;
                if t < 0.05 {
                    1e-5
                } else {
                    -1e-5
                }
            })
            .sum();
        assert!(integral.abs() < 1e-15);
        assert!((integral - fine).abs() < 1e-9);
    }

    #[test]
    fn backward_propagation_mirrors_mean_and_grows_covariance() {
        let c = constant_controls(2.0, 1.0, 100.0);
        let noise = NoiseModel { qx: 0.5, r: 0.1 };
        let mut s = state(Matrix2::new(0.01, 0.0, 0.0, 0.25));
        s.mean_time = 0.6;
        let (p, back) = propagate(&s, &c, 0.4, &noise).unwrap();
        assert!(back);
        assert!((p.x_hat + 0.4).abs() < 1e-14);
        assert!((p.p[(0, 0)] - 0.11).abs() < 1e-15);
    }

    #[test]
    fn missing_coverage_is_an_error() {
        let c = constant_controls(1.0, 1.0, 100.0);
        let noise = NoiseModel { qx: 0.5, r: 0.1 };
        let s = state(Matrix2::identity());
        assert!(matches!(
            propagate(&s, &c, 1.5, &noise),
            Err(Error::Coverage { .. })
        ));
        assert!(matches!(
            propagate(&s, &c, -0.2, &noise),
            Err(Error::Coverage { .. })
        ));
    }

    #[test]
    fn control_lookup_is_causal() {
        let c = vec![
            ControlSample { t: 0.0, u: 1.0 },
            ControlSample { t: 0.01, u: 2.0 },
            ControlSample { t: 0.02, u: 3.0 },
        ];
        assert_eq!(control_at(&c, -5.0).unwrap(), 1.0);
        assert_eq!(control_at(&c, 0.0).unwrap(), 1.0);
        assert_eq!(control_at(&c, 0.0099).unwrap(), 1.0);
        assert_eq!(control_at(&c, 0.01).unwrap(), 2.0);
        assert_eq!(control_at(&c, 9.0).unwrap(), 3.0);
        assert!(control_at(&[], 0.0).is_err());
    }

    #[test]
    fn jacobian_rows() {
        assert_eq!(measurement_jacobian(0.0), RowVector2::new(1.0, 0.0));
        assert_eq!(measurement_jacobian(1.0), RowVector2::new(1.0, 1.0));
        assert_eq!(measurement_jacobian(-0.37), RowVector2::new(1.0, -0.37));
    }

    #[test]
    fn innovation_variance_examples() {
        let p = Matrix2::new(0.01, 0.0, 0.0, 0.25);
        assert!((innovation_variance(&RowVector2::new(1.0, 0.0), &p, 0.0625) - 0.0725).abs() < 1e-15);
        assert!((innovation_variance(&RowVector2::new(1.0, 1.0), &p, 0.0625) - 0.3225).abs() < 1e-15);
        assert_eq!(innovation_variance(&RowVector2::new(1.0, 1.0), &Matrix2::zeros(), 0.0), 0.0);
    }

    #[test]
    fn non_positive_innovation_variance_rejected() {
        let s = state(Matrix2::zeros());
        let r = update(&s, 1.0, &RowVector2::new(1.0, 0.0), 0.0, CovarianceForm::Simple);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn zero_innovation_moves_no_mean() {
        let mut s = state(Matrix2::new(0.02, 0.001, 0.001, 0.2));
        s.x_hat = 1.5;
        s.tau_hat = -0.03;
        let h = RowVector2::new(1.0, 0.5);
        let (post, rep) = update(&s, 1.5, &h, 0.0625, CovarianceForm::Simple).unwrap();
        assert_eq!(post.x_hat, 1.5);
        assert_eq!(post.tau_hat, -0.03);
        assert_eq!(rep.delta_tau, 0.0);
        assert!(post.p[(0, 0)] < s.p[(0, 0)]);
    }

    #[test]
    fn zero_control_leaves_delay_untouched() {
        let (p, q, r) = (0.03, 0.25, 0.0625);
        let s = state(Matrix2::new(p, 0.0, 0.0, q));
        let (post, rep) = update(&s, 0.7, &measurement_jacobian(0.0), r, CovarianceForm::Simple).unwrap();
        assert_eq!(rep.gain[0], p / (p + r));
        assert_eq!(rep.gain[1], 0.0);
        assert_eq!(post.tau_hat, 0.0);
        assert_eq!(post.p[(1, 1)], q);
        assert_eq!(post.p[(0, 1)], 0.0);
    }

    #[test]
    fn zero_control_gain_on_delay_is_cross_covariance_over_s() {
        let s = state(Matrix2::new(0.03, 0.004, 0.004, 0.25));
        let (_, rep) = update(&s, 0.2, &measurement_jacobian(0.0), 0.0625, CovarianceForm::Simple).unwrap();
        assert_eq!(rep.gain[1], 0.004 / rep.innovation_variance);
    }

    #[test]
    fn update_matches_long_form_arithmetic() {
        // Values worked out independently (numpy): H = [1, 0.5],
        // P = [[0.02, 0.001], [0.001, 0.2]], R = 0.0625, e = 0.3.
        let s = state(Matrix2::new(0.02, 0.001, 0.001, 0.2));
        let h = RowVector2::new(1.0, 0.5);
        let (post, rep) = update(&s, 0.3, &h, 0.0625, CovarianceForm::Simple).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() < 1e-14;
        assert!(close(rep.innovation_variance, 0.1335));
        assert!(close(rep.gain[0], 0.15355805243445692));
        assert!(close(rep.gain[1], 0.7565543071161048));
        assert!(close(post.x_hat, 0.046067415730337076));
        assert!(close(post.tau_hat, 0.22696629213483144));
        assert!(close(post.p[(0, 0)], 0.016852059925093633));
        assert!(close(post.p[(0, 1)], -0.014509363295880151));
        assert!(close(post.p[(1, 1)], 0.12358801498127342));
    }

    #[test]
    fn joseph_form_agrees_with_simple_form_for_optimal_gain() {
        let s = state(Matrix2::new(0.02, 0.001, 0.001, 0.2));
        let h = RowVector2::new(1.0, -1.3);
        let (a, _) = update(&s, 0.3, &h, 0.0625, CovarianceForm::Simple).unwrap();
        let (b, _) = update(&s, 0.3, &h, 0.0625, CovarianceForm::Joseph).unwrap();
        assert!((a.p - b.p).abs().max() < 1e-15);
        assert_eq!(a.x_hat, b.x_hat);
    }

    fn noiseless_run(steps: usize) -> Vec<f64> {
        let traj = Preset::Traj1.trajectory();
        let cfg = PlantConfig {
            delay: 0.0,
            meas_noise_std: 0.0,
            meas_rate: 10.0,
            control_rate: 100.0,
        };
        let controls = control_stream_span(&traj, 100.0, -1.0, 12.0);
        let ekf = AugmentedEkf::new(NoiseModel { qx: 1.0, r: 1e-14 });
        let mut s = FilterState::new(
            traj.position(0.0) + 0.05,
            0.0,
            Matrix2::new(0.01, 0.0, 0.0, 0.0),
            0.0,
        );
        let mut errors = Vec::new();
        for k in 1..=steps {
            let m = measure(&traj, &cfg, k, 0.0);
            s = ekf.step(&s, &m, &controls).unwrap().0;
            errors.push((s.x_hat - traj.position(s.filter_time)).abs());
        }
        errors
    }

    #[test]
    fn noiseless_delay_free_filter_tracks() {
        let errors = noiseless_run(10);
        assert!(*errors.last().unwrap() < 1e-9, "{errors:?}");
    }

    #[test]
    fn noiseless_error_is_non_increasing_without_process_noise() {
        // Ramp x(t) = 0.3 + 0.7 t: held controls integrate it exactly, so the
        // only error source is the initial offset.
        let controls: Vec<ControlSample> = (-100..=1200)
            .map(|i| ControlSample { t: i as f64 / 100.0, u: 0.7 })
            .collect();
        let truth = |t: f64| 0.3 + 0.7 * t;
        let ekf = AugmentedEkf::new(NoiseModel { qx: 0.0, r: 1e-14 });
        let mut s = FilterState::new(0.25, 0.0, Matrix2::new(0.01, 0.0, 0.0, 0.0), 0.0);
        let mut prev = f64::INFINITY;
        for k in 1..=10 {
            let t = k as f64 / 10.0;
            let m = MeasurementRecord { k, t, y: truth(t) };
            s = ekf.step(&s, &m, &controls).unwrap().0;
            let err = (s.x_hat - truth(s.filter_time)).abs();
            assert!(err <= prev + 1e-15, "step {k}: {err} > {prev}");
            prev = err;
        }
        assert!(prev < 1e-9, "{prev}");
    }

    #[test]
    fn backward_flag_follows_a_large_negative_jump() {
        let traj = SinusoidSum::new(vec![], 0.0).unwrap();
        let controls = control_stream_span(&traj, 100.0, -2.0, 2.0);
        let ekf = AugmentedEkf::new(NoiseModel { qx: 0.0, r: 0.01 });
        let mut s = FilterState::new(0.0, 0.0, Matrix2::new(0.01, 0.0, 0.0, 0.25), 0.0);
        let m1 = MeasurementRecord { k: 1, t: 0.1, y: 0.0 };
        s = ekf.step(&s, &m1, &controls).unwrap().0;
        // Force a jump of −0.15 s, larger than the 0.1 s measurement period.
        s.tau_hat -= 0.15;
        s.filter_time = m1.t + s.tau_hat;
        assert_eq!(s.update_time, 0.1);
        let m2 = MeasurementRecord { k: 2, t: 0.2, y: 0.0 };
        let (_, rep) = ekf.step(&s, &m2, &controls).unwrap();
        assert!(rep.backward_time);
    }

    #[test]
    fn step_stamps_estimate_with_updated_delay() {
        let traj = Preset::Traj2.trajectory();
        let controls = control_stream_span(&traj, 100.0, -2.0, 12.0);
        let ekf = AugmentedEkf::new(NoiseModel { qx: 1.0, r: 0.0625 });
        let s = FilterState::new(0.0, 0.0, Matrix2::new(0.01, 0.0, 0.0, 0.25), 0.0);
        let m = MeasurementRecord { k: 1, t: 0.1, y: 0.4 };
        let (post, rep) = ekf.step(&s, &m, &controls).unwrap();
        assert_eq!(post.mean_time, 0.1);
        assert_eq!(post.filter_time, 0.1 + post.tau_hat);
        assert_eq!(rep.delta_tau, post.tau_hat);
        assert!(post.covariance_is_valid());
    }

    #[test]
    fn relabel_policy_moves_mean_clock_to_filter_time() {
        let traj = Preset::Traj2.trajectory();
        let controls = control_stream_span(&traj, 100.0, -2.0, 12.0);
        let mut ekf = AugmentedEkf::new(NoiseModel { qx: 1.0, r: 0.0625 });
        ekf.clock = ClockPolicy::Relabel;
        let mut s = FilterState::new(0.0, 0.0, Matrix2::new(0.01, 0.0, 0.0, 0.25), 0.0);
        for k in 1..=5 {
            let m = MeasurementRecord { k, t: k as f64 * 0.1, y: traj.position(k as f64 * 0.1 - 0.05) };
            let (post, rep) = ekf.step(&s, &m, &controls).unwrap();
            assert_eq!(post.mean_time, post.filter_time);
            assert_eq!(post.update_time, m.t + s.tau_hat);
            // Relabelling never asks for a negative interval here.
            assert!(!rep.backward_time);
            s = post;
        }
    }

    #[test]
    fn baseline_is_exact_without_noise() {
        let traj = Preset::Traj2.trajectory();
        let cfg = PlantConfig {
            delay: -0.05,
            meas_noise_std: 0.0,
            meas_rate: 10.0,
            control_rate: 100.0,
        };
        let controls = control_stream_span(&traj, 100.0, -1.0, 12.0);
        let kf = KnownDelayKf {
            noise: NoiseModel { qx: 1.0, r: 1e-14 },
            delay: cfg.delay,
        };
        let mut s = ScalarState {
            x_hat: 0.0,
            p: 0.01,
            time: 0.0,
        };
        for k in 1..=100 {
            let m = measure(&traj, &cfg, k, 0.0);
            s = kf.step(&s, &m, &controls).unwrap().0;
            assert!((s.x_hat - traj.position(s.time)).abs() < 1e-9);
        }
    }

    #[test]
    fn pinned_augmented_filter_equals_baseline() {
        let traj = Preset::Traj2.trajectory();
        let tau = -0.042;
        let cfg = PlantConfig {
            delay: tau,
            meas_noise_std: 0.25,
            meas_rate: 10.0,
            control_rate: 100.0,
        };
        let noise = NoiseModel { qx: 1.0, r: 0.0625 };
        let controls = control_stream_span(&traj, 100.0, -1.0, 12.0);
        let ekf = AugmentedEkf::new(noise);
        let kf = KnownDelayKf { noise, delay: tau };
        let mut aug = FilterState::new(0.1, tau, Matrix2::new(0.01, 0.0, 0.0, 0.0), 0.0);
        let mut base = ScalarState {
            x_hat: 0.1,
            p: 0.01,
            time: 0.0,
        };
        for k in 1..=100 {
            let noise_draw = 0.25 * ((k as f64) * 1.7).sin();
            let m = measure(&traj, &cfg, k, noise_draw);
            aug = ekf.step(&aug, &m, &controls).unwrap().0;
            base = kf.step(&base, &m, &controls).unwrap().0;
            assert_eq!(aug.tau_hat, tau);
            assert!((aug.x_hat - base.x_hat).abs() < 1e-12);
            assert!((aug.p[(0, 0)] - base.p).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let a = noiseless_run(30);
        let b = noiseless_run(30);
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn control_stream_covers_horizon_only() {
        let c = control_stream(&Preset::Traj1.trajectory(), 100.0, 1.0);
        assert!(zoh_integral(&c, 0.0, 1.0).is_ok());
        assert!(zoh_integral(&c, 0.0, 1.01).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn propagation_is_additive(
                a in 0.0..3.0f64,
                b_idx in 0usize..300,
                c in 0.0..3.0f64,
            ) {
                let traj = Preset::Traj2.trajectory();
                let controls = control_stream_span(&traj, 100.0, -1.0, 4.0);
                let b = b_idx as f64 / 100.0;
                let noise = NoiseModel { qx: 0.7, r: 0.1 };
                let mut s = FilterState::new(0.3, 0.01, Matrix2::new(0.01, 0.001, 0.001, 0.2), a);
                s.mean_time = a;
                let (ab, _) = propagate(&s, &controls, b, &noise).unwrap();
                let (abc, _) = propagate(&ab, &controls, c, &noise).unwrap();
                let (ac, _) = propagate(&s, &controls, c, &noise).unwrap();
                prop_assert!((abc.x_hat - ac.x_hat).abs() < 1e-12);
                // Covariance is additive in |Δt| for monotone paths.
                if (a <= b && b <= c) || (a >= b && b >= c) {
                    prop_assert!((abc.p - ac.p).abs().max() < 1e-12);
                }
            }

            #[test]
            fn update_keeps_covariance_valid(
                p00 in 1e-4..1.0f64,
                p11 in 1e-4..1.0f64,
                rho in -0.99..0.99f64,
                u in -5.0..5.0f64,
                y in -2.0..2.0f64,
            ) {
                let p01 = rho * (p00 * p11).sqrt();
                let s = state(Matrix2::new(p00, p01, p01, p11));
                let (post, rep) = update(&s, y, &measurement_jacobian(u), 0.0625, CovarianceForm::Simple).unwrap();
                prop_assert!(rep.innovation_variance > 0.0);
                prop_assert!(post.covariance_is_valid());
            }
        }
    }
}
