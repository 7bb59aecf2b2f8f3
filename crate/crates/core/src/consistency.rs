//! Filter consistency statistics.
//!
//! NIS and NEES are the normalized squared innovation and estimation error;
//! for a consistent filter they are chi-square distributed with one and two
//! (one, for the scalar baseline) degrees of freedom. Averaging NEES over `N`
//! trials gives ANEES, whose acceptance interval is `χ²_{dof·N}` quantiles
//! divided by `N`.
//!
//! Chi-square quantiles are computed here rather than looked up: the
//! regularized lower incomplete gamma function is evaluated by its power
//! series or continued fraction, a Wilson–Hilferty estimate brackets the
//! root, and bisection finishes it.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `e² / S`.
pub fn nis(innovation: f64, innovation_variance: f64) -> Result<f64> {
    if !(innovation_variance > 0.0) {
        return Err(Error::Numerical(format!(
            "innovation variance {innovation_variance} is not positive"
        )));
    }
    Ok(innovation * innovation / innovation_variance)
}

/// `eᵀ P⁻¹ e` for the two-state error.
pub fn nees(error: &Vector2<f64>, p: &Matrix2<f64>) -> Result<f64> {
    let det = p[(0, 0)] * p[(1, 1)] - p[(0, 1)] * p[(1, 0)];
    if !(det > 1e-300) {
        return Err(Error::Numerical(format!("covariance is singular (det {det})")));
    }
    let (e0, e1) = (error[0], error[1]);
    let quad = p[(1, 1)] * e0 * e0 - (p[(0, 1)] + p[(1, 0)]) * e0 * e1 + p[(0, 0)] * e1 * e1;
    Ok(quad / det)
}

/// `e² / p` for a scalar state.
pub fn nees_scalar(error: f64, variance: f64) -> Result<f64> {
    if !(variance > 1e-300) {
        return Err(Error::Numerical(format!("variance {variance} is not positive")));
    }
    Ok(error * error / variance)
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.carry += (self.sum - t) + v;
        } else {
            self.carry += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        iter.into_iter().for_each(|v| s.add(v));
        s
    }
}

fn compensated_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut sum = CompensatedSum::default();
    let mut n = 0usize;
    for v in values {
        sum.add(v);
        n += 1;
    }
    (n > 0).then(|| sum.value() / n as f64)
}

// Lanczos approximation, g = 7, nine coefficients.
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..10_000 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefactor).exp().min(1.0)
    } else {
        // Modified Lentz evaluation of the continued fraction for Q(a, x).
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - (log_prefactor + h.ln()).exp()).max(0.0)
    }
}

pub fn chi2_cdf(dof: f64, x: f64) -> f64 {
    regularized_gamma_p(0.5 * dof, 0.5 * x)
}

/// Standard normal quantile (Acklam's rational approximation, ~1e-9 relative).
fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -normal_quantile(1.0 - p)
    }
}

/// Inverse chi-square CDF.
pub fn chi2_quantile(dof: f64, p: f64) -> Result<f64> {
    if !(dof > 0.0 && dof.is_finite()) {
        return Err(Error::InvalidArgument(format!("dof must be positive, got {dof}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "probability must lie in (0, 1), got {p}"
        )));
    }
    let z = normal_quantile(p);
    let c = 2.0 / (9.0 * dof);
    let wilson_hilferty = dof * (1.0 - c + z * c.sqrt()).powi(3);
    let mut hi = wilson_hilferty.max(dof).max(1.0) * 2.0;
    while chi2_cdf(dof, hi) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..2_000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if chi2_cdf(dof, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two-sided `confidence` interval for ANEES over `n_trials` trials.
pub fn chi2_anees_interval(dof: usize, n_trials: usize, confidence: f64) -> Result<(f64, f64)> {
    if dof == 0 || n_trials == 0 {
        return Err(Error::InvalidArgument(
            "dof and n_trials must be positive".into(),
        ));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    let k = (dof * n_trials) as f64;
    let n = n_trials as f64;
    Ok((
        chi2_quantile(k, 0.5 * (1.0 - confidence))? / n,
        chi2_quantile(k, 0.5 * (1.0 + confidence))? / n,
    ))
}

/// One filter step as seen by the evaluator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    /// Nominal measurement time `t_k`.
    pub t: f64,
    pub x_hat: f64,
    pub tau_hat: f64,
    pub p00: f64,
    pub p01: f64,
    pub p11: f64,
    pub innovation: f64,
    pub innovation_variance: f64,
    /// Position error against the configured reference instant.
    pub pos_error: f64,
    /// Position error against the other reference instant.
    pub pos_error_alt: f64,
    /// `τ − τ̂`, seconds.
    pub delay_error: f64,
    pub nis: f64,
    pub nees: f64,
    pub backward_time: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialTrace {
    pub trial: usize,
    /// NEES degrees of freedom (2 for the augmented filter, 1 for the baseline).
    pub dof: usize,
    pub tau_true: f64,
    pub steps: Vec<StepRecord>,
    pub diverged: bool,
    pub failure: Option<String>,
}

impl TrialTrace {
    pub fn backward_time_count(&self) -> usize {
        self.steps.iter().filter(|s| s.backward_time).count()
    }

    pub fn step(&self, k: usize) -> Option<&StepRecord> {
        self.steps.get(k.checked_sub(1)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorField {
    Position,
    PositionAlt,
    Delay,
}

impl ErrorField {
    fn of(self, s: &StepRecord) -> f64 {
        match self {
            ErrorField::Position => s.pos_error,
            ErrorField::PositionAlt => s.pos_error_alt,
            ErrorField::Delay => s.delay_error,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Position,
    Delay,
}

fn included(traces: &[TrialTrace]) -> impl Iterator<Item = &TrialTrace> {
    traces.iter().filter(|t| !t.diverged)
}

/// Mean NEES at step `k` (1-based) over non-diverged trials, and the number
/// of trials excluded.
pub fn anees(traces: &[TrialTrace], k: usize) -> (f64, usize) {
    let excluded = traces.len() - included(traces).count();
    let mean = compensated_mean(included(traces).filter_map(|t| t.step(k)).map(|s| s.nees));
    (mean.unwrap_or(f64::NAN), excluded)
}

/// Per-step RMS of an error field over non-diverged trials.
pub fn rms_per_step(traces: &[TrialTrace], field: ErrorField) -> Vec<f64> {
    let horizon = included(traces).map(|t| t.steps.len()).max().unwrap_or(0);
    (1..=horizon)
        .map(|k| {
            compensated_mean(included(traces).filter_map(|t| t.step(k)).map(|s| {
                let e = field.of(s);
                e * e
            }))
            .map_or(f64::NAN, f64::sqrt)
        })
        .collect()
}

/// Fraction of non-diverged trials with `|e| ≤ 3σ` (closed bound) at step `k`.
pub fn containment_3sigma(traces: &[TrialTrace], k: usize, component: Component) -> f64 {
    let mut inside = 0usize;
    let mut total = 0usize;
    for s in included(traces).filter_map(|t| t.step(k)) {
        let (e, var) = match component {
            Component::Position => (s.pos_error, s.p00),
            Component::Delay => (s.delay_error, s.p11),
        };
        total += 1;
        if e.abs() <= 3.0 * var.max(0.0).sqrt() {
            inside += 1;
        }
    }
    if total == 0 {
        f64::NAN
    } else {
        inside as f64 / total as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub k: usize,
    pub rms_position: f64,
    pub rms_position_alt: f64,
    /// Milliseconds.
    pub rms_delay_ms: f64,
    pub anees: f64,
    pub anees_lo: f64,
    pub anees_hi: f64,
    pub mean_nis: f64,
    /// Fraction of NIS values above the one-dof 95% quantile.
    pub nis_exceed_frac: f64,
    pub containment_position: f64,
    pub containment_delay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub dof: usize,
    pub n_trials: usize,
    pub n_excluded: usize,
    pub steps: Vec<StepStats>,
}

impl BatchStats {
    pub fn at(&self, k: usize) -> Option<&StepStats> {
        self.steps.get(k.checked_sub(1)?)
    }
}

/// Aggregate traces into per-step statistics. The result depends only on the
/// multiset of traces, up to compensated-summation rounding.
pub fn batch_stats(traces: &[TrialTrace]) -> Result<BatchStats> {
    let dof = traces.first().map_or(2, |t| t.dof);
    if traces.iter().any(|t| t.dof != dof) {
        return Err(Error::InvalidArgument("mixed NEES dimensions in batch".into()));
    }
    let n_included = included(traces).count();
    let (anees_lo, anees_hi) = if n_included > 0 {
        chi2_anees_interval(dof, n_included, 0.95)?
    } else {
        (f64::NAN, f64::NAN)
    };
    let nis_limit = chi2_quantile(1.0, 0.95)?;
    let rms_pos = rms_per_step(traces, ErrorField::Position);
    let rms_alt = rms_per_step(traces, ErrorField::PositionAlt);
    let rms_delay = rms_per_step(traces, ErrorField::Delay);
    let steps = (1..=rms_pos.len())
        .map(|k| {
            let nis_vals: Vec<f64> = included(traces)
                .filter_map(|t| t.step(k))
                .map(|s| s.nis)
                .collect();
            let exceed = nis_vals.iter().filter(|&&v| v > nis_limit).count();
            StepStats {
                k,
                rms_position: rms_pos[k - 1],
                rms_position_alt: rms_alt[k - 1],
                rms_delay_ms: rms_delay[k - 1] * 1e3,
                anees: anees(traces, k).0,
                anees_lo,
                anees_hi,
                mean_nis: compensated_mean(nis_vals.iter().copied()).unwrap_or(f64::NAN),
                nis_exceed_frac: if nis_vals.is_empty() {
                    f64::NAN
                } else {
                    exceed as f64 / nis_vals.len() as f64
                },
                containment_position: containment_3sigma(traces, k, Component::Position),
                containment_delay: containment_3sigma(traces, k, Component::Delay),
            }
        })
        .collect();
    Ok(BatchStats {
        dof,
        n_trials: traces.len(),
        n_excluded: traces.len() - n_included,
        steps,
    })
}
