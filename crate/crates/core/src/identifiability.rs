//! Reachable sets of the bounded single integrator and executable witnesses
//! that a delay cannot be identified within its own magnitude.
//!
//! The system is `ẋ = u`, `|u| ≤ 1`, `y(t) = x(t + τ)`. Two systems that share
//! `x(0)` but have different delays can be driven so that their outputs agree
//! on `[0, |τ|]`. The constructors below build such pairs and
//! [`verify_pair`] checks them by simulating both systems.

use serde::{Deserialize, Serialize};

use crate::consistency::CompensatedSum;
use crate::{Error, Result};

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Interval> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "interval bounds out of order: [{lo}, {hi}]"
            )));
        }
        Ok(Interval { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    pub fn intersection(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

fn check_horizon(x0: f64, t: f64) -> Result<()> {
    if !x0.is_finite() {
        return Err(Error::InvalidArgument("x0 must be finite".into()));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "reachability horizon must be finite and >= 0, got {t}"
        )));
    }
    Ok(())
}

/// States reachable from `x0` within time `t` under `|u| ≤ 1`.
pub fn forward_reachable(x0: f64, t: f64) -> Result<Interval> {
    check_horizon(x0, t)?;
    Ok(Interval {
        lo: x0 - t,
        hi: x0 + t,
    })
}

/// States from which `x0` can be reached within time `t`. Equal to the
/// forward set because the control set is symmetric.
pub fn backward_reachable(x0: f64, t: f64) -> Result<Interval> {
    check_horizon(x0, t)?;
    Ok(Interval {
        lo: x0 - t,
        hi: x0 + t,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub value: f64,
}

/// Piecewise-constant admissible control on `[start, end]`, zero outside.
///
/// Segments are contiguous (each starts exactly where the previous ends) and
/// every value lies in `[-1, 1]`. Inside the support the control is
/// right-continuous at breakpoints; the last segment includes its end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundedControl {
    segments: Vec<Segment>,
}

impl BoundedControl {
    pub fn new(segments: Vec<Segment>) -> Result<BoundedControl> {
        if segments.is_empty() {
            return Err(Error::InvalidArgument("control needs at least one segment".into()));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.t_start.is_finite() && s.t_end.is_finite() && s.t_start < s.t_end) {
                return Err(Error::InvalidArgument(format!(
                    "segment {i} has an empty or non-finite span [{}, {}]",
                    s.t_start, s.t_end
                )));
            }
            if !(s.value.abs() <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "segment {i} value {} is outside [-1, 1]",
                    s.value
                )));
            }
            if i > 0 && segments[i - 1].t_end != s.t_start {
                return Err(Error::InvalidArgument(format!(
                    "segment {i} starts at {} but the previous one ends at {}",
                    s.t_start,
                    segments[i - 1].t_end
                )));
            }
        }
        Ok(BoundedControl { segments })
    }

    pub fn constant(t_start: f64, t_end: f64, value: f64) -> Result<BoundedControl> {
        BoundedControl::new(vec![Segment {
            t_start,
            t_end,
            value,
        }])
    }

    /// Samples `values` held over equal sub-intervals of `[t_start, t_end]`.
    pub fn uniform(t_start: f64, t_end: f64, values: &[f64]) -> Result<BoundedControl> {
        let n = values.len();
        let edge = |i: usize| {
            if i == n {
                t_end
            } else {
                t_start + (t_end - t_start) * i as f64 / n as f64
            }
        };
        BoundedControl::new(
            values
                .iter()
                .enumerate()
                .map(|(i, &value)| Segment {
                    t_start: edge(i),
                    t_end: edge(i + 1),
                    value,
                })
                .collect(),
        )
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start(&self) -> f64 {
        self.segments[0].t_start
    }

    pub fn end(&self) -> f64 {
        self.segments[self.segments.len() - 1].t_end
    }

    pub fn value_at(&self, t: f64) -> f64 {
        if t < self.start() || t > self.end() {
            return 0.0;
        }
        let i = self.segments.partition_point(|s| s.t_start <= t);
        self.segments[i.saturating_sub(1)].value
    }

    /// Signed integral `∫_a^b u dt` (negative when `b < a`).
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if a > b {
            return -self.integral(b, a);
        }
        self.segments
            .iter()
            .map(|s| {
                let lo = s.t_start.max(a);
                let hi = s.t_end.min(b);
                if hi > lo {
                    s.value * (hi - lo)
                } else {
                    0.0
                }
            })
            .collect::<CompensatedSum>()
            .value()
    }

    /// The same control delayed by `dt`: `v(t) = u(t - dt)`.
    pub fn shifted(&self, dt: f64) -> BoundedControl {
        BoundedControl {
            segments: self
                .segments
                .iter()
                .map(|s| Segment {
                    t_start: s.t_start + dt,
                    t_end: s.t_end + dt,
                    value: s.value,
                })
                .collect(),
        }
    }

    /// Concatenation; `next` must start where `self` ends.
    pub fn then(&self, next: &BoundedControl) -> Result<BoundedControl> {
        let mut segments = self.segments.clone();
        segments.extend_from_slice(&next.segments);
        BoundedControl::new(segments)
    }

    /// Adds `delta` on `[t0, t1]`, splitting segments at the edges.
    pub fn perturbed(&self, t0: f64, t1: f64, delta: f64) -> Result<BoundedControl> {
        let mut out = Vec::new();
        for s in &self.segments {
            let mut cuts = vec![s.t_start];
            for c in [t0, t1] {
                if c > s.t_start && c < s.t_end {
                    cuts.push(c);
                }
            }
            cuts.push(s.t_end);
            for w in cuts.windows(2) {
                let mid = 0.5 * (w[0] + w[1]);
                let bump = if mid > t0 && mid < t1 { delta } else { 0.0 };
                out.push(Segment {
                    t_start: w[0],
                    t_end: w[1],
                    value: s.value + bump,
                });
            }
        }
        BoundedControl::new(out)
    }
}

/// Which side of the state the output sits on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `τ < 0`: outputs are past states.
    Lagging,
    /// `τ > 0`: outputs are future states.
    Leading,
}

/// Two systems with delays `tau` and `tau_prime` whose outputs agree on
/// `[0, horizon]`.
///
/// `u` and `u_prime` are the complete controls of each system, both started
/// from `x(0) = x0`. `anchor` is the common output value `y(0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndistinguishablePair {
    pub branch: Branch,
    pub tau: f64,
    pub tau_prime: f64,
    pub u: BoundedControl,
    pub u_prime: BoundedControl,
    pub x0: f64,
    pub anchor: f64,
    pub horizon: f64,
}

/// Optional ingredients of a construction. Unset fields take defaults.
///
/// For the lagging branch `driving` is the control on `[τ, 0]` that takes
/// the anchor to `x0`, and `free` is the shared control on `[0, |τ|]`.
/// For the leading branch `driving` is the shared control on `[0, τ]` that
/// takes `x0` to the anchor, and `free` is the control on `[τ, 2τ]` whose
/// effect is seen by the output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairInputs {
    pub anchor: Option<f64>,
    pub driving: Option<BoundedControl>,
    pub free: Option<BoundedControl>,
}

const MATCH_TOL: f64 = 1e-12;

fn check_span(name: &str, c: &BoundedControl, start: f64, end: f64) -> Result<()> {
    let tol = MATCH_TOL * (1.0 + start.abs().max(end.abs()));
    if (c.start() - start).abs() > tol || (c.end() - end).abs() > tol {
        return Err(Error::Construction(format!(
            "{name} control must span [{start}, {end}], got [{}, {}]",
            c.start(),
            c.end()
        )));
    }
    Ok(())
}

/// Resolves the anchor and the control linking it to `x0` over `span`.
/// `reach` is the set of admissible anchors; `signed_gap(anchor)` is the
/// integral the driving control must have.
fn resolve_driving(
    inputs: &PairInputs,
    reach: Interval,
    span: (f64, f64),
    signed_gap: impl Fn(f64) -> f64,
    anchor_from_integral: impl Fn(f64) -> f64,
) -> Result<(f64, BoundedControl)> {
    let len = span.1 - span.0;
    let (anchor, driving) = match (inputs.anchor, &inputs.driving) {
        (anchor, Some(c)) => {
            check_span("driving", c, span.0, span.1)?;
            let implied = anchor_from_integral(c.integral(span.0, span.1));
            if let Some(a) = anchor {
                if (a - implied).abs() > MATCH_TOL * (1.0 + a.abs()) {
                    return Err(Error::Construction(format!(
                        "driving control reaches {implied}, not the requested anchor {a}"
                    )));
                }
            }
            (anchor.unwrap_or(implied), c.clone())
        }
        (anchor, None) => {
            let a = anchor.unwrap_or(reach.midpoint());
            let v = signed_gap(a) / len;
            let c = BoundedControl::constant(span.0, span.1, v).map_err(|_| {
                Error::Construction(format!(
                    "anchor {a} is outside the reachable set [{}, {}]",
                    reach.lo, reach.hi
                ))
            })?;
            (a, c)
        }
    };
    if !reach.contains(anchor) {
        return Err(Error::Construction(format!(
            "anchor {anchor} is outside the reachable set [{}, {}]",
            reach.lo, reach.hi
        )));
    }
    Ok((anchor, driving))
}

fn check_delays(tau: f64, tau_prime: f64, branch: Branch) -> Result<()> {
    if !(tau.is_finite() && tau_prime.is_finite()) {
        return Err(Error::InvalidArgument("delays must be finite".into()));
    }
    let ok = match branch {
        Branch::Lagging => tau < 0.0 && tau_prime <= tau,
        Branch::Leading => tau > 0.0 && tau_prime >= tau,
    };
    if !ok {
        let want = match branch {
            Branch::Lagging => "tau_prime <= tau < 0",
            Branch::Leading => "0 < tau <= tau_prime",
        };
        return Err(Error::InvalidArgument(format!(
            "expected {want}, got tau = {tau}, tau_prime = {tau_prime}"
        )));
    }
    Ok(())
}

/// Pair for `τ' ≤ τ < 0`.
///
/// System one follows `driving` from the anchor at `τ` to `x0` at 0. System
/// two replays the same control starting at `τ'`, then holds zero until 0.
/// Both share `free` on `[0, |τ|]`, which the outputs cannot see yet.
pub fn construct_pair_lagging(
    tau: f64,
    tau_prime: f64,
    x0: f64,
    inputs: &PairInputs,
) -> Result<IndistinguishablePair> {
    check_delays(tau, tau_prime, Branch::Lagging)?;
    let horizon = -tau;
    let b = backward_reachable(x0, horizon)?;
    let b_prime = backward_reachable(x0, -tau_prime)?;
    let reach = b.intersection(&b_prime).expect("nested intervals intersect");
    let (anchor, past) = resolve_driving(
        inputs,
        reach,
        (tau, 0.0),
        |a| x0 - a,
        |integral| x0 - integral,
    )?;
    let free = shared_control(inputs, horizon)?;

    let u = past.then(&free)?;
    let replay = past.shifted(tau_prime - tau);
    let mut u_prime = replay.clone();
    if tau_prime < tau {
        let hold = BoundedControl::constant(replay.end(), 0.0, 0.0)?;
        u_prime = u_prime.then(&hold)?;
    } else {
        u_prime = past.clone();
    }
    let u_prime = u_prime.then(&free)?;
    Ok(IndistinguishablePair {
        branch: Branch::Lagging,
        tau,
        tau_prime,
        u,
        u_prime,
        x0,
        anchor,
        horizon,
    })
}

/// Pair for `0 < τ ≤ τ'`.
///
/// Both systems share `driving` on `[0, τ]`, reaching the anchor at `τ`.
/// System one then follows `free` on `[τ, 2τ]`; system two holds zero on
/// `[τ, τ']` and replays `free` on `[τ', τ' + τ]`.
pub fn construct_pair_leading(
    tau: f64,
    tau_prime: f64,
    x0: f64,
    inputs: &PairInputs,
) -> Result<IndistinguishablePair> {
    check_delays(tau, tau_prime, Branch::Leading)?;
    let horizon = tau;
    let f = forward_reachable(x0, horizon)?;
    let f_prime = forward_reachable(x0, tau_prime)?;
    let reach = f.intersection(&f_prime).expect("nested intervals intersect");
    let (anchor, shared) = resolve_driving(
        inputs,
        reach,
        (0.0, tau),
        |a| a - x0,
        |integral| x0 + integral,
    )?;
    let future = match &inputs.free {
        Some(c) => {
            check_span("free", c, tau, 2.0 * tau)?;
            c.clone()
        }
        None => BoundedControl::constant(tau, 2.0 * tau, 0.0)?,
    };

    let u = shared.then(&future)?;
    let mut u_prime = shared.clone();
    if tau_prime > tau {
        u_prime = u_prime.then(&BoundedControl::constant(tau, tau_prime, 0.0)?)?;
    }
    let replay = future.shifted(tau_prime - tau);
    // Re-seat the first breakpoint so the concatenation is exactly contiguous.
    let mut segs = replay.segments().to_vec();
    segs[0].t_start = u_prime.end();
    let u_prime = u_prime.then(&BoundedControl::new(segs)?)?;
    Ok(IndistinguishablePair {
        branch: Branch::Leading,
        tau,
        tau_prime,
        u,
        u_prime,
        x0,
        anchor,
        horizon,
    })
}

fn shared_control(inputs: &PairInputs, horizon: f64) -> Result<BoundedControl> {
    match &inputs.free {
        Some(c) => {
            check_span("free", c, 0.0, horizon)?;
            Ok(c.clone())
        }
        None => BoundedControl::constant(0.0, horizon, 0.0),
    }
}

/// State of `ẋ = u` at time `t`, given `x(0) = x0`.
pub fn state_at(u: &BoundedControl, x0: f64, t: f64) -> f64 {
    x0 + u.integral(0.0, t)
}

/// Noise-free output `y(t) = x(t + τ)`.
pub fn output_at(u: &BoundedControl, x0: f64, tau: f64, t: f64) -> f64 {
    state_at(u, x0, t + tau)
}

/// One row of the two-system simulation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSample {
    pub t: f64,
    pub y: f64,
    pub y_prime: f64,
    pub u: f64,
    pub u_prime: f64,
}

fn grid(t0: f64, t1: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((t1 - t0) / step - 1e-9).ceil().max(0.0) as usize;
    (0..=n).map(move |i| if i == n { t1 } else { t0 + i as f64 * step })
}

/// Simulates both systems on a grid over `[t0, t1]` (both ends included).
pub fn simulate_pair(
    pair: &IndistinguishablePair,
    t0: f64,
    t1: f64,
    grid_step: f64,
) -> Result<Vec<OutputSample>> {
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "grid step must be positive, got {grid_step}"
        )));
    }
    if !(t0 <= t1) {
        return Err(Error::InvalidArgument(format!("empty window [{t0}, {t1}]")));
    }
    Ok(grid(t0, t1, grid_step)
        .map(|t| OutputSample {
            t,
            y: output_at(&pair.u, pair.x0, pair.tau, t),
            y_prime: output_at(&pair.u_prime, pair.x0, pair.tau_prime, t),
            u: pair.u.value_at(t),
            u_prime: pair.u_prime.value_at(t),
        })
        .collect())
}

/// Largest `|y − y'|` on a grid over `[t0, t1]`.
pub fn max_output_difference(
    pair: &IndistinguishablePair,
    t0: f64,
    t1: f64,
    grid_step: f64,
) -> Result<f64> {
    Ok(simulate_pair(pair, t0, t1, grid_step)?
        .iter()
        .map(|s| (s.y - s.y_prime).abs())
        .fold(0.0, f64::max))
}

/// Largest `|y − y'|` over `[0, horizon]`.
pub fn verify_pair(pair: &IndistinguishablePair, grid_step: f64) -> Result<f64> {
    max_output_difference(pair, 0.0, pair.horizon, grid_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reachable_set_examples() {
        assert_eq!(forward_reachable(0.0, 0.0).unwrap(), Interval { lo: 0.0, hi: 0.0 });
        assert_eq!(forward_reachable(3.0, 2.0).unwrap(), Interval { lo: 1.0, hi: 5.0 });
        assert_eq!(backward_reachable(0.0, 0.0).unwrap(), Interval { lo: 0.0, hi: 0.0 });
        assert_eq!(backward_reachable(3.0, 2.0).unwrap(), Interval { lo: 1.0, hi: 5.0 });
        assert!(matches!(forward_reachable(0.0, -1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(backward_reachable(0.0, -0.5), Err(Error::InvalidArgument(_))));
    }

    /// Euler-integrates a random bang-bang control with `n` steps.
    fn bang_bang_end(rng: &mut ChaCha8Rng, x0: f64, t: f64, reverse: bool) -> f64 {
        let n = 200;
        let dt = t / n as f64;
        let mut x = x0;
        let mut u = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for _ in 0..n {
            if rng.random_bool(0.1) {
                u = -u;
            }
            x += if reverse { -u * dt } else { u * dt };
        }
        x
    }

    #[test]
    fn reachable_sets_contain_bang_bang_hulls() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let x0 = rng.random_range(-5.0..5.0);
            let t = rng.random_range(0.0..3.0);
            let f = forward_reachable(x0, t).unwrap();
            let b = backward_reachable(x0, t).unwrap();
            for _ in 0..500 {
                let xf = bang_bang_end(&mut rng, x0, t, false);
                let xb = bang_bang_end(&mut rng, x0, t, true);
                assert!(f.lo - 1e-12 <= xf && xf <= f.hi + 1e-12);
                assert!(b.lo - 1e-12 <= xb && xb <= b.hi + 1e-12);
            }
        }
    }

    #[test]
    fn control_validation() {
        let seg = |a, b, v| Segment {
            t_start: a,
            t_end: b,
            value: v,
        };
        assert!(BoundedControl::new(vec![]).is_err());
        assert!(BoundedControl::new(vec![seg(0.0, 1.0, 1.5)]).is_err());
        assert!(BoundedControl::new(vec![seg(0.0, 1.0, 0.5), seg(1.1, 2.0, 0.5)]).is_err());
        assert!(BoundedControl::new(vec![seg(1.0, 1.0, 0.5)]).is_err());
        assert!(BoundedControl::new(vec![seg(0.0, 1.0, -1.0), seg(1.0, 2.0, 1.0)]).is_ok());
    }

    #[test]
    fn control_integral_and_lookup() {
        let c = BoundedControl::uniform(-1.0, 1.0, &[1.0, -0.5]).unwrap();
        assert_eq!(c.integral(-1.0, 1.0), 0.5);
        assert_eq!(c.integral(1.0, -1.0), -0.5);
        assert_eq!(c.integral(-2.0, -0.5), 0.5);
        assert_eq!(c.value_at(0.0), -0.5);
        assert_eq!(c.value_at(-1.0), 1.0);
        assert_eq!(c.value_at(1.0), -0.5);
        assert_eq!(c.value_at(1.5), 0.0);
    }

    #[test]
    fn perturbation_splits_segments() {
        let c = BoundedControl::constant(0.0, 1.0, 0.2).unwrap();
        let p = c.perturbed(0.3, 0.4, 0.1).unwrap();
        assert_eq!(p.segments().len(), 3);
        assert!((p.integral(0.0, 1.0) - 0.21).abs() < 1e-15);
    }

    #[test]
    fn lagging_pair_controls_have_the_documented_shape() {
        let past = BoundedControl::uniform(-1.0, 0.0, &[0.5, -0.25]).unwrap();
        let inputs = PairInputs {
            driving: Some(past),
            ..Default::default()
        };
        let p = construct_pair_lagging(-1.0, -2.0, 0.0, &inputs).unwrap();
        assert_eq!(p.anchor, -0.125);
        assert_eq!(p.horizon, 1.0);
        assert_eq!(p.u_prime.start(), -2.0);
        assert_eq!(p.u_prime.value_at(-1.75), 0.5);
        assert_eq!(p.u_prime.value_at(-0.5), 0.0);
        assert!((state_at(&p.u_prime, 0.0, -2.0) - p.anchor).abs() < 1e-15);
        assert!(verify_pair(&p, 1e-4).unwrap() < 1e-12);
    }

    #[test]
    fn equal_delays_are_trivially_indistinguishable() {
        let p = construct_pair_lagging(-0.7, -0.7, 1.0, &PairInputs::default()).unwrap();
        assert_eq!(verify_pair(&p, 1e-3).unwrap(), 0.0);
        let p = construct_pair_leading(0.4, 0.4, 1.0, &PairInputs::default()).unwrap();
        assert_eq!(verify_pair(&p, 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn defaults_use_midpoint_anchor() {
        let p = construct_pair_lagging(-1.0, -2.0, 3.0, &PairInputs::default()).unwrap();
        assert_eq!(p.anchor, 3.0);
        let p = construct_pair_leading(
            1.0,
            1.5,
            3.0,
            &PairInputs {
                anchor: Some(3.5),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(p.u.value_at(0.5), 0.5);
        assert!(verify_pair(&p, 1e-4).unwrap() < 1e-12);
    }

    #[test]
    fn inconsistent_constructions_are_rejected() {
        // Anchor outside the backward reachable set.
        let far = PairInputs {
            anchor: Some(5.0),
            ..Default::default()
        };
        assert!(matches!(
            construct_pair_lagging(-1.0, -2.0, 0.0, &far),
            Err(Error::Construction(_))
        ));
        // Anchor disagrees with the supplied control.
        let mismatch = PairInputs {
            anchor: Some(0.3),
            driving: Some(BoundedControl::constant(-1.0, 0.0, 0.5).unwrap()),
            ..Default::default()
        };
        assert!(matches!(
            construct_pair_lagging(-1.0, -2.0, 0.0, &mismatch),
            Err(Error::Construction(_))
        ));
        // Control on the wrong span.
        let wrong_span = PairInputs {
            driving: Some(BoundedControl::constant(-2.0, 0.0, 0.5).unwrap()),
            ..Default::default()
        };
        assert!(construct_pair_lagging(-1.0, -2.0, 0.0, &wrong_span).is_err());
        // Sign mismatch and wrong ordering.
        assert!(matches!(
            construct_pair_lagging(-1.0, 2.0, 0.0, &PairInputs::default()),
            Err(Error::InvalidArgument(_))
        ));
        assert!(construct_pair_leading(1.0, 0.5, 0.0, &PairInputs::default()).is_err());
    }

    #[test]
    fn outputs_separate_after_the_horizon() {
        let inputs = PairInputs {
            driving: Some(BoundedControl::uniform(-1.0, 0.0, &[0.3, -0.6, 0.9]).unwrap()),
            free: Some(BoundedControl::constant(0.0, 1.0, 0.8).unwrap()),
            ..Default::default()
        };
        let p = construct_pair_lagging(-1.0, -2.0, 0.0, &inputs).unwrap();
        assert!(verify_pair(&p, 1e-4).unwrap() < 1e-12);
        assert!(max_output_difference(&p, 1.0, 1.5, 1e-3).unwrap() > 0.1);
    }

    #[test]
    fn grid_includes_both_ends() {
        let g: Vec<f64> = grid(0.0, 1.0, 0.3).collect();
        assert_eq!(g, vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
        let g: Vec<f64> = grid(0.0, 1.0, 0.25).collect();
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 1.0);
    }

    #[test]
    fn simulation_rejects_bad_step() {
        let p = construct_pair_lagging(-1.0, -2.0, 0.0, &PairInputs::default()).unwrap();
        assert!(verify_pair(&p, 0.0).is_err());
        assert!(simulate_pair(&p, 1.0, 0.0, 0.1).is_err());
    }
}
