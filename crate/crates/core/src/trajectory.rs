//! Analytic benchmark trajectories.
//!
//! A trajectory is a finite sum of sinusoids plus a constant offset, so the
//! position, velocity (the control input `u = ẋ`) and acceleration are all
//! available in closed form with no numerical integration.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One `amplitude · sin(angular_frequency · t + phase)` component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidTerm {
    /// Metres.
    pub amplitude: f64,
    /// Radians per second.
    #[serde(alias = "frequency")]
    pub angular_frequency: f64,
    /// Radians.
    #[serde(default)]
    pub phase: f64,
}

impl SinusoidTerm {
    pub const fn new(amplitude: f64, angular_frequency: f64, phase: f64) -> Self {
        SinusoidTerm {
            amplitude,
            angular_frequency,
            phase,
        }
    }

    fn is_finite(&self) -> bool {
        self.amplitude.is_finite() && self.angular_frequency.is_finite() && self.phase.is_finite()
    }
}

/// `offset + Σ Aᵢ sin(ωᵢ t + φᵢ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidSum {
    pub terms: Vec<SinusoidTerm>,
    #[serde(default)]
    pub offset: f64,
}

impl SinusoidSum {
    /// Builds a trajectory, rejecting non-finite coefficients.
    ///
    /// An empty or constant-velocity sum is accepted here; use
    /// [`SinusoidSum::is_excited`] (or [`SinusoidSum::validate_for_experiment`])
    /// where delay identification is expected.
    pub fn new(terms: Vec<SinusoidTerm>, offset: f64) -> Result<Self> {
        if !offset.is_finite() || terms.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument(
                "trajectory coefficients must be finite".into(),
            ));
        }
        Ok(SinusoidSum { terms, offset })
    }

    pub fn position(&self, t: f64) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .map(|c| c.amplitude * (c.angular_frequency * t + c.phase).sin())
                .sum::<f64>()
    }

    pub fn velocity(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|c| c.amplitude * c.angular_frequency * (c.angular_frequency * t + c.phase).cos())
            .sum()
    }

    pub fn acceleration(&self, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|c| {
                let w = c.angular_frequency;
                -c.amplitude * w * w * (w * t + c.phase).sin()
            })
            .sum()
    }

    /// Upper bound `Σ |A ω²|` on the acceleration magnitude over all time.
    pub fn acceleration_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|c| (c.amplitude * c.angular_frequency * c.angular_frequency).abs())
            .sum()
    }

    /// True when at least one term has nonzero amplitude and frequency, i.e.
    /// the velocity is not constant. A constant-velocity trajectory leaves
    /// the delay unidentifiable because `τ` trades off against `x(0)`.
    pub fn is_excited(&self) -> bool {
        self.terms
            .iter()
            .any(|c| c.amplitude != 0.0 && c.angular_frequency != 0.0)
    }

    pub fn validate_for_experiment(&self) -> Result<()> {
        if !self.is_excited() {
            return Err(Error::Config(
                "trajectory has constant velocity; the delay would be unidentifiable".into(),
            ));
        }
        Ok(())
    }

    /// Same shape, shifted so that `position(t0) == x0`.
    pub fn anchored_at(&self, t0: f64, x0: f64) -> SinusoidSum {
        let mut shifted = self.clone();
        shifted.offset += x0 - self.position(t0);
        shifted
    }
}

// Benchmark presets. These coefficients are repository constants chosen to
// give a conservative (max |a| ≈ 0.46 m/s² on [0, 10] s) and an aggressive
// (max |a| ≈ 5.9 m/s²) sinusoid sum.
const TRAJ1_TERMS: [SinusoidTerm; 2] = [
    SinusoidTerm::new(1.2, 0.5, 0.0),
    SinusoidTerm::new(0.4, 0.9, 1.0),
];
const TRAJ2_TERMS: [SinusoidTerm; 3] = [
    SinusoidTerm::new(1.0, 1.5, 0.0),
    SinusoidTerm::new(0.5, 2.6, 0.5),
    SinusoidTerm::new(0.2, 1.1, 2.0),
];

/// Named benchmark trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Conservative: slowly varying control input.
    Traj1,
    /// Aggressive: larger maximum acceleration.
    Traj2,
}

impl Preset {
    pub const ALL: [Preset; 2] = [Preset::Traj1, Preset::Traj2];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Traj1 => "traj1",
            Preset::Traj2 => "traj2",
        }
    }

    pub fn from_name(name: &str) -> Result<Preset> {
        match name {
            "traj1" => Ok(Preset::Traj1),
            "traj2" => Ok(Preset::Traj2),
            other => Err(Error::Config(format!(
                "unknown trajectory preset `{other}` (expected traj1 or traj2)"
            ))),
        }
    }

    pub fn trajectory(self) -> SinusoidSum {
        let terms = match self {
            Preset::Traj1 => TRAJ1_TERMS.to_vec(),
            Preset::Traj2 => TRAJ2_TERMS.to_vec(),
        };
        SinusoidSum { terms, offset: 0.0 }
    }
}

/// A trajectory as written in an experiment config: either a preset name or
/// an explicit list of terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrajectorySpec {
    Preset(Preset),
    Custom(SinusoidSum),
}

impl TrajectorySpec {
    pub fn resolve(&self) -> Result<SinusoidSum> {
        match self {
            TrajectorySpec::Preset(p) => Ok(p.trajectory()),
            TrajectorySpec::Custom(s) => SinusoidSum::new(s.terms.clone(), s.offset),
        }
    }

    pub fn label(&self) -> String {
        match self {
            TrajectorySpec::Preset(p) => p.name().to_string(),
            TrajectorySpec::Custom(_) => "custom".to_string(),
        }
    }
}
