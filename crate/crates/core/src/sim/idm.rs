//! Car-following model and lead-vehicle schedule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdmVariant {
    /// `a_max (1 - (v/v0)^e - (s*/s)^2)`.
    Standard,
    /// `a_max min(1 - (v/v0)^e, 1 - (s*/s)^2)`: the equilibrium gap equals
    /// `s*` instead of growing as `v` approaches `v0`.
    #[default]
    Plus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdmParams {
    pub d0: f64,
    pub headway: f64,
    pub a_max: f64,
    pub a_min: f64,
    pub b_comf: f64,
    pub v0: f64,
    pub exponent: f64,
    pub variant: IdmVariant,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            d0: 2.7,
            headway: 2.0,
            a_max: 2.5,
            a_min: -5.0,
            b_comf: 1.5,
            v0: 33.0,
            exponent: 4.0,
            variant: IdmVariant::Plus,
        }
    }
}

impl IdmParams {
    /// `d0 + v T`.
    pub fn steady_gap(&self, v: f64) -> f64 {
        self.d0 + v * self.headway
    }

    /// Desired gap `s* = d0 + v T + v dv / (2 sqrt(a_max b))`, never below `d0`.
    pub fn desired_gap(&self, v: f64, dv: f64) -> f64 {
        let dynamic = v * dv / (2.0 * (self.a_max * self.b_comf).sqrt());
        self.d0 + (v * self.headway + dynamic).max(0.0)
    }
}

/// Acceleration for speed `v`, approach rate `dv = v - v_ahead` and gap `s`,
/// clamped to `[a_min, a_max]`. Returns `None` when `s <= 0`.
pub fn idm_accel(v: f64, dv: f64, s: f64, p: &IdmParams) -> Option<f64> {
    if !(s > 0.0) {
        return None;
    }
    let free = 1.0 - (v.max(0.0) / p.v0).powf(p.exponent);
    let interaction = (p.desired_gap(v, dv) / s).powi(2);
    let a = match p.variant {
        IdmVariant::Standard => p.a_max * (free - interaction),
        IdmVariant::Plus => p.a_max * free.min(1.0 - interaction),
    };
    Some(a.clamp(p.a_min, p.a_max))
}

/// Free-road acceleration (no vehicle ahead).
pub fn idm_free(v: f64, p: &IdmParams) -> f64 {
    (p.a_max * (1.0 - (v.max(0.0) / p.v0).powf(p.exponent))).clamp(p.a_min, p.a_max)
}

/// Acceleration `accel` from time `start` until the next phase begins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulePhase {
    pub start: f64,
    pub accel: f64,
}

pub fn default_lead_schedule() -> Vec<SchedulePhase> {
    vec![
        SchedulePhase { start: 0.0, accel: 0.0 },
        SchedulePhase { start: 20.0, accel: -5.0 },
        SchedulePhase { start: 25.0, accel: 2.5 },
        SchedulePhase { start: 35.0, accel: 0.0 },
    ]
}

/// Piecewise-constant acceleration at time `t`; zero before the first phase.
pub fn lead_profile(schedule: &[SchedulePhase], t: f64) -> f64 {
    schedule.iter().rev().find(|p| t >= p.start).map_or(0.0, |p| p.accel)
}
