//! Closed-loop simulation of event-triggered monitoring.
//!
//! Three scenario families are provided:
//!
//! * single-lane adaptive cruise control behind a braking lead vehicle,
//! * a two-lane variant in which the controlled vehicle may move into a
//!   faster lane (critical and non-critical gap layouts),
//! * a two-state linear plant with bounded noise and exact measurements,
//!   used to check the sign-detection guarantee of the worst-case policy.
//!
//! Every run is a pure function of `(ScenarioConfig, seed)`. Randomness comes
//! from `ChaCha8Rng::seed_from_u64(seed)`; normal samples use
//! `rand_distr::StandardNormal` and uniform samples `Rng::gen_range`, drawn in
//! a fixed order each step.

mod acc;
pub mod idm;
mod synthetic;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{ErrorKind, EstimatorError};
use crate::ettreg::{AtomParams, EttError, PolicyConfig, SignalParams, WcGains};
use crate::proplogic::{EvalError, ParseError};

pub use idm::{idm_accel, idm_free, lead_profile, IdmParams, IdmVariant, SchedulePhase};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("collision at t = {t:.2} s (gap {gap:.3} m)")]
    Collision { t: f64, gap: f64 },
    #[error("property: {0}")]
    Parse(#[from] ParseError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("policy: {0}")]
    Policy(#[from] EttError),
    #[error("estimator: {0}")]
    Estimator(#[from] EstimatorError),
    #[error("trace output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    SingleLane,
    MultilaneCritical,
    MultilaneNoncritical,
    SyntheticLinear,
}

impl ScenarioKind {
    pub fn is_multilane(self) -> bool {
        matches!(self, ScenarioKind::MultilaneCritical | ScenarioKind::MultilaneNoncritical)
    }
}

/// Layout of the fast lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FastLane {
    pub speed: f64,
    /// Distance between consecutive fast-lane vehicles.
    pub spacing: f64,
    /// Position of the first fast-lane vehicle behind the controlled one.
    pub first_behind: f64,
    pub count: usize,
}

impl Default for FastLane {
    fn default() -> Self {
        Self { speed: 36.0, spacing: 200.0, first_behind: 200.0, count: 6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LaneChange {
    /// Move when the monitored robustness of the current-lane branch drops
    /// below this value...
    pub stay_below: f64,
    /// ...and the other-lane branch is monitored above this value.
    pub switch_above: f64,
    pub max_changes: usize,
}

impl Default for LaneChange {
    fn default() -> Self {
        Self { stay_below: 3.0, switch_above: 1.0, max_changes: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccConfig {
    pub idm: IdmParams,
    /// Car-following parameters of the other vehicles, which see the true
    /// state. Their `v0` is replaced by each vehicle's cruise speed.
    pub others_idm: IdmParams,
    /// Constant offset of the safety property: `x_delta > d_phi + T v`.
    pub d_phi: f64,
    pub initial_speed: f64,
    /// Initial spacing is `d0 + T v + spacing_margin`.
    pub spacing_margin: f64,
    /// Unmodeled acceleration added to the controlled vehicle's command.
    pub wind_bias: f64,
    /// Per-step process noise covariance of the controlled vehicle.
    pub q_acc: [[f64; 2]; 2],
    /// Filters of other vehicles use `q_other_factor * q_acc`.
    pub q_other_factor: f64,
    /// Measurement noise variances.
    pub r_speed: f64,
    pub r_distance: f64,
    /// Confidence multiplier for the predicted state box.
    pub z_sigma: f64,
    pub lead_schedule: Vec<SchedulePhase>,
    pub lane_change: LaneChange,
    pub fast_lane_critical: FastLane,
    pub fast_lane_noncritical: FastLane,
}

impl Default for AccConfig {
    fn default() -> Self {
        Self {
            idm: IdmParams::default(),
            others_idm: IdmParams::default(),
            d_phi: 0.0,
            initial_speed: 30.0,
            spacing_margin: 20.0,
            wind_bias: 0.2,
            q_acc: [[2.5e-9, 5.0e-7], [5.0e-7, 1.0e-4]],
            q_other_factor: 10.0,
            r_speed: 0.01,
            r_distance: 0.01,
            z_sigma: 3.0,
            lead_schedule: idm::default_lead_schedule(),
            lane_change: LaneChange::default(),
            fast_lane_critical: FastLane::default(),
            fast_lane_noncritical: FastLane {
                spacing: 600.0,
                first_behind: 300.0,
                ..FastLane::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub a_diag: [f64; 2],
    pub b_diag: [f64; 2],
    pub amplitude: [f64; 2],
    pub frequency: [f64; 2],
    /// Process noise is uniform on `[-noise_bound, noise_bound]` per state.
    pub noise_bound: f64,
    pub initial_state: [f64; 2],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            a_diag: [0.98, 0.98],
            b_diag: [0.02, 0.02],
            amplitude: [2.0, 2.0],
            frequency: [0.05, 0.03],
            noise_bound: 0.01,
            initial_state: [1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default = "default_ts")]
    pub ts: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    pub policy: PolicyConfig,
    /// Property the thresholds are computed from. Defaults per scenario.
    #[serde(default)]
    pub property: Option<String>,
    /// Property whose true-state robustness is reported. Defaults to the
    /// monitored property.
    #[serde(default)]
    pub evaluated_property: Option<String>,
    /// Monitor the property with every `||` replaced by `&&`.
    #[serde(default)]
    pub monitor_without_disjunction: bool,
    /// `rho_max` overrides by atom label.
    #[serde(default)]
    pub rho_max: BTreeMap<String, f64>,
    #[serde(default)]
    pub error_kind: ErrorKind,
    #[serde(default)]
    pub acc: AccConfig,
    #[serde(default)]
    pub synthetic: SyntheticConfig,
    #[serde(default)]
    pub record_trace: bool,
}

fn default_ts() -> f64 {
    0.01
}

fn default_duration() -> f64 {
    35.0
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind, policy: PolicyConfig) -> Self {
        let duration = if kind == ScenarioKind::SyntheticLinear { 5.0 } else { default_duration() };
        Self {
            kind,
            ts: default_ts(),
            duration,
            policy,
            property: None,
            evaluated_property: None,
            monitor_without_disjunction: false,
            rho_max: BTreeMap::new(),
            error_kind: ErrorKind::Innovation,
            acc: AccConfig::default(),
            synthetic: SyntheticConfig::default(),
            record_trace: false,
        }
    }

    /// Number of simulated steps, `duration / ts` rounded.
    pub fn steps(&self) -> Result<usize, SimError> {
        if !(self.ts > 0.0) || !(self.duration > 0.0) {
            return Err(SimError::Config("ts and duration must be positive".into()));
        }
        let n = self.duration / self.ts;
        if (n - n.round()).abs() > 1e-6 * n.max(1.0) {
            return Err(SimError::Config(format!(
                "duration {} is not a multiple of ts {}",
                self.duration, self.ts
            )));
        }
        Ok(n.round() as usize)
    }

    /// Default property text for the scenario.
    pub fn default_property(&self) -> String {
        let t = self.acc.idm.headway;
        let d = self.acc.d_phi;
        match self.kind {
            ScenarioKind::SingleLane => format!(
                "x_delta - {t}*v > {d} @label(a) @rhomax(60) @signals(v, x_delta)"
            ),
            ScenarioKind::MultilaneCritical | ScenarioKind::MultilaneNoncritical => format!(
                "(x_delta - {t}*v > {d} @label(b1) @rhomax(60) @signals(v, x_delta)) || \
                 (x_lo_f - {t}*v_lo_f > {d} @label(b2) @rhomax(60) @signals(x_lo_f) && \
                 x_lo_p - {t}*v > {d} @label(b3) @rhomax(60) @signals(x_lo_p, v))"
            ),
            ScenarioKind::SyntheticLinear => {
                "x1 + x2 > 0 @label(s) @rhomax(4) @signals(x1, x2)".to_owned()
            }
        }
    }

    /// Published parameter sets for each policy.
    pub fn preset(kind: ScenarioKind, policy: &str) -> Result<Self, SimError> {
        let multilane = kind.is_multilane();
        let p = match (policy, kind) {
            ("tt", _) => PolicyConfig::Tt,
            ("cett", ScenarioKind::SyntheticLinear) | ("rho_ett", ScenarioKind::SyntheticLinear) => {
                return Err(SimError::Config(format!("no `{policy}` preset for the synthetic scenario")))
            }
            ("cett", _) => {
                let mut delta: BTreeMap<String, f64> =
                    [("v".to_owned(), 0.16), ("x_delta".to_owned(), 0.5)].into_iter().collect();
                if multilane {
                    delta.insert("x_lo_p".into(), 0.5);
                    delta.insert("x_lo_f".into(), 2.0);
                }
                PolicyConfig::Cett { delta }
            }
            ("rho_ett" | "rho_ett_no_or", _) => {
                let mut eps = SignalParams::shared([("v", 16.64), ("x_delta", 4.95)]);
                if multilane {
                    let f = if policy == "rho_ett" { 4.03 } else { 2.51 };
                    eps.shared.insert("x_lo_p".into(), 4.95);
                    eps.shared.insert("x_lo_f".into(), f);
                }
                PolicyConfig::RhoEtt { eps }
            }
            ("rho_ett_wc", ScenarioKind::SyntheticLinear) => PolicyConfig::RhoEttWc {
                gains: WcGains::Theorem1 {
                    lambda: SignalParams::shared([("x1", 2.0), ("x2", 2.0)]),
                    eps_rho: AtomParams::uniform(1.0),
                },
            },
            ("rho_ett_wc", ScenarioKind::SingleLane) => PolicyConfig::RhoEttWc {
                gains: WcGains::Direct {
                    eps: SignalParams::shared([("v", 13.38), ("x_delta", 3.95)]),
                },
            },
            _ => return Err(SimError::Config(format!("no `{policy}` preset for {kind:?}"))),
        };
        let mut cfg = Self::new(kind, p);
        cfg.monitor_without_disjunction = policy == "rho_ett_no_or";
        Ok(cfg)
    }
}

/// One step of a recorded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub true_state: BTreeMap<String, f64>,
    pub estimate: BTreeMap<String, f64>,
    pub delta: BTreeMap<String, f64>,
    pub triggered: BTreeMap<String, bool>,
    pub rho_hat: f64,
    pub rho_true: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    /// Minimum over steps of the evaluated property on the true state.
    pub rho_min_true: f64,
    /// Minimum over steps of the evaluated property on the estimate.
    pub rho_min_hat: f64,
    pub events: BTreeMap<String, u64>,
    pub total_events: u64,
    pub steps: usize,
    /// Steps at which `rho_hat > 0` and `rho_true > 0` disagree.
    pub sign_mismatches: u64,
    pub lane_changes: usize,
    pub trace: Option<Vec<TraceRow>>,
}

impl SimResult {
    /// Writes the trace as CSV with columns `t`, `true_*`, `est_*`,
    /// `delta_*`, `trig_*`, `rho_hat`, `rho_true`. Infinite thresholds are
    /// written as `inf`.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let rows = self
            .trace
            .as_deref()
            .ok_or_else(|| SimError::Config("run was not recorded with record_trace".into()))?;
        let mut w = csv::Writer::from_writer(out);
        let Some(first) = rows.first() else {
            return Ok(());
        };
        let mut header = vec!["t".to_owned()];
        header.extend(first.true_state.keys().map(|k| format!("true_{k}")));
        header.extend(first.estimate.keys().map(|k| format!("est_{k}")));
        header.extend(first.delta.keys().map(|k| format!("delta_{k}")));
        header.extend(first.triggered.keys().map(|k| format!("trig_{k}")));
        header.push("rho_hat".into());
        header.push("rho_true".into());
        w.write_record(&header).map_err(csv_io)?;
        for row in rows {
            let mut rec = vec![row.t.to_string()];
            rec.extend(row.true_state.values().map(f64::to_string));
            rec.extend(row.estimate.values().map(f64::to_string));
            rec.extend(row.delta.values().map(f64::to_string));
            rec.extend(row.triggered.values().map(|b| u8::from(*b).to_string()));
            rec.push(row.rho_hat.to_string());
            rec.push(row.rho_true.to_string());
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> SimError {
    SimError::Io(std::io::Error::other(e))
}

/// Runs one simulation. Deterministic in `(config, seed)`.
pub fn run_simulation(config: &ScenarioConfig, seed: u64) -> Result<SimResult, SimError> {
    match config.kind {
        ScenarioKind::SyntheticLinear => synthetic::run(config, seed),
        _ => acc::run(config, seed),
    }
}

/// Parses the monitored and evaluated properties, applying `rho_max`
/// overrides.
pub(crate) fn properties(
    config: &ScenarioConfig,
) -> Result<(crate::proplogic::Formula, crate::proplogic::Formula), SimError> {
    use crate::proplogic::parse;
    let text = config.property.clone().unwrap_or_else(|| config.default_property());
    let mut evaluated = match &config.evaluated_property {
        Some(t) => parse(t)?,
        None => parse(&text)?,
    };
    let mut monitored = parse(&text)?;
    if config.monitor_without_disjunction {
        monitored = monitored.without_disjunction();
    }
    for f in [&mut monitored, &mut evaluated] {
        for atom in f.atoms_mut() {
            if let Some(r) = config.rho_max.get(&atom.label) {
                if !(*r > 0.0) {
                    return Err(SimError::Config(format!("rho_max of `{}` must be positive", atom.label)));
                }
                atom.rho_max = Some(*r);
            }
        }
    }
    config.policy.validate(&monitored)?;
    Ok((monitored, evaluated))
}
