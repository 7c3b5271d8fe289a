//! Linear time-invariant models and the event-triggered Kalman filter.
//!
//! When a sensor does not transmit, the filter uses the predicted
//! measurement in its place and treats the true value as uniformly
//! distributed within the threshold band, adding `delta^2 / 3` to that
//! channel's measurement variance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::Interval;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("innovation covariance is singular")]
    Singular,
    #[error("threshold for channel {channel} must be non-negative, got {delta}")]
    NegativeDelta { channel: usize, delta: f64 },
    #[error("sample time must be positive, got {0}")]
    SampleTime(f64),
}

fn dim(what: impl Into<String>) -> EstimatorError {
    EstimatorError::Dimension(what.into())
}

/// `x+ = A x + B u + w`, `y = C x + r`, with `w ~ (0, Q)` and `r ~ (0, R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtiModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub ts: f64,
}

impl LtiModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        ts: f64,
    ) -> Result<Self, EstimatorError> {
        let model = Self { a, b, c, q, r, ts };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(dim("A must be square"));
        }
        if self.b.nrows() != n {
            return Err(dim("B must have as many rows as A"));
        }
        if self.c.ncols() != n {
            return Err(dim("C must have as many columns as A"));
        }
        if self.q.shape() != (n, n) {
            return Err(dim("Q must match A"));
        }
        let p = self.c.nrows();
        if self.r.shape() != (p, p) {
            return Err(dim("R must be square with one row per output"));
        }
        if !(self.ts > 0.0) {
            return Err(EstimatorError::SampleTime(self.ts));
        }
        Ok(())
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub xhat: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl EstimatorState {
    pub fn new(xhat: DVector<f64>, p: DMatrix<f64>) -> Self {
        Self { xhat, p }
    }
}

/// Prior after the time update.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub xhat: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl Prediction {
    pub fn measurement(&self, model: &LtiModel) -> DVector<f64> {
        &model.c * &self.xhat
    }
}

/// What the filter learns from one output channel in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measurement {
    Received(f64),
    /// No transmission; the true value is within `delta` of the last
    /// reference.
    Withheld { delta: f64 },
}

/// `xhat- = A xhat + B u`, `P- = A P A' + Q`.
pub fn kf_predict(
    model: &LtiModel,
    est: &EstimatorState,
    u: &DVector<f64>,
) -> Result<Prediction, EstimatorError> {
    if est.xhat.len() != model.states() || est.p.shape() != (model.states(), model.states()) {
        return Err(dim("estimate does not match the model"));
    }
    if u.len() != model.inputs() {
        return Err(dim(format!("expected {} inputs, got {}", model.inputs(), u.len())));
    }
    Ok(Prediction {
        xhat: &model.a * &est.xhat + &model.b * u,
        p: &model.a * &est.p * model.a.transpose() + &model.q,
    })
}

/// Measurement update with inflated variance on withheld channels.
///
/// Uses the Joseph form and symmetrizes the result.
pub fn kf_update(
    model: &LtiModel,
    pred: &Prediction,
    measurements: &[Measurement],
) -> Result<EstimatorState, EstimatorError> {
    let p_out = model.outputs();
    if measurements.len() != p_out {
        return Err(dim(format!("expected {p_out} measurements, got {}", measurements.len())));
    }
    let yhat = pred.measurement(model);
    let mut y = yhat.clone();
    let mut r = model.r.clone();
    for (i, m) in measurements.iter().enumerate() {
        match *m {
            Measurement::Received(value) => y[i] = value,
            Measurement::Withheld { delta } => {
                if !(delta >= 0.0) {
                    return Err(EstimatorError::NegativeDelta { channel: i, delta });
                }
                if delta.is_finite() {
                    r[(i, i)] += delta * delta / 3.0;
                } else {
                    r[(i, i)] = f64::INFINITY;
                }
            }
        }
    }

    // An infinite variance means the channel carries no information.
    let informative: Vec<usize> = (0..p_out).filter(|&i| r[(i, i)].is_finite()).collect();
    if informative.is_empty() {
        return Ok(EstimatorState { xhat: pred.xhat.clone(), p: pred.p.clone() });
    }
    let c = model.c.select_rows(&informative);
    let r = r.select_rows(&informative).select_columns(&informative);
    let innovation = y.select_rows(&informative) - yhat.select_rows(&informative);

    let pct = &pred.p * c.transpose();
    let s = &c * &pct + &r;
    let s_inv = s.try_inverse().ok_or(EstimatorError::Singular)?;
    let k = &pct * s_inv;
    let xhat = &pred.xhat + &k * innovation;
    let ikc = DMatrix::identity(model.states(), model.states()) - &k * &c;
    let p = &ikc * &pred.p * ikc.transpose() + &k * r * k.transpose();
    let p = (&p + p.transpose()) * 0.5;
    Ok(EstimatorState { xhat, p })
}

/// `|yhat - y|`.
pub fn innovation_error(yhat: f64, y: f64) -> f64 {
    (yhat - y).abs()
}

/// `|y - y_last|`.
pub fn sod_error(y_last: f64, y: f64) -> f64 {
    (y - y_last).abs()
}

/// Strict comparison: equality does not trigger.
pub fn trigger_check(e: f64, delta: f64) -> bool {
    e > delta
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    #[default]
    Innovation,
    SendOnDelta,
}

/// Sensor-side trigger state of one output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorChannel {
    pub signal: String,
    pub kind: ErrorKind,
    pub last_value: Option<f64>,
    pub last_time: Option<usize>,
    pub delta: f64,
    pub events: u64,
}

impl SensorChannel {
    pub fn new(signal: impl Into<String>, kind: ErrorKind) -> Self {
        Self {
            signal: signal.into(),
            kind,
            last_value: None,
            last_time: None,
            delta: 0.0,
            events: 0,
        }
    }

    /// The error the trigger compares against its threshold. Send-on-delta
    /// before any transmission is infinite.
    pub fn error(&self, y: f64, yhat: f64) -> f64 {
        match self.kind {
            ErrorKind::Innovation => innovation_error(yhat, y),
            ErrorKind::SendOnDelta => {
                self.last_value.map_or(f64::INFINITY, |last| sod_error(last, y))
            }
        }
    }

    /// Decides whether sample `y` at step `k` is transmitted and records it
    /// if so. `force` transmits unconditionally.
    pub fn offer(&mut self, k: usize, y: f64, yhat: f64, force: bool) -> bool {
        let fire = force || trigger_check(self.error(y, yhat), self.delta);
        if fire {
            self.last_value = Some(y);
            self.last_time = Some(k);
            self.events += 1;
        }
        fire
    }
}

/// Options for [`predict_state_interval`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalPrediction {
    /// Multiplier on the predicted per-state standard deviation.
    pub z_sigma: f64,
    /// Hard per-state bound on the process noise, added to the radius.
    pub process_bound: Option<DVector<f64>>,
}

/// One-step prediction of the box `[xhat - radius, xhat + radius]`.
///
/// The box is mapped through `A` with interval arithmetic, shifted by
/// `B u`, then widened by `z_sigma * sqrt(diag(A P A' + Q))` and the
/// optional process-noise bound.
pub fn predict_state_interval(
    model: &LtiModel,
    est: &EstimatorState,
    radius: &DVector<f64>,
    u: &DVector<f64>,
    opts: &IntervalPrediction,
) -> Result<Vec<Interval>, EstimatorError> {
    let n = model.states();
    if radius.len() != n {
        return Err(dim("radius must have one entry per state"));
    }
    if let Some(bound) = &opts.process_bound {
        if bound.len() != n {
            return Err(dim("process bound must have one entry per state"));
        }
    }
    if radius.iter().any(|r| !(*r >= 0.0)) {
        return Err(dim("radius entries must be non-negative"));
    }
    let pred = kf_predict(model, est, u)?;
    let bu = &model.b * u;
    let boxed: Vec<Interval> = (0..n)
        .map(|j| Interval::make(est.xhat[j], radius[j]).expect("radius checked above"))
        .collect();

    Ok((0..n)
        .map(|i| {
            let mapped = (0..n)
                .fold(Interval::point(bu[i]), |acc, j| acc + boxed[j].scale(model.a[(i, j)]));
            let mut widen = 0.0;
            if opts.z_sigma > 0.0 {
                widen += opts.z_sigma * pred.p[(i, i)].max(0.0).sqrt();
            }
            if let Some(bound) = &opts.process_bound {
                widen += bound[i];
            }
            mapped.inflate(widen)
        })
        .collect())
}
