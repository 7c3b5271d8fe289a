//! Two-state diagonal plant with bounded noise and exact measurements.
//!
//! `x+ = A x + B u + w` with diagonal `A`, `B`, `|w_i| <= noise_bound` and
//! `y = x`. The filter uses `R = 0` and `Q = diag(noise_bound^2 / 3)`, so a
//! received sample pins its state exactly and a withheld one leaves the
//! prediction, which lies within the threshold of the truth. The predicted
//! box adds `noise_bound` instead of a confidence multiple of the
//! covariance.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{properties, ScenarioConfig, SimError, SimResult, TraceRow};
use crate::estimator::{
    kf_predict, kf_update, predict_state_interval, EstimatorState, IntervalPrediction, LtiModel,
    Measurement, SensorChannel,
};
use crate::ettreg::EttAssignment;
use crate::proplogic::{StateBox, StateVector};

const NAMES: [&str; 2] = ["x1", "x2"];

fn input(config: &ScenarioConfig, k: usize) -> DVector<f64> {
    let s = &config.synthetic;
    let k = k as f64;
    DVector::from_vec(vec![
        s.amplitude[0] * (s.frequency[0] * k).sin(),
        s.amplitude[1] * (s.frequency[1] * k).cos(),
    ])
}

fn to_state(x: &DVector<f64>) -> StateVector {
    NAMES.iter().zip(x.iter()).map(|(n, v)| (*n, *v)).collect()
}

pub(super) fn run(config: &ScenarioConfig, seed: u64) -> Result<SimResult, SimError> {
    let steps = config.steps()?;
    let (monitored, evaluated) = properties(config)?;
    let s = &config.synthetic;
    if !(s.noise_bound >= 0.0) {
        return Err(SimError::Config("noise_bound must be non-negative".into()));
    }
    let q = s.noise_bound * s.noise_bound / 3.0;
    let model = LtiModel::new(
        DMatrix::from_diagonal(&DVector::from_row_slice(&s.a_diag)),
        DMatrix::from_diagonal(&DVector::from_row_slice(&s.b_diag)),
        DMatrix::identity(2, 2),
        DMatrix::from_diagonal_element(2, 2, q),
        DMatrix::zeros(2, 2),
        config.ts,
    )?;
    let opts = IntervalPrediction {
        z_sigma: 0.0,
        process_bound: Some(DVector::from_element(2, s.noise_bound)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let force_all = config.policy.is_time_triggered();

    let mut x = DVector::from_row_slice(&s.initial_state);
    let mut est = EstimatorState::new(x.clone(), DMatrix::from_diagonal_element(2, 2, q));
    let mut channels: Vec<SensorChannel> =
        NAMES.iter().map(|n| SensorChannel::new(*n, config.error_kind)).collect();
    for (ch, v) in channels.iter_mut().zip(x.iter()) {
        ch.last_value = Some(*v);
        ch.last_time = Some(0);
    }

    let thresholds = |est: &EstimatorState, radius: &DVector<f64>, k: usize| {
        let dx = if config.policy.uses_state_box() {
            let b = predict_state_interval(&model, est, radius, &input(config, k), &opts)?;
            NAMES.iter().zip(b).map(|(n, iv)| (*n, iv)).collect()
        } else {
            StateBox::new()
        };
        Ok::<EttAssignment, SimError>(config.policy.thresholds(&monitored, &to_state(&est.xhat), &dx)?)
    };

    let mut delta = thresholds(&est, &DVector::zeros(2), 0)?;
    let mut rho_min_true = f64::INFINITY;
    let mut rho_min_hat = f64::INFINITY;
    let mut sign_mismatches = 0u64;
    let mut trace = config.record_trace.then(Vec::new);

    for k in 1..=steps {
        let u = input(config, k - 1);
        let w = DVector::from_iterator(
            2,
            (0..2).map(|_| {
                if s.noise_bound > 0.0 {
                    rng.gen_range(-s.noise_bound..=s.noise_bound)
                } else {
                    0.0
                }
            }),
        );
        x = &model.a * &x + &model.b * &u + w;

        let pred = kf_predict(&model, &est, &u)?;
        let mut meas = Vec::with_capacity(2);
        let mut fired = [false; 2];
        for (i, ch) in channels.iter_mut().enumerate() {
            ch.delta = delta.get(NAMES[i]);
            fired[i] = ch.offer(k, x[i], pred.xhat[i], force_all);
            meas.push(if fired[i] {
                Measurement::Received(x[i])
            } else {
                Measurement::Withheld { delta: ch.delta }
            });
        }
        est = kf_update(&model, &pred, &meas)?;

        let x_hat = to_state(&est.xhat);
        let x_true = to_state(&x);
        let rho_hat = evaluated.robustness(&x_hat)?;
        let rho_true = evaluated.robustness(&x_true)?;
        rho_min_true = rho_min_true.min(rho_true);
        rho_min_hat = rho_min_hat.min(rho_hat);
        if (rho_hat > 0.0) != (rho_true > 0.0) {
            sign_mismatches += 1;
        }

        let radius = DVector::from_iterator(
            2,
            (0..2).map(|i| if fired[i] { 0.0 } else { delta.get(NAMES[i]) }),
        );
        let used = std::mem::take(&mut delta);
        delta = thresholds(&est, &radius, k)?;

        if let Some(rows) = trace.as_mut() {
            rows.push(TraceRow {
                t: k as f64 * config.ts,
                true_state: x_true.iter().map(|(k, v)| (k.to_owned(), v)).collect(),
                estimate: x_hat.iter().map(|(k, v)| (k.to_owned(), v)).collect(),
                delta: NAMES.iter().map(|n| (n.to_string(), used.get(n))).collect(),
                triggered: NAMES.iter().zip(fired).map(|(n, f)| (n.to_string(), f)).collect(),
                rho_hat,
                rho_true,
            });
        }
    }

    let events = channels.iter().map(|ch| (ch.signal.clone(), ch.events)).collect::<std::collections::BTreeMap<_, _>>();
    Ok(SimResult {
        rho_min_true,
        rho_min_hat,
        total_events: events.values().sum(),
        events,
        steps,
        sign_mismatches,
        lane_changes: 0,
        trace,
    })
}
