//! Adaptive cruise control scenarios.
//!
//! The controlled vehicle measures its own speed (`v`) and the distance to
//! the vehicle ahead in its lane (`x_delta`). In the two-lane scenarios it
//! also measures the distances to the nearest vehicles ahead (`x_lo_p`) and
//! behind (`x_lo_f`) in the other lane.
//!
//! One filter tracks the controlled vehicle's own `[position, speed]`. Every
//! other tracked vehicle gets a filter on the relative state `[gap, gap
//! rate]`, where the controlled vehicle's known command enters through `B`
//! and the other vehicle's acceleration is process noise. When a sensor's
//! target changes (a vehicle passes, or a lane change), the sensor transmits
//! unconditionally and the filter for the new target starts from that
//! measurement.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{
    idm_accel, idm_free, lead_profile, properties, FastLane, ScenarioConfig, SimError, SimResult,
    TraceRow,
};
use crate::estimator::{
    kf_predict, kf_update, predict_state_interval, EstimatorState, IntervalPrediction, LtiModel,
    Measurement, SensorChannel,
};
use crate::ettreg::EttAssignment;
use crate::interval::Interval;
use crate::proplogic::{Formula, StateBox, StateVector};

/// Prior variance of the gap rate of a newly tracked vehicle.
const NEW_TARGET_RATE_VAR: f64 = 25.0;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Driver {
    Controlled,
    Schedule,
    /// Perfect-information car following with this cruise speed.
    Follow(f64),
}

#[derive(Debug, Clone)]
struct Vehicle {
    lane: u8,
    x: f64,
    v: f64,
    driver: Driver,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Side {
    Ahead,
    Behind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Role {
    OwnAhead,
    OtherAhead,
    OtherBehind,
}

impl Role {
    fn signal(self) -> &'static str {
        match self {
            Role::OwnAhead => "x_delta",
            Role::OtherAhead => "x_lo_p",
            Role::OtherBehind => "x_lo_f",
        }
    }

    fn side(self) -> Side {
        match self {
            Role::OtherBehind => Side::Behind,
            _ => Side::Ahead,
        }
    }
}

type Target = (usize, Side);

struct World {
    vehicles: Vec<Vehicle>,
    ego: usize,
}

impl World {
    fn ego(&self) -> &Vehicle {
        &self.vehicles[self.ego]
    }

    /// Nearest vehicle strictly ahead of `i` in `lane`.
    fn ahead_of(&self, i: usize, lane: u8) -> Option<usize> {
        let x = self.vehicles[i].x;
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(j, w)| *j != i && w.lane == lane && w.x >= x)
            .min_by(|a, b| a.1.x.total_cmp(&b.1.x).then(a.0.cmp(&b.0)))
            .map(|(j, _)| j)
    }

    fn behind_of(&self, i: usize, lane: u8) -> Option<usize> {
        let x = self.vehicles[i].x;
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(j, w)| *j != i && w.lane == lane && w.x < x)
            .max_by(|a, b| a.1.x.total_cmp(&b.1.x).then(b.0.cmp(&a.0)))
            .map(|(j, _)| j)
    }

    fn role_target(&self, role: Role) -> Option<usize> {
        let lane = self.ego().lane;
        match role {
            Role::OwnAhead => self.ahead_of(self.ego, lane),
            Role::OtherAhead => self.ahead_of(self.ego, 1 - lane),
            Role::OtherBehind => self.behind_of(self.ego, 1 - lane),
        }
    }

    /// `[gap, gap rate]` of vehicle `j` relative to the controlled vehicle.
    fn relative(&self, j: usize, side: Side) -> (f64, f64) {
        let (e, o) = (self.ego(), &self.vehicles[j]);
        match side {
            Side::Ahead => (o.x - e.x, o.v - e.v),
            Side::Behind => (e.x - o.x, e.v - o.v),
        }
    }
}

fn layout(config: &ScenarioConfig) -> World {
    let acc = &config.acc;
    let v = acc.initial_speed;
    let spacing = acc.idm.steady_gap(v) + acc.spacing_margin;
    let mut vehicles = vec![
        Vehicle { lane: 0, x: 0.0, v, driver: Driver::Controlled },
        Vehicle { lane: 0, x: spacing, v, driver: Driver::Schedule },
    ];
    if config.kind.is_multilane() {
        let fast: &FastLane = if config.kind == super::ScenarioKind::MultilaneCritical {
            &acc.fast_lane_critical
        } else {
            &acc.fast_lane_noncritical
        };
        vehicles.push(Vehicle { lane: 0, x: -spacing, v, driver: Driver::Follow(v) });
        vehicles.push(Vehicle { lane: 0, x: spacing + 1000.0, v, driver: Driver::Follow(v) });
        for j in 0..fast.count {
            let behind = -fast.first_behind - j as f64 * fast.spacing;
            let ahead = -fast.first_behind + (j + 1) as f64 * fast.spacing;
            for x in [behind, ahead] {
                vehicles.push(Vehicle { lane: 1, x, v: fast.speed, driver: Driver::Follow(fast.speed) });
            }
        }
    }
    World { vehicles, ego: 0 }
}

struct Models {
    own: LtiModel,
    ahead: LtiModel,
    behind: LtiModel,
}

impl Models {
    fn new(config: &ScenarioConfig) -> Result<Self, SimError> {
        let ts = config.ts;
        let acc = &config.acc;
        let a = DMatrix::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.5 * ts * ts, ts]);
        let q = DMatrix::from_row_slice(
            2,
            2,
            &[acc.q_acc[0][0], acc.q_acc[0][1], acc.q_acc[1][0], acc.q_acc[1][1]],
        );
        let own = LtiModel::new(
            a.clone(),
            b.clone(),
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            q.clone(),
            DMatrix::from_element(1, 1, acc.r_speed),
            ts,
        )?;
        let c_o = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let q_o = q * acc.q_other_factor;
        let r_o = DMatrix::from_element(1, 1, acc.r_distance);
        let ahead = LtiModel::new(a.clone(), -b.clone(), c_o.clone(), q_o.clone(), r_o.clone(), ts)?;
        let behind = LtiModel::new(a, b, c_o, q_o, r_o, ts)?;
        Ok(Self { own, ahead, behind })
    }

    fn relative(&self, side: Side) -> &LtiModel {
        match side {
            Side::Ahead => &self.ahead,
            Side::Behind => &self.behind,
        }
    }
}

/// Square-root factor of a symmetric PSD matrix via its eigendecomposition,
/// which also handles the rank-deficient case.
fn psd_factor(q: [[f64; 2]; 2]) -> Result<Matrix2<f64>, SimError> {
    let m = Matrix2::new(q[0][0], q[0][1], q[1][0], q[1][1]);
    if (m - m.transpose()).abs().max() > 1e-15 {
        return Err(SimError::Config("q_acc must be symmetric".into()));
    }
    let eig = SymmetricEigen::new(m);
    if eig.eigenvalues.iter().any(|l| *l < -1e-15) {
        return Err(SimError::Config("q_acc must be positive semidefinite".into()));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(eig.eigenvectors * Matrix2::from_diagonal(&sqrt))
}

struct Monitor {
    roles: Vec<Role>,
    signals: Vec<&'static str>,
}

impl Monitor {
    fn new(multilane: bool) -> Self {
        if multilane {
            Self {
                roles: vec![Role::OwnAhead, Role::OtherAhead, Role::OtherBehind],
                signals: vec!["v", "x_delta", "x_lo_p", "x_lo_f"],
            }
        } else {
            Self { roles: vec![Role::OwnAhead], signals: vec!["v", "x_delta"] }
        }
    }
}

struct Tracker {
    own: EstimatorState,
    relative: BTreeMap<Target, EstimatorState>,
    targets: BTreeMap<Role, Target>,
}

impl Tracker {
    fn estimate(&self, roles: &[Role]) -> StateVector {
        let v = self.own.xhat[1];
        let mut x = StateVector::new();
        x.insert("v", v);
        for role in roles {
            let est = &self.relative[&self.targets[role]];
            x.insert(role.signal(), est.xhat[0]);
            if *role == Role::OtherBehind {
                x.insert("v_lo_f", v - est.xhat[1]);
            }
        }
        x
    }
}

fn true_state(world: &World, targets: &BTreeMap<Role, Target>) -> StateVector {
    let mut x = StateVector::new();
    x.insert("v", world.ego().v);
    for (role, (j, side)) in targets {
        x.insert(role.signal(), world.relative(*j, *side).0);
        if *role == Role::OtherBehind {
            x.insert("v_lo_f", world.vehicles[*j].v);
        }
    }
    x
}

fn control(config: &ScenarioConfig, tracker: &Tracker) -> f64 {
    let v = tracker.own.xhat[1];
    let p = &config.acc.idm;
    match tracker.targets.get(&Role::OwnAhead) {
        Some(t) => {
            let est = &tracker.relative[t];
            idm_accel(v, -est.xhat[1], est.xhat[0], p).unwrap_or(p.a_min)
        }
        None => idm_free(v, p),
    }
}

fn advance(config: &ScenarioConfig, world: &mut World, u: f64, noise: Vector2<f64>, t_prev: f64) {
    let ts = config.ts;
    let acc = &config.acc;
    let accel: Vec<f64> = (0..world.vehicles.len())
        .map(|i| {
            let w = &world.vehicles[i];
            match w.driver {
                Driver::Controlled => u + acc.wind_bias,
                Driver::Schedule => lead_profile(&acc.lead_schedule, t_prev),
                Driver::Follow(v0) => {
                    let p = super::IdmParams { v0, ..acc.others_idm.clone() };
                    match world.ahead_of(i, w.lane) {
                        Some(j) => {
                            let o = &world.vehicles[j];
                            idm_accel(w.v, w.v - o.v, o.x - w.x, &p).unwrap_or(p.a_min)
                        }
                        None => idm_free(w.v, &p),
                    }
                }
            }
        })
        .collect();
    for (w, a) in world.vehicles.iter_mut().zip(accel) {
        let (dx, dv) = if w.driver == Driver::Controlled { (noise[0], noise[1]) } else { (0.0, 0.0) };
        w.x += w.v * ts + 0.5 * a * ts * ts + dx;
        w.v = (w.v + a * ts + dv).max(0.0);
    }
}

fn radius_or_zero(delta: &EttAssignment, signal: &str, triggered: bool) -> f64 {
    if triggered {
        0.0
    } else {
        delta.get(signal)
    }
}

/// Predicted box of the property states for the next sample.
fn predicted_box(
    config: &ScenarioConfig,
    models: &Models,
    tracker: &Tracker,
    roles: &[Role],
    delta: &EttAssignment,
    triggered: &BTreeMap<&'static str, bool>,
    u: f64,
) -> Result<StateBox, SimError> {
    let opts = IntervalPrediction { z_sigma: config.acc.z_sigma, process_bound: None };
    let input = DVector::from_element(1, u);
    let mut dx = StateBox::new();
    let r_v = radius_or_zero(delta, "v", triggered["v"]);
    let own = predict_state_interval(
        &models.own,
        &tracker.own,
        &DVector::from_vec(vec![0.0, r_v]),
        &input,
        &opts,
    )?;
    dx.insert("v", own[1]);
    for role in roles {
        let (j, side) = tracker.targets[role];
        let r = radius_or_zero(delta, role.signal(), triggered[role.signal()]);
        let rel = predict_state_interval(
            models.relative(side),
            &tracker.relative[&(j, side)],
            &DVector::from_vec(vec![r, 0.0]),
            &input,
            &opts,
        )?;
        dx.insert(role.signal(), rel[0]);
        if *role == Role::OtherBehind {
            let v_f: Interval = own[1] - rel[1];
            dx.insert("v_lo_f", v_f);
        }
    }
    Ok(dx)
}

/// Robustness of the two top-level branches when `phi` is a disjunction.
fn branches(phi: &Formula) -> Option<(&Formula, &Formula)> {
    match phi {
        Formula::Or(l, r) => Some((l, r)),
        _ => None,
    }
}

pub(super) fn run(config: &ScenarioConfig, seed: u64) -> Result<SimResult, SimError> {
    let steps = config.steps()?;
    let (monitored, evaluated) = properties(config)?;
    let models = Models::new(config)?;
    let noise_factor = psd_factor(config.acc.q_acc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut world = layout(config);
    let monitor = Monitor::new(config.kind.is_multilane());
    let force_all = config.policy.is_time_triggered();
    let acc = &config.acc;

    let mut channels: BTreeMap<&'static str, SensorChannel> = monitor
        .signals
        .iter()
        .map(|s| (*s, SensorChannel::new(*s, config.error_kind)))
        .collect();

    let ego = world.ego().clone();
    let mut tracker = Tracker {
        own: EstimatorState::new(
            DVector::from_vec(vec![ego.x, ego.v]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![acc.r_speed, acc.r_speed])),
        ),
        relative: BTreeMap::new(),
        targets: BTreeMap::new(),
    };
    for role in &monitor.roles {
        let j = world
            .role_target(*role)
            .ok_or_else(|| SimError::Config(format!("no vehicle for sensor {}", role.signal())))?;
        let target = (j, role.side());
        let (gap, rate) = world.relative(j, role.side());
        tracker.targets.insert(*role, target);
        tracker.relative.insert(
            target,
            EstimatorState::new(
                DVector::from_vec(vec![gap, rate]),
                DMatrix::from_diagonal(&DVector::from_vec(vec![acc.r_distance, acc.r_speed])),
            ),
        );
    }
    for (signal, ch) in channels.iter_mut() {
        let y = match *signal {
            "v" => ego.v,
            s => {
                let role = monitor.roles.iter().find(|r| r.signal() == s).expect("signal has a role");
                let (j, side) = tracker.targets[role];
                world.relative(j, side).0
            }
        };
        ch.last_value = Some(y);
        ch.last_time = Some(0);
    }

    let mut u = control(config, &tracker);
    let x_hat = tracker.estimate(&monitor.roles);
    let no_trigger: BTreeMap<&'static str, bool> =
        monitor.signals.iter().map(|s| (*s, true)).collect();
    let dx0 = if config.policy.uses_state_box() {
        predicted_box(config, &models, &tracker, &monitor.roles, &EttAssignment::new(), &no_trigger, u)?
    } else {
        StateBox::new()
    };
    let mut delta = config.policy.thresholds(&monitored, &x_hat, &dx0)?;

    let mut rho_min_true = f64::INFINITY;
    let mut rho_min_hat = f64::INFINITY;
    let mut sign_mismatches = 0u64;
    let mut lane_changes = 0usize;
    let mut trace = config.record_trace.then(Vec::new);

    for k in 1..=steps {
        let t_prev = (k - 1) as f64 * config.ts;
        let t = k as f64 * config.ts;

        // True dynamics. A collision is the vehicle ahead ending up at or
        // behind the controlled one.
        let ahead_before = world.role_target(Role::OwnAhead);
        let z = Vector2::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
        advance(config, &mut world, u, noise_factor * z, t_prev);
        if let Some(j) = ahead_before {
            let gap = world.relative(j, Side::Ahead).0;
            if gap <= 0.0 {
                return Err(SimError::Collision { t, gap });
            }
        }

        // Time update of every filter with the command just applied.
        let input = DVector::from_element(1, u);
        let own_pred = kf_predict(&models.own, &tracker.own, &input)?;
        let mut targets = BTreeMap::new();
        for role in &monitor.roles {
            let j = world
                .role_target(*role)
                .ok_or_else(|| SimError::Config(format!("no vehicle for sensor {}", role.signal())))?;
            targets.insert(*role, (j, role.side()));
        }

        // Sampling and triggering. Noise is drawn for every channel in
        // signal order whether or not it transmits.
        let mut triggered: BTreeMap<&'static str, bool> = BTreeMap::new();
        let mut own_meas = Measurement::Withheld { delta: delta.get("v") };
        let mut rel_meas: BTreeMap<Role, (Measurement, bool)> = BTreeMap::new();
        for (signal, ch) in channels.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            ch.delta = delta.get(signal);
            if *signal == "v" {
                let y = world.ego().v + acc.r_speed.sqrt() * z;
                let yhat = own_pred.xhat[1];
                let fire = ch.offer(k, y, yhat, force_all);
                if fire {
                    own_meas = Measurement::Received(y);
                }
                triggered.insert(signal, fire);
                continue;
            }
            let role = *monitor.roles.iter().find(|r| r.signal() == *signal).expect("role");
            let target = targets[&role];
            let y = world.relative(target.0, target.1).0 + acc.r_distance.sqrt() * z;
            let changed = tracker.targets.get(&role) != Some(&target);
            let yhat = if changed {
                y
            } else {
                let pred = kf_predict(models.relative(target.1), &tracker.relative[&target], &input)?;
                pred.xhat[0]
            };
            let fire = ch.offer(k, y, yhat, force_all || changed);
            let m = if fire { Measurement::Received(y) } else { Measurement::Withheld { delta: ch.delta } };
            rel_meas.insert(role, (m, changed));
            triggered.insert(signal, fire);
        }

        // Measurement updates.
        tracker.own = kf_update(&models.own, &own_pred, &[own_meas])?;
        let mut relative = BTreeMap::new();
        for role in &monitor.roles {
            let target = targets[role];
            if relative.contains_key(&target) {
                continue;
            }
            let (m, changed) = rel_meas[role];
            let est = match (tracker.relative.get(&target), changed) {
                (Some(prev), _) => {
                    let pred = kf_predict(models.relative(target.1), prev, &input)?;
                    kf_update(models.relative(target.1), &pred, &[m])?
                }
                (None, _) => {
                    let Measurement::Received(y) = m else {
                        unreachable!("a new target always transmits")
                    };
                    EstimatorState::new(
                        DVector::from_vec(vec![y, 0.0]),
                        DMatrix::from_diagonal(&DVector::from_vec(vec![
                            acc.r_distance,
                            NEW_TARGET_RATE_VAR,
                        ])),
                    )
                }
            };
            relative.insert(target, est);
        }
        tracker.relative = relative;
        tracker.targets = targets;

        // Monitoring on the estimate and on the true state.
        let x_hat = tracker.estimate(&monitor.roles);
        let x_true = true_state(&world, &tracker.targets);
        let rho_hat = evaluated.robustness(&x_hat)?;
        let rho_true = evaluated.robustness(&x_true)?;
        rho_min_true = rho_min_true.min(rho_true);
        rho_min_hat = rho_min_hat.min(rho_hat);
        if (rho_hat > 0.0) != (rho_true > 0.0) {
            sign_mismatches += 1;
        }

        if config.kind.is_multilane() && lane_changes < acc.lane_change.max_changes {
            if let Some((stay, switch)) = branches(&evaluated) {
                if stay.robustness(&x_hat)? < acc.lane_change.stay_below
                    && switch.robustness(&x_hat)? > acc.lane_change.switch_above
                {
                    let ego = world.ego;
                    world.vehicles[ego].lane = 1 - world.vehicles[ego].lane;
                    lane_changes += 1;
                }
            }
        }

        u = control(config, &tracker);

        let dx = if config.policy.uses_state_box() {
            predicted_box(config, &models, &tracker, &monitor.roles, &delta, &triggered, u)?
        } else {
            StateBox::new()
        };
        let used = delta;
        delta = config.policy.thresholds(&monitored, &x_hat, &dx)?;

        if let Some(rows) = trace.as_mut() {
            rows.push(TraceRow {
                t,
                true_state: x_true.iter().map(|(k, v)| (k.to_owned(), v)).collect(),
                estimate: x_hat.iter().map(|(k, v)| (k.to_owned(), v)).collect(),
                delta: monitor.signals.iter().map(|s| (s.to_string(), used.get(s))).collect(),
                triggered: triggered.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                rho_hat,
                rho_true,
            });
        }
    }

    let events: BTreeMap<String, u64> =
        channels.iter().map(|(s, ch)| (s.to_string(), ch.events)).collect();
    Ok(SimResult {
        rho_min_true,
        rho_min_hat,
        total_events: events.values().sum(),
        events,
        steps,
        sign_mismatches,
        lane_changes,
        trace,
    })
}
