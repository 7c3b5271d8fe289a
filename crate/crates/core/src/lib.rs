//! Robustness-driven event-trigger thresholds for remote state estimation.
//!
//! * [`interval`]: closed real intervals with outward-safe arithmetic.
//! * [`proplogic`]: propositional formulas over affine atoms, their
//!   robustness and a text parser.
//! * [`ettreg`]: threshold policies (constant, robustness-proportional and
//!   worst-case) and their refinement through `&&`/`||`.
//! * [`estimator`]: a Kalman filter that treats withheld samples as
//!   uniformly distributed inside the threshold band.
//! * [`sim`]: closed-loop scenarios.
//! * [`experiment`]: parameter grids, Pareto fronts and summaries.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN.

pub mod estimator;
pub mod ettreg;
pub mod experiment;
pub mod interval;
pub mod proplogic;
pub mod sim;

pub use estimator::{EstimatorState, LtiModel, Measurement};
pub use ettreg::{EttAssignment, PolicyConfig, SignalParams, WcGains};
pub use experiment::{ExperimentRow, ExperimentSpec, GridAxis};
pub use interval::Interval;
pub use proplogic::{parse, Formula, LinearAtom, StateBox, StateVector};
pub use sim::{run_simulation, ScenarioConfig, ScenarioKind, SimResult};
