//! Finite-horizon LQG control over a rate-limited channel that carries
//! quantized innovations.
//!
//! The sensor runs a Kalman filter and, at every stage, quantizes the current
//! innovation with one quantizer picked from a bank. Coarse quantizers arrive
//! sooner and cost less; the selection schedule that minimizes the expected
//! cost is computed offline and is separable across stages. The controller
//! keeps the certainty-equivalent gains and updates its estimate as messages
//! arrive.
//!
//! All time indices are 0-based: stages run over `0..T`.

#![no_std]
extern crate alloc;

pub mod estimator;
pub mod innovation;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod quantizer;
pub mod scenarios;
pub mod selection;
pub mod simulate;
pub mod synthesis;

pub use estimator::{batch_estimate, decode_message, ChannelMessage, EstimatorError, EstimatorState};
pub use innovation::{propagate_statistics, InnovationError, InnovationStatistics, SensorFilterState};
pub use linalg::{Matrix, Vector};
pub use model::{validate_scenario, ModelError, RawScenario, ScenarioModel, TrajectoryRecord, Violation};
pub use quadrature::{QuadratureConfig, QuadratureError};
pub use quantizer::{
    build_moment_tables, Cell, CellMomentTable, Interval, QuantizerBank, QuantizerError, QuantizerSpec,
};
pub use selection::{optimal_schedule, SelectionError, SelectionSchedule};
pub use simulate::{monte_carlo, run_trial, CostReport, OfflinePlan, SimulationConfig, SimulationError};
pub use synthesis::{solve_riccati, RiccatiSolution, SynthesisError};
