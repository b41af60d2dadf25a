//! Power-system state estimation toolkit.
//!
//! The crate covers the whole chain from a network case to a served
//! learned estimator:
//!
//! - [`case`] and [`ybus`]: JSON network cases and the complex bus admittance matrix.
//! - [`powerflow`]: Newton-Raphson AC power flow producing ground-truth states.
//! - [`measurement`]: measurement plans, `h(x)`, its Jacobian and noise models.
//! - [`wls`]: weighted-least-squares estimation by Gauss-Newton iteration.
//! - [`neural`]: a small dense-network engine and the ResNetD base-learner.
//! - [`ensemble`]: stacked ResNetD base-learners with a linear meta-learner.
//! - [`forecast`]: lagged linear state forecasting and pseudo-measurements.
//! - [`pipeline`]: load profiles, dataset generation, experiments and manifests.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and sequentially otherwise; results are identical either way.

pub mod case;
pub mod ensemble;
pub mod error;
pub mod forecast;
pub mod linalg;
pub mod measurement;
pub mod neural;
pub mod parallel;
pub mod pipeline;
pub mod powerflow;
pub mod seed;
pub mod wls;
pub mod ybus;

pub use case::{Branch, BranchStatus, Bus, BusKind, NetworkCase};
pub use error::{Error, Result};
pub use measurement::{MeasurementKind, MeasurementPlan, MeasurementSpec, MeasurementVector, Preset};
pub use powerflow::{LoadScenario, PowerFlowOptions, PowerFlowSolution, StateVector};
pub use ybus::AdmittanceMatrix;

/// Toolkit version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
