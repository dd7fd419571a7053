//! Inertial-magnetic attitude estimation by sliding-window Chebyshev
//! polynomial optimization, with a linear initializer, a multiplicative EKF
//! baseline, a coning-motion simulator and Monte-Carlo tooling.

// Negated comparisons are how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chebyshev;
pub mod efh;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod init;
pub mod mekf;
pub mod rotmath;
pub mod sensors;
pub mod sim;
pub mod track;

pub use error::{Error, Result};
pub use estimator::{EstimatorConfig, Mode, WindowSolution};
pub use harness::{Algorithm, MonteCarloConfig, RunMetrics};
pub use rotmath::{Quaternion, RodriguesVector, RotationMatrix};
pub use sensors::{DetectorConfig, EarthModel, ImuSample, NoiseSpec};
pub use sim::{ConingConfig, SimOutput, TruthState};
pub use track::{ErrorStateCov, EstimateState, EstimateTrack, WindowDiagnostics, WindowPrior};
