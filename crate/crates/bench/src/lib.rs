//! Fixtures shared by the benchmarks.

use attestpo::estimator::ImuWindow;
use attestpo::sim::synthesize;
use attestpo::{ConingConfig, SimOutput, WindowPrior};
use nalgebra::Vector3;

/// Reference coning record with a fixed seed.
pub fn record(duration: f64) -> SimOutput {
    let cfg = ConingConfig {
        duration,
        seed: 7,
        ..ConingConfig::default()
    };
    synthesize(&cfg).expect("reference simulation is valid")
}

/// Prior at the true initial attitude with reference uncertainties.
pub fn prior(out: &SimOutput) -> WindowPrior {
    WindowPrior::from_sigmas(
        out.truth[0].q,
        Vector3::zeros(),
        Vector3::zeros(),
        Vector3::new(5.0, 5.0, 5.0).map(f64::to_radians),
        Vector3::repeat(0.4),
        Vector3::repeat(1f64.to_radians()),
    )
}

/// First `len + 1` samples as a window.
pub fn first_window(out: &SimOutput, len: usize) -> ImuWindow {
    ImuWindow::new(out.samples[..=len].to_vec(), 0).expect("window is well formed")
}
