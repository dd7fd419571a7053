#![allow(dead_code)]

use attestpo::chebyshev::{cheb_fit, default_fit_terms, ChebyshevSeries};
use attestpo::estimator::ImuWindow;
use attestpo::sim::{coning_quat, synthesize, ConingConfig, SimOutput};
use attestpo::WindowPrior;
use nalgebra::{DVector, Vector3};

/// Noise-free, bias-free coning record of `duration` seconds.
pub fn noiseless(duration: f64) -> (ConingConfig, SimOutput) {
    let cfg = ConingConfig {
        duration,
        ..ConingConfig::default()
    }
    .noiseless();
    let out = synthesize(&cfg).unwrap();
    (cfg, out)
}

/// Window over samples `k0..=k0 + len` using every measurement.
pub fn window(out: &SimOutput, k0: usize, len: usize) -> ImuWindow {
    ImuWindow::full(out.samples[k0..=k0 + len].to_vec()).unwrap()
}

/// Prior centred on the truth at sample `k0`.
pub fn exact_prior(out: &SimOutput, k0: usize) -> WindowPrior {
    let t = &out.truth[k0];
    WindowPrior::from_sigmas(
        t.q,
        t.accel_bias,
        t.gyro_bias,
        Vector3::repeat(5f64.to_radians()),
        Vector3::repeat(0.2),
        Vector3::repeat(0.02),
    )
}

/// Chebyshev fit of the true quaternion path over `[t0, t1]`.
pub fn truth_series(cfg: &ConingConfig, t0: f64, t1: f64, order: usize) -> ChebyshevSeries {
    cheb_fit(
        |tau| {
            let t = 0.5 * ((t1 - t0) * tau + t1 + t0);
            Ok(DVector::from_column_slice(coning_quat(cfg, t)?.to_vec4().as_slice()))
        },
        order,
        default_fit_terms(order),
    )
    .unwrap()
}
