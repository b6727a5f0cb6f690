//! Stochastic Taylor expansion regression.
//!
//! A regression function is approximated by the expectation of a random sum
//! `sum a (x - x0)^n` over the events `(a, n)` of a Poisson point process
//! whose intensity is a mixture of Gaussians. The expectation has a closed
//! form ([`eval::evaluate`]), the process can be simulated ([`sim`]) and the
//! mixture parameters are fitted by nonlinear least squares ([`fit`]).

pub mod bench;
pub mod error;
pub mod eval;
pub mod fit;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sim;

pub use error::{Result, SteError};
pub use eval::{evaluate, evaluate_general, from_taylor_polynomial, predict_grid};
pub use fit::{select_model, Dataset, FitConfig, FitResult, SelectedFit};
pub use metrics::GridSpec;
pub use model::{ComponentParams, EvalPoint, GeneralIntensity, SteModel};
pub use rng::RngStream;

/// Shortest text that parses back to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}
