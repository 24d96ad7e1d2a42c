//! Kernels for the two smoothing stages.

use crate::stats::norm_pdf;

/// Fourth-order Gaussian-based kernel `(3 - v^2)/2 * phi(v)`.
pub fn k4(v: f64) -> f64 {
    0.5 * (3.0 - v * v) * norm_pdf(v)
}

/// Second-order Gaussian kernel up to its normalizing constant, which
/// cancels in Nadaraya–Watson weights.
pub fn gauss_unnormalized(v: f64) -> f64 {
    (-0.5 * v * v).exp()
}

/// Beyond this many bandwidths the Gaussian weight underflows to exactly
/// zero, so windowed evaluation loses nothing.
pub const GAUSS_WINDOW: f64 = 39.0;
