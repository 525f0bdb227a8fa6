//! Dimension exponents of the gasket and a registry for fitted constants.

use serde::{Deserialize, Serialize};

/// Hausdorff dimension `log 3 / log 2`.
pub const ALPHA: f64 = 1.584_962_500_721_156;
/// Walk dimension `log 5 / log 2`.
pub const BETA: f64 = 2.321_928_094_887_362;

/// Empirical constants that the asymptotic statements leave unspecified.
/// Every field is filled in by the corresponding audit when it runs.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FittedConstants {
    /// `E_x tau(n) >= c1 d(x, boundary)^beta`
    pub c1: Option<f64>,
    /// `g_n(x,x) <= c2 d(x, boundary)^(beta-alpha)`
    pub c2: Option<f64>,
    pub harnack: Option<f64>,
    pub volume_lower: Option<f64>,
    pub volume_upper: Option<f64>,
    /// `u(z) >= c delta^beta`
    pub odometer: Option<f64>,
}
