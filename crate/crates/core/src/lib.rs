//! Partially linear panel-data models with fixed effects.
//!
//! The crate fits `Y_it = X_itᵀβ + g(Z_it) + α_i + V_it` by profile
//! least-squares dummy-variable estimation with a local-linear smoother, and
//! builds simultaneous confidence bands for `g` from the Gumbel limit of the
//! studentized sup-deviation or from a wild bootstrap. A Monte-Carlo harness
//! runs coverage and accuracy studies on a known data-generating process.

pub mod bandwidth;
pub mod bootstrap_scb;
pub mod error;
pub mod fe_estimator;
pub mod kernels;
pub mod local_poly;
pub mod panel_data;
pub mod rng;
pub mod scb_asymptotic;
pub mod sim_harness;

pub use error::{Error, Result};
pub use bootstrap_scb::{bootstrap_band, BootstrapConfig, BootstrapResult};
pub use fe_estimator::{fit, fit_on_grid, FitOperator, FitResult, GridCurve, ProjectionSet};
pub use kernels::{epanechnikov, uniform, KernelSpec};
pub use panel_data::{load_csv, PanelDataset};
