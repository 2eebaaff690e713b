//! Monte Carlo estimators: return-time tails, cell measures, correlations,
//! mean free path, and power-law fits.

pub mod cells;
pub mod correlation;
pub mod fit;
pub mod invariance;
pub mod mfp;
pub mod sampling;
pub mod tail;

pub use cells::{estimate_cell_measures, CellMeasures, CellScaling, ScalingOptions};
pub use correlation::{estimate_correlation, CorrelationOptions, CorrelationSeries, MapKind, Observable};
pub use fit::{compare_decay, fit_power_law, weighted_linear_fit, FitError, PowerLawFit, WindowPolicy};
pub use invariance::{pushforward_ks, InvarianceReport};
pub use mfp::{mean_free_path, MeanFreePath};
pub use sampling::ImportanceSampler;
pub use tail::{estimate_tail, run_ensemble, EnsembleOptions, Estimate, ReturnEnsemble, SurvivalCurve, TailEstimate};
