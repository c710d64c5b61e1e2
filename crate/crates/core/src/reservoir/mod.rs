//! Deep echo state network: sparse random reservoirs with spectral scaling,
//! leaky tanh states, PCA reduction between layers, standardized linear plus
//! quadratic features and a ridge readout. Forecasts roll over a test period
//! with optional batch refits of the readout.

mod hyper;
mod model;
mod weights;

pub use hyper::{EsnGrid, EsnHyperParams, LayerSpec};
pub use model::{
    fit_esn, fit_readout, forecast_mspe, tune, EsnMember, EsnModel, GramAccumulator, Pca, Readout, Standardizer,
    StateTrajectory,
};
pub use weights::{
    effective_transition, generate_weights, power_iteration_radius, sparse_uniform, spectral_radius, LayerWeights,
    Reservoir, DENSE_EIGEN_LIMIT,
};
