//! Wind forecasting engine: space-time field storage, harmonic detrending,
//! support-point knot selection, echo-state forecasting, SPDE interpolation,
//! uncertainty calibration and power conversion.

pub mod calibrate;
pub mod container;
pub mod error;
pub mod field;
pub mod knots;
pub mod linalg;
pub mod optim;
pub mod power;
pub mod reservoir;
pub mod rng;
pub mod simbench;
pub mod spde;
pub mod trend;

pub use error::{Error, Result};
pub use field::{FieldFormat, ForecastSet, LocationTable, SpaceTimeField};
