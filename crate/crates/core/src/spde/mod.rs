//! Non-stationary Matérn fields through the SPDE link: a finite-element GMRF
//! on a Delaunay mesh with spatially varying `tau` and `kappa`, fitted by
//! penalized maximum likelihood and used for posterior-mean interpolation.

mod basis;
mod fem;
mod mesh;
mod model;

pub use basis::FourierBasis;
pub use fem::{assemble_precision, FemMatrices};
pub use mesh::{build_mesh, convex_hull, delaunay, is_collinear, Mesh, MIN_AREA, RING_FRACTION, SMALL_MESH};
pub use model::{
    fit_spde, marginal_variance_stationary, CovarianceKind, SpdeFitOptions, SpdeModel, SpdeParams, SIGMA2_FLOOR,
};
