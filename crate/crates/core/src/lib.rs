//! Spectral theory for first-order systems `Ju' + qu = wf` whose coefficients
//! are matrix measures: propagation across atoms, block assembly, Weyl
//! matrix, spectral measure, eigenfunction expansion and a Fatou lab.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assembly;
pub mod error;
pub mod fatou;
pub mod func;
pub mod linalg;
pub mod measures;
pub mod ode;
pub mod propagation;
pub mod quadrature;
pub mod spectral;
pub mod system;
pub mod transform;
pub mod weyl;

pub use assembly::{BlockAssembly, SpectralProblem};
pub use error::{Error, Result};
pub use fatou::{ScalarFn, ScalarMeasureModel};
pub use func::PiecewiseFn;
pub use linalg::{Mat, Vect, C64};
pub use measures::{Atom, MatrixMeasure, Segment};
pub use propagation::{FundamentalSystem, Layout, Side};
pub use spectral::{Eigenpair, SpectralMeasureModel};
pub use system::{BoundaryConditions, Endpoint, SingularEndpoint, SystemSpec, Tolerances};
pub use transform::TauVector;
pub use weyl::WeylSample;
