//! Power counting for singular Fermi surfaces: shell-volume and overlapping-loop
//! estimators for bands with Van Hove points, and the combinatorics of the
//! multiscale diagram expansion.

pub mod diagrams;
pub mod fit;
pub mod geometry;
pub mod harness;
pub mod mc;
pub mod meanfield;
pub mod multiscale;
pub mod nesting;
pub mod overlap;
pub mod shellvol;

pub use geometry::{DispersionModel, Domain, ModelKind, SingularPoint, SurfaceSample};
