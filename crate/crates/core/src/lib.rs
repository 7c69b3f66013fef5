//! Dimension estimates for compact invariant sets of smooth maps.
//!
//! The crate samples invariant sets of built-in maps ([`systems`]), measures
//! their upper box dimension empirically ([`boxdim`]), and evaluates
//! analytic upper bounds built from Jacobian singular values, determinants
//! and growth rates along orbits ([`bounds`]).

pub mod bounds;
pub mod boxdim;
pub mod cloud;
pub mod linalg;
pub mod systems;

pub use boxdim::{FitResult, ScaleSchedule};
pub use cloud::{CloudMeta, PointCloud};
pub use linalg::{LogDet, Matrix, SingularSpectrum};
pub use systems::{AmbientKind, AmbientSpace, Invariance, SystemDescriptor};
