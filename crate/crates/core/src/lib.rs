//! Galerkin finite elements, implicit Euler time stepping and empirical Young
//! measures for forward-backward parabolic systems
//! `∂ₜu - div a(Du) + Bu = F` on an interval with homogeneous Dirichlet data.

pub mod analysis;
pub mod banded;
pub mod ensemble;
pub mod error;
pub mod expr;
pub mod mesh;
pub mod nonlinearity;
pub mod stepper;

pub use error::{Error, Result};
pub use mesh::{FeField, Mesh1D};
pub use nonlinearity::{GrowthParams, Nonlinearity};
pub use stepper::{CouplingMatrix, Forcing, Problem, SchemeConfig, Trajectory};
