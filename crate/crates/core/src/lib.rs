//! Second-order calculus on finite models of metric measure spaces.

pub mod bank;
pub mod covariant;
pub mod dirichlet;
pub mod error;
pub mod exterior;
pub mod fields;
pub mod hessian;
pub mod lagrangian;
pub mod linalg;
pub mod mesh_io;
pub mod poly;
pub mod report;
pub mod ricci;
pub mod space;
pub mod suite;

pub use error::{CalcError, Result};
pub use fields::{CellScalar, Exponent, KForm, OneForm, ScalarField, SignedMeasure, Tensor2Field, VectorField};
pub use space::DiscreteSpace;
