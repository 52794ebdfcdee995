//! Finite deep networks built from integral-representation teachers.
//!
//! The crate covers the whole pipeline at desk scale: a finite-resolution
//! teacher `f^o`, per-layer kernel spectra and degrees of freedom, ridge
//! leverage node sampling that turns the teacher into a finite network `f*`,
//! projected-gradient ERM over the norm-constrained class F, and every
//! closed-form approximation / generalization bound used to plan widths.

pub mod bounds;
pub mod discretize;
pub mod erm;
pub mod error;
pub mod experiment;
pub mod netcore;
pub mod seed;
pub mod spectrum;
pub mod teacher;

pub use error::{Error, Result};
pub use netcore::{Activation, FiniteNetwork, NormBudget};
