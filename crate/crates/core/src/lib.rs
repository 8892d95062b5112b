//! Finite-volume simulation of a two-species tissue-growth model with
//! autophagy under the stiff pressure law `p = n^gamma`.
//!
//! The total density `n = n1 + n2` is advanced implicitly as a porous-medium
//! type equation, the autophagic fraction `c = n2 / n` is transported by the
//! Darcy velocity `u = -grad p`, and the nutrient `d` solves a linear
//! Helmholtz problem with Dirichlet data. The [`diagnostics`] module measures
//! the quantities that control the `gamma -> infinity` limit and the
//! [`harness`] module drives single runs, gamma sweeps, epsilon-refinement
//! studies and the Barenblatt benchmark.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod output;
pub mod stepper;

pub use error::{Error, Result};
pub use grid::{Field, Grid};
pub use model::{DerivedConstants, ModelParams, Preset, RateFunctions};
pub use stepper::{Solver, SolverOptions, State, StepReport};
