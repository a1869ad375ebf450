//! Numerical workbench for linearized gravity on cosmological vacuum
//! backgrounds.
//!
//! The crate realizes, at desk scale on a periodic symmetry-reduced grid,
//! the classical and quantum structure of metric perturbations: the
//! linearized Einstein and Lichnerowicz operators, constructive gauge
//! transformations, Cauchy evolution, retarded/advanced Green's operators,
//! the pre-symplectic product with its smeared observables, the ADM
//! constraint machinery on a slice, and the CCR observable algebra.

pub mod adm;
pub mod algebra;
pub mod background;
pub mod cauchy;
pub mod error;
pub mod fields;
pub mod gauge;
pub mod greens;
pub mod grid;
pub mod hyperbolic;
pub mod io;
pub mod linop;
pub mod suite;
pub mod symplectic;
pub mod util;

pub use background::{Background, BackgroundConfig, BackgroundSpec, ChartKind, GeometryPoint};
pub use error::{Error, Result};
pub use grid::{Grid, IndexWindow};
