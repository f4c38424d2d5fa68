//! Spatial regression for areal data with confounding correction by
//! projecting area centroids orthogonally to the covariates.
//!
//! The pipeline: build `P⊥` from the design ([`geometry`]), project the
//! centroids, rebuild the neighborhood graph on the projected geography
//! ([`graph`]), and fit a sparse GMRF model on the new graph ([`fit`]).
//! RHZ, HH, ICAR and LM fits are provided for comparison, along with a
//! canonical-correlation diagnostic ([`diagnostics`]) and a simulation
//! harness ([`simulation`]).

pub mod cholesky;
mod delaunay;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod geometry;
pub mod graph;
pub mod io;
pub mod precision;
pub mod scalar;
pub mod simulation;

pub use error::{Result, SpockError};
pub use scalar::Scalar;

pub type DesignMatrix = geometry::DesignMatrix<f64>;
pub type CentroidSet = geometry::CentroidSet<f64>;
pub type ProjectionOperator = geometry::ProjectionOperator<f64>;
pub type SparsePrecision = precision::SparsePrecision<f64>;
pub type MoranBasis = precision::MoranBasis<f64>;
pub type SparseCholesky = cholesky::SparseCholesky<f64>;

pub use graph::{NeighborhoodGraph, ReconstructionScore};
pub use precision::PrecisionFamily;
