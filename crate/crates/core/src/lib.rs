//! Detection and sub-pixel delineation of thin structures.
//!
//! Edges, vessel center-lines and curves in point clouds are recovered by
//! minimizing a curvature-regularized energy over per-site tangent lines and
//! binary detection indicators. Indicators are handled by mean-field
//! inference and tangents by a trust-region Levenberg-Marquardt solver.

pub mod bcd;
pub mod dual;
pub mod energy;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod graph;
pub mod inference;
pub mod pipelines;
pub mod raster;
pub mod scalar;
pub mod solver;
pub mod synth;
pub mod vector;

pub use energy::{Labeling, Mode, Problem, ProblemSpec, SiteSet};
pub use error::{Error, Result};
pub use geometry::{CurvatureKind, CurvatureTerm, TangentLine};
pub use graph::NeighborGraph;
pub use scalar::Real;

pub type Tangent2 = TangentLine<f64, 2>;
pub type Tangent3 = TangentLine<f64, 3>;
pub type Sites2 = SiteSet<f64, 2>;
pub type Sites3 = SiteSet<f64, 3>;
pub type Problem2 = Problem<f64, 2>;
pub type Problem3 = Problem<f64, 3>;
pub type Graph = NeighborGraph<f64>;
