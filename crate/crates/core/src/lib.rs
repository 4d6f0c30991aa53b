//! Rectified IoU loss laboratory.
//!
//! - [`boxgeom`]: axis-aligned box geometry and the IoU family of overlap metrics.
//! - [`riou_params`]: closed-form solver for the rectified loss coefficients.
//! - [`losses`]: loss values, IoU-space gradients and box-coordinate gradients.
//! - [`regsim`]: synthetic per-sample box-regression experiments.
//! - [`pyramid`]: shape-level dataflow graphs for the two-pronged feature pyramid.

pub mod boxgeom;
pub mod losses;
pub mod pyramid;
pub mod regsim;
pub mod riou_params;

pub use boxgeom::{Box2D, GeomError, Point2D};
pub use losses::{BoxGradient, LossError, LossKind};
pub use pyramid::{DataflowGraph, LevelSpec, PyramidError, TensorShape};
pub use regsim::{SimConfig, SimError, SimReport};
pub use riou_params::{solve_params, ParamError, RiouParams};
