//! Joint refinement of the extrinsic and clock offset against a
//! continuous-time spline of the hand trajectory.

pub mod banded;
pub mod fit;
pub mod lm;
pub mod problem;
pub mod residual;
pub mod spline;

pub use fit::{fit_spline, SplineFit};
pub use lm::{refine, refine_with_spline, RefinementReport, RefinementResult, Termination};
pub use problem::{CostTerms, RefinementConfig, RefinementError, RefinementProblem, RefinementState};
pub use spline::{SplineError, SplineEval, SplinePose};
