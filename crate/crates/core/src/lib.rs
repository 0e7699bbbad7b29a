//! Spatiotemporal hand-eye calibration between a reference trajectory
//! ("hand", e.g. motion capture) and an estimated trajectory ("eye", e.g.
//! visual-inertial odometry).
//!
//! The pipeline estimates the clock offset by correlating angular-speed
//! signals, solves the rigid extrinsic with a robust dual-quaternion linear
//! method, refines both jointly against a continuous-time spline of the hand
//! trajectory, and evaluates the aligned pair.
//!
//! Time convention used everywhere: `t_hand = t_eye + dt`.

pub mod calibration;
pub mod metrics;
pub mod pipeline;
pub mod refinement;
pub mod screw;
pub mod synthetic;
pub mod time_alignment;
pub mod trajectory;

pub use screw::{DualQuat, Pose, Quat, ScrewParams};
pub use trajectory::{PoseSample, Trajectory, TrajectoryError, TrajectoryFormat};
