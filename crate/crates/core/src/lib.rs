//! Viscous k-FORQ/MCH momentum equation on a bounded interval.
//!
//! The crate provides a finite-difference forward solver for
//! `y_t - eps y_xx + ((u^2 - u_x^2) y)_x + u_x y^2 + k u_x = B omega`,
//! `y = u - u_xx`, with homogeneous Dirichlet data, together with its exact
//! discrete tangent and adjoint, a tracking-type optimal control problem,
//! and numerical checks of the a priori and second-order estimates.

pub mod analysis;
pub mod banded;
pub mod control;
pub mod error;
pub mod forward;
pub mod grid;
pub mod helmholtz;
pub mod io;
pub mod tangent_adjoint;

pub use analysis::{EnergySeries, EstimateReport, GronwallReport, MomentumIdentity, WvBound};
pub use control::{
    optimize, Constants, CostParams, Evaluation, FirstOrderResiduals, InequalityCheck, IterRecord,
    Observer, OptimOptions, OptimState, OptimStatus, QuadraticForm, SecondOrderReport,
    TrackingProblem,
};
pub use error::{Error, Result};
pub use forward::{
    Control, ControlWindow, ForwardSolver, ForwardTrajectory, ModelParams, ViscousForm,
    WindowValues,
};
pub use grid::{Domain1D, Field, TimeGrid, Trajectory, TrajectoryNorms};
pub use helmholtz::{HelmholtzOperator, Velocity};
pub use io::{read_trajectory_csv, write_trajectory_csv, TrajectoryFile, TrajectoryMeta};
pub use tangent_adjoint::{AdjointForm, AdjointState, TangentState};
