//! Stage-parallel fully implicit Runge–Kutta (Radau IIA) solvers for linear
//! parabolic systems `M u' + K u = g`.
//!
//! The numerical core is generic over the floating-point type (see
//! [`scalar::Real`]); the aliases at the crate root fix it to `f64`, which is
//! what the solvers are tuned and tested for.

pub mod dense;
pub mod complex_solver;
pub mod error;
pub mod grid_fem;
pub mod irk_solver;
pub mod krylov;
pub mod multigrid;
pub mod perfmodel;
pub mod problem;
pub mod scalar;
pub mod simrt;
pub mod tableau;
pub mod tensor_ops;

pub use error::{Result, SolverError};
pub use scalar::{Field, Real};

pub type ButcherTableauF64 = tableau::ButcherTableau<f64>;
pub type DenseMatrixF64 = dense::DenseMatrix<f64>;
pub type GridHierarchyF64 = grid_fem::GridHierarchy<f64>;
pub type HeatDiscretizationF64 = problem::HeatDiscretization<f64>;
pub type RuntimeF64 = simrt::Runtime<f64>;
pub type StageBlockVectorF64 = tensor_ops::StageBlockVector<f64>;
pub type StageSystemF64<P> = irk_solver::StageSystem<f64, P>;
pub type CostModelF64 = perfmodel::CostModel<f64>;
pub type DirectStageSolverF64<P> = complex_solver::DirectStageSolver<f64, P>;
