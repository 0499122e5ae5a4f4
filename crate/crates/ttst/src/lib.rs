//! Tensor-train space-time spectral collocation for the time-dependent
//! convection-diffusion-reaction (CDR) equation
//!
//! ```text
//! du/dt - kappa(t,x) lap(u) + b(t,x) . grad(u) + c(t,x) u = f(t,x)
//! ```
//!
//! on a box domain, with Dirichlet boundary data `g` and initial data `h`.
//! Space and time are discretized together on a Chebyshev-Gauss-Lobatto
//! grid, so the whole history is the solution of one linear system over
//! the 4D (t,x,y,z) grid. That system, its right-hand side, and the
//! solution are kept in tensor-train (TT) form, which keeps storage and
//! solve cost linear in the number of dimensions instead of exponential.
//!
//! The crate is organized around the pipeline:
//!
//! * [`chebyshev`] - collocation grids and differentiation matrices,
//! * [`tensor`] - dense tensors and Kronecker algebra (the oracle side),
//! * [`tt`] / [`tt_matrix`] - tensor-train vectors and operators,
//! * [`cross`] - maxvol-pivoted cross interpolation of grid functions,
//! * [`solve`] - an ALS solver with residual-based rank enrichment,
//! * [`cdr`] - assembly of the discrete CDR system in TT and dense form,
//! * [`reference`] - full-grid solvers, manufactured cases, error norms.
//!
//! A uniform-step backward-Euler time discretization is available next to
//! the spectral one, both as a single space-time system and as a classic
//! time-stepping march, so the two approaches can be compared on the same
//! problems.

pub mod chebyshev;
pub mod cdr;
pub mod cross;
mod krylov;
pub mod reference;
pub mod solve;
pub mod tensor;
pub mod tt;
pub mod tt_io;
pub mod tt_matrix;

pub use cdr::{CdrProblem, DiscreteSystem, SpaceTimeGrid, TimeScheme};
pub use chebyshev::{cgl_nodes, diff_matrix, second_diff_matrix, ChebGrid1D, DiffMatrix};
pub use cross::{maxvol, tt_cross, CrossConfig, CrossResult, GridFunction};
pub use reference::{compression_ratio, relative_l2_error, ErrorReport, ManufacturedCase};
pub use solve::{amen_solve, LocalSolver, SolveOptions, SolveReport};
pub use tensor::DenseTensor;
pub use tt::TTVector;
pub use tt_matrix::TTMatrix;

use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Tensor or operator shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    /// A dense object would exceed the element guard.
    #[error("memory guard: dense object with {elements} elements exceeds the {limit} limit")]
    MemoryGuard { elements: u128, limit: u128 },
    /// Maxvol was handed a numerically rank-deficient matrix.
    #[error("singular pivot in maxvol at column {column}")]
    SingularPivot { column: usize },
    /// A grid function produced a non-finite sample.
    #[error("non-finite evaluation {value} at index {index:?}")]
    EvalError { index: Vec<usize>, value: f64 },
    /// A local system inside the ALS solver could not be factored.
    #[error("singular local system at core {core} during sweep {sweep}")]
    LocalSolveSingular { sweep: usize, core: usize },
    /// An iterative solve ran out of iterations.
    #[error("iterative solver did not converge: {0}")]
    NoConvergence(String),
    /// Serialization problems.
    #[error("serialization: {0}")]
    Io(#[from] std::io::Error),
    /// Malformed serialized TT data.
    #[error("malformed TT data: {0}")]
    Format(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
