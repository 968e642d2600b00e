//! Hybridizable discontinuous Galerkin discretization of distributed optimal
//! control problems for convection-diffusion equations.
//!
//! The optimality system couples a state `y` and adjoint `z` through the
//! control `u = z / gamma`. Both are written in mixed form with fluxes `q`
//! and `p`, discretized with polynomials of degree `k` on simplices, and
//! hybridized so that only traces on interior faces are globally coupled.
//!
//! ```no_run
//! use hdgoc::{build_structured_mesh, builtin_example, solve_with_degree};
//!
//! let spec = builtin_example(1)?;
//! let mesh = build_structured_mesh(2, 16)?;
//! let sol = solve_with_degree(&mesh, &spec, 1)?;
//! println!("{} trace unknowns", sol.n_trace_unknowns);
//! # Ok::<(), hdgoc::HdgError>(())
//! ```

pub mod assembly;
pub mod convergence;
pub mod error;
pub mod local;
pub mod mesh;
pub mod multifrontal;
pub mod par;
pub mod problem;
pub mod reference;
pub mod verify;

pub use assembly::{solve_problem, solve_with_degree, Solution, SolutionFields};
pub use convergence::{
    run_convergence_study, run_study, ConvergenceReport, ErrorRecord, FieldErrors,
};
pub use error::{HdgError, Result};
pub use mesh::{build_structured_mesh, SimplicialMesh};
pub use problem::{builtin_example, derive_manufactured_data, ManufacturedInput, ProblemSpec};
pub use reference::{make_basis, ReferenceBasis};
