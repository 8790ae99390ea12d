//! Numerical tools for p₀-minimum restraint functions: Hamiltonian
//! evaluation, level-set verification, sample-and-hold feedback synthesis,
//! time rescaling and convexification of control-polynomial dynamics.

pub mod error;
pub mod expr;
pub mod feedback;
pub mod hamiltonian;
pub mod minimize;
pub mod polysys;
pub mod rescale;
pub mod scenario;
pub mod sysmodel;
pub mod table;
pub mod verifier;

pub use error::{EvalError, ParseError};
pub use expr::{parse_expr, ScalarExpr};
pub use minimize::MinimizeBudget;
pub use sysmodel::{
    eval_poly, limiting_gradient_fd, ControlProblem, ControlSet, MrfCandidate, MultiIndex,
    PolyDynamics, StateSpace, Target, VectorField,
};
