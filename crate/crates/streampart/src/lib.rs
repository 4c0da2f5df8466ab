//! streampart: placement and replication planning for streaming dataflow
//! applications on CPU + FPGA platforms.

pub mod calibrate;
pub mod cli;
pub mod evaluate;
pub mod model;
pub mod rates;
pub mod scalar;
pub mod simulate;
pub mod solve;

#[cfg(test)]
pub(crate) mod testutil;

pub use calibrate::{calibrate, CalibrateError};
pub use evaluate::{evaluate, evaluate_in, explain, EvalError, EvaluationOf};
pub use model::{
    parse_assignment, parse_problem, serialize_assignment, serialize_problem, validate_problem,
    Assignment, PlacementChoice, ProblemSpec,
};
pub use rates::{repetition_vector, RepetitionVector};
pub use solve::milp::{check_lp, export_milp, LpError, LpSummary};
pub use solve::{
    solve_bnb, solve_exhaustive, solve_exhaustive_with, upper_bound, Solution, SolveError,
    SolveOptions,
};

/// Floating-point evaluation, the working instantiation.
pub type Evaluation = evaluate::EvaluationOf<f64>;
/// Exact rational evaluation.
pub type EvaluationExact = evaluate::EvaluationOf<num_rational::BigRational>;
