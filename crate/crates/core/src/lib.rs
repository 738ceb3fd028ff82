//! Numerical laboratory for backward SDEs with a default jump and reflected
//! backward SDEs with regulated (làdlàg) barriers, on exactly-solvable
//! scenario trees.
//!
//! The tree discretisation is a symmetric binomial Brownian walk extended
//! with a default branch of deterministic intensity. Conditional expectations
//! are exact per node, so martingale representation, reflection and
//! comparison properties can be verified at machine precision rather than
//! within sampling error.

pub mod bsde;
pub mod calib;
pub mod driver;
pub mod error;
pub mod grid;
pub mod intensity;
pub mod measure;
pub mod norms;
pub mod parallel;
pub mod penalty;
pub mod reflected;
pub mod regulated;
pub mod rules;
pub mod stopping;
pub mod tree;

pub use bsde::{
    apriori_gap_bound, certify_dominance, compare_bsde, f_expectation, representation_residual,
    solve_bsde, solve_bsde_stopped, BsdeSolution, ComparisonReport, DominanceCertificate, GapBound,
};
pub use driver::{linear_driver, market_driver, zero_driver, Curve, Driver, DriverPair};
pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use intensity::IntensityCurve;
pub use measure::{doleans_exponential, girsanov_check, GirsanovResiduals, MeasureChange};
pub use norms::{expectation_path_max, weight_process, weighted_norms, WeightedNorms};
pub use regulated::{
    build_rho_arrays, decompose_fv, integration_by_parts_check, tanaka_check, FVDecomposition,
    PathTriple, RegulatedPath, RhoArray, TanakaReport,
};
pub use rules::StoppingRule;
pub use tree::{field_from_fn, terminal_from_fn, Node, NodeField, ScenarioTree, Status};
