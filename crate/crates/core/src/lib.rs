//! Analysis of islanded microgrids under quadratic droop voltage control.
//!
//! The crate models a network of load and inverter buses in per-unit,
//! reduces it to an equivalent load-bus network, solves for the
//! high-voltage equilibrium under several reactive load models, certifies
//! its local stability, quantifies reactive power sharing between
//! inverters, checks the cost function the controller minimizes, and
//! integrates the closed-loop differential-algebraic dynamics.

pub mod equilibrium;
pub mod error;
pub mod linalg;
pub mod loads;
pub mod netfile;
pub mod netmodel;
pub mod optimality;
pub mod reduction;
pub mod sharing;
pub mod simulate;
pub mod stability;
pub mod synth;
pub mod validation;

pub use equilibrium::{
    recover_inverter_voltages, solve, solve_dynamic_shunt, solve_newton, solve_zi,
    solve_zip_perturbative, verify_full_equilibrium, EquilibriumSolution, SolveMethod,
    SolverOptions,
};
pub use error::{Error, ErrorClass, Result};
pub use linalg::{Matrix, Vector};
pub use loads::{LoadKind, LoadSpec};
pub use netfile::{NetworkDocument, ParsedNetwork};
pub use netmodel::{
    build_susceptance, validate_susceptance, Branch, LossyBranch, NetworkModel, SusceptanceBlocks,
};
pub use optimality::{evaluate_cost, verify_optimality, CostBreakdown, OptimalityVerdict};
pub use reduction::{
    check_reduced_properties, effective_reactances, kron_reduce, reduce_model,
    EffectiveReactanceMap, ReducedNetwork,
};
pub use sharing::{SharingRegime, SharingReport};
pub use simulate::{simulate, SimConfig, SimStatus, SimTrace};
pub use stability::{StabilityReport, SufficientCondition};
pub use validation::{CheckItem, ValidationReport};

pub use nalgebra::Complex;
