use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed or physically invalid input data.
    Input,
    /// The analysis ran and produced a negative verdict (collapse, violated hypothesis).
    Analysis,
    /// A numerical routine failed (singular factorization, eigensolver, nonconvergence).
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid network model: {0}")]
    InvalidModel(String),

    #[error("network graph is disconnected; components: {}", format_components(.components))]
    Disconnected { components: Vec<Vec<String>> },

    #[error("branch {index} ({from}-{to}) has nonpositive susceptance weight {weight}")]
    NonpositiveBranch {
        index: usize,
        from: String,
        to: String,
        weight: f64,
    },

    #[error("branch impedance ratios are not uniform (max R/X spread {spread:.3e})")]
    NonUniformRatio { spread: f64 },

    #[error("invalid load specification: {0}")]
    InvalidLoad(String),

    #[error("voltage must be strictly positive (bus {bus}: {value})")]
    NonpositiveVoltage { bus: usize, value: f64 },

    #[error("load model not supported here: {0}")]
    UnsupportedLoadModel(String),

    #[error("reduced susceptance matrix is ill-conditioned (condition number {cond:.3e})")]
    IllConditioned { cond: f64 },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("internal consistency check failed: {0}")]
    InternalConsistency(String),

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error(
        "loads are too capacitive: -(B_red + [b_shunt]) is not an M-matrix \
         (smallest eigenvalue {min_eigenvalue:.6e})"
    )]
    CapacitiveLoad { min_eigenvalue: f64 },

    #[error(
        "constant-current loads are too inductive at buses {buses:?} (need I_shunt > B_red E_L*)"
    )]
    InductiveCurrent { buses: Vec<usize> },

    #[error(
        "loading too heavy for the perturbative solution: |Q_sc^-1 Q_L|_inf = {norm:.4} > {limit}"
    )]
    LoadingTooHeavy { norm: f64, limit: f64 },

    #[error("no high-voltage equilibrium found (voltage collapse): {reason}")]
    Collapse { reason: String },

    #[error(
        "Newton iteration did not converge in {iterations} iterations (residual {residual:.3e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("point is not an equilibrium (full residual {residual:.3e} > {tol:.1e})")]
    NotAnEquilibrium { residual: f64, tol: f64 },

    #[error("singularity-induced bifurcation: {0}")]
    SingularityInducedBifurcation(String),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error(
        "gain scale must be strictly positive and finite (got {0}); use the low-gain limit for 0"
    )]
    InvalidGainScale(f64),

    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{} validation error(s):\n  {}", .0.len(), .0.join("\n  "))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidModel(_)
            | Disconnected { .. }
            | NonpositiveBranch { .. }
            | NonUniformRatio { .. }
            | InvalidLoad(_)
            | NonpositiveVoltage { .. }
            | UnsupportedLoadModel(_)
            | InvalidGainScale(_)
            | Syntax { .. }
            | Validation(_)
            | Io(_) => ErrorClass::Input,
            CapacitiveLoad { .. }
            | InductiveCurrent { .. }
            | LoadingTooHeavy { .. }
            | Collapse { .. }
            | SingularityInducedBifurcation(_)
            | HypothesisViolated(_) => ErrorClass::Analysis,
            IllConditioned { .. }
            | Singular(_)
            | InternalConsistency(_)
            | Eigensolver(_)
            | NonConvergence { .. }
            | NotAnEquilibrium { .. } => ErrorClass::Numeric,
        }
    }
}

fn format_components(components: &[Vec<String>]) -> String {
    components
        .iter()
        .map(|c| format!("{{{}}}", c.join(", ")))
        .collect::<Vec<_>>()
        .join(" ")
}
