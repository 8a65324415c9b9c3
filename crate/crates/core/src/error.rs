use alloc::boxed::Box;
use alloc::string::String;

use crate::qdt::Recovery;

/// Errors raised by the estimation core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("line {line}: {kind}")]
    Parse { line: usize, kind: ParseErrorKind },

    #[error("qubit count mismatch: expected {expected}, found {found}")]
    QubitMismatch { expected: usize, found: usize },

    #[error("qubit index {index} out of range for {num_qubits} qubits")]
    QubitOutOfRange { index: usize, num_qubits: usize },

    #[error("coefficient {0} is not finite")]
    NonFiniteCoefficient(f64),

    #[error("requested {requested} distinct terms but only {available} exist")]
    TooManyTerms { requested: usize, available: u128 },

    #[error("at most {max} qubits are supported, got {found}")]
    TooManyQubits { max: usize, found: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid basis distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid POVM: {0}")]
    InvalidPovm(String),

    #[error("effects are not informationally complete (frame condition number {condition:e})")]
    NotInformationallyComplete { condition: f64 },

    #[error("invalid assignment matrix: {0}")]
    InvalidAssignment(String),

    #[error("invalid telegraph process: {0}")]
    InvalidTelegraph(String),

    #[error("time {time} s lies outside the trajectory [0, {duration}] s")]
    TimeOutsideTrajectory { time: f64, duration: f64 },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("schedule does not match the plan: {0}")]
    ScheduleMismatch(String),

    #[error("infeasible caps: {0}")]
    InfeasibleCaps(String),

    #[error("no setting blocks supplied")]
    EmptyInput,

    #[error("setting blocks have unequal shot counts ({first} vs {other})")]
    RaggedShots { first: u32, other: u32 },

    #[error("quantity not applicable: {0}")]
    NotApplicable(&'static str),

    #[error("no shots matched qubit {qubit} in basis {basis}")]
    EmptyTally { qubit: usize, basis: char },

    #[error("tomography data invalid: {0}")]
    InvalidTomography(String),

    #[error("detector tomography did not converge after {} iterations", .best.iterations)]
    NonConvergence { best: Box<Recovery> },

    #[error("tomography data for qubit {qubit} only supports a non-informationally-complete fit")]
    DegenerateData { qubit: usize },
}

/// Reason an observable document failed to parse.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseErrorKind {
    #[error("missing `qubits <N>` header")]
    MissingHeader,
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("malformed coefficient `{0}`")]
    MalformedCoefficient(String),
    #[error("axis string has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("illegal character '{0}'")]
    IllegalCharacter(char),
    #[error("missing axis string")]
    MissingAxes,
    #[error("malformed sparse token `{0}`")]
    BadToken(String),
    #[error("qubit {index} out of range for {num_qubits} qubits")]
    QubitOutOfRange { index: usize, num_qubits: usize },
    #[error("qubit {0} given twice in one term")]
    RepeatedQubit(usize),
    #[error("coefficient is not finite")]
    NonFinite,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
