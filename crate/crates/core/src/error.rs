//! Crate-wide error type.

use crate::expr::ExprError;

/// Errors produced by geometry, constraint, constitutive and engine code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("operands are based at different space-time points: {left} vs {right}")]
    MismatchedBase { left: String, right: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("mass matrix is not symmetric positive definite at {at}")]
    NotPositiveDefinite { at: String },

    #[error("spatial Jacobian of the coordinate change is singular at {at}")]
    SingularJacobian { at: String },

    #[error("coordinate change fails round-trip check at {at} (error {err:.3e})")]
    BadInverse { at: String, err: f64 },

    #[error("point is not on constraint `{constraint}` (|f| = {residual:.3e})")]
    NotOnConstraint { constraint: String, residual: f64 },

    #[error("constraint rows are not linearly independent ({context})")]
    RankDeficient { context: String },

    #[error("unilateral row {row} of `{constraint}` has no orientation sign")]
    MissingOrientation { constraint: String, row: usize },

    #[error("`{constraint}` has codimension {codim} > 1; no built-in entrance/exit rule applies")]
    NoEntranceRule { constraint: String, codim: usize },

    #[error("left velocity does not enter the constraint (classified {class})")]
    NotEntering { class: String },

    #[error("law `{law}`: {msg}")]
    LawParameter { law: String, msg: String },

    #[error("law requires an active impulse but none was supplied")]
    MissingActiveImpulse,

    #[error("law requires a kinetic constraint but none is active")]
    MissingKineticConstraint,

    #[error("law requires a rest frame of the constraint but none was supplied")]
    MissingRestFrame,

    #[error("frame `{frame}` is not a rest frame of `{constraint}` (residual {residual:.3e})")]
    NotRestFrame {
        frame: String,
        constraint: String,
        residual: f64,
    },

    #[error("active-set projection is infeasible: {msg}")]
    InfeasibleActiveSet { msg: String },

    #[error("law `{law}` precondition failed: {msg}")]
    Precondition { law: String, msg: String },

    #[error("law `{law}` violated its contract: {msg}")]
    LawContract { law: String, msg: String },

    #[error("unknown law tag `{tag}`; known tags: {known}")]
    UnknownLaw { tag: String, known: String },

    #[error("{path}: {msg}")]
    Schema { path: String, msg: String },

    #[error("scenario parse error: {0}")]
    Toml(String),

    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("integration produced a non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("impact bisection did not converge on `{constraint}` in [{t0}, {t1}]")]
    BisectionFailed { constraint: String, t0: f64, t1: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Schema error with a path-like location (`constraints.positional[0].f[1]`).
    pub fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
