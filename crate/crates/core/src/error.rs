use thiserror::Error;

/// Error type shared by every module in the crate.
///
/// The variants are coarse on purpose: callers mostly need to distinguish
/// "the model or basis you handed me is malformed" from "the numerics broke
/// mid-run", and the message carries the specifics.
#[derive(Debug, Error)]
pub enum Error {
    /// A model, basis or input failed validation before any compute started.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Dimension mismatch between objects that must agree.
    #[error("dimension mismatch: {context} (expected {expected}, got {got})")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A matrix that must be Hermitian is not, beyond tolerance.
    #[error("matrix `{name}` is not Hermitian (max asymmetry {asymmetry:.3e})")]
    NotHermitian { name: String, asymmetry: f64 },

    /// A matrix that must be unitary is not, beyond tolerance.
    #[error("matrix `{name}` is not unitary (max deviation {deviation:.3e})")]
    NotUnitary { name: String, deviation: f64 },

    /// The supplied operator or bipartite basis is singular / linearly
    /// dependent, so coefficients in it are not well defined.
    #[error("basis `{name}` is singular or rank deficient")]
    SingularBasis { name: String },

    /// Refusal to materialize a structural tensor that would not fit in
    /// memory at a useful size.
    #[error("process tensor for qubit dimension {dq} needs {bytes} bytes; refusing (limit dq <= 8)")]
    TensorTooLarge { dq: usize, bytes: u128 },

    /// The adaptive integrator could not make progress.
    #[error("integrator step size underflow at t = {t:.6e} s (segment {segment})")]
    StepUnderflow { segment: usize, t: f64 },

    /// The squared norm grew between integrator output points, which cannot
    /// happen for a dissipative drift unless the model or tolerances are bad.
    #[error("squared norm grew from {from:.12e} to {to:.12e} at t = {t:.6e} s; drift is not dissipative or tolerances are too loose")]
    NormGrew { t: f64, from: f64, to: f64 },

    /// A jump fired but every channel had zero weight.
    #[error("jump threshold crossed at t = {t:.6e} s but all jump weights vanish")]
    NoJumpChannel { t: f64 },

    /// A jump produced the zero state, so it cannot be renormalized.
    #[error("jump operator `{label}` annihilated the state at t = {t:.6e} s")]
    ZeroPostJumpNorm { label: String, t: f64 },

    /// An ensemble statistic that requires surviving no-jump trajectories
    /// was requested, but none survived.
    #[error("no zero-jump trajectories in the ensemble (n = {n}); cannot form the no-jump bound")]
    NoSurvivors { n: usize },

    /// An eigenvalue was more negative than the clipping rule allows.
    #[error("eigenvalue {value:.3e} of `{name}` is below the clip floor {floor:.1e}")]
    EigenvalueTooNegative {
        name: String,
        value: f64,
        floor: f64,
    },

    /// A trace-preservation or residual check on an exact computation failed.
    #[error("numeric check failed: {0}")]
    NumericCheck(String),

    /// LAPACK-backed dense linear algebra failed.
    #[error("linear algebra backend error: {0}")]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
}
