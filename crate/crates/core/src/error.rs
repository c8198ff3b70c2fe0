//! Error type shared across the toolkit.

use std::fmt;

/// Everything that can go wrong in the library, in one enum.
#[derive(Debug)]
pub enum NnError {
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    InvalidClass {
        class: usize,
        num_classes: usize,
    },
    NonFinite {
        context: String,
    },
    SingularHessian,
    RequiresSmoothActivation,
    DegenerateSaliency,
    UnsupportedLayer {
        kind: String,
    },
    LengthMismatch {
        left: usize,
        right: usize,
    },
    DegenerateInput,
    InvalidK {
        k: usize,
        len: usize,
    },
    NonFiniteGradient,
    NoConvergence {
        residual: f64,
    },
    NotOrthogonal {
        max_dot: f64,
    },
    UnsupportedActivation,
    ZeroDerivative,
    DegenerateDirection,
    Divergence {
        epoch: usize,
        loss: f64,
    },
    BadMagic {
        expected: String,
        got: String,
    },
    TruncatedFile {
        path: String,
    },
    LabelOutOfRange {
        label: usize,
    },
    Io {
        context: String,
        source: std::io::Error,
    },
    Config {
        message: String,
    },
}

impl NnError {
    /// Adapter for `map_err` on I/O results: `foo().map_err(NnError::io("reading x"))`.
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> NnError {
        let context = context.into();
        move |source| NnError::Io { context, source }
    }

    pub fn shape(context: impl Into<String>, expected: &[usize], got: &[usize]) -> NnError {
        NnError::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }

    pub fn config(message: impl Into<String>) -> NnError {
        NnError::Config {
            message: message.into(),
        }
    }
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::ShapeMismatch {
                context,
                expected,
                got,
            } => write!(
                f,
                "shape mismatch in {context}: expected {expected:?}, got {got:?}"
            ),
            NnError::InvalidClass { class, num_classes } => {
                write!(f, "class index {class} out of range (model has {num_classes} classes)")
            }
            NnError::NonFinite { context } => write!(f, "non-finite value produced in {context}"),
            NnError::SingularHessian => write!(f, "hessian is singular; increase damping"),
            NnError::RequiresSmoothActivation => {
                write!(f, "operation needs a twice-differentiable activation; switch the model to softplus mode")
            }
            NnError::DegenerateSaliency => {
                write!(f, "saliency is degenerate: total importance mass below 1e-12")
            }
            NnError::UnsupportedLayer { kind } => write!(f, "unsupported layer kind: {kind}"),
            NnError::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            NnError::DegenerateInput => write!(f, "degenerate input: constant vector has no ranks"),
            NnError::InvalidK { k, len } => write!(f, "invalid k={k} for length {len}"),
            NnError::NonFiniteGradient => write!(f, "gradient contains non-finite entries"),
            NnError::NoConvergence { residual } => {
                write!(f, "power iteration did not converge (last residual {residual:.3e})")
            }
            NnError::NotOrthogonal { max_dot } => {
                write!(f, "matrix rows are not mutually orthogonal (max |cos| {max_dot:.3e})")
            }
            NnError::UnsupportedActivation => {
                write!(f, "activation has no usable derivative-Lipschitz constant (exact relu)")
            }
            NnError::ZeroDerivative => write!(f, "first derivative vanishes; ratio undefined"),
            NnError::DegenerateDirection => {
                write!(f, "direction is degenerate (zero gradient at the requested point)")
            }
            NnError::Divergence { epoch, loss } => {
                write!(f, "training diverged at epoch {epoch} (loss {loss})")
            }
            NnError::BadMagic { expected, got } => {
                write!(f, "bad magic number: expected {expected}, got {got}")
            }
            NnError::TruncatedFile { path } => write!(f, "truncated or malformed file: {path}"),
            NnError::LabelOutOfRange { label } => write!(f, "label {label} out of range"),
            NnError::Io { context, source } => write!(f, "i/o error while {context}: {source}"),
            NnError::Config { message } => write!(f, "configuration error: {message}"),
        }
    }
}

impl std::error::Error for NnError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            NnError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
