use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: &'static str, expected: String, found: String },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("singular regularisation operator: {0}")]
    SingularOperator(String),

    #[error("linear elasticity requested on a scalar field")]
    ElasticityOnScalar,

    #[error("no unmasked voxels")]
    EmptyMask,

    #[error("matrix is not symmetric positive-definite: {0}")]
    NotPositiveDefinite(String),

    #[error("geodesic shooting broke down at step {step}: {reason}")]
    ShootingBlowUp { step: usize, reason: String },

    #[error("conjugate gradient diverged (relative residual {residual:e} after {iterations} iterations)")]
    CgDiverged { iterations: usize, residual: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty region set")]
    EmptyRegionSet,

    #[error("template space mismatch: {0}")]
    TemplateMismatch(String),

    #[error("NIfTI field `{field}`: {message}")]
    Nifti { field: &'static str, message: String },

    #[error("model bundle: {0}")]
    Bundle(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("subject {subject}, level {level}, iteration {iteration}: {source}")]
    Fit { subject: String, level: usize, iteration: usize, source: Box<Error> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Self {
        Error::DimensionMismatch { context, expected: format!("{expected:?}"), found: format!("{found:?}") }
    }
}
