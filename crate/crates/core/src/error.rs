use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("descriptor mismatch: expected {expected}, got {found}")]
    DescriptorMismatch { expected: String, found: String },

    #[error("group membership violated for {group} (residual {residual:.3e})")]
    Membership { group: String, residual: f64 },

    #[error("matrix is singular")]
    Singular,

    #[error("logarithm out of domain: rotation angle {angle} is within {margin:e} of the cut locus")]
    OutOfDomain { angle: f64, margin: f64 },

    #[error("tangent vector not in the Lie algebra after left trivialization (residual {residual:.3e})")]
    NotInAlgebra { residual: f64 },

    #[error("dimension mismatch in {what}: expected {expected}, got {found}")]
    Dimension {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("action is not infinitesimally free at point {point:?} (min singular value {min_singular:.3e})")]
    RankDeficient { point: Vec<f64>, min_singular: f64 },

    #[error("σ recovery failed after {iterations} iterations: objective {objective:.3e}, gradient {gradient:.3e}")]
    RecoveryFailed {
        best: Vec<f64>,
        objective: f64,
        gradient: f64,
        iterations: usize,
    },

    #[error("integration diverged at t = {t} (state norm {norm:.3e})")]
    Divergence { t: f64, norm: f64 },

    #[error("field is not weakly invariant with respect to the chart: orbit-tangency residual {residual:.3e}")]
    NotWeaklyInvariant { residual: f64 },

    #[error("extracted W is not group linear (residual {residual:.3e}); the field is not group affine")]
    NotGroupAffine { residual: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
