use thiserror::Error;

/// Errors raised while building meshes, assembling, or solving the HDG system.
#[derive(Debug, Error)]
pub enum HdgError {
    #[error("mesh needs at least one cell per axis")]
    ZeroCells,

    #[error("unsupported spatial dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("quadrature of degree {requested} not available (max {max})")]
    QuadratureDegree { requested: usize, max: usize },

    #[error("control cost weight must be positive, got {0}")]
    InvalidGamma(f64),

    #[error("exact adjoint state does not vanish on the boundary: |z({point:?})| = {value:e}")]
    AdjointBoundary { point: [f64; 3], value: f64 },

    #[error("stabilization assumption violated: {what} = {value:e} on element {element}, local face {local_face} (face {face})")]
    AssumptionViolation {
        what: &'static str,
        element: usize,
        local_face: usize,
        face: usize,
        value: f64,
    },

    #[error("velocity field is not divergence free: element {element} has net outflow {value:e}")]
    NotDivergenceFree { element: usize, value: f64 },

    #[error("degenerate element {0}: singular affine map")]
    DegenerateElement(usize),

    #[error("loss of positivity in {block} on element {element}")]
    LossOfPositivity { element: usize, block: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("trace numbering inconsistency: {0}")]
    Numbering(String),

    #[error("singular trace system: {0}")]
    SingularSystem(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HdgError {
    /// True for failures caused by the numerics (as opposed to bad input or I/O).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            HdgError::AssumptionViolation { .. }
                | HdgError::NotDivergenceFree { .. }
                | HdgError::DegenerateElement(_)
                | HdgError::LossOfPositivity { .. }
                | HdgError::SingularSystem(_)
                | HdgError::Numbering(_)
                | HdgError::AdjointBoundary { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, HdgError>;
