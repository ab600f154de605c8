use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("mesh needs at least one subdivision per side (got n = {0})")]
    InvalidSubdivision(usize),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("degenerate cell {cell}: jacobian determinant {det:e}")]
    DegenerateCell { cell: usize, det: f64 },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular matrix: pivot {pivot:e} in column {column} below threshold {threshold:e}")]
    SingularMatrix {
        column: usize,
        pivot: f64,
        threshold: f64,
    },

    #[error("singular local system on cell {cell} (k = {degree})")]
    SingularLocalSystem { cell: usize, degree: usize },

    #[error("sparse direct solve failed: {0}")]
    SparseSolve(String),

    #[error("manufactured data check failed: {0}")]
    ManufacturedData(String),

    #[error("level {level} (n = {n}): {source}")]
    Level {
        level: usize,
        n: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
