use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix must have positive dimensions, got {rows}x{cols}")]
    EmptyMatrix { rows: usize, cols: usize },

    #[error("expected {expected} entries for a {rows}x{cols} matrix, got {actual}")]
    EntryCount {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("dimension mismatch: {left_rows}x{left_cols} vs {right_rows}x{right_cols}")]
    DimensionMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("svd did not converge within {max_iterations} implicit QR iterations")]
    SvdNoConvergence { max_iterations: usize },

    #[error("power iteration did not converge after {iterations} iterates")]
    PowerIterationNoConvergence { iterations: usize },

    #[error("mask ({row}, {col}) outside a {n}x{p} matrix")]
    MaskOutOfBounds {
        row: usize,
        col: usize,
        n: usize,
        p: usize,
    },

    #[error("cannot draw {requested} distinct cells from a matrix with {cells} cells")]
    TooManySamples { requested: usize, cells: usize },

    #[error("duplicate mask ({row}, {col}) in a without-replacement observation set")]
    DuplicateMask { row: usize, col: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{value} has no integer {root}-th root")]
    NotAPerfectPower { value: usize, root: usize },

    #[error("b = {b} violates 1 <= b <= 0.48^K n (n = {n}, K = {k})")]
    CellCountOutOfRange { b: usize, n: usize, k: usize },

    #[error("code search exhausted after {attempts} candidate draws ({found} of {requested} words found)")]
    CodeSearchExhausted {
        attempts: usize,
        found: usize,
        requested: usize,
    },

    #[error("hypotheses {first} and {second} are separated by {separation:e}, below the bound {bound:e}")]
    SeparationViolated {
        first: usize,
        second: usize,
        separation: f64,
        bound: f64,
    },

    #[error("mse {value} at n = {n} is not positive; cannot take logarithms")]
    NonPositiveMse { n: f64, value: f64 },

    #[error("replicate failed (L = {l}, n = {n}, replicate = {replicate}, seed = {seed}): {source}")]
    Replicate {
        l: u32,
        n: usize,
        replicate: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
