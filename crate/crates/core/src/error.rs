use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),

    #[error("alpha = {0} is not a unit fraction; use the extended region for arbitrary alpha")]
    NotUnitFraction(f64),

    #[error("{field} = {value} is not a probability in [0, 1]")]
    InvalidProbability { field: String, value: f64 },

    #[error("invalid interval {field}: ({lo}, {hi})")]
    InvalidInterval { field: String, lo: f64, hi: f64 },

    #[error("cells {first} and {second} overlap")]
    OverlappingCells { first: usize, second: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error(
        "type-1 constraint infeasible at null point ({delta_x}, {delta_y}): \
         joint-significance mass outside the box is {outside_mass} > alpha"
    )]
    Infeasible {
        delta_x: f64,
        delta_y: f64,
        outside_mass: f64,
    },

    #[error("linear program did not reach an optimal solution (status: {0})")]
    NotOptimal(String),

    #[error("design matrix is rank deficient: column `{column}` is collinear with earlier columns")]
    RankDeficient { column: String },

    #[error("data error at row {row}, column `{column}`: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}
