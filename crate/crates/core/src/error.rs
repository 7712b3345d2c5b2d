use thiserror::Error;

use crate::grid_world::Cell;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("map parse error (line {line}): {msg}")]
    MapParse { line: usize, msg: String },

    #[error("scenario parse error (line {line}): {msg}")]
    ScenParse { line: usize, msg: String },

    #[error("cell {0} is out of bounds or blocked")]
    InvalidCell(Cell),

    #[error("cell {cell} cannot reach goal {goal}")]
    Unreachable { cell: Cell, goal: Cell },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("could not place {agents} agents after {attempts} draws")]
    PlacementFailed { agents: usize, attempts: usize },

    #[error("policy returned illegal move for agent {agent}: {from} -> {to}")]
    IllegalPolicyMove { agent: usize, from: Cell, to: Cell },

    #[error("tensor `{name}`: {msg}")]
    Tensor { name: String, msg: String },

    #[error("weight file: {0}")]
    WeightFormat(String),

    #[error("dataset file: {0}")]
    DatasetFormat(String),

    #[error("checksum mismatch in record {index}")]
    Checksum { index: u64 },

    #[error("search timed out")]
    Timeout,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
