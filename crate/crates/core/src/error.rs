use std::path::PathBuf;

use crate::cloud_io::Point3;

/// Errors produced anywhere in the planning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("grid has zero volume (dims {0:?})")]
    ZeroVolume([usize; 3]),

    #[error("no obstacles: occupancy grid is entirely free")]
    NoObstacles,

    #[error("query point ({:.4}, {:.4}, {:.4}) is outside the field bounds", .0.x, .0.y, .0.z)]
    OutOfBounds(Point3),

    #[error("constraint point {sample} of piece {piece} is outside the field bounds")]
    ConstraintOutOfBounds { piece: usize, sample: usize },

    #[error("no standable terrain in the search space")]
    NoStandableTerrain,

    #[error("cannot snap ({:.3}, {:.3}, {:.3}) to standable terrain; nearest standable cell is {}", .point.x, .point.y, .point.z, describe_point(.nearest))]
    SnapFailed {
        point: Point3,
        nearest: Option<Point3>,
    },

    #[error("no path to goal after exploring {explored} cells")]
    NoPath { explored: usize },

    #[error("singular linear system at column {0}")]
    Singular(usize),

    #[error("time {t} outside trajectory duration [0, {total}]")]
    TimeOutOfRange { t: f64, total: f64 },

    #[error("degenerate path: {0}")]
    DegeneratePath(String),

    #[error("non-finite objective at x = {x:?}")]
    NonFinite { x: Vec<f64> },

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn describe_point(p: &Option<Point3>) -> String {
    match p {
        Some(p) => format!("at ({:.3}, {:.3}, {:.3})", p.x, p.y, p.z),
        None => "nowhere".to_string(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
