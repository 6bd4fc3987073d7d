use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("matrix is singular or ill-conditioned (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("incomplete transform set: entry ({i}, {j}) is missing")]
    IncompleteSet { i: usize, j: usize },

    #[error("degenerate solution: {0}")]
    Degenerate(String),

    #[error("under-determined alignment{}: {common} common points, at least {needed} required", pair_label(.pair))]
    UnderDetermined {
        pair: Option<(usize, usize)>,
        common: usize,
        needed: usize,
    },

    #[error("degenerate point cloud: {0}")]
    DegenerateCloud(String),

    #[error("no feasible missing-point draw for eta = {eta} after {attempts} attempts")]
    InfeasibleEta { eta: f64, attempts: usize },

    #[error("landmark {0} is missing from every shape")]
    UncoveredLandmark(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

fn pair_label(pair: &Option<(usize, usize)>) -> String {
    match pair {
        Some((i, j)) => format!(" between shapes {i} and {j}"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches the shape pair to an under-determined alignment error.
    pub fn with_pair(self, i: usize, j: usize) -> Self {
        match self {
            Error::UnderDetermined { common, needed, .. } => Error::UnderDetermined {
                pair: Some((i, j)),
                common,
                needed,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
