//! Motion transfer for static humanoid meshes.
//!
//! The pipeline registers a parametric body model to an arbitrary humanoid
//! mesh, attaches the mesh to the model surface through barycentric
//! coordinates, and then optimizes per-frame model parameters against 2D
//! landmarks, silhouettes, and dense per-pixel features extracted from a
//! monocular video of the subject.

pub mod archive;
pub mod body;
pub mod diff;
pub mod geom;
pub mod ingest;
pub mod metrics;
pub mod render;
pub mod synth;

use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("load error: {0}")]
    Load(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
