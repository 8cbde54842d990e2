use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segfuse library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible mask grids: {a_h}x{a_w} vs {b_h}x{b_w}")]
    MaskDims {
        a_h: u32,
        a_w: u32,
        b_h: u32,
        b_w: u32,
    },

    #[error("malformed mask: {0}")]
    MalformedMask(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error on {path}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// Structural problem in an input file; the message names the record.
    #[error("load error: {0}")]
    Load(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("image dimensions mismatch: expected {expected:?}, got {actual:?}")]
    ImageDims {
        expected: (u32, u32),
        actual: (u32, u32),
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
