use thiserror::Error;

#[derive(Debug, Error)]
pub enum VideoError {
    #[error("frame dimensions must be even and nonzero, got {width}x{height}")]
    BadDimensions { width: usize, height: usize },
    #[error("plane size mismatch: expected {expected} samples, got {got}")]
    PlaneSize { expected: usize, got: usize },
    #[error("short read at frame {frame}: needed {needed} bytes, got {got}")]
    ShortRead { frame: usize, needed: usize, got: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
