use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] crossres_tensor::TensorError),
    #[error("temporal window holds {0} frames, expected {1}")]
    WindowSize(usize, usize),
    #[error("{0} intra references supplied; the model takes 1 (ldp) or 2 (ra)")]
    RefArity(usize),
    #[error("weight file: {0}")]
    WeightFormat(String),
    #[error("weight file checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("weight names missing from file: {missing:?}; unknown names: {extra:?}")]
    WeightCoverage { missing: Vec<String>, extra: Vec<String> },
    #[error("weight {name} has shape {got:?}, model expects {expected:?}")]
    WeightShape { name: String, expected: Vec<usize>, got: Vec<usize> },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
