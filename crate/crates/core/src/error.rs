use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("reference renderer cap exceeded: {n} Gaussians > cap {cap}")]
    ReferenceCapExceeded { n: usize, cap: usize },

    #[error("pruning would remove every Gaussian")]
    PruneToEmpty,

    #[error("empty mask: no supervised pixels")]
    EmptyMask,

    #[error("unknown perceptual hook: {0}")]
    UnknownHook(String),

    #[error("non-finite {quantity} in parameter group {group}")]
    NonFinite { quantity: String, group: String },

    #[error("training diverged at iteration {iter}: {reason}")]
    Diverged { iter: usize, reason: String },

    #[error("format error in {what}: {detail} (offset {offset})")]
    Format {
        what: String,
        detail: String,
        offset: u64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
