use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("image I/O failed for {path}: {message}")]
    ImageIo { path: PathBuf, message: String },
    #[error("invalid image dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("image is {width}x{height}, need at least {min}x{min}")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("crop side {0} is below the minimum of 16")]
    SideTooSmall(usize),
    #[error("image must be square, got {width}x{height}")]
    NotSquare { width: usize, height: usize },
    #[error("block side {0} must be odd")]
    EvenBlockSide(usize),
    #[error("block side {block} exceeds image side {side}")]
    BlockTooLarge { block: usize, side: usize },
    #[error("image dimensions {width}x{height} are not a multiple of block side {block}")]
    NotBlockAligned { width: usize, height: usize, block: usize },
    #[error("image is not binarized (found intensity {0})")]
    NotBinarized(u8),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("class {label} has {count} members, need at least {needed}")]
    ClassTooSmall { label: String, count: usize, needed: usize },
    #[error("degenerate class neighbourhood: all rows identical")]
    DegenerateClass,
    #[error("mismatched binning: {0} vs {1} bins")]
    MismatchedBinning(usize, usize),
    #[error("dataset needs at least {needed} classes, found {found}")]
    TooFewClasses { needed: usize, found: usize },
    #[error("dataset needs at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("insufficient standard fingerprints: need {needed}, found {found}")]
    InsufficientStandard { needed: usize, found: usize },
    #[error("need at least {needed} orientation maps, got {found}")]
    TooFewMaps { needed: usize, found: usize },
    #[error("label lists cover different samples ({0} vs {1})")]
    MismatchedSamples(usize, usize),
    #[error("phase outputs do not partition the test set: {0}")]
    NotAPartition(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("model format error: {0}")]
    ModelFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
