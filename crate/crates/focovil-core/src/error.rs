//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Result`]. Variants carry
//! enough structure for callers to branch on the failure class (for example
//! to map shape errors and non-finite aborts to distinct process exit codes).

use alloc::string::String;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure classes shared by the whole pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Coordinate normalization on a sequence whose every coordinate is
    /// identical: there is no extent to scale by.
    ZeroExtentSequence,
    /// A sequence shorter than the two frames linear resampling needs.
    SequenceTooShort { len: usize },
    /// Resampling to fewer than two frames.
    InvalidTargetLength { len: usize },
    /// Alignment landmarks do not span a frame: zero root-spine vector, or
    /// hip axis parallel to it.
    DegenerateFrame { what: &'static str },
    /// A configuration value outside its documented domain.
    InvalidConfig { reason: String },
    /// Tensor operands with incompatible shapes.
    ShapeMismatch { op: &'static str, detail: String },
    /// A NaN or infinity appeared where a finite value is required.
    NonFiniteValue { context: String },
    /// A contrastive batch needs at least two scenes and two views.
    BatchTooSmall { required: usize, got: usize },
    /// Batch sampling asked for more scenes than the corpus holds.
    CorpusTooSmall { scenes: usize, requested: usize },
    /// Clustering with fewer rows than clusters.
    TooFewRows { rows: usize, k: usize },
    /// Paired slices whose lengths disagree.
    LengthMismatch { left: usize, right: usize },
    /// A class label at or above the declared class count.
    LabelOutOfRange { label: u32, n_classes: usize },
    /// Supervised evaluation on a sequence without a class label.
    MissingClassLabel { scene_id: u64, view_id: u32 },
    /// Training with an empty train split.
    EmptyTrainSet,
    /// Malformed input not covered by a more specific variant.
    InvalidInput { reason: String },
}

impl core::fmt::Display for Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Error::ZeroExtentSequence => {
                write!(f, "sequence has zero coordinate extent on every axis")
            }
            Error::SequenceTooShort { len } => {
                write!(f, "sequence has {len} frame(s); resampling needs at least 2")
            }
            Error::InvalidTargetLength { len } => {
                write!(f, "resample target of {len} frame(s); need at least 2")
            }
            Error::DegenerateFrame { what } => {
                write!(f, "degenerate alignment frame: {what}")
            }
            Error::InvalidConfig { reason } => write!(f, "invalid configuration: {reason}"),
            Error::ShapeMismatch { op, detail } => {
                write!(f, "shape mismatch in {op}: {detail}")
            }
            Error::NonFiniteValue { context } => {
                write!(f, "non-finite value in {context}")
            }
            Error::BatchTooSmall { required, got } => {
                write!(f, "batch too small: need {required}, got {got}")
            }
            Error::CorpusTooSmall { scenes, requested } => {
                write!(f, "corpus has {scenes} scene(s); batch requested {requested}")
            }
            Error::TooFewRows { rows, k } => {
                write!(f, "{rows} row(s) cannot form {k} cluster(s)")
            }
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::LabelOutOfRange { label, n_classes } => {
                write!(f, "label {label} out of range for {n_classes} class(es)")
            }
            Error::MissingClassLabel { scene_id, view_id } => {
                write!(
                    f,
                    "sequence (scene {scene_id}, view {view_id}) lacks the class label evaluation needs"
                )
            }
            Error::EmptyTrainSet => write!(f, "train split is empty"),
            Error::InvalidInput { reason } => write!(f, "invalid input: {reason}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
