use std::io;

use thiserror::Error;

use crate::ops::OpKind;
use crate::tensor::ScalarKind;

pub type Result<T> = std::result::Result<T, FusionError>;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("index ({x}, {y}) out of bounds for plane {width}x{height}")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("allocation of {width}x{height} {kind:?} elements overflows")]
    CapacityOverflow {
        width: usize,
        height: usize,
        kind: ScalarKind,
    },
    #[error("plane extents must be at least 1x1, got {width}x{height}")]
    EmptyPlane { width: usize, height: usize },
    #[error("value of kind {found:?} where {expected:?} was required")]
    ValueKind {
        expected: ScalarKind,
        found: ScalarKind,
    },

    #[error("bad magic in tensor file")]
    BadMagic,
    #[error("unknown kind tag {0}")]
    UnknownKindTag(u32),
    #[error("truncated tensor payload")]
    Truncated,
    #[error("PPM export requires U8x3 planes, got {0:?}")]
    PpmKind(ScalarKind),
    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("operation chain is empty")]
    EmptyChain,
    #[error("first operation is {0:?}, expected a read")]
    FirstNotRead(OpKind),
    #[error("last operation is {0:?}, expected a write")]
    LastNotWrite(OpKind),
    #[error("kind mismatch at position {position}: expected input {expected:?}, found {found:?}")]
    KindMismatch {
        position: usize,
        expected: Option<ScalarKind>,
        found: Option<ScalarKind>,
    },
    #[error("{kind:?} operation at position {position} cannot appear mid-chain")]
    MisplacedOp { position: usize, kind: OpKind },
    #[error("write extents {write:?} do not cover iteration space {read:?}")]
    DimsMismatch {
        read: (usize, usize, usize),
        write: (usize, usize, usize),
    },
    #[error("read operation carries no dimensions")]
    MissingDims,
    #[error("chain of {0} operations exceeds the supported maximum")]
    ChainTooLong(usize),

    #[error("division constant has a zero lane")]
    DivByZeroParam,
    #[error("unsupported cast {from:?} -> {to:?}")]
    UnsupportedCast { from: ScalarKind, to: ScalarKind },
    #[error("crop {x0},{y0} {width}x{height} exceeds source {src_width}x{src_height}")]
    CropOutOfBounds {
        x0: usize,
        y0: usize,
        width: usize,
        height: usize,
        src_width: usize,
        src_height: usize,
    },
    #[error("operation does not support kind {0:?}")]
    UnsupportedKind(ScalarKind),
    #[error("split destinations do not share extents and kind")]
    PlaneExtentMismatch,
    #[error("batch has no planes")]
    EmptyBatch,
    #[error("batch entry {index} does not match the kind or extents of entry 0")]
    InnerKindMismatch { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("batch entry {index} differs from entry 0 in kind or extents")]
    HeterogeneousBatch { index: usize },
    #[error("iteration space is empty")]
    EmptyIterSpace,

    #[error("{provenance}: {source}")]
    Handle {
        provenance: String,
        #[source]
        source: Box<FusionError>,
    },
}

impl FusionError {
    /// Strips any provenance wrappers.
    pub fn root(&self) -> &FusionError {
        match self {
            FusionError::Handle { source, .. } => source.root(),
            other => other,
        }
    }

    pub fn provenance(&self) -> Option<&str> {
        match self {
            FusionError::Handle { provenance, .. } => Some(provenance),
            _ => None,
        }
    }
}
