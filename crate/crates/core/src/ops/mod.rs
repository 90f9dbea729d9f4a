//! Operation archetypes, instantiable operations and chain validation.
//!
//! Every operation is one of four kinds. A read maps a thread to a value, a
//! unary or binary op maps a value to a value (binary ops carry parameters),
//! and a write consumes a value at a thread. An [`IOp`] pairs a concrete
//! operation with its immutable parameters; a [`Pipeline`] is a validated
//! `Read -> Compute* -> Write` chain plus its iteration space.

use std::fmt;
use std::sync::Arc;

use crate::error::{FusionError, Result};
use crate::tensor::{ScalarKind, ThreadPoint, Value};

pub mod compute;
pub mod library;
pub mod memory;
pub mod scalar;

pub use compute::ComputeOp;
pub use library::*;
pub use memory::{BatchRead, BatchWrite, CropRead, ReadOp, ResizeMode, ResizeRead, WriteOp};
pub use scalar::{ArithOp, ColorConversion};

/// Upper bound on dynamic chain length.
pub const MAX_CHAIN_LEN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    ReadType,
    UnaryType,
    BinaryType,
    WriteType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpSignature {
    pub kind: OpKind,
    pub input_kind: Option<ScalarKind>,
    pub output_kind: Option<ScalarKind>,
    /// Name of the parameter schema; `None` for unary ops.
    pub params: Option<&'static str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IterSpace {
    pub width: usize,
    pub height: usize,
    pub batch: usize,
}

impl IterSpace {
    pub fn new(width: usize, height: usize, batch: usize) -> IterSpace {
        IterSpace {
            width,
            height,
            batch,
        }
    }

    pub fn points(&self) -> usize {
        self.width * self.height * self.batch
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.batch)
    }

    pub fn contains(&self, t: ThreadPoint) -> bool {
        t.x < self.width && t.y < self.height && t.z < self.batch
    }
}

#[derive(Debug)]
pub enum OpBody {
    Read(ReadOp),
    Compute(ComputeOp),
    Write(WriteOp),
}

/// An operation together with its parameters. Cheap to clone and immutable.
#[derive(Clone)]
pub struct IOp(Arc<OpBody>);

impl fmt::Debug for IOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.signature();
        write!(
            f,
            "IOp({} {:?}: {:?} -> {:?})",
            self.op_id(),
            s.kind,
            s.input_kind,
            s.output_kind
        )
    }
}

impl From<ReadOp> for IOp {
    fn from(op: ReadOp) -> IOp {
        IOp(Arc::new(OpBody::Read(op)))
    }
}

impl From<ComputeOp> for IOp {
    fn from(op: ComputeOp) -> IOp {
        IOp(Arc::new(OpBody::Compute(op)))
    }
}

impl From<WriteOp> for IOp {
    fn from(op: WriteOp) -> IOp {
        IOp(Arc::new(OpBody::Write(op)))
    }
}

impl IOp {
    pub fn body(&self) -> &OpBody {
        &self.0
    }

    pub fn kind(&self) -> OpKind {
        match &*self.0 {
            OpBody::Read(_) => OpKind::ReadType,
            OpBody::Compute(c) if c.is_binary() => OpKind::BinaryType,
            OpBody::Compute(_) => OpKind::UnaryType,
            OpBody::Write(_) => OpKind::WriteType,
        }
    }

    /// Stable identifier of the concrete operation.
    pub fn op_id(&self) -> &'static str {
        match &*self.0 {
            OpBody::Read(r) => r.name(),
            OpBody::Compute(c) => c.name(),
            OpBody::Write(w) => w.name(),
        }
    }

    pub fn signature(&self) -> OpSignature {
        let kind = self.kind();
        match &*self.0 {
            OpBody::Read(r) => OpSignature {
                kind,
                input_kind: None,
                output_kind: Some(r.out_kind()),
                params: Some(match r {
                    ReadOp::PerThread(_) => "PlaneParams",
                    ReadOp::Crop(_) => "CropParams",
                    ReadOp::Resize(_) => "ResizeParams",
                    ReadOp::SwapRb(_) => "SwapRbParams",
                    ReadOp::Batch(_) => "BatchParams",
                }),
            },
            OpBody::Compute(c) => OpSignature {
                kind,
                input_kind: Some(c.input_kind()),
                output_kind: Some(c.output_kind()),
                params: match (kind, c) {
                    (OpKind::UnaryType, _) => None,
                    (_, ComputeOp::StaticLoop { .. }) => Some("StaticLoopParams"),
                    _ => Some("ArithParams"),
                },
            },
            OpBody::Write(w) => OpSignature {
                kind,
                input_kind: Some(w.in_kind()),
                output_kind: None,
                params: Some(match w {
                    WriteOp::PerThread(_) => "PlaneParams",
                    WriteOp::Split(_) => "SplitParams",
                    WriteOp::Batch(_) => "BatchParams",
                }),
            },
        }
    }

    /// `(width, height, batch)` for reads and writes.
    pub fn dims_hint(&self) -> Option<IterSpace> {
        match &*self.0 {
            OpBody::Read(r) => Some(r.dims()),
            OpBody::Write(w) => Some(w.dims()),
            OpBody::Compute(_) => None,
        }
    }

    pub fn as_read(&self) -> Option<&ReadOp> {
        match &*self.0 {
            OpBody::Read(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_compute(&self) -> Option<&ComputeOp> {
        match &*self.0 {
            OpBody::Compute(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_write(&self) -> Option<&WriteOp> {
        match &*self.0 {
            OpBody::Write(w) => Some(w),
            _ => None,
        }
    }

    /// Identity of the underlying operation, shared by clones.
    pub fn ptr_eq(&self, other: &IOp) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }
}

/// A validated fused-execution unit.
#[derive(Debug, Clone)]
pub struct Pipeline {
    read: IOp,
    compute: Vec<IOp>,
    write: IOp,
    iter_space: IterSpace,
}

impl Pipeline {
    pub fn read(&self) -> &ReadOp {
        self.read.as_read().expect("validated read")
    }

    pub fn write(&self) -> &WriteOp {
        self.write.as_write().expect("validated write")
    }

    pub fn compute(&self) -> impl ExactSizeIterator<Item = &ComputeOp> + '_ {
        self.compute
            .iter()
            .map(|op| op.as_compute().expect("validated compute"))
    }

    pub fn compute_len(&self) -> usize {
        self.compute.len()
    }

    pub fn iter_space(&self) -> IterSpace {
        self.iter_space
    }

    /// The chain as an ordered IOp list.
    pub fn iops(&self) -> Vec<IOp> {
        let mut out = Vec::with_capacity(self.compute.len() + 2);
        out.push(self.read.clone());
        out.extend(self.compute.iter().cloned());
        out.push(self.write.clone());
        out
    }
}

/// Iteration space of a read: its output extents and batch count.
pub fn infer_iter_space(read: &IOp) -> Result<IterSpace> {
    if read.kind() != OpKind::ReadType {
        return Err(FusionError::FirstNotRead(read.kind()));
    }
    read.dims_hint().ok_or(FusionError::MissingDims)
}

/// Checks that `iops` form `Read -> (Unary|Binary)* -> Write` with matching
/// kinds at every junction and a write that covers the read's space.
pub fn validate_chain(iops: &[IOp]) -> Result<Pipeline> {
    let (first, last) = match iops {
        [] => return Err(FusionError::EmptyChain),
        [only] => return Err(FusionError::LastNotWrite(only.kind())),
        [first, .., last] => (first, last),
    };
    if iops.len() > MAX_CHAIN_LEN {
        return Err(FusionError::ChainTooLong(iops.len()));
    }
    if first.kind() != OpKind::ReadType {
        return Err(FusionError::FirstNotRead(first.kind()));
    }
    if last.kind() != OpKind::WriteType {
        return Err(FusionError::LastNotWrite(last.kind()));
    }
    for (position, pair) in iops.windows(2).enumerate() {
        let position = position + 1;
        let expected = pair[0].signature().output_kind;
        let found = pair[1].signature().input_kind;
        if expected != found {
            return Err(FusionError::KindMismatch {
                position,
                expected,
                found,
            });
        }
        let kind = pair[1].kind();
        let middle = position < iops.len() - 1;
        if middle && matches!(kind, OpKind::ReadType | OpKind::WriteType) {
            return Err(FusionError::MisplacedOp { position, kind });
        }
    }
    let iter_space = infer_iter_space(first)?;
    let out = last.dims_hint().ok_or(FusionError::MissingDims)?;
    let covers = out.width >= iter_space.width
        && out.height >= iter_space.height
        && out.batch == iter_space.batch;
    if !covers {
        return Err(FusionError::DimsMismatch {
            read: iter_space.as_tuple(),
            write: out.as_tuple(),
        });
    }
    Ok(Pipeline {
        read: first.clone(),
        compute: iops[1..iops.len() - 1].to_vec(),
        write: last.clone(),
        iter_space,
    })
}

/// Register-to-register exec of a unary or binary op.
pub fn compute_exec(iop: &IOp, input: Value) -> Result<Value> {
    let op = iop.as_compute().ok_or(FusionError::MisplacedOp {
        position: 0,
        kind: iop.kind(),
    })?;
    if input.kind() != op.input_kind() {
        return Err(FusionError::ValueKind {
            expected: op.input_kind(),
            found: input.kind(),
        });
    }
    Ok(op.apply(input))
}

pub fn read_exec(iop: &IOp, thread: ThreadPoint) -> Result<Value> {
    let op = iop.as_read().ok_or(FusionError::FirstNotRead(iop.kind()))?;
    let space = op.dims();
    if !space.contains(thread) {
        return Err(FusionError::OutOfBounds {
            x: thread.x,
            y: thread.y,
            width: space.width,
            height: space.height,
        });
    }
    Ok(op.read(thread))
}

pub fn write_exec(iop: &IOp, thread: ThreadPoint, input: Value) -> Result<()> {
    let op = iop.as_write().ok_or(FusionError::LastNotWrite(iop.kind()))?;
    let space = op.dims();
    if !space.contains(thread) {
        return Err(FusionError::OutOfBounds {
            x: thread.x,
            y: thread.y,
            width: space.width,
            height: space.height,
        });
    }
    if input.kind() != op.in_kind() {
        return Err(FusionError::ValueKind {
            expected: op.in_kind(),
            found: input.kind(),
        });
    }
    op.write(thread, input);
    Ok(())
}
