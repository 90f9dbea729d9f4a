//! Constructors for the concrete operations.

use crate::error::{FusionError, Result};
use crate::ops::compute::ComputeOp;
use crate::ops::memory::{
    check_split, BatchRead, BatchWrite, CropRead, ReadOp, ResizeMode, ResizeRead, WriteOp,
};
use crate::ops::scalar::{ArithOp, ColorConversion};
use crate::ops::{IOp, OpKind};
use crate::tensor::{Plane, ScalarKind, Value};

pub fn op_arith(op: ArithOp, constant: impl Into<Value>) -> Result<IOp> {
    ComputeOp::arith(op, constant.into()).map(IOp::from)
}

pub fn op_mul(constant: impl Into<Value>) -> IOp {
    ComputeOp::Arith {
        op: ArithOp::Mul,
        constant: constant.into(),
    }
    .into()
}

pub fn op_add(constant: impl Into<Value>) -> IOp {
    ComputeOp::Arith {
        op: ArithOp::Add,
        constant: constant.into(),
    }
    .into()
}

pub fn op_sub(constant: impl Into<Value>) -> IOp {
    ComputeOp::Arith {
        op: ArithOp::Sub,
        constant: constant.into(),
    }
    .into()
}

/// Fails with `DivByZeroParam` when any lane of `constant` is zero.
pub fn op_div(constant: impl Into<Value>) -> Result<IOp> {
    op_arith(ArithOp::Div, constant)
}

pub fn op_cast(from: ScalarKind, to: ScalarKind) -> Result<IOp> {
    ComputeOp::cast(from, to).map(IOp::from)
}

pub fn op_color_convert(conversion: ColorConversion, input: ScalarKind) -> Result<IOp> {
    ComputeOp::color(conversion, input).map(IOp::from)
}

fn compute_of(iop: &IOp) -> Result<ComputeOp> {
    iop.as_compute()
        .cloned()
        .ok_or_else(|| FusionError::InvalidParam(format!("{:?} cannot be looped", iop.kind())))
}

/// Repeats `inner` `repeat` times inside one op.
pub fn op_static_loop(inner: &IOp, repeat: usize) -> Result<IOp> {
    op_static_loop_body(std::slice::from_ref(inner), repeat)
}

/// Repeats a short body of compute ops (e.g. a `Mul`, `Add` pair) `repeat` times.
pub fn op_static_loop_body(body: &[IOp], repeat: usize) -> Result<IOp> {
    let body = body.iter().map(compute_of).collect::<Result<Vec<_>>>()?;
    ComputeOp::static_loop(body, repeat).map(IOp::from)
}

pub fn op_read_per_thread(source: &Plane) -> IOp {
    ReadOp::PerThread(source.clone()).into()
}

pub fn op_write_per_thread(dest: &Plane) -> IOp {
    WriteOp::PerThread(dest.clone()).into()
}

/// Zero-copy crop of `width x height` at `(x0, y0)`.
pub fn op_crop(source: &Plane, x0: usize, y0: usize, width: usize, height: usize) -> Result<IOp> {
    let view = source.view(x0, y0, width, height)?;
    Ok(ReadOp::Crop(CropRead { view, x0, y0 }).into())
}

/// Resizes `source` to `target` extents; the output kind is the source kind.
pub fn op_resize(source: &Plane, target: (usize, usize), mode: ResizeMode) -> Result<IOp> {
    op_resize_to(source, target, mode, source.kind())
}

/// Resizes with an explicit output kind: the source kind or a float kind
/// with the same lane count.
pub fn op_resize_to(
    source: &Plane,
    target: (usize, usize),
    mode: ResizeMode,
    out_kind: ScalarKind,
) -> Result<IOp> {
    ResizeRead::new(source.clone(), target.0, target.1, mode, out_kind)
        .map(|r| ReadOp::Resize(r).into())
}

/// Resize that samples through an existing per-thread or crop read, so
/// crop followed by resize is a single read.
pub fn op_resize_read(
    read: &IOp,
    target: (usize, usize),
    mode: ResizeMode,
    out_kind: ScalarKind,
) -> Result<IOp> {
    let source = match read.as_read() {
        Some(ReadOp::PerThread(p)) => p.clone(),
        Some(ReadOp::Crop(c)) => c.view.clone(),
        _ => {
            return Err(FusionError::InvalidParam(format!(
                "resize cannot sample through {}",
                read.op_id()
            )))
        }
    };
    op_resize_to(&source, target, mode, out_kind)
}

/// Wraps a 3-lane read so its lanes come out reversed.
pub fn op_swap_rb_read(read: &IOp) -> Result<IOp> {
    let inner = read
        .as_read()
        .ok_or_else(|| FusionError::InvalidParam(format!("{} is not a read", read.op_id())))?;
    if inner.out_kind().lanes() != 3 {
        return Err(FusionError::UnsupportedKind(inner.out_kind()));
    }
    Ok(ReadOp::SwapRb(Box::new(inner.clone())).into())
}

pub fn op_split_write(dest: [&Plane; 3]) -> Result<IOp> {
    let planes = dest.map(Plane::clone);
    check_split(&planes)?;
    Ok(WriteOp::Split(planes).into())
}

/// Selects `inner[z]` for threads with `z < active`, `default_value` beyond.
pub fn op_batch_read(inner: &[IOp], active: usize, default_value: impl Into<Value>) -> Result<IOp> {
    let reads = inner
        .iter()
        .map(|iop| {
            iop.as_read()
                .cloned()
                .ok_or(FusionError::FirstNotRead(iop.kind()))
        })
        .collect::<Result<Vec<_>>>()?;
    BatchRead::new(reads, active, default_value.into()).map(|b| ReadOp::Batch(b).into())
}

/// Batch read with every plane active.
pub fn op_batch_read_all(inner: &[IOp]) -> Result<IOp> {
    let first = inner.first().ok_or(FusionError::EmptyBatch)?;
    let kind = first
        .signature()
        .output_kind
        .ok_or(FusionError::FirstNotRead(first.kind()))?;
    op_batch_read(inner, inner.len(), kind.zero())
}

/// Routes thread `z` to `inner[z]`; threads with `z >= active` write nothing.
pub fn op_batch_write(inner: &[IOp], active: usize) -> Result<IOp> {
    let writes = inner
        .iter()
        .map(|iop| {
            iop.as_write()
                .cloned()
                .ok_or(FusionError::LastNotWrite(iop.kind()))
        })
        .collect::<Result<Vec<_>>>()?;
    BatchWrite::new(writes, active).map(|b| WriteOp::Batch(b).into())
}

pub fn op_batch_write_all(inner: &[IOp]) -> Result<IOp> {
    op_batch_write(inner, inner.len())
}

/// True for ops that can appear between a read and a write.
pub fn is_compute(iop: &IOp) -> bool {
    matches!(iop.kind(), OpKind::UnaryType | OpKind::BinaryType)
}
