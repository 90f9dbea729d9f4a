//! Imperative-looking facade over the op library.
//!
//! Every function returns a [`LazyHandle`] wrapping an [`IOp`]; nothing is
//! read, computed or written until the handles are passed to
//! [`execute_operations`] or [`execute_batch`]. Names follow common image
//! library conventions.
//!
//! Two adjacent-op rewrites happen when a chain is assembled, both exact:
//! a handle consumed by a later one (the crop under a resize) is dropped from
//! the chain, and a red/blue swap right after a read is folded into that read,
//! since reordering lanes is a memory access pattern and not arithmetic.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{FusionError, Result};
use crate::executor::{execute_fused, execute_unfused, ExecConfig, ExecReport};
use crate::ops::compute::ComputeOp;
use crate::ops::library::{
    op_add, op_batch_read_all, op_batch_write_all, op_cast, op_color_convert, op_crop, op_div,
    op_mul, op_read_per_thread, op_resize_read, op_split_write, op_sub, op_swap_rb_read,
    op_write_per_thread,
};
use crate::ops::memory::ResizeMode;
use crate::ops::scalar::ColorConversion;
use crate::ops::{validate_chain, IOp, OpKind, Pipeline};
use crate::tensor::{Plane, ScalarKind, Value};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

#[derive(Default)]
struct ChainCache {
    key: Vec<u64>,
    pipeline: Option<Pipeline>,
}

/// A deferred operation plus the name used in error messages.
#[derive(Clone)]
pub struct LazyHandle {
    iop: IOp,
    provenance: &'static str,
    id: u64,
    absorbed: Option<u64>,
    // shared by clones; only consulted on the last handle of a chain
    cache: Arc<Mutex<ChainCache>>,
    validations: Arc<AtomicUsize>,
}

impl std::fmt::Debug for LazyHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LazyHandle")
            .field("op", &self.iop.op_id())
            .field("provenance", &self.provenance)
            .field("id", &self.id)
            .finish()
    }
}

impl LazyHandle {
    pub fn new(iop: IOp, provenance: &'static str) -> LazyHandle {
        LazyHandle {
            iop,
            provenance,
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            absorbed: None,
            cache: Arc::default(),
            validations: Arc::default(),
        }
    }

    pub fn iop(&self) -> &IOp {
        &self.iop
    }

    pub fn provenance(&self) -> &str {
        self.provenance
    }

    /// Chain validations run for chains ending in this handle.
    pub fn validations(&self) -> usize {
        self.validations.load(Ordering::Relaxed)
    }
}

fn tagged<T>(provenance: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| FusionError::Handle {
        provenance: provenance.to_string(),
        source: Box::new(e),
    })
}

fn handle(provenance: &'static str, r: Result<IOp>) -> Result<LazyHandle> {
    tagged(provenance, r).map(|iop| LazyHandle::new(iop, provenance))
}

pub fn read(src: &Plane) -> LazyHandle {
    LazyHandle::new(op_read_per_thread(src), "read")
}

pub fn write(dest: &Plane) -> LazyHandle {
    LazyHandle::new(op_write_per_thread(dest), "write")
}

pub fn crop(src: &Plane, x0: usize, y0: usize, width: usize, height: usize) -> Result<LazyHandle> {
    handle("crop", op_crop(src, x0, y0, width, height))
}

/// Resize of a read or crop handle, keeping its element kind.
pub fn resize(input: &LazyHandle, dims: (usize, usize), mode: ResizeMode) -> Result<LazyHandle> {
    let kind = input.iop.signature().output_kind;
    let kind = tagged("resize", kind.ok_or(FusionError::FirstNotRead(input.iop.kind())))?;
    resize_to(input, dims, mode, kind)
}

/// Resize whose interpolated samples are produced directly as `out_kind`.
/// The input handle is consumed: a chain listing both keeps only the resize.
pub fn resize_to(
    input: &LazyHandle,
    dims: (usize, usize),
    mode: ResizeMode,
    out_kind: ScalarKind,
) -> Result<LazyHandle> {
    let mut h = handle("resize", op_resize_read(&input.iop, dims, mode, out_kind))?;
    h.absorbed = Some(input.id);
    Ok(h)
}

pub fn cvt_color(conversion: ColorConversion, input: ScalarKind) -> Result<LazyHandle> {
    handle("cvt_color", op_color_convert(conversion, input))
}

pub fn convert_to(from: ScalarKind, to: ScalarKind) -> Result<LazyHandle> {
    handle("convert_to", op_cast(from, to))
}

pub fn multiply(c: impl Into<Value>) -> LazyHandle {
    LazyHandle::new(op_mul(c), "multiply")
}

pub fn add(c: impl Into<Value>) -> LazyHandle {
    LazyHandle::new(op_add(c), "add")
}

pub fn subtract(c: impl Into<Value>) -> LazyHandle {
    LazyHandle::new(op_sub(c), "subtract")
}

pub fn divide(c: impl Into<Value>) -> Result<LazyHandle> {
    handle("divide", op_div(c))
}

pub fn split(dest: [&Plane; 3]) -> Result<LazyHandle> {
    handle("split", op_split_write(dest))
}

/// A handle after assembly, remembering where it came from.
struct Slot {
    iop: IOp,
    index: usize,
    provenance: &'static str,
}

fn is_swap_rb(iop: &IOp) -> bool {
    matches!(
        iop.as_compute(),
        Some(ComputeOp::Color {
            conversion: ColorConversion::SwapRb,
            ..
        })
    )
}

fn assemble(handles: &[LazyHandle]) -> Result<Vec<Slot>> {
    let absorbed: HashSet<u64> = handles.iter().filter_map(|h| h.absorbed).collect();
    let mut slots: Vec<Slot> = Vec::with_capacity(handles.len());
    for (index, h) in handles.iter().enumerate() {
        if absorbed.contains(&h.id) {
            continue;
        }
        if let Some(prev) = slots.last_mut() {
            let prev_out = prev.iop.signature().output_kind;
            let swap_input = h.iop.signature().input_kind;
            if prev.iop.kind() == OpKind::ReadType && is_swap_rb(&h.iop) && prev_out == swap_input {
                prev.iop = tagged(h.provenance, op_swap_rb_read(&prev.iop))?;
                continue;
            }
        }
        slots.push(Slot {
            iop: h.iop.clone(),
            index,
            provenance: h.provenance,
        });
    }
    Ok(slots)
}

fn chain_error(slots: &[Slot], e: FusionError) -> FusionError {
    let position = match &e {
        FusionError::EmptyChain => return e,
        FusionError::KindMismatch { position, .. } | FusionError::MisplacedOp { position, .. } => {
            *position
        }
        FusionError::LastNotWrite(_) | FusionError::DimsMismatch { .. } => slots.len() - 1,
        _ => 0,
    };
    let slot = &slots[position.min(slots.len() - 1)];
    FusionError::Handle {
        provenance: format!("{} (handle #{})", slot.provenance, slot.index + 1),
        source: Box::new(e),
    }
}

fn validate_slots(slots: &[Slot]) -> Result<Pipeline> {
    let iops: Vec<IOp> = slots.iter().map(|s| s.iop.clone()).collect();
    validate_chain(&iops).map_err(|e| chain_error(slots, e))
}

/// Validates the handles as one chain without executing it.
pub fn build_pipeline(handles: &[LazyHandle]) -> Result<Pipeline> {
    validate_slots(&assemble(handles)?)
}

/// Runs the chain fused. The validated pipeline is cached on the last
/// handle, so running the same handles again skips validation.
pub fn execute_operations(handles: &[LazyHandle], config: &ExecConfig) -> Result<ExecReport> {
    let last = handles.last().ok_or(FusionError::EmptyChain)?;
    let key: Vec<u64> = handles.iter().map(|h| h.id).collect();
    let mut cache = last.cache.lock().unwrap_or_else(|e| e.into_inner());
    if cache.pipeline.is_none() || cache.key != key {
        let pipeline = build_pipeline(handles)?;
        last.validations.fetch_add(1, Ordering::Relaxed);
        *cache = ChainCache {
            key,
            pipeline: Some(pipeline),
        };
    }
    let pipeline = cache.pipeline.clone().expect("cached pipeline");
    drop(cache);
    Ok(execute_fused(&pipeline, config))
}

/// The same chain run by the unfused baseline.
pub fn execute_operations_unfused(handles: &[LazyHandle], config: &ExecConfig) -> Result<ExecReport> {
    let slots = assemble(handles)?;
    let iops: Vec<IOp> = slots.iter().map(|s| s.iop.clone()).collect();
    execute_unfused(&iops, config).map_err(|e| chain_error(&slots, e))
}

fn plane_endpoints(chain: &[LazyHandle]) -> Result<(IOp, IOp)> {
    let slots = assemble(chain)?;
    match slots.as_slice() {
        [r, w] if r.iop.kind() == OpKind::ReadType && w.iop.kind() == OpKind::WriteType => {
            Ok((r.iop.clone(), w.iop.clone()))
        }
        _ => {
            let iops: Vec<IOp> = slots.iter().map(|s| s.iop.clone()).collect();
            let e = validate_chain(&iops).err().unwrap_or(FusionError::InvalidParam(
                "per-plane chains must be a read followed by a write".into(),
            ));
            Err(chain_error(&slots, e))
        }
    }
}

/// Batch-wide fused pipeline: plane `z` is read by `per_plane[z]`'s read,
/// runs through `shared`, and lands in `per_plane[z]`'s write.
pub fn build_batch<C: AsRef<[LazyHandle]>>(per_plane: &[C], shared: &[LazyHandle]) -> Result<Pipeline> {
    let ends = per_plane
        .iter()
        .map(|c| plane_endpoints(c.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let first = ends.first().ok_or(FusionError::EmptyBatch)?;
    let read_sig = |r: &IOp| (r.signature().output_kind, r.dims_hint());
    let write_sig = |w: &IOp| (w.signature().input_kind, w.dims_hint());
    for (index, (r, w)) in ends.iter().enumerate() {
        if read_sig(r) != read_sig(&first.0) || write_sig(w) != write_sig(&first.1) {
            return Err(FusionError::HeterogeneousBatch { index });
        }
    }
    let (read, write) = if let [(r, w)] = ends.as_slice() {
        (r.clone(), w.clone())
    } else {
        let reads: Vec<IOp> = ends.iter().map(|e| e.0.clone()).collect();
        let writes: Vec<IOp> = ends.iter().map(|e| e.1.clone()).collect();
        (op_batch_read_all(&reads)?, op_batch_write_all(&writes)?)
    };
    let mut chain = Vec::with_capacity(shared.len() + 2);
    chain.push(LazyHandle::new(read, "batch read"));
    chain.extend(shared.iter().cloned());
    chain.push(LazyHandle::new(write, "batch write"));
    build_pipeline(&chain)
}

/// One fused execution across all planes of the batch.
pub fn execute_batch<C: AsRef<[LazyHandle]>>(
    per_plane: &[C],
    shared: &[LazyHandle],
    config: &ExecConfig,
) -> Result<ExecReport> {
    Ok(execute_fused(&build_batch(per_plane, shared)?, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn multiply_halves() {
        let src = Plane::from_vec(3, 2, &[4.0f32; 6]).unwrap();
        let dst = Plane::alloc(3, 2, ScalarKind::F32).unwrap();
        execute_operations(&[read(&src), multiply(0.5f32), write(&dst)], &ExecConfig::default())
            .unwrap();
        assert_eq!(dst.to_vec::<f32>().unwrap(), vec![2.0; 6]);
    }

    #[test]
    fn divide_by_zero_names_divide() {
        let e = divide(0.0f32).unwrap_err();
        assert_eq!(e.provenance(), Some("divide"));
        assert!(matches!(e.root(), FusionError::DivByZeroParam));
    }

    #[test]
    fn chain_errors_name_handle() {
        let src = Plane::alloc(2, 2, ScalarKind::F32).unwrap();
        let e = build_pipeline(&[read(&src), read(&src), write(&src)]).unwrap_err();
        assert_eq!(e.provenance(), Some("read (handle #2)"));
        assert!(matches!(e.root(), FusionError::KindMismatch { position: 1, .. }));
    }

    #[test]
    fn crop_then_resize_is_one_read() {
        let src = Plane::alloc(10, 10, ScalarKind::U8x3).unwrap();
        let dst = Plane::alloc(4, 4, ScalarKind::F32x3).unwrap();
        let c = crop(&src, 1, 1, 8, 8).unwrap();
        let r = resize_to(&c, (4, 4), ResizeMode::Bilinear, ScalarKind::F32x3).unwrap();
        let swap = cvt_color(ColorConversion::SwapRb, ScalarKind::F32x3).unwrap();
        let p = build_pipeline(&[c, r, swap, multiply([2.0f32; 3]), write(&dst)]).unwrap();
        assert_eq!(p.compute_len(), 1);
        assert_eq!(p.iter_space().as_tuple(), (4, 4, 1));
    }

    #[test]
    fn cached_pipeline_validates_once() {
        let src = Plane::from_vec(2, 1, &[1u8, 2]).unwrap();
        let dst = Plane::alloc(2, 1, ScalarKind::U8).unwrap();
        let chain = [read(&src), add(1u8), write(&dst)];
        let cfg = ExecConfig::default();
        execute_operations(&chain, &cfg).unwrap();
        execute_operations(&chain, &cfg).unwrap();
        assert_eq!(chain[2].validations(), 1);
        assert_eq!(dst.to_vec::<u8>().unwrap(), vec![2, 3]);
    }

    #[test]
    fn heterogeneous_batch() {
        let a = Plane::alloc(4, 4, ScalarKind::U8).unwrap();
        let b = Plane::alloc(4, 3, ScalarKind::U8).unwrap();
        let chains = vec![vec![read(&a), write(&a)], vec![read(&b), write(&a)]];
        let e = build_batch(&chains, &[]).unwrap_err();
        assert!(matches!(e, FusionError::HeterogeneousBatch { index: 1 }));
    }
}
