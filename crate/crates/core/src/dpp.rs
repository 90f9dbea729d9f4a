//! Data-parallel patterns: the thread-behaviour layer.
//!
//! [`transform_point`] threads one point through a pipeline; intermediates
//! never leave locals. [`transform_range`] does the same for a run of
//! adjacent points, `block` at a time (thread coarsening). Reductions fold
//! `transform(read(p))` over the whole iteration space with a fixed
//! combination order.

use std::ops::{Add, Range};

use rayon::prelude::*;

use crate::error::{FusionError, Result};
use crate::executor::{resolve_workers, with_pool, ExecConfig};
use crate::ops::{ComputeOp, IOp, IterSpace, OpKind, Pipeline, ReadOp};
use crate::tensor::{Block, ScalarKind, ThreadPoint, MAX_BLOCK};

/// Number of adjacent x elements handled per coarsened step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoarseningPlan {
    block: usize,
}

impl CoarseningPlan {
    pub const ALLOWED: [usize; 5] = [1, 2, 4, 8, 16];

    pub fn new(block: usize) -> Result<CoarseningPlan> {
        if CoarseningPlan::ALLOWED.contains(&block) {
            Ok(CoarseningPlan { block })
        } else {
            Err(FusionError::InvalidParam(format!(
                "coarsening block {block} not in {{1, 2, 4, 8, 16}}"
            )))
        }
    }

    pub fn block(&self) -> usize {
        self.block
    }
}

impl Default for CoarseningPlan {
    fn default() -> CoarseningPlan {
        CoarseningPlan { block: MAX_BLOCK }
    }
}

/// How a range was split: coarsened blocks and scalar tail points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RangeStats {
    pub blocks: usize,
    pub tail: usize,
}

/// Read, every compute op in order, write, for a single thread.
pub fn transform_point(pipeline: &Pipeline, thread: ThreadPoint) {
    debug_assert!(pipeline.iter_space().contains(thread));
    let mut v = pipeline.read().read(thread);
    for op in pipeline.compute() {
        v = op.apply(v);
    }
    pipeline.write().write(thread, v);
}

/// Transform over `(x_range, y, z)`, `plan.block()` points per step; the
/// remainder `len % block` is processed one point at a time.
pub fn transform_range(
    pipeline: &Pipeline,
    y: usize,
    z: usize,
    x_range: Range<usize>,
    plan: CoarseningPlan,
) -> RangeStats {
    debug_assert!(x_range.end <= pipeline.iter_space().width);
    let block = plan.block();
    let mut stats = RangeStats::default();
    let mut x = x_range.start;
    if block > 1 {
        let (read, write) = (pipeline.read(), pipeline.write());
        while x + block <= x_range.end {
            let mut b = read.read_block(y, z, x, block);
            for op in pipeline.compute() {
                op.apply_block(&mut b, block);
            }
            write.write_block(y, z, x, block, &b);
            x += block;
            stats.blocks += 1;
        }
    }
    for x in x..x_range.end {
        transform_point(pipeline, ThreadPoint { x, y, z });
        stats.tail += 1;
    }
    stats
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Combine {
    Sum,
    Max,
    Min,
}

impl Combine {
    #[inline(always)]
    fn apply<T: Copy + PartialOrd + Add<Output = T>>(self, acc: T, v: T) -> T {
        match self {
            Combine::Sum => acc + v,
            Combine::Max => {
                if v > acc {
                    v
                } else {
                    acc
                }
            }
            Combine::Min => {
                if v < acc {
                    v
                } else {
                    acc
                }
            }
        }
    }
}

/// A reduction result. Integer elements accumulate in `u64` so sums are
/// exact. Float elements accumulate in `f64`; `f32` results are rounded
/// once at the end, which keeps sums from different row partitions within
/// one `f32` ulp of each other.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reduced {
    U64 { lanes: usize, v: [u64; 3] },
    F32 { lanes: usize, v: [f32; 3] },
    F64 { lanes: usize, v: [f64; 3] },
}

impl Reduced {
    fn identity(kind: ScalarKind, combine: Combine) -> Reduced {
        let lanes = kind.lanes();
        match (kind.lane_kind(), combine) {
            (ScalarKind::U8, Combine::Sum | Combine::Max) => Reduced::U64 { lanes, v: [0; 3] },
            (ScalarKind::U8, Combine::Min) => Reduced::U64 {
                lanes,
                v: [u64::MAX; 3],
            },
            (_, c) => Reduced::F64 {
                lanes,
                v: [match c {
                    Combine::Sum => 0.0,
                    Combine::Max => f64::NEG_INFINITY,
                    Combine::Min => f64::INFINITY,
                }; 3],
            },
        }
    }

    pub fn lanes(&self) -> usize {
        match self {
            Reduced::U64 { lanes, .. } | Reduced::F32 { lanes, .. } | Reduced::F64 { lanes, .. } => {
                *lanes
            }
        }
    }

    pub fn as_u64(&self, lane: usize) -> Option<u64> {
        match self {
            Reduced::U64 { v, .. } => Some(v[lane]),
            _ => None,
        }
    }

    pub fn as_f64(&self, lane: usize) -> f64 {
        match self {
            Reduced::U64 { v, .. } => v[lane] as f64,
            Reduced::F32 { v, .. } => v[lane] as f64,
            Reduced::F64 { v, .. } => v[lane],
        }
    }

    fn merge(&mut self, combine: Combine, other: &Reduced) {
        match (self, other) {
            (Reduced::U64 { v, lanes }, Reduced::U64 { v: o, .. }) => {
                (0..*lanes).for_each(|l| v[l] = combine.apply(v[l], o[l]))
            }
            (Reduced::F64 { v, lanes }, Reduced::F64 { v: o, .. }) => {
                (0..*lanes).for_each(|l| v[l] = combine.apply(v[l], o[l]))
            }
            _ => unreachable!("partials of one spec share a kind"),
        }
    }

    /// Folds the first `n` values of `block`, in order.
    fn fold_block(&mut self, combine: Combine, block: &Block, n: usize) {
        macro_rules! fold {
            ($acc:expr, $data:expr, $conv:expr) => {
                for x in &$data[..n] {
                    $acc[0] = combine.apply($acc[0], $conv(*x));
                }
            };
        }
        macro_rules! fold3 {
            ($acc:expr, $data:expr, $conv:expr) => {
                for x in &$data[..n] {
                    for l in 0..3 {
                        $acc[l] = combine.apply($acc[l], $conv(x[l]));
                    }
                }
            };
        }
        match (self, block) {
            (Reduced::U64 { v, .. }, Block::U8(a)) => fold!(v, a, |x: u8| x as u64),
            (Reduced::U64 { v, .. }, Block::U8x3(a)) => fold3!(v, a, |x: u8| x as u64),
            (Reduced::F64 { v, .. }, Block::F32(a)) => fold!(v, a, |x: f32| x as f64),
            (Reduced::F64 { v, .. }, Block::F32x3(a)) => fold3!(v, a, |x: f32| x as f64),
            (Reduced::F64 { v, .. }, Block::F64(a)) => fold!(v, a, |x: f64| x),
            (Reduced::F64 { v, .. }, Block::F64x3(a)) => fold3!(v, a, |x: f64| x),
            (acc, b) => unreachable!("accumulator {acc:?} for {:?}", b.kind()),
        }
    }

    fn finish(self, kind: ScalarKind) -> Reduced {
        match self {
            Reduced::F64 { lanes, v } if kind.lane_kind() == ScalarKind::F32 => Reduced::F32 {
                lanes,
                v: v.map(|x| x as f32),
            },
            other => other,
        }
    }

    pub fn bits_eq(&self, other: &Reduced) -> bool {
        match (self, other) {
            (Reduced::U64 { v, lanes }, Reduced::U64 { v: o, lanes: ol }) => lanes == ol && v == o,
            (Reduced::F32 { v, lanes }, Reduced::F32 { v: o, lanes: ol }) => {
                lanes == ol && v.iter().zip(o).all(|(a, b)| a.to_bits() == b.to_bits())
            }
            (Reduced::F64 { v, lanes }, Reduced::F64 { v: o, lanes: ol }) => {
                lanes == ol && v.iter().zip(o).all(|(a, b)| a.to_bits() == b.to_bits())
            }
            _ => false,
        }
    }
}

/// One reduction: an optional per-element transform followed by a combiner.
#[derive(Debug, Clone)]
pub struct ReduceSpec {
    transform: Option<ComputeOp>,
    combine: Combine,
}

impl ReduceSpec {
    pub fn new(transform: Option<&IOp>, combine: Combine) -> Result<ReduceSpec> {
        let transform = match transform {
            None => None,
            Some(iop) => Some(iop.as_compute().cloned().ok_or(FusionError::MisplacedOp {
                position: 0,
                kind: iop.kind(),
            })?),
        };
        Ok(ReduceSpec { transform, combine })
    }

    pub fn sum() -> ReduceSpec {
        ReduceSpec {
            transform: None,
            combine: Combine::Sum,
        }
    }

    pub fn max() -> ReduceSpec {
        ReduceSpec {
            transform: None,
            combine: Combine::Max,
        }
    }

    pub fn min() -> ReduceSpec {
        ReduceSpec {
            transform: None,
            combine: Combine::Min,
        }
    }

    pub fn combine(&self) -> Combine {
        self.combine
    }

    fn value_kind(&self, read_kind: ScalarKind) -> Result<ScalarKind> {
        match &self.transform {
            None => Ok(read_kind),
            Some(op) if op.input_kind() == read_kind => Ok(op.output_kind()),
            Some(op) => Err(FusionError::KindMismatch {
                position: 1,
                expected: Some(read_kind),
                found: Some(op.input_kind()),
            }),
        }
    }

    /// Starting accumulator of the combiner for values of `kind`.
    pub fn identity(&self, kind: ScalarKind) -> Reduced {
        Reduced::identity(kind, self.combine)
    }
}

#[derive(Debug, Clone)]
pub struct ReduceOutcome {
    pub values: Vec<Reduced>,
    /// Source elements produced by the read op during the traversal.
    pub elements_read: u64,
}

/// Sum, max or min of `transform(read(p))` over every point.
pub fn reduce_plane(read: &IOp, spec: &ReduceSpec) -> Result<Reduced> {
    reduce_plane_with(read, spec, &ExecConfig::default())
}

pub fn reduce_plane_with(read: &IOp, spec: &ReduceSpec, config: &ExecConfig) -> Result<Reduced> {
    let mut out = multi_reduce_plane_with(read, std::slice::from_ref(spec), config)?;
    Ok(out.values.remove(0))
}

pub fn multi_reduce_plane(read: &IOp, specs: &[ReduceSpec]) -> Result<ReduceOutcome> {
    multi_reduce_plane_with(read, specs, &ExecConfig::default())
}

/// Evaluates several reductions in one traversal of the source.
///
/// Rows are split into one contiguous range per worker; each worker folds
/// its rows in row-major order, and partials are combined in worker order.
pub fn multi_reduce_plane_with(
    read: &IOp,
    specs: &[ReduceSpec],
    config: &ExecConfig,
) -> Result<ReduceOutcome> {
    if specs.is_empty() {
        return Err(FusionError::InvalidParam("no reduce specs".into()));
    }
    if read.kind() != OpKind::ReadType {
        return Err(FusionError::FirstNotRead(read.kind()));
    }
    let op = read.as_read().expect("read kind");
    let space = op.dims();
    if space.points() == 0 {
        return Err(FusionError::EmptyIterSpace);
    }
    let kinds = specs
        .iter()
        .map(|s| s.value_kind(op.out_kind()))
        .collect::<Result<Vec<_>>>()?;

    let rows = space.batch * space.height;
    let workers = resolve_workers(config.workers).min(rows);
    let block = config.coarsening.block();
    let fold_rows = |w: usize| -> (Vec<Reduced>, u64) {
        let range = (w * rows / workers)..((w + 1) * rows / workers);
        fold_range(op, specs, &kinds, space, range, block)
    };
    let partials: Vec<(Vec<Reduced>, u64)> = if workers == 1 {
        vec![fold_rows(0)]
    } else {
        with_pool(workers, || {
            (0..workers).into_par_iter().map(fold_rows).collect()
        })
    };

    let mut values: Vec<Reduced> = specs
        .iter()
        .zip(&kinds)
        .map(|(s, k)| s.identity(*k))
        .collect();
    let mut elements_read = 0;
    for (partial, count) in &partials {
        for ((acc, p), spec) in values.iter_mut().zip(partial).zip(specs) {
            acc.merge(spec.combine, p);
        }
        elements_read += count;
    }
    let values = values.into_iter().zip(&kinds).map(|(v, k)| v.finish(*k)).collect();
    Ok(ReduceOutcome {
        values,
        elements_read,
    })
}

fn fold_range(
    op: &ReadOp,
    specs: &[ReduceSpec],
    kinds: &[ScalarKind],
    space: IterSpace,
    rows: Range<usize>,
    block: usize,
) -> (Vec<Reduced>, u64) {
    let mut accs: Vec<Reduced> = specs
        .iter()
        .zip(kinds)
        .map(|(s, k)| s.identity(*k))
        .collect();
    let mut read_count = 0u64;
    for row in rows {
        let (z, y) = (row / space.height, row % space.height);
        let mut x = 0;
        while x < space.width {
            let n = block.min(space.width - x);
            let source = op.read_block(y, z, x, n);
            read_count += n as u64;
            for (acc, spec) in accs.iter_mut().zip(specs) {
                match &spec.transform {
                    None => acc.fold_block(spec.combine, &source, n),
                    Some(t) => {
                        let mut b = source;
                        t.apply_block(&mut b, n);
                        acc.fold_block(spec.combine, &b, n);
                    }
                }
            }
            x += n;
        }
    }
    (accs, read_count)
}
