//! Memory operations: the reads that open a pipeline and the writes that
//! close it. A read maps a [`ThreadPoint`] to any source location(s); a write
//! maps it to destination location(s). Neither performs arithmetic beyond
//! address computation and, for resize, interpolation.

use crate::error::{FusionError, Result};
use crate::ops::scalar::{swap_rb, FromSample};
use crate::ops::IterSpace;
use crate::tensor::{Block, Element, Lane, Plane, ScalarKind, ThreadPoint, Value, MAX_BLOCK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResizeMode {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone)]
pub struct CropRead {
    /// Zero-copy view of the cropped region.
    pub view: Plane,
    pub x0: usize,
    pub y0: usize,
}

#[derive(Debug, Clone)]
pub struct ResizeRead {
    /// Sampled region; a crop view when crop and resize were collapsed.
    pub source: Plane,
    pub target_width: usize,
    pub target_height: usize,
    pub mode: ResizeMode,
    pub out_kind: ScalarKind,
}

#[derive(Debug, Clone)]
pub struct BatchRead {
    pub inner: Vec<ReadOp>,
    pub active: usize,
    pub default_value: Value,
}

#[derive(Debug, Clone)]
pub enum ReadOp {
    PerThread(Plane),
    Crop(CropRead),
    Resize(ResizeRead),
    /// Reads a 3-lane value with its lanes reversed.
    SwapRb(Box<ReadOp>),
    Batch(BatchRead),
}

/// Half-pixel-centre nearest source index.
pub fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    let s = ((i as f64 + 0.5) * src as f64 / dst as f64).floor() as usize;
    s.min(src - 1)
}

/// Half-pixel-centre bilinear taps `(i0, i1, weight_of_i1)` with edge clamping.
pub fn bilinear_taps(i: usize, src: usize, dst: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(src - 1);
    if i0 + 1 >= src {
        (i0, i0, 0.0)
    } else {
        (i0, i0 + 1, s - i0 as f64)
    }
}

impl ResizeRead {
    pub fn new(
        source: Plane,
        target_width: usize,
        target_height: usize,
        mode: ResizeMode,
        out_kind: ScalarKind,
    ) -> Result<ResizeRead> {
        if target_width == 0 || target_height == 0 {
            return Err(FusionError::InvalidParam(
                "resize target extents must be >= 1".into(),
            ));
        }
        let src_kind = source.kind();
        let allowed = out_kind == src_kind
            || (out_kind.is_float() && out_kind.lanes() == src_kind.lanes());
        if !allowed {
            return Err(FusionError::UnsupportedCast {
                from: src_kind,
                to: out_kind,
            });
        }
        Ok(ResizeRead {
            source,
            target_width,
            target_height,
            mode,
            out_kind,
        })
    }

    #[inline]
    fn sample<S: Element, O: Element>(&self, x: usize, y: usize) -> O
    where
        O::Lane: FromSample,
    {
        let (sw, sh) = self.source.dims();
        match self.mode {
            ResizeMode::Nearest => {
                let sx = nearest_index(x, sw, self.target_width);
                let sy = nearest_index(y, sh, self.target_height);
                let v: S = self.source.load_at(sx, sy);
                O::from_lanes(|l| O::Lane::from_sample(v.lane(l).to_f64()))
            }
            ResizeMode::Bilinear => {
                let (x0, x1, fx) = bilinear_taps(x, sw, self.target_width);
                let (y0, y1, fy) = bilinear_taps(y, sh, self.target_height);
                let a: S = self.source.load_at(x0, y0);
                let b: S = self.source.load_at(x1, y0);
                let c: S = self.source.load_at(x0, y1);
                let d: S = self.source.load_at(x1, y1);
                O::from_lanes(|l| {
                    let (a, b) = (a.lane(l).to_f64(), b.lane(l).to_f64());
                    let (c, d) = (c.lane(l).to_f64(), d.lane(l).to_f64());
                    let top = a + (b - a) * fx;
                    let bottom = c + (d - c) * fx;
                    O::Lane::from_sample(top + (bottom - top) * fy)
                })
            }
        }
    }

    fn read(&self, x: usize, y: usize) -> Value {
        dispatch_kind!(self.source.kind(), S => dispatch_kind!(self.out_kind, O => {
            self.sample::<S, O>(x, y).to_value()
        }))
    }

    fn read_block(&self, y: usize, x0: usize, n: usize) -> Block {
        dispatch_kind!(self.source.kind(), S => dispatch_kind!(self.out_kind, O => {
            let mut out = [O::zero(); MAX_BLOCK];
            for (i, o) in out[..n].iter_mut().enumerate() {
                *o = self.sample::<S, O>(x0 + i, y);
            }
            O::into_block(out)
        }))
    }
}

impl BatchRead {
    pub fn new(inner: Vec<ReadOp>, active: usize, default_value: Value) -> Result<BatchRead> {
        let first = inner.first().ok_or(FusionError::EmptyBatch)?;
        let (kind, dims) = (first.out_kind(), first.dims());
        for (index, op) in inner.iter().enumerate() {
            if matches!(op, ReadOp::Batch(_)) {
                return Err(FusionError::InvalidParam("nested batch read".into()));
            }
            if op.out_kind() != kind || op.dims() != dims {
                return Err(FusionError::InnerKindMismatch { index });
            }
        }
        if active == 0 || active > inner.len() {
            return Err(FusionError::InvalidParam(format!(
                "active_count {active} outside 1..={}",
                inner.len()
            )));
        }
        if default_value.kind() != kind {
            return Err(FusionError::ValueKind {
                expected: kind,
                found: default_value.kind(),
            });
        }
        Ok(BatchRead {
            inner,
            active,
            default_value,
        })
    }
}

impl ReadOp {
    pub fn out_kind(&self) -> ScalarKind {
        match self {
            ReadOp::PerThread(p) => p.kind(),
            ReadOp::Crop(c) => c.view.kind(),
            ReadOp::Resize(r) => r.out_kind,
            ReadOp::SwapRb(inner) => inner.out_kind(),
            ReadOp::Batch(b) => b.inner[0].out_kind(),
        }
    }

    /// Output extents: the iteration space this read induces.
    pub fn dims(&self) -> IterSpace {
        match self {
            ReadOp::PerThread(p) => IterSpace::new(p.width(), p.height(), 1),
            ReadOp::Crop(c) => IterSpace::new(c.view.width(), c.view.height(), 1),
            ReadOp::Resize(r) => IterSpace::new(r.target_width, r.target_height, 1),
            ReadOp::SwapRb(inner) => inner.dims(),
            ReadOp::Batch(b) => {
                let d = b.inner[0].dims();
                IterSpace::new(d.width, d.height, b.inner.len())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReadOp::PerThread(_) => "read_per_thread",
            ReadOp::Crop(_) => "crop",
            ReadOp::Resize(_) => "resize",
            ReadOp::SwapRb(_) => "swap_rb_read",
            ReadOp::Batch(_) => "batch_read",
        }
    }

    /// Logical source bytes touched to produce one point of plane `z`.
    pub fn bytes_per_point(&self, z: usize) -> usize {
        match self {
            ReadOp::PerThread(p) => p.kind().bytes(),
            ReadOp::Crop(c) => c.view.kind().bytes(),
            ReadOp::Resize(r) => {
                let taps = match r.mode {
                    ResizeMode::Nearest => 1,
                    ResizeMode::Bilinear => 4,
                };
                taps * r.source.kind().bytes()
            }
            ReadOp::SwapRb(inner) => inner.bytes_per_point(z),
            ReadOp::Batch(b) if z < b.active => b.inner[z].bytes_per_point(0),
            ReadOp::Batch(_) => 0,
        }
    }

    /// The value for one thread.
    pub fn read(&self, t: ThreadPoint) -> Value {
        match self {
            ReadOp::PerThread(p) => p.load_value(t.x, t.y),
            ReadOp::Crop(c) => c.view.load_value(t.x, t.y),
            ReadOp::Resize(r) => r.read(t.x, t.y),
            ReadOp::SwapRb(inner) => swap_value(inner.read(t)),
            ReadOp::Batch(b) if t.z < b.active => b.inner[t.z].read(ThreadPoint { z: 0, ..t }),
            ReadOp::Batch(b) => b.default_value,
        }
    }

    /// Values for `n` adjacent threads `(x0.., y, z)`.
    pub fn read_block(&self, y: usize, z: usize, x0: usize, n: usize) -> Block {
        debug_assert!(n <= MAX_BLOCK);
        match self {
            ReadOp::PerThread(p) => row_block(p, y, x0, n),
            ReadOp::Crop(c) => row_block(&c.view, y, x0, n),
            ReadOp::Resize(r) => r.read_block(y, x0, n),
            ReadOp::SwapRb(inner) => {
                let mut block = inner.read_block(y, z, x0, n);
                dispatch_kind!(block.kind(), T => {
                    let data = T::block_mut(&mut block).unwrap();
                    data[..n].iter_mut().for_each(|v| *v = swap_rb(*v));
                });
                block
            }
            ReadOp::Batch(b) if z < b.active => b.inner[z].read_block(y, 0, x0, n),
            ReadOp::Batch(b) => {
                let mut block = Block::zeroed(b.default_value.kind());
                for i in 0..n {
                    block.set(i, b.default_value);
                }
                block
            }
        }
    }
}

fn swap_value(v: Value) -> Value {
    dispatch_kind!(v.kind(), T => swap_rb(T::from_value(v).unwrap()).to_value())
}

fn row_block(p: &Plane, y: usize, x0: usize, n: usize) -> Block {
    dispatch_kind!(p.kind(), T => {
        let mut out = [T::zero(); MAX_BLOCK];
        p.load_row::<T>(y, x0, &mut out[..n]);
        T::into_block(out)
    })
}

#[derive(Debug, Clone)]
pub struct BatchWrite {
    pub inner: Vec<WriteOp>,
    pub active: usize,
}

impl BatchWrite {
    pub fn new(inner: Vec<WriteOp>, active: usize) -> Result<BatchWrite> {
        let first = inner.first().ok_or(FusionError::EmptyBatch)?;
        let (kind, dims) = (first.in_kind(), first.dims());
        for (index, op) in inner.iter().enumerate() {
            if matches!(op, WriteOp::Batch(_)) {
                return Err(FusionError::InvalidParam("nested batch write".into()));
            }
            if op.in_kind() != kind || op.dims() != dims {
                return Err(FusionError::InnerKindMismatch { index });
            }
        }
        if active == 0 || active > inner.len() {
            return Err(FusionError::InvalidParam(format!(
                "active_count {active} outside 1..={}",
                inner.len()
            )));
        }
        Ok(BatchWrite { inner, active })
    }
}

#[derive(Debug, Clone)]
pub enum WriteOp {
    PerThread(Plane),
    /// Packed 3-lane input written to three scalar planes.
    Split([Plane; 3]),
    Batch(BatchWrite),
}

pub fn check_split(planes: &[Plane; 3]) -> Result<()> {
    let kind = planes[0].kind();
    if kind.lanes() != 1 {
        return Err(FusionError::UnsupportedKind(kind));
    }
    let same = planes
        .iter()
        .all(|p| p.kind() == kind && p.dims() == planes[0].dims());
    if same {
        Ok(())
    } else {
        Err(FusionError::PlaneExtentMismatch)
    }
}

impl WriteOp {
    pub fn in_kind(&self) -> ScalarKind {
        match self {
            WriteOp::PerThread(p) => p.kind(),
            WriteOp::Split(planes) => planes[0].kind().with_lanes(3).expect("scalar lanes"),
            WriteOp::Batch(b) => b.inner[0].in_kind(),
        }
    }

    pub fn dims(&self) -> IterSpace {
        match self {
            WriteOp::PerThread(p) => IterSpace::new(p.width(), p.height(), 1),
            WriteOp::Split(planes) => IterSpace::new(planes[0].width(), planes[0].height(), 1),
            WriteOp::Batch(b) => {
                let d = b.inner[0].dims();
                IterSpace::new(d.width, d.height, b.inner.len())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WriteOp::PerThread(_) => "write_per_thread",
            WriteOp::Split(_) => "split_write",
            WriteOp::Batch(_) => "batch_write",
        }
    }

    pub fn bytes_per_point(&self, z: usize) -> usize {
        match self {
            WriteOp::Batch(b) if z < b.active => b.inner[z].bytes_per_point(0),
            WriteOp::Batch(_) => 0,
            other => other.in_kind().bytes(),
        }
    }

    pub fn write(&self, t: ThreadPoint, v: Value) {
        match self {
            WriteOp::PerThread(p) => p.store_value(t.x, t.y, v),
            WriteOp::Split(planes) => {
                for (l, p) in planes.iter().enumerate() {
                    let lane = match v {
                        Value::U8x3(a) => Value::U8(a[l]),
                        Value::F32x3(a) => Value::F32(a[l]),
                        Value::F64x3(a) => Value::F64(a[l]),
                        other => panic!("split write of {:?}", other.kind()),
                    };
                    p.store_value(t.x, t.y, lane);
                }
            }
            WriteOp::Batch(b) if t.z < b.active => b.inner[t.z].write(ThreadPoint { z: 0, ..t }, v),
            WriteOp::Batch(_) => {}
        }
    }

    pub fn write_block(&self, y: usize, z: usize, x0: usize, n: usize, block: &Block) {
        match self {
            WriteOp::PerThread(p) => dispatch_kind!(p.kind(), T => {
                p.store_row::<T>(y, x0, &T::block(block).unwrap()[..n]);
            }),
            WriteOp::Split(planes) => match block {
                Block::U8x3(a) => split_rows(planes, y, x0, &a[..n]),
                Block::F32x3(a) => split_rows(planes, y, x0, &a[..n]),
                Block::F64x3(a) => split_rows(planes, y, x0, &a[..n]),
                other => panic!("split write of {:?}", other.kind()),
            },
            WriteOp::Batch(b) if z < b.active => b.inner[z].write_block(y, 0, x0, n, block),
            WriteOp::Batch(_) => {}
        }
    }
}

fn split_rows<L: Lane + Element>(planes: &[Plane; 3], y: usize, x0: usize, data: &[[L; 3]]) {
    let mut lane = [L::default(); MAX_BLOCK];
    for (l, p) in planes.iter().enumerate() {
        for (o, v) in lane.iter_mut().zip(data) {
            *o = v[l];
        }
        p.store_row::<L>(y, x0, &lane[..data.len()]);
    }
}
