//! Buffers, strided 2D plane views and the on-disk tensor container.
//!
//! Storage is held in relaxed atomics so that the executor can hand the same
//! destination plane to many workers without locking. Workers write disjoint
//! coordinates; plain loads and stores compile to ordinary moves.
//!
//! Packed 3-channel kinds store their lanes contiguously: element `i` of a
//! `F32x3` plane occupies lanes `3i..3i+3` of an `f32` lane store.

use std::fmt::Debug;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, AtomicU8, AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::{FusionError, Result};

/// Largest number of adjacent elements processed as one coarsened block.
pub const MAX_BLOCK: usize = 16;

const MAGIC: &[u8; 4] = b"FKT1";

static LIVE_BYTES: AtomicUsize = AtomicUsize::new(0);
static TOTAL_ALLOCATED: AtomicUsize = AtomicUsize::new(0);

/// Bytes currently held by live plane buffers in this process.
pub fn live_bytes() -> usize {
    LIVE_BYTES.load(Ordering::SeqCst)
}

/// Bytes allocated by plane buffers since process start.
pub fn total_allocated_bytes() -> usize {
    TOTAL_ALLOCATED.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalarKind {
    U8,
    F32,
    F64,
    U8x3,
    F32x3,
    F64x3,
}

impl ScalarKind {
    pub const ALL: [ScalarKind; 6] = [
        ScalarKind::U8,
        ScalarKind::F32,
        ScalarKind::F64,
        ScalarKind::U8x3,
        ScalarKind::F32x3,
        ScalarKind::F64x3,
    ];

    pub fn bytes(self) -> usize {
        self.lane_kind().lane_bytes() * self.lanes()
    }

    pub fn lanes(self) -> usize {
        match self {
            ScalarKind::U8 | ScalarKind::F32 | ScalarKind::F64 => 1,
            ScalarKind::U8x3 | ScalarKind::F32x3 | ScalarKind::F64x3 => 3,
        }
    }

    /// The scalar kind of one lane.
    pub fn lane_kind(self) -> ScalarKind {
        match self {
            ScalarKind::U8 | ScalarKind::U8x3 => ScalarKind::U8,
            ScalarKind::F32 | ScalarKind::F32x3 => ScalarKind::F32,
            ScalarKind::F64 | ScalarKind::F64x3 => ScalarKind::F64,
        }
    }

    /// Kind with the same lane type and the given lane count (1 or 3).
    pub fn with_lanes(self, lanes: usize) -> Option<ScalarKind> {
        match (self.lane_kind(), lanes) {
            (k, 1) => Some(k),
            (ScalarKind::U8, 3) => Some(ScalarKind::U8x3),
            (ScalarKind::F32, 3) => Some(ScalarKind::F32x3),
            (ScalarKind::F64, 3) => Some(ScalarKind::F64x3),
            _ => None,
        }
    }

    pub fn is_float(self) -> bool {
        self.lane_kind() != ScalarKind::U8
    }

    fn lane_bytes(self) -> usize {
        match self {
            ScalarKind::U8 => 1,
            ScalarKind::F32 => 4,
            _ => 8,
        }
    }

    pub fn tag(self) -> u32 {
        match self {
            ScalarKind::U8 => 0,
            ScalarKind::F32 => 1,
            ScalarKind::F64 => 2,
            ScalarKind::U8x3 => 3,
            ScalarKind::F32x3 => 4,
            ScalarKind::F64x3 => 5,
        }
    }

    pub fn from_tag(tag: u32) -> Result<ScalarKind> {
        ScalarKind::ALL
            .get(tag as usize)
            .copied()
            .ok_or(FusionError::UnknownKindTag(tag))
    }

    pub fn zero(self) -> Value {
        match self {
            ScalarKind::U8 => Value::U8(0),
            ScalarKind::F32 => Value::F32(0.0),
            ScalarKind::F64 => Value::F64(0.0),
            ScalarKind::U8x3 => Value::U8x3([0; 3]),
            ScalarKind::F32x3 => Value::F32x3([0.0; 3]),
            ScalarKind::F64x3 => Value::F64x3([0.0; 3]),
        }
    }
}

/// One dynamically-typed element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    U8(u8),
    F32(f32),
    F64(f64),
    U8x3([u8; 3]),
    F32x3([f32; 3]),
    F64x3([f64; 3]),
}

impl Value {
    pub fn kind(&self) -> ScalarKind {
        match self {
            Value::U8(_) => ScalarKind::U8,
            Value::F32(_) => ScalarKind::F32,
            Value::F64(_) => ScalarKind::F64,
            Value::U8x3(_) => ScalarKind::U8x3,
            Value::F32x3(_) => ScalarKind::F32x3,
            Value::F64x3(_) => ScalarKind::F64x3,
        }
    }

    /// Lane `i` widened to f64 (exact for every lane type).
    pub fn lane_f64(&self, i: usize) -> f64 {
        match self {
            Value::U8(v) => *v as f64,
            Value::F32(v) => *v as f64,
            Value::F64(v) => *v,
            Value::U8x3(v) => v[i] as f64,
            Value::F32x3(v) => v[i] as f64,
            Value::F64x3(v) => v[i],
        }
    }

    /// Bitwise equality; distinguishes `-0.0` from `0.0` and compares NaN payloads.
    pub fn bits_eq(&self, other: &Value) -> bool {
        fn f32s(a: &[f32], b: &[f32]) -> bool {
            a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        fn f64s(a: &[f64], b: &[f64]) -> bool {
            a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        match (self, other) {
            (Value::U8(a), Value::U8(b)) => a == b,
            (Value::U8x3(a), Value::U8x3(b)) => a == b,
            (Value::F32(a), Value::F32(b)) => a.to_bits() == b.to_bits(),
            (Value::F64(a), Value::F64(b)) => a.to_bits() == b.to_bits(),
            (Value::F32x3(a), Value::F32x3(b)) => f32s(a, b),
            (Value::F64x3(a), Value::F64x3(b)) => f64s(a, b),
            _ => false,
        }
    }
}

/// A fixed-capacity run of adjacent elements of one kind, kept on the stack.
#[derive(Debug, Clone, Copy)]
pub enum Block {
    U8([u8; MAX_BLOCK]),
    F32([f32; MAX_BLOCK]),
    F64([f64; MAX_BLOCK]),
    U8x3([[u8; 3]; MAX_BLOCK]),
    F32x3([[f32; 3]; MAX_BLOCK]),
    F64x3([[f64; 3]; MAX_BLOCK]),
}

impl Block {
    pub fn zeroed(kind: ScalarKind) -> Block {
        match kind {
            ScalarKind::U8 => Block::U8([0; MAX_BLOCK]),
            ScalarKind::F32 => Block::F32([0.0; MAX_BLOCK]),
            ScalarKind::F64 => Block::F64([0.0; MAX_BLOCK]),
            ScalarKind::U8x3 => Block::U8x3([[0; 3]; MAX_BLOCK]),
            ScalarKind::F32x3 => Block::F32x3([[0.0; 3]; MAX_BLOCK]),
            ScalarKind::F64x3 => Block::F64x3([[0.0; 3]; MAX_BLOCK]),
        }
    }

    pub fn kind(&self) -> ScalarKind {
        match self {
            Block::U8(_) => ScalarKind::U8,
            Block::F32(_) => ScalarKind::F32,
            Block::F64(_) => ScalarKind::F64,
            Block::U8x3(_) => ScalarKind::U8x3,
            Block::F32x3(_) => ScalarKind::F32x3,
            Block::F64x3(_) => ScalarKind::F64x3,
        }
    }

    pub fn get(&self, i: usize) -> Value {
        match self {
            Block::U8(a) => Value::U8(a[i]),
            Block::F32(a) => Value::F32(a[i]),
            Block::F64(a) => Value::F64(a[i]),
            Block::U8x3(a) => Value::U8x3(a[i]),
            Block::F32x3(a) => Value::F32x3(a[i]),
            Block::F64x3(a) => Value::F64x3(a[i]),
        }
    }

    /// Panics if `v` is not of the block's kind.
    pub fn set(&mut self, i: usize, v: Value) {
        match (self, v) {
            (Block::U8(a), Value::U8(v)) => a[i] = v,
            (Block::F32(a), Value::F32(v)) => a[i] = v,
            (Block::F64(a), Value::F64(v)) => a[i] = v,
            (Block::U8x3(a), Value::U8x3(v)) => a[i] = v,
            (Block::F32x3(a), Value::F32x3(v)) => a[i] = v,
            (Block::F64x3(a), Value::F64x3(v)) => a[i] = v,
            (b, v) => panic!("block of {:?} cannot hold {:?}", b.kind(), v.kind()),
        }
    }
}

/// Primitive lane type backing a plane's storage.
pub trait Lane: Copy + Default + PartialEq + Debug + Send + Sync + 'static {
    const KIND: ScalarKind;
    type Atom: Send + Sync;

    fn atoms(storage: &Storage) -> Option<&[Self::Atom]>;
    fn new_atom(v: Self) -> Self::Atom;
    fn load(a: &Self::Atom) -> Self;
    fn store(a: &Self::Atom, v: Self);
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn to_f64(self) -> f64;
}

macro_rules! impl_lane {
    ($t:ty, $kind:ident, $atom:ty, $variant:ident, $to:expr, $from:expr) => {
        impl Lane for $t {
            const KIND: ScalarKind = ScalarKind::$kind;
            type Atom = $atom;

            fn atoms(storage: &Storage) -> Option<&[$atom]> {
                match storage {
                    Storage::$variant(a) => Some(a),
                    _ => None,
                }
            }
            fn new_atom(v: $t) -> $atom {
                <$atom>::new(($to)(v))
            }
            #[inline(always)]
            fn load(a: &$atom) -> $t {
                ($from)(a.load(Ordering::Relaxed))
            }
            #[inline(always)]
            fn store(a: &$atom, v: $t) {
                a.store(($to)(v), Ordering::Relaxed)
            }
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }
            fn read_le(bytes: &[u8]) -> $t {
                <$t>::from_le_bytes(bytes.try_into().expect("lane width"))
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_lane!(u8, U8, AtomicU8, U8, |v: u8| v, |v: u8| v);
impl_lane!(f32, F32, AtomicU32, F32, f32::to_bits, f32::from_bits);
impl_lane!(f64, F64, AtomicU64, F64, f64::to_bits, f64::from_bits);

/// A typed element: a scalar lane or a packed 3-lane array.
pub trait Element: Copy + Debug + Send + Sync + 'static {
    type Lane: Lane;
    const KIND: ScalarKind;
    const LANES: usize;

    fn lane(&self, i: usize) -> Self::Lane;
    fn from_lanes(f: impl FnMut(usize) -> Self::Lane) -> Self;
    fn to_value(self) -> Value;
    fn from_value(v: Value) -> Option<Self>;
    fn block(b: &Block) -> Option<&[Self; MAX_BLOCK]>;
    fn block_mut(b: &mut Block) -> Option<&mut [Self; MAX_BLOCK]>;
    fn into_block(a: [Self; MAX_BLOCK]) -> Block;

    fn zero() -> Self {
        Self::from_lanes(|_| Self::Lane::default())
    }
}

macro_rules! impl_scalar_element {
    ($t:ty, $variant:ident) => {
        impl Element for $t {
            type Lane = $t;
            const KIND: ScalarKind = ScalarKind::$variant;
            const LANES: usize = 1;

            #[inline(always)]
            fn lane(&self, _: usize) -> $t {
                *self
            }
            #[inline(always)]
            fn from_lanes(mut f: impl FnMut(usize) -> $t) -> $t {
                f(0)
            }
            fn to_value(self) -> Value {
                Value::$variant(self)
            }
            fn from_value(v: Value) -> Option<$t> {
                match v {
                    Value::$variant(x) => Some(x),
                    _ => None,
                }
            }
            fn block(b: &Block) -> Option<&[$t; MAX_BLOCK]> {
                match b {
                    Block::$variant(a) => Some(a),
                    _ => None,
                }
            }
            fn block_mut(b: &mut Block) -> Option<&mut [$t; MAX_BLOCK]> {
                match b {
                    Block::$variant(a) => Some(a),
                    _ => None,
                }
            }
            fn into_block(a: [$t; MAX_BLOCK]) -> Block {
                Block::$variant(a)
            }
        }

        impl From<$t> for Value {
            fn from(v: $t) -> Value {
                Value::$variant(v)
            }
        }
    };
}

macro_rules! impl_packed_element {
    ($t:ty, $variant:ident) => {
        impl Element for [$t; 3] {
            type Lane = $t;
            const KIND: ScalarKind = ScalarKind::$variant;
            const LANES: usize = 3;

            #[inline(always)]
            fn lane(&self, i: usize) -> $t {
                self[i]
            }
            #[inline(always)]
            fn from_lanes(f: impl FnMut(usize) -> $t) -> [$t; 3] {
                std::array::from_fn(f)
            }
            fn to_value(self) -> Value {
                Value::$variant(self)
            }
            fn from_value(v: Value) -> Option<[$t; 3]> {
                match v {
                    Value::$variant(x) => Some(x),
                    _ => None,
                }
            }
            fn block(b: &Block) -> Option<&[[$t; 3]; MAX_BLOCK]> {
                match b {
                    Block::$variant(a) => Some(a),
                    _ => None,
                }
            }
            fn block_mut(b: &mut Block) -> Option<&mut [[$t; 3]; MAX_BLOCK]> {
                match b {
                    Block::$variant(a) => Some(a),
                    _ => None,
                }
            }
            fn into_block(a: [[$t; 3]; MAX_BLOCK]) -> Block {
                Block::$variant(a)
            }
        }

        impl From<[$t; 3]> for Value {
            fn from(v: [$t; 3]) -> Value {
                Value::$variant(v)
            }
        }
    };
}

impl_scalar_element!(u8, U8);
impl_scalar_element!(f32, F32);
impl_scalar_element!(f64, F64);
impl_packed_element!(u8, U8x3);
impl_packed_element!(f32, F32x3);
impl_packed_element!(f64, F64x3);

/// Lane storage of one buffer.
pub enum Storage {
    U8(Box<[AtomicU8]>),
    F32(Box<[AtomicU32]>),
    F64(Box<[AtomicU64]>),
}

struct Buffer {
    storage: Storage,
    kind: ScalarKind,
    bytes: usize,
}

impl Buffer {
    fn zeroed(kind: ScalarKind, elements: usize) -> Buffer {
        let lanes = elements * kind.lanes();
        let storage = match kind.lane_kind() {
            ScalarKind::U8 => Storage::U8((0..lanes).map(|_| AtomicU8::new(0)).collect()),
            ScalarKind::F32 => Storage::F32((0..lanes).map(|_| AtomicU32::new(0)).collect()),
            _ => Storage::F64((0..lanes).map(|_| AtomicU64::new(0)).collect()),
        };
        let bytes = elements * kind.bytes();
        LIVE_BYTES.fetch_add(bytes, Ordering::SeqCst);
        TOTAL_ALLOCATED.fetch_add(bytes, Ordering::SeqCst);
        Buffer {
            storage,
            kind,
            bytes,
        }
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        LIVE_BYTES.fetch_sub(self.bytes, Ordering::SeqCst);
    }
}

fn checked_elements(width: usize, height: usize, kind: ScalarKind) -> Result<usize> {
    if width == 0 || height == 0 {
        return Err(FusionError::EmptyPlane { width, height });
    }
    let overflow = FusionError::CapacityOverflow {
        width,
        height,
        kind,
    };
    let elements = width.checked_mul(height).ok_or(overflow)?;
    match elements.checked_mul(kind.bytes()) {
        Some(b) if b <= isize::MAX as usize => Ok(elements),
        _ => Err(FusionError::CapacityOverflow {
            width,
            height,
            kind,
        }),
    }
}

/// A strided 2D view over a shared buffer of one element kind.
///
/// Cloning a plane clones the view, not the data.
#[derive(Clone)]
pub struct Plane {
    buf: Arc<Buffer>,
    offset: usize,
    width: usize,
    height: usize,
    row_stride: usize,
    probe: Option<Arc<AtomicU64>>,
}

impl Debug for Plane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Plane")
            .field("kind", &self.kind())
            .field("width", &self.width)
            .field("height", &self.height)
            .field("row_stride", &self.row_stride)
            .field("offset", &self.offset)
            .finish()
    }
}

impl Plane {
    /// Allocates a zero-initialized plane with `row_stride == width`.
    pub fn alloc(width: usize, height: usize, kind: ScalarKind) -> Result<Plane> {
        let elements = checked_elements(width, height, kind)?;
        Ok(Plane {
            buf: Arc::new(Buffer::zeroed(kind, elements)),
            offset: 0,
            width,
            height,
            row_stride: width,
            probe: None,
        })
    }

    /// Allocates a plane whose rows are `row_stride` elements apart.
    pub fn alloc_strided(
        width: usize,
        height: usize,
        row_stride: usize,
        kind: ScalarKind,
    ) -> Result<Plane> {
        if row_stride < width {
            return Err(FusionError::InvalidParam(format!(
                "row_stride {row_stride} < width {width}"
            )));
        }
        let elements = checked_elements(row_stride, height, kind)?;
        Ok(Plane {
            buf: Arc::new(Buffer::zeroed(kind, elements)),
            offset: 0,
            width,
            height,
            row_stride,
            probe: None,
        })
    }

    /// Builds a plane from row-major data of exactly `width * height` elements.
    pub fn from_vec<T: Element>(width: usize, height: usize, data: &[T]) -> Result<Plane> {
        let plane = Plane::alloc(width, height, T::KIND)?;
        if data.len() != width * height {
            return Err(FusionError::InvalidParam(format!(
                "{} elements for a {width}x{height} plane",
                data.len()
            )));
        }
        for y in 0..height {
            plane.store_row(y, 0, &data[y * width..(y + 1) * width]);
        }
        Ok(plane)
    }

    pub fn from_fn<T: Element>(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> T,
    ) -> Result<Plane> {
        let data: Vec<T> = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Plane::from_vec(width, height, &data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn row_stride(&self) -> usize {
        self.row_stride
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn kind(&self) -> ScalarKind {
        self.buf.kind
    }

    /// Bytes of the logical `width * height` region.
    pub fn logical_bytes(&self) -> usize {
        self.width * self.height * self.kind().bytes()
    }

    /// Bytes held by the underlying buffer.
    pub fn buffer_bytes(&self) -> usize {
        self.buf.bytes
    }

    /// True when both views share one buffer.
    pub fn shares_buffer(&self, other: &Plane) -> bool {
        Arc::ptr_eq(&self.buf, &other.buf)
    }

    /// Attaches a counter that accumulates the number of elements read
    /// through this view (and views cloned from it).
    pub fn with_probe(mut self, probe: Arc<AtomicU64>) -> Plane {
        self.probe = Some(probe);
        self
    }

    /// Zero-copy sub-view.
    pub fn view(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Plane> {
        let fits = x0.checked_add(width).is_some_and(|r| r <= self.width)
            && y0.checked_add(height).is_some_and(|b| b <= self.height);
        if !fits || width == 0 || height == 0 {
            return Err(FusionError::CropOutOfBounds {
                x0,
                y0,
                width,
                height,
                src_width: self.width,
                src_height: self.height,
            });
        }
        Ok(Plane {
            buf: Arc::clone(&self.buf),
            offset: self.offset + y0 * self.row_stride + x0,
            width,
            height,
            row_stride: self.row_stride,
            probe: self.probe.clone(),
        })
    }

    #[inline]
    fn linear(&self, x: usize, y: usize) -> usize {
        self.offset + y * self.row_stride + x
    }

    fn check(&self, x: usize, y: usize) -> Result<()> {
        if x < self.width && y < self.height {
            Ok(())
        } else {
            Err(FusionError::OutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            })
        }
    }

    pub fn get(&self, x: usize, y: usize) -> Result<Value> {
        self.check(x, y)?;
        Ok(self.load_value(x, y))
    }

    pub fn set(&self, x: usize, y: usize, v: Value) -> Result<()> {
        self.check(x, y)?;
        if v.kind() != self.kind() {
            return Err(FusionError::ValueKind {
                expected: self.kind(),
                found: v.kind(),
            });
        }
        self.store_value(x, y, v);
        Ok(())
    }

    pub fn get_typed<T: Element>(&self, x: usize, y: usize) -> Result<T> {
        self.check(x, y)?;
        self.expect_kind(T::KIND)?;
        Ok(self.load::<T>(self.linear(x, y)))
    }

    fn expect_kind(&self, kind: ScalarKind) -> Result<()> {
        if self.kind() == kind {
            Ok(())
        } else {
            Err(FusionError::ValueKind {
                expected: kind,
                found: self.kind(),
            })
        }
    }

    #[inline(always)]
    fn atoms<T: Element>(&self) -> &[<T::Lane as Lane>::Atom] {
        debug_assert_eq!(T::KIND, self.kind());
        T::Lane::atoms(&self.buf.storage).expect("plane lane type")
    }

    #[inline(always)]
    fn load<T: Element>(&self, linear: usize) -> T {
        let atoms = self.atoms::<T>();
        let base = linear * T::LANES;
        T::from_lanes(|l| T::Lane::load(&atoms[base + l]))
    }

    #[inline(always)]
    fn store<T: Element>(&self, linear: usize, v: T) {
        let atoms = self.atoms::<T>();
        let base = linear * T::LANES;
        for l in 0..T::LANES {
            T::Lane::store(&atoms[base + l], v.lane(l));
        }
    }

    fn count_reads(&self, n: usize) {
        if let Some(p) = &self.probe {
            p.fetch_add(n as u64, Ordering::Relaxed);
        }
    }

    /// Unchecked-by-kind dynamic load; coordinates must be in range.
    pub(crate) fn load_value(&self, x: usize, y: usize) -> Value {
        self.count_reads(1);
        let li = self.linear(x, y);
        match self.kind() {
            ScalarKind::U8 => self.load::<u8>(li).to_value(),
            ScalarKind::F32 => self.load::<f32>(li).to_value(),
            ScalarKind::F64 => self.load::<f64>(li).to_value(),
            ScalarKind::U8x3 => self.load::<[u8; 3]>(li).to_value(),
            ScalarKind::F32x3 => self.load::<[f32; 3]>(li).to_value(),
            ScalarKind::F64x3 => self.load::<[f64; 3]>(li).to_value(),
        }
    }

    pub(crate) fn store_value(&self, x: usize, y: usize, v: Value) {
        let li = self.linear(x, y);
        match v {
            Value::U8(v) => self.store(li, v),
            Value::F32(v) => self.store(li, v),
            Value::F64(v) => self.store(li, v),
            Value::U8x3(v) => self.store(li, v),
            Value::F32x3(v) => self.store(li, v),
            Value::F64x3(v) => self.store(li, v),
        }
    }

    /// Copies `out.len()` elements of row `y` starting at `x0` into `out`.
    #[inline]
    pub(crate) fn load_row<T: Element>(&self, y: usize, x0: usize, out: &mut [T]) {
        debug_assert!(x0 + out.len() <= self.width && y < self.height);
        self.count_reads(out.len());
        let atoms = self.atoms::<T>();
        let base = self.linear(x0, y) * T::LANES;
        let src = &atoms[base..base + out.len() * T::LANES];
        for (i, o) in out.iter_mut().enumerate() {
            *o = T::from_lanes(|l| T::Lane::load(&src[i * T::LANES + l]));
        }
    }

    #[inline]
    pub(crate) fn store_row<T: Element>(&self, y: usize, x0: usize, data: &[T]) {
        debug_assert!(x0 + data.len() <= self.width && y < self.height);
        let atoms = self.atoms::<T>();
        let base = self.linear(x0, y) * T::LANES;
        let dst = &atoms[base..base + data.len() * T::LANES];
        for (i, v) in data.iter().enumerate() {
            for l in 0..T::LANES {
                T::Lane::store(&dst[i * T::LANES + l], v.lane(l));
            }
        }
    }

    /// Element `(x, y)` without kind or bounds checks beyond debug assertions.
    #[inline(always)]
    pub(crate) fn load_at<T: Element>(&self, x: usize, y: usize) -> T {
        debug_assert!(x < self.width && y < self.height);
        self.count_reads(1);
        self.load::<T>(self.linear(x, y))
    }

    /// Row-major copy of the logical region.
    pub fn to_vec<T: Element>(&self) -> Result<Vec<T>> {
        self.expect_kind(T::KIND)?;
        let mut out = vec![T::zero(); self.width * self.height];
        for (y, row) in out.chunks_mut(self.width).enumerate() {
            let atoms = self.atoms::<T>();
            let base = self.linear(0, y) * T::LANES;
            for (i, o) in row.iter_mut().enumerate() {
                *o = T::from_lanes(|l| T::Lane::load(&atoms[base + i * T::LANES + l]));
            }
        }
        Ok(out)
    }

    /// Row-major dynamic copy of the logical region; does not touch the probe.
    pub fn values(&self) -> Vec<Value> {
        let mut out = Vec::with_capacity(self.width * self.height);
        let quiet = Plane {
            probe: None,
            ..self.clone()
        };
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(quiet.load_value(x, y));
            }
        }
        out
    }

    /// Bitwise equality of kind, extents and logical contents.
    pub fn bits_eq(&self, other: &Plane) -> bool {
        self.kind() == other.kind()
            && self.dims() == other.dims()
            && self
                .values()
                .iter()
                .zip(other.values().iter())
                .all(|(a, b)| a.bits_eq(b))
    }

    /// Deep copy into a new buffer with the given row stride.
    pub fn copy_with_stride(&self, row_stride: usize) -> Result<Plane> {
        let out = Plane::alloc_strided(self.width, self.height, row_stride, self.kind())?;
        for (i, v) in self.values().into_iter().enumerate() {
            out.store_value(i % self.width, i / self.width, v);
        }
        Ok(out)
    }

    /// Deep copy with `row_stride == width`.
    pub fn deep_copy(&self) -> Result<Plane> {
        self.copy_with_stride(self.width)
    }

    fn payload_le(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.logical_bytes());
        fn lanes<L: Lane>(p: &Plane, out: &mut Vec<u8>) {
            let atoms = L::atoms(&p.buf.storage).expect("lane type");
            let lanes = p.kind().lanes();
            for y in 0..p.height {
                let base = p.linear(0, y) * lanes;
                for a in &atoms[base..base + p.width * lanes] {
                    L::load(a).write_le(out);
                }
            }
        }
        match self.kind().lane_kind() {
            ScalarKind::U8 => lanes::<u8>(self, &mut out),
            ScalarKind::F32 => lanes::<f32>(self, &mut out),
            _ => lanes::<f64>(self, &mut out),
        }
        out
    }

    fn from_payload_le(width: usize, height: usize, kind: ScalarKind, bytes: &[u8]) -> Result<Plane> {
        let plane = Plane::alloc(width, height, kind)?;
        fn fill<L: Lane>(p: &Plane, bytes: &[u8]) {
            let atoms = L::atoms(&p.buf.storage).expect("lane type");
            let w = std::mem::size_of::<L>();
            for (a, chunk) in atoms.iter().zip(bytes.chunks_exact(w)) {
                L::store(a, L::read_le(chunk));
            }
        }
        match kind.lane_kind() {
            ScalarKind::U8 => fill::<u8>(&plane, bytes),
            ScalarKind::F32 => fill::<f32>(&plane, bytes),
            _ => fill::<f64>(&plane, bytes),
        }
        Ok(plane)
    }
}

/// An ordered, non-empty list of planes of one kind.
#[derive(Debug, Clone)]
pub struct PlaneBatch {
    planes: Vec<Plane>,
}

impl PlaneBatch {
    pub fn new(planes: Vec<Plane>) -> Result<PlaneBatch> {
        let first = planes.first().ok_or(FusionError::EmptyBatch)?;
        if let Some(index) = planes.iter().position(|p| p.kind() != first.kind()) {
            return Err(FusionError::InnerKindMismatch { index });
        }
        Ok(PlaneBatch { planes })
    }

    pub fn alloc(width: usize, height: usize, kind: ScalarKind, count: usize) -> Result<PlaneBatch> {
        let planes = (0..count)
            .map(|_| Plane::alloc(width, height, kind))
            .collect::<Result<Vec<_>>>()?;
        PlaneBatch::new(planes)
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn kind(&self) -> ScalarKind {
        self.planes[0].kind()
    }

    /// Common `(width, height)` when every plane shares extents.
    pub fn uniform_dims(&self) -> Option<(usize, usize)> {
        let d = self.planes[0].dims();
        self.planes.iter().all(|p| p.dims() == d).then_some(d)
    }
}

impl From<Plane> for PlaneBatch {
    fn from(p: Plane) -> PlaneBatch {
        PlaneBatch { planes: vec![p] }
    }
}

/// Logical coordinates of one unit of data-parallel work; `z` selects the batch plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ThreadPoint {
    pub x: usize,
    pub y: usize,
    pub z: usize,
}

impl ThreadPoint {
    pub fn new(x: usize, y: usize, z: usize) -> ThreadPoint {
        ThreadPoint { x, y, z }
    }
}

/// Serializes planes in the FKT container format.
pub fn encode_planes<W: Write>(planes: &[Plane], mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(planes.len() as u32).to_le_bytes())?;
    for p in planes {
        let (width, height) = (u32::try_from(p.width), u32::try_from(p.height));
        let (Ok(width), Ok(height)) = (width, height) else {
            return Err(FusionError::InvalidParam(
                "plane extents exceed u32".to_string(),
            ));
        };
        w.write_all(&p.kind().tag().to_le_bytes())?;
        w.write_all(&width.to_le_bytes())?;
        w.write_all(&height.to_le_bytes())?;
        w.write_all(&p.payload_le())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn truncated(e: io::Error) -> FusionError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        FusionError::Truncated
    } else {
        FusionError::Io(e)
    }
}

/// Reads planes back; each plane carries its own kind and extents.
pub fn decode_planes<R: Read>(mut r: R) -> Result<Vec<Plane>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(FusionError::BadMagic);
    }
    let count = read_u32(&mut r)?;
    let mut planes = Vec::new();
    for _ in 0..count {
        let kind = ScalarKind::from_tag(read_u32(&mut r)?)?;
        let width = read_u32(&mut r)? as usize;
        let height = read_u32(&mut r)? as usize;
        let elements = checked_elements(width, height, kind)?;
        let mut payload = vec![0u8; elements * kind.bytes()];
        r.read_exact(&mut payload).map_err(truncated)?;
        planes.push(Plane::from_payload_le(width, height, kind, &payload)?);
    }
    Ok(planes)
}

pub fn write_tensor_file(planes: &[Plane], path: impl AsRef<Path>) -> Result<()> {
    encode_planes(planes, BufWriter::new(File::create(path)?))
}

pub fn read_tensor_file(path: impl AsRef<Path>) -> Result<Vec<Plane>> {
    decode_planes(BufReader::new(File::open(path)?))
}

/// Writes a `U8x3` plane as binary PPM (P6).
pub fn write_ppm(plane: &Plane, path: impl AsRef<Path>) -> Result<()> {
    if plane.kind() != ScalarKind::U8x3 {
        return Err(FusionError::PpmKind(plane.kind()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P6\n{} {}\n255\n", plane.width, plane.height)?;
    w.write_all(&plane.payload_le())?;
    w.flush()?;
    Ok(())
}
