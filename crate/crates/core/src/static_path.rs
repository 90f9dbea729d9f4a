//! Compile-time composition of fused chains.
//!
//! Element kinds are type parameters, so a chain that does not connect fails
//! to compile and kind dispatch disappears from the hot loop. Each point runs
//! the fully inlined chain in registers. The element functions are the same
//! ones the dynamic [`IOp`](crate::IOp) path uses, so both produce
//! bit-identical output for equivalent chains.
//!
//! ```
//! use fusekit::static_path::{chain, Add, Mul, PlaneSink, PlaneSource};
//! use fusekit::{ExecConfig, Plane, ScalarKind};
//!
//! let src = Plane::from_vec(3, 1, &[1.0f32, 2.0, 3.0]).unwrap();
//! let dst = Plane::alloc(3, 1, ScalarKind::F32).unwrap();
//! let fused = chain(PlaneSource::<f32>::new(&src).unwrap())
//!     .then(Mul(2.0f32))
//!     .then(Add(1.0f32))
//!     .write(PlaneSink::<f32>::new(&dst).unwrap())
//!     .unwrap();
//! fused.execute(&ExecConfig::default());
//! assert_eq!(dst.to_vec::<f32>().unwrap(), vec![3.0, 5.0, 7.0]);
//! ```

use std::marker::PhantomData;
use std::time::Instant;

use crate::error::{FusionError, Result};
use crate::executor::{run_tasks, ExecConfig, ExecReport};
use crate::ops::memory::check_split;
use crate::ops::scalar::{
    arith, cast_element, swap_rb, to_gray, ArithOp, CastLane, LaneArith,
};
use crate::ops::IterSpace;
use crate::tensor::{Element, Lane, Plane, MAX_BLOCK};

/// A register-to-register operation with statically known kinds.
pub trait Compute: Send + Sync {
    type In: Element;
    type Out: Element;

    fn exec(&self, v: Self::In) -> Self::Out;
}

macro_rules! static_arith {
    ($name:ident, $op:expr) => {
        #[derive(Debug, Clone, Copy)]
        pub struct $name<T>(pub T);

        impl<T: Element> Compute for $name<T>
        where
            T::Lane: LaneArith,
        {
            type In = T;
            type Out = T;

            #[inline(always)]
            fn exec(&self, v: T) -> T {
                arith($op, v, self.0)
            }
        }
    };
}

static_arith!(Mul, ArithOp::Mul);
static_arith!(Add, ArithOp::Add);
static_arith!(Sub, ArithOp::Sub);

#[derive(Debug, Clone, Copy)]
pub struct Div<T>(T);

impl<T: Element> Div<T>
where
    T::Lane: LaneArith,
{
    pub fn new(c: T) -> Result<Div<T>> {
        if (0..T::LANES).any(|i| c.lane(i).is_zero()) {
            return Err(FusionError::DivByZeroParam);
        }
        Ok(Div(c))
    }
}

impl<T: Element> Compute for Div<T>
where
    T::Lane: LaneArith,
{
    type In = T;
    type Out = T;

    #[inline(always)]
    fn exec(&self, v: T) -> T {
        arith(ArithOp::Div, v, self.0)
    }
}

#[derive(Debug)]
pub struct Cast<A, B>(PhantomData<fn(A) -> B>);

impl<A: Element, B: Element> Cast<A, B> {
    /// Fails for casts that change the lane count.
    pub fn new() -> Result<Cast<A, B>> {
        if A::LANES != B::LANES {
            return Err(FusionError::UnsupportedCast {
                from: A::KIND,
                to: B::KIND,
            });
        }
        Ok(Cast(PhantomData))
    }
}

impl<A: Element, B: Element> Compute for Cast<A, B>
where
    A::Lane: CastLane<B::Lane>,
{
    type In = A;
    type Out = B;

    #[inline(always)]
    fn exec(&self, v: A) -> B {
        cast_element(v)
    }
}

#[derive(Debug)]
pub struct SwapRb<L>(PhantomData<L>);

impl<L> Default for SwapRb<L> {
    fn default() -> Self {
        SwapRb(PhantomData)
    }
}

impl<L: Lane> Compute for SwapRb<L>
where
    [L; 3]: Element<Lane = L>,
{
    type In = [L; 3];
    type Out = [L; 3];

    #[inline(always)]
    fn exec(&self, v: [L; 3]) -> [L; 3] {
        swap_rb(v)
    }
}

#[derive(Debug)]
pub struct ToGray<L>(PhantomData<L>);

impl<L> Default for ToGray<L> {
    fn default() -> Self {
        ToGray(PhantomData)
    }
}

impl<L: Lane> Compute for ToGray<L>
where
    [L; 3]: Element<Lane = L>,
{
    type In = [L; 3];
    type Out = f32;

    #[inline(always)]
    fn exec(&self, v: [L; 3]) -> f32 {
        to_gray(v)
    }
}

/// `inner` applied `N` times, with one copy of its parameters.
#[derive(Debug, Clone, Copy)]
pub struct Repeat<C, const N: usize>(pub C);

impl<C: Compute<Out = <C as Compute>::In>, const N: usize> Compute for Repeat<C, N> {
    type In = C::In;
    type Out = C::In;

    #[inline(always)]
    fn exec(&self, mut v: C::In) -> C::In {
        for _ in 0..N {
            v = self.0.exec(v);
        }
        v
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Then<A, B>(pub A, pub B);

impl<A: Compute, B: Compute<In = A::Out>> Compute for Then<A, B> {
    type In = A::In;
    type Out = B::Out;

    #[inline(always)]
    fn exec(&self, v: A::In) -> B::Out {
        self.1.exec(self.0.exec(v))
    }
}

#[derive(Debug)]
pub struct Identity<T>(PhantomData<T>);

impl<T: Element> Compute for Identity<T> {
    type In = T;
    type Out = T;

    #[inline(always)]
    fn exec(&self, v: T) -> T {
        v
    }
}

/// The read end of a static chain.
pub trait Source: Send + Sync {
    type Out: Element;

    fn space(&self) -> IterSpace;
    fn read_row(&self, y: usize, z: usize, x0: usize, out: &mut [Self::Out]);
    fn bytes_per_point(&self) -> usize {
        Self::Out::KIND.bytes()
    }
}

/// The write end of a static chain.
pub trait Sink: Send + Sync {
    type In: Element;

    fn space(&self) -> IterSpace;
    fn write_row(&self, y: usize, z: usize, x0: usize, data: &[Self::In]);
    fn bytes_per_point(&self) -> usize {
        Self::In::KIND.bytes()
    }
}

fn typed(plane: &Plane, kind: crate::ScalarKind) -> Result<Plane> {
    if plane.kind() != kind {
        return Err(FusionError::ValueKind {
            expected: kind,
            found: plane.kind(),
        });
    }
    Ok(plane.clone())
}

/// Per-thread read of one plane (or a crop view of it).
pub struct PlaneSource<T> {
    plane: Plane,
    _t: PhantomData<T>,
}

impl<T: Element> PlaneSource<T> {
    pub fn new(plane: &Plane) -> Result<PlaneSource<T>> {
        Ok(PlaneSource {
            plane: typed(plane, T::KIND)?,
            _t: PhantomData,
        })
    }

    pub fn crop(plane: &Plane, x0: usize, y0: usize, w: usize, h: usize) -> Result<PlaneSource<T>> {
        PlaneSource::new(&plane.view(x0, y0, w, h)?)
    }
}

impl<T: Element> Source for PlaneSource<T> {
    type Out = T;

    fn space(&self) -> IterSpace {
        IterSpace::new(self.plane.width(), self.plane.height(), 1)
    }

    #[inline]
    fn read_row(&self, y: usize, _z: usize, x0: usize, out: &mut [T]) {
        self.plane.load_row(y, x0, out);
    }
}

/// Horizontal fusion: plane `z` of the batch for thread `z`.
pub struct BatchSource<T> {
    planes: Vec<Plane>,
    _t: PhantomData<T>,
}

impl<T: Element> BatchSource<T> {
    pub fn new(planes: &[Plane]) -> Result<BatchSource<T>> {
        let first = planes.first().ok_or(FusionError::EmptyBatch)?;
        for (index, p) in planes.iter().enumerate() {
            if p.kind() != T::KIND || p.dims() != first.dims() {
                return Err(FusionError::InnerKindMismatch { index });
            }
        }
        Ok(BatchSource {
            planes: planes.to_vec(),
            _t: PhantomData,
        })
    }
}

impl<T: Element> Source for BatchSource<T> {
    type Out = T;

    fn space(&self) -> IterSpace {
        let (w, h) = self.planes[0].dims();
        IterSpace::new(w, h, self.planes.len())
    }

    #[inline]
    fn read_row(&self, y: usize, z: usize, x0: usize, out: &mut [T]) {
        self.planes[z].load_row(y, x0, out);
    }
}

pub struct PlaneSink<T> {
    plane: Plane,
    _t: PhantomData<T>,
}

impl<T: Element> PlaneSink<T> {
    pub fn new(plane: &Plane) -> Result<PlaneSink<T>> {
        Ok(PlaneSink {
            plane: typed(plane, T::KIND)?,
            _t: PhantomData,
        })
    }
}

impl<T: Element> Sink for PlaneSink<T> {
    type In = T;

    fn space(&self) -> IterSpace {
        IterSpace::new(self.plane.width(), self.plane.height(), 1)
    }

    #[inline]
    fn write_row(&self, y: usize, _z: usize, x0: usize, data: &[T]) {
        self.plane.store_row(y, x0, data);
    }
}

pub struct BatchSink<T> {
    planes: Vec<Plane>,
    _t: PhantomData<T>,
}

impl<T: Element> BatchSink<T> {
    pub fn new(planes: &[Plane]) -> Result<BatchSink<T>> {
        let first = planes.first().ok_or(FusionError::EmptyBatch)?;
        for (index, p) in planes.iter().enumerate() {
            if p.kind() != T::KIND || p.dims() != first.dims() {
                return Err(FusionError::InnerKindMismatch { index });
            }
        }
        Ok(BatchSink {
            planes: planes.to_vec(),
            _t: PhantomData,
        })
    }
}

impl<T: Element> Sink for BatchSink<T> {
    type In = T;

    fn space(&self) -> IterSpace {
        let (w, h) = self.planes[0].dims();
        IterSpace::new(w, h, self.planes.len())
    }

    #[inline]
    fn write_row(&self, y: usize, z: usize, x0: usize, data: &[T]) {
        self.planes[z].store_row(y, x0, data);
    }
}

/// Packed-to-planar write into three scalar planes.
pub struct SplitSink<L> {
    planes: [Plane; 3],
    _l: PhantomData<L>,
}

impl<L: Lane + Element> SplitSink<L> {
    pub fn new(planes: [&Plane; 3]) -> Result<SplitSink<L>> {
        let planes = planes.map(Plane::clone);
        check_split(&planes)?;
        typed(&planes[0], <L as Element>::KIND)?;
        Ok(SplitSink {
            planes,
            _l: PhantomData,
        })
    }
}

impl<L: Lane + Element> Sink for SplitSink<L>
where
    [L; 3]: Element<Lane = L>,
{
    type In = [L; 3];

    fn space(&self) -> IterSpace {
        IterSpace::new(self.planes[0].width(), self.planes[0].height(), 1)
    }

    #[inline]
    fn write_row(&self, y: usize, _z: usize, x0: usize, data: &[[L; 3]]) {
        let mut lane = [L::default(); MAX_BLOCK];
        for (l, p) in self.planes.iter().enumerate() {
            for (o, v) in lane.iter_mut().zip(data) {
                *o = v[l];
            }
            p.store_row::<L>(y, x0, &lane[..data.len()]);
        }
    }
}

/// Partially built chain: a source and the composed compute so far.
pub struct Builder<S, C> {
    source: S,
    compute: C,
}

pub fn chain<S: Source>(source: S) -> Builder<S, Identity<S::Out>> {
    Builder {
        source,
        compute: Identity(PhantomData),
    }
}

impl<S: Source, C: Compute<In = S::Out>> Builder<S, C> {
    pub fn then<N: Compute<In = C::Out>>(self, next: N) -> Builder<S, Then<C, N>> {
        Builder {
            source: self.source,
            compute: Then(self.compute, next),
        }
    }

    /// Closes the chain; only the extents are checked at run time.
    pub fn write<K: Sink<In = C::Out>>(self, sink: K) -> Result<StaticPipeline<S, C, K>> {
        let (read, out) = (self.source.space(), sink.space());
        if out.width < read.width || out.height < read.height || out.batch != read.batch {
            return Err(FusionError::DimsMismatch {
                read: read.as_tuple(),
                write: out.as_tuple(),
            });
        }
        Ok(StaticPipeline {
            source: self.source,
            compute: self.compute,
            sink,
        })
    }
}

pub struct StaticPipeline<S, C, K> {
    source: S,
    compute: C,
    sink: K,
}

impl<S, C, K> StaticPipeline<S, C, K>
where
    S: Source,
    C: Compute<In = S::Out>,
    K: Sink<In = C::Out>,
{
    pub fn iter_space(&self) -> IterSpace {
        self.source.space()
    }

    #[inline]
    fn run_row(&self, y: usize, z: usize, width: usize, block: usize) {
        let mut input = [S::Out::zero(); MAX_BLOCK];
        let mut output = [K::In::zero(); MAX_BLOCK];
        let mut x = 0;
        while x < width {
            let n = block.min(width - x);
            self.source.read_row(y, z, x, &mut input[..n]);
            for (o, v) in output[..n].iter_mut().zip(&input[..n]) {
                *o = self.compute.exec(*v);
            }
            self.sink.write_row(y, z, x, &output[..n]);
            x += n;
        }
    }

    /// Fused single pass over the iteration space.
    pub fn execute(&self, config: &ExecConfig) -> ExecReport {
        let start = Instant::now();
        let space = self.iter_space();
        let block = config.coarsening.block();
        let mut report = run_tasks(space, config, |t| {
            for y in t.y_begin..t.y_end {
                self.run_row(y, t.z, space.width, block);
            }
            let points = ((t.y_end - t.y_begin) * space.width) as u64;
            ExecReport {
                bytes_read: points * self.source.bytes_per_point() as u64,
                bytes_written: points * self.sink.bytes_per_point() as u64,
                points_visited: points,
                ..ExecReport::default()
            }
        });
        report.passes = 1;
        report.wall_time_ns = start.elapsed().as_nanos() as u64;
        report
    }
}
