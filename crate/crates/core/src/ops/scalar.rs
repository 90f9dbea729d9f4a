//! Element-level arithmetic, conversion and colour functions.
//!
//! Both the dynamic IOp path and the statically composed path call these, so
//! the two produce bit-identical results for the same chain.

use crate::tensor::{Element, Lane};

/// Per-lane arithmetic in the element's own kind.
///
/// `u8` arithmetic wraps modulo 256 and divides as integers; widening to a
/// float kind is the job of a cast.
pub trait LaneArith: Lane {
    fn mul(self, c: Self) -> Self;
    fn add(self, c: Self) -> Self;
    fn sub(self, c: Self) -> Self;
    fn div(self, c: Self) -> Self;
    fn is_zero(self) -> bool;
}

impl LaneArith for u8 {
    #[inline(always)]
    fn mul(self, c: u8) -> u8 {
        self.wrapping_mul(c)
    }
    #[inline(always)]
    fn add(self, c: u8) -> u8 {
        self.wrapping_add(c)
    }
    #[inline(always)]
    fn sub(self, c: u8) -> u8 {
        self.wrapping_sub(c)
    }
    #[inline(always)]
    fn div(self, c: u8) -> u8 {
        // zero divisors are rejected when the op is built
        self.checked_div(c).unwrap_or(0)
    }
    fn is_zero(self) -> bool {
        self == 0
    }
}

macro_rules! float_arith {
    ($t:ty) => {
        impl LaneArith for $t {
            #[inline(always)]
            fn mul(self, c: $t) -> $t {
                self * c
            }
            #[inline(always)]
            fn add(self, c: $t) -> $t {
                self + c
            }
            #[inline(always)]
            fn sub(self, c: $t) -> $t {
                self - c
            }
            #[inline(always)]
            fn div(self, c: $t) -> $t {
                self / c
            }
            fn is_zero(self) -> bool {
                self == 0.0
            }
        }
    };
}

float_arith!(f32);
float_arith!(f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Mul,
    Add,
    Sub,
    Div,
}

impl ArithOp {
    pub fn name(self) -> &'static str {
        match self {
            ArithOp::Mul => "mul",
            ArithOp::Add => "add",
            ArithOp::Sub => "sub",
            ArithOp::Div => "div",
        }
    }
}

#[inline(always)]
pub fn arith<T: Element>(op: ArithOp, v: T, c: T) -> T
where
    T::Lane: LaneArith,
{
    match op {
        ArithOp::Mul => T::from_lanes(|i| v.lane(i).mul(c.lane(i))),
        ArithOp::Add => T::from_lanes(|i| v.lane(i).add(c.lane(i))),
        ArithOp::Sub => T::from_lanes(|i| v.lane(i).sub(c.lane(i))),
        ArithOp::Div => T::from_lanes(|i| v.lane(i).div(c.lane(i))),
    }
}

/// Applies `op` with constant `c` to the first `n` elements, dispatching once.
#[inline]
pub fn arith_slice<T: Element>(op: ArithOp, data: &mut [T], c: T)
where
    T::Lane: LaneArith,
{
    match op {
        ArithOp::Mul => data.iter_mut().for_each(|v| *v = arith(ArithOp::Mul, *v, c)),
        ArithOp::Add => data.iter_mut().for_each(|v| *v = arith(ArithOp::Add, *v, c)),
        ArithOp::Sub => data.iter_mut().for_each(|v| *v = arith(ArithOp::Sub, *v, c)),
        ArithOp::Div => data.iter_mut().for_each(|v| *v = arith(ArithOp::Div, *v, c)),
    }
}

/// Lane conversion. Widening is exact; float to `u8` rounds half to even
/// and clamps to `[0, 255]` (NaN maps to 0).
pub trait CastLane<To> {
    fn cast(self) -> To;
}

impl CastLane<u8> for u8 {
    #[inline(always)]
    fn cast(self) -> u8 {
        self
    }
}
impl CastLane<f32> for u8 {
    #[inline(always)]
    fn cast(self) -> f32 {
        self as f32
    }
}
impl CastLane<f64> for u8 {
    #[inline(always)]
    fn cast(self) -> f64 {
        self as f64
    }
}
impl CastLane<u8> for f32 {
    #[inline(always)]
    fn cast(self) -> u8 {
        // `as` saturates and maps NaN to 0
        self.round_ties_even() as u8
    }
}
impl CastLane<f32> for f32 {
    #[inline(always)]
    fn cast(self) -> f32 {
        self
    }
}
impl CastLane<f64> for f32 {
    #[inline(always)]
    fn cast(self) -> f64 {
        self as f64
    }
}
impl CastLane<u8> for f64 {
    #[inline(always)]
    fn cast(self) -> u8 {
        self.round_ties_even() as u8
    }
}
impl CastLane<f32> for f64 {
    #[inline(always)]
    fn cast(self) -> f32 {
        self as f32
    }
}
impl CastLane<f64> for f64 {
    #[inline(always)]
    fn cast(self) -> f64 {
        self
    }
}

/// Lane-preserving element conversion.
#[inline(always)]
pub fn cast_element<A: Element, B: Element>(a: A) -> B
where
    A::Lane: CastLane<B::Lane>,
{
    debug_assert_eq!(A::LANES, B::LANES);
    B::from_lanes(|i| a.lane(i).cast())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorConversion {
    /// Reverses lane order (RGB <-> BGR).
    SwapRb,
    /// Luma with weights 0.299, 0.587, 0.114, produced as `f32`.
    ToGrayF32,
}

pub const GRAY_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

#[inline(always)]
pub fn swap_rb<T: Element>(v: T) -> T {
    debug_assert_eq!(T::LANES, 3);
    T::from_lanes(|i| v.lane(2 - i))
}

#[inline(always)]
pub fn to_gray<T: Element>(v: T) -> f32 {
    let l = |i: usize| v.lane(i).to_f64();
    (GRAY_WEIGHTS[0] * l(0) + GRAY_WEIGHTS[1] * l(1) + GRAY_WEIGHTS[2] * l(2)) as f32
}

/// Conversion of an interpolated `f64` sample to a lane type; identical to
/// casting from `f64`.
pub trait FromSample: Lane {
    fn from_sample(v: f64) -> Self;
}

impl<L: Lane> FromSample for L
where
    f64: CastLane<L>,
{
    #[inline(always)]
    fn from_sample(v: f64) -> L {
        v.cast()
    }
}
