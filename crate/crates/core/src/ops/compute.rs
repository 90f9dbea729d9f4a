//! Unary and binary compute operations.

use crate::error::{FusionError, Result};
use crate::ops::scalar::{
    arith, arith_slice, cast_element, swap_rb, to_gray, ArithOp, ColorConversion,
};
use crate::tensor::{Block, Element, ScalarKind, Value, MAX_BLOCK};

#[derive(Debug, Clone, PartialEq)]
pub enum ComputeOp {
    Arith { op: ArithOp, constant: Value },
    Cast { from: ScalarKind, to: ScalarKind },
    Color { conversion: ColorConversion, input: ScalarKind },
    /// `body` applied `repeat` times; the body maps a kind onto itself.
    StaticLoop { body: Vec<ComputeOp>, repeat: usize },
}

/// Whether `from -> to` is in the conversion table: any lane type to any
/// other, with the lane count preserved.
pub fn cast_supported(from: ScalarKind, to: ScalarKind) -> bool {
    from.lanes() == to.lanes()
}

impl ComputeOp {
    pub fn arith(op: ArithOp, constant: Value) -> Result<ComputeOp> {
        if op == ArithOp::Div {
            let zero = (0..constant.kind().lanes()).any(|i| constant.lane_f64(i) == 0.0);
            if zero {
                return Err(FusionError::DivByZeroParam);
            }
        }
        Ok(ComputeOp::Arith { op, constant })
    }

    pub fn cast(from: ScalarKind, to: ScalarKind) -> Result<ComputeOp> {
        if !cast_supported(from, to) {
            return Err(FusionError::UnsupportedCast { from, to });
        }
        Ok(ComputeOp::Cast { from, to })
    }

    pub fn color(conversion: ColorConversion, input: ScalarKind) -> Result<ComputeOp> {
        if input.lanes() != 3 {
            return Err(FusionError::UnsupportedKind(input));
        }
        Ok(ComputeOp::Color { conversion, input })
    }

    pub fn static_loop(body: Vec<ComputeOp>, repeat: usize) -> Result<ComputeOp> {
        if repeat == 0 {
            return Err(FusionError::InvalidParam("repeat must be >= 1".into()));
        }
        let first = body
            .first()
            .ok_or_else(|| FusionError::InvalidParam("static loop body is empty".into()))?;
        let kind = first.input_kind();
        let mut current = kind;
        for (i, op) in body.iter().enumerate() {
            if op.input_kind() != current {
                return Err(FusionError::KindMismatch {
                    position: i,
                    expected: Some(current),
                    found: Some(op.input_kind()),
                });
            }
            current = op.output_kind();
        }
        if current != kind {
            return Err(FusionError::KindMismatch {
                position: body.len(),
                expected: Some(kind),
                found: Some(current),
            });
        }
        Ok(ComputeOp::StaticLoop { body, repeat })
    }

    pub fn input_kind(&self) -> ScalarKind {
        match self {
            ComputeOp::Arith { constant, .. } => constant.kind(),
            ComputeOp::Cast { from, .. } => *from,
            ComputeOp::Color { input, .. } => *input,
            ComputeOp::StaticLoop { body, .. } => body[0].input_kind(),
        }
    }

    pub fn output_kind(&self) -> ScalarKind {
        match self {
            ComputeOp::Arith { constant, .. } => constant.kind(),
            ComputeOp::Cast { to, .. } => *to,
            ComputeOp::Color {
                conversion: ColorConversion::SwapRb,
                input,
            } => *input,
            ComputeOp::Color {
                conversion: ColorConversion::ToGrayF32,
                ..
            } => ScalarKind::F32,
            ComputeOp::StaticLoop { body, .. } => body[0].input_kind(),
        }
    }

    /// Binary ops carry parameters; unary ops are parameter-free.
    pub fn is_binary(&self) -> bool {
        match self {
            ComputeOp::Arith { .. } => true,
            ComputeOp::Cast { .. } | ComputeOp::Color { .. } => false,
            ComputeOp::StaticLoop { body, .. } => body.iter().any(ComputeOp::is_binary),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ComputeOp::Arith { op, .. } => op.name(),
            ComputeOp::Cast { .. } => "cast",
            ComputeOp::Color { .. } => "color_convert",
            ComputeOp::StaticLoop { .. } => "static_loop",
        }
    }

    /// Number of element-level op applications per point.
    pub fn applications(&self) -> usize {
        match self {
            ComputeOp::StaticLoop { body, repeat } => {
                repeat * body.iter().map(ComputeOp::applications).sum::<usize>()
            }
            _ => 1,
        }
    }

    /// Applies the op to one element. `v` must be of `input_kind()`.
    pub fn apply(&self, v: Value) -> Value {
        debug_assert_eq!(v.kind(), self.input_kind());
        match self {
            ComputeOp::Arith { op, constant } => dispatch_kind!(v.kind(), T => {
                let (x, c) = (T::from_value(v).unwrap(), T::from_value(*constant).unwrap());
                arith(*op, x, c).to_value()
            }),
            ComputeOp::Cast { from, to } => cast_value(*from, *to, v),
            ComputeOp::Color { conversion, input } => dispatch_kind!(*input, T => {
                let x = T::from_value(v).unwrap();
                match conversion {
                    ColorConversion::SwapRb => swap_rb(x).to_value(),
                    ColorConversion::ToGrayF32 => Value::F32(to_gray(x)),
                }
            }),
            ComputeOp::StaticLoop { body, repeat } => {
                let mut v = v;
                for _ in 0..*repeat {
                    for op in body {
                        v = op.apply(v);
                    }
                }
                v
            }
        }
    }

    /// Applies the op to the first `n` elements of `block` in place; the
    /// block changes kind when the op does.
    pub fn apply_block(&self, block: &mut Block, n: usize) {
        debug_assert_eq!(block.kind(), self.input_kind());
        match self {
            ComputeOp::Arith { op, constant } => dispatch_kind!(constant.kind(), T => {
                let c = T::from_value(*constant).unwrap();
                let data = T::block_mut(block).unwrap();
                arith_slice(*op, &mut data[..n], c);
            }),
            ComputeOp::Cast { from, to } => {
                if from != to {
                    *block = cast_block(*from, *to, block, n);
                }
            }
            ComputeOp::Color { conversion, input } => dispatch_kind!(*input, T => {
                match conversion {
                    ColorConversion::SwapRb => {
                        let data = T::block_mut(block).unwrap();
                        data[..n].iter_mut().for_each(|v| *v = swap_rb(*v));
                    }
                    ColorConversion::ToGrayF32 => {
                        let data = T::block(block).unwrap();
                        let mut out = [0f32; MAX_BLOCK];
                        for (o, v) in out.iter_mut().zip(&data[..n]) {
                            *o = to_gray(*v);
                        }
                        *block = Block::F32(out);
                    }
                }
            }),
            ComputeOp::StaticLoop { body, repeat } => {
                for _ in 0..*repeat {
                    for op in body {
                        op.apply_block(block, n);
                    }
                }
            }
        }
    }
}

fn cast_value(from: ScalarKind, to: ScalarKind, v: Value) -> Value {
    dispatch_kind!(from, A => {
        let a = A::from_value(v).unwrap();
        dispatch_kind!(to, B => cast_element::<A, B>(a).to_value())
    })
}

fn cast_block(from: ScalarKind, to: ScalarKind, block: &Block, n: usize) -> Block {
    fn run<A: Element, B: Element>(block: &Block, n: usize) -> Block
    where
        A::Lane: crate::ops::scalar::CastLane<B::Lane>,
    {
        let src = A::block(block).unwrap();
        let mut out = [B::zero(); MAX_BLOCK];
        for (o, v) in out.iter_mut().zip(&src[..n]) {
            *o = cast_element(*v);
        }
        B::into_block(out)
    }
    dispatch_kind!(from, A => dispatch_kind!(to, B => run::<A, B>(block, n)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_and_block_agree() {
        let op = ComputeOp::static_loop(
            vec![
                ComputeOp::arith(ArithOp::Mul, Value::F32(1.5)).unwrap(),
                ComputeOp::arith(ArithOp::Sub, Value::F32(0.25)).unwrap(),
            ],
            7,
        )
        .unwrap();
        let mut block = Block::zeroed(ScalarKind::F32);
        for i in 0..5 {
            block.set(i, Value::F32(i as f32 * 0.3));
        }
        let expected: Vec<Value> = (0..5).map(|i| op.apply(block.get(i))).collect();
        op.apply_block(&mut block, 5);
        for (i, e) in expected.iter().enumerate() {
            assert!(block.get(i).bits_eq(e));
        }
    }

    #[test]
    fn static_loop_checks_kinds() {
        let cast = ComputeOp::cast(ScalarKind::U8, ScalarKind::F32).unwrap();
        assert!(matches!(
            ComputeOp::static_loop(vec![cast], 2),
            Err(FusionError::KindMismatch { .. })
        ));
        let add = ComputeOp::arith(ArithOp::Add, Value::F32(1.0)).unwrap();
        assert!(ComputeOp::static_loop(vec![add], 0).is_err());
    }

    #[test]
    fn casts_between_lane_counts_rejected() {
        assert!(matches!(
            ComputeOp::cast(ScalarKind::U8, ScalarKind::F32x3),
            Err(FusionError::UnsupportedCast { .. })
        ));
    }

    #[test]
    fn cast_block_changes_kind() {
        let op = ComputeOp::cast(ScalarKind::U8x3, ScalarKind::F64x3).unwrap();
        let mut block = Block::zeroed(ScalarKind::U8x3);
        block.set(0, Value::U8x3([1, 2, 3]));
        op.apply_block(&mut block, 1);
        assert_eq!(block.get(0), Value::F64x3([1.0, 2.0, 3.0]));
    }

    #[test]
    fn gray_block() {
        let op = ComputeOp::color(ColorConversion::ToGrayF32, ScalarKind::U8x3).unwrap();
        let mut block = Block::zeroed(ScalarKind::U8x3);
        block.set(0, Value::U8x3([10, 10, 10]));
        op.apply_block(&mut block, 1);
        assert_eq!(block.get(0), Value::F32(10.0));
        assert!(ComputeOp::color(ColorConversion::SwapRb, ScalarKind::F32).is_err());
    }
}
