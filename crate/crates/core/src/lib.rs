//! Vertical and horizontal kernel fusion for data-parallel pipelines on
//! multicore CPUs.
//!
//! A pipeline is a chain `Read -> Compute* -> Write` of instantiable
//! operations ([`IOp`]). The fused executor walks the iteration space once and
//! threads every element through the whole chain in locals; the unfused
//! executor materializes one intermediate per compute op, which is the
//! baseline the fused path is measured against. Batches of independent planes
//! are fused horizontally by indexing per-plane parameters with the `z`
//! coordinate.
//!
//! ```
//! use fusekit::api::{multiply, read, write, execute_operations};
//! use fusekit::{ExecConfig, Plane};
//!
//! let src = Plane::from_vec(2, 2, &[4.0f32; 4]).unwrap();
//! let dst = Plane::alloc(2, 2, fusekit::ScalarKind::F32).unwrap();
//! let chain = [read(&src), multiply(0.5f32), write(&dst)];
//! execute_operations(&chain, &ExecConfig::default()).unwrap();
//! assert_eq!(dst.to_vec::<f32>().unwrap(), vec![2.0; 4]);
//! ```

/// Expands `$body` once per element kind with `$T` bound to the element type.
macro_rules! dispatch_kind {
    ($kind:expr, $T:ident => $body:expr) => {
        match $kind {
            $crate::tensor::ScalarKind::U8 => {
                type $T = u8;
                $body
            }
            $crate::tensor::ScalarKind::F32 => {
                type $T = f32;
                $body
            }
            $crate::tensor::ScalarKind::F64 => {
                type $T = f64;
                $body
            }
            $crate::tensor::ScalarKind::U8x3 => {
                type $T = [u8; 3];
                $body
            }
            $crate::tensor::ScalarKind::F32x3 => {
                type $T = [f32; 3];
                $body
            }
            $crate::tensor::ScalarKind::F64x3 => {
                type $T = [f64; 3];
                $body
            }
        }
    };
}

pub mod api;
pub mod dpp;
pub mod error;
pub mod executor;
pub mod ops;
pub mod static_path;
pub mod tensor;

pub use dpp::{CoarseningPlan, Combine, ReduceOutcome, ReduceSpec, Reduced};
pub use error::{FusionError, Result};
pub use executor::{
    execute_fused, execute_unfused, plan_memory_savings, schedule, ExecConfig, ExecReport, Task,
};
pub use ops::{validate_chain, IOp, IterSpace, OpKind, OpSignature, Pipeline};
pub use tensor::{Block, Element, Plane, PlaneBatch, ScalarKind, ThreadPoint, Value};
