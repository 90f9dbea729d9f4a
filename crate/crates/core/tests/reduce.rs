mod common;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use common::{random_plane, rng};
use fusekit::dpp::{multi_reduce_plane, multi_reduce_plane_with, reduce_plane, reduce_plane_with};
use fusekit::ops::{op_batch_read, op_mul, op_read_per_thread};
use fusekit::{Combine, ExecConfig, Plane, ReduceSpec, ScalarKind, Value};
use proptest::prelude::*;

proptest! {
    #[test]
    fn u8_reductions_match_sequential_fold(
        w in 1usize..40,
        h in 1usize..40,
        seed in any::<u64>(),
        workers in 1usize..6,
    ) {
        let p = random_plane(&mut rng(seed), w, h, ScalarKind::U8);
        let data = p.to_vec::<u8>().unwrap();
        let read = op_read_per_thread(&p);
        let cfg = ExecConfig::default().with_workers(workers);
        let out = multi_reduce_plane_with(&read, &[ReduceSpec::sum(), ReduceSpec::max(), ReduceSpec::min()], &cfg).unwrap();
        prop_assert_eq!(out.values[0].as_u64(0), Some(data.iter().map(|v| *v as u64).sum()));
        prop_assert_eq!(out.values[1].as_u64(0), Some(*data.iter().max().unwrap() as u64));
        prop_assert_eq!(out.values[2].as_u64(0), Some(*data.iter().min().unwrap() as u64));
    }

    #[test]
    fn float_sums_are_bit_stable_per_worker_count(seed in any::<u64>(), workers in 1usize..5) {
        let p = random_plane(&mut rng(seed), 33, 21, ScalarKind::F32x3);
        let read = op_read_per_thread(&p);
        let cfg = ExecConfig::default().with_workers(workers);
        let a = reduce_plane_with(&read, &ReduceSpec::sum(), &cfg).unwrap();
        let b = reduce_plane_with(&read, &ReduceSpec::sum(), &cfg).unwrap();
        prop_assert!(a.bits_eq(&b));
    }
}

#[test]
fn reference_examples() {
    let p = Plane::from_vec(3, 1, &[3u8, 1, 2]).unwrap();
    let out = multi_reduce_plane(
        &op_read_per_thread(&p),
        &[ReduceSpec::sum(), ReduceSpec::max(), ReduceSpec::min()],
    )
    .unwrap();
    let got: Vec<u64> = out.values.iter().map(|v| v.as_u64(0).unwrap()).collect();
    assert_eq!(got, vec![6, 3, 1]);
    assert_eq!(out.elements_read, 3);
}

#[test]
fn single_traversal_for_many_specs() {
    let counter = Arc::new(AtomicU64::new(0));
    let p = random_plane(&mut rng(21), 8, 8, ScalarKind::F64).with_probe(counter.clone());
    let specs = [ReduceSpec::sum(), ReduceSpec::max(), ReduceSpec::min()];
    let out = multi_reduce_plane(&op_read_per_thread(&p), &specs).unwrap();
    assert_eq!(counter.load(Ordering::Relaxed), 64);
    assert_eq!(out.elements_read, 64);
    for (spec, v) in specs.iter().zip(&out.values) {
        let alone = reduce_plane(&op_read_per_thread(&p), spec).unwrap();
        assert!(alone.bits_eq(v));
    }
}

#[test]
fn transform_applies_before_combining() {
    let data: Vec<f64> = (0..30).map(|i| i as f64 * 0.5 - 4.0).collect();
    let p = Plane::from_vec(6, 5, &data).unwrap();
    let double = op_mul(2.0f64);
    let spec = ReduceSpec::new(Some(&double), Combine::Max).unwrap();
    let r = reduce_plane(&op_read_per_thread(&p), &spec).unwrap();
    assert_eq!(r.as_f64(0), 2.0 * data.iter().cloned().fold(f64::MIN, f64::max));

    let wrong = op_mul(2.0f32);
    let spec = ReduceSpec::new(Some(&wrong), Combine::Sum).unwrap();
    assert!(reduce_plane(&op_read_per_thread(&p), &spec).is_err());
}

#[test]
fn batch_reduce_covers_inactive_defaults() {
    let planes: Vec<Plane> = (0..3).map(|i| Plane::from_vec(2, 2, &[i as u8 + 1; 4]).unwrap()).collect();
    let reads: Vec<_> = planes.iter().map(op_read_per_thread).collect();
    let batch = op_batch_read(&reads, 2, Value::U8(100)).unwrap();
    let r = reduce_plane(&batch, &ReduceSpec::sum()).unwrap();
    assert_eq!(r.as_u64(0), Some(4 + 4 * 2 + 4 * 100));
}

#[test]
fn rgb_sums_are_per_lane() {
    let p = Plane::from_fn(4, 4, |x, y| [x as u8, y as u8, 255u8]).unwrap();
    let r = reduce_plane(&op_read_per_thread(&p), &ReduceSpec::sum()).unwrap();
    assert_eq!(r.lanes(), 3);
    assert_eq!((r.as_u64(0), r.as_u64(1), r.as_u64(2)), (Some(24), Some(24), Some(16 * 255)));
}
