//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Tolerances are fixed here and not configurable.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{planes_bits_eq, random_chain, random_plane, rng};
use fusekit::api::{
    build_pipeline, convert_to, crop, divide, execute_batch, execute_operations,
    execute_operations_unfused, multiply, subtract, write, LazyHandle,
};
use fusekit::dpp::multi_reduce_plane_with;
use fusekit::ops::{
    op_add, op_batch_read, op_batch_write_all, op_mul, op_read_per_thread, op_sub,
    op_write_per_thread, read_exec,
};
use fusekit::{
    execute_fused, execute_unfused, plan_memory_savings, validate_chain, CoarseningPlan,
    ExecConfig, Plane, ReduceSpec, Reduced, ScalarKind, ThreadPoint, Value,
};
use fusekit_bench::{bench_ipo, bench_vf, preprocess_pipeline, BenchConfig};
use rand::Rng;

const EQUIVALENCE_CHAINS: usize = 1000;
const EQUIVALENCE_BUDGET: Duration = Duration::from_secs(60);
const PREPROCESS_BYTES: u64 = 259_200;
const UHD_RGB_U8_BYTES: u64 = 24_883_200;
const REDUCE_PLANES: usize = 200;
const FLOAT_SUM_REL_TOL: f64 = 1.0 / (1u64 << 20) as f64;
const DETERMINISM_PIPELINES: usize = 100;
const VF_MIN_SPEEDUP: f64 = 1.5;
const IPO_NOISE_BAND: f64 = 0.10;
const PERF_BUDGET: Duration = Duration::from_secs(300);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fusion_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut longest = 0;
    for i in 0..EQUIVALENCE_CHAINS {
        let spec = random_chain(&mut r, 8, 32, 8);
        longest = longest.max(spec.len());
        let (fused, fused_out) = spec.build();
        let (unfused, unfused_out) = spec.build();
        let pipeline = validate_chain(&fused).map_err(|e| format!("chain {i}: {e}"))?;
        execute_fused(&pipeline, &ExecConfig::default());
        execute_unfused(&unfused, &ExecConfig::default()).map_err(|e| format!("chain {i}: {e}"))?;
        check(planes_bits_eq(&fused_out, &unfused_out), format!("chain {i} differs"))?;
    }
    let elapsed = start.elapsed();
    check(longest <= 8, format!("generated a chain of {longest} ops"))?;
    check(elapsed < EQUIVALENCE_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!("{EQUIVALENCE_CHAINS} chains bit-identical in {elapsed:.2?}"))
}

fn memory_accounting() -> Outcome {
    let (w, h) = (60, 120);
    let source = Plane::alloc(320, 240, ScalarKind::U8x3).map_err(|e| e.to_string())?;
    let dests: Vec<Plane> = (0..3).map(|_| Plane::alloc(w, h, ScalarKind::F32).unwrap()).collect();
    let handles = preprocess_pipeline(&source, [&dests[0], &dests[1], &dests[2]], (5, 5, 300, 200))
        .map_err(|e| e.to_string())?;
    let pipeline = build_pipeline(&handles).map_err(|e| e.to_string())?;
    // three float RGB planes materialized: after mul, after sub, after div
    let oracle = 3 * (w * h) as u64 * (3 * 4);
    check(oracle == PREPROCESS_BYTES, "oracle disagrees with the reference figure")?;
    let planned = plan_memory_savings(&pipeline);
    check(planned == PREPROCESS_BYTES, format!("planned {planned}"))?;
    let measured = execute_operations_unfused(&handles, &ExecConfig::default())
        .map_err(|e| e.to_string())?
        .intermediate_bytes_allocated;
    check(measured == PREPROCESS_BYTES, format!("measured {measured}"))?;

    let uhd = Plane::alloc(3840, 2160, ScalarKind::U8x3).map_err(|e| e.to_string())?;
    let chain = [op_read_per_thread(&uhd), op_mul([2u8; 3]), op_write_per_thread(&uhd)];
    let per_op = plan_memory_savings(&validate_chain(&chain).map_err(|e| e.to_string())?);
    check(per_op == UHD_RGB_U8_BYTES, format!("4k intermediate {per_op}"))?;
    check(uhd.logical_bytes() as u64 == UHD_RGB_U8_BYTES, "4k plane size")?;
    let megabytes = (per_op as f64 / 1e6 * 100.0).round() / 100.0;
    check(megabytes == 24.88, format!("{megabytes} MB"))?;
    Ok(format!("{planned} bytes per image, 4k RGB u8 {per_op} bytes ({megabytes} MB)"))
}

fn pass_counts() -> Outcome {
    let (w, h) = (64usize, 48usize);
    let src = random_plane(&mut rng(3), w, h, ScalarKind::F32);
    let ops = [op_mul(1.5f32), op_add(2.0f32), op_sub(0.25f32)];
    let run = |fused: bool| {
        let dst = Plane::alloc(w, h, ScalarKind::F32).unwrap();
        let mut chain = vec![op_read_per_thread(&src)];
        chain.extend(ops.iter().cloned());
        chain.push(op_write_per_thread(&dst));
        let report = if fused {
            execute_fused(&validate_chain(&chain).unwrap(), &ExecConfig::default())
        } else {
            execute_unfused(&chain, &ExecConfig::default()).unwrap()
        };
        (report, dst)
    };
    let ((f, fd), (u, ud)) = (run(true), run(false));
    check(fd.bits_eq(&ud), "outputs differ")?;
    check(f.passes == 1 && u.passes == 4, format!("passes {} vs {}", f.passes, u.passes))?;
    let points = (w * h) as u64;
    let fused_traffic = points * 4 + points * 4;
    let intermediates = 3 * points * 4;
    check(f.traffic() == fused_traffic, format!("fused traffic {}", f.traffic()))?;
    check(f.intermediate_bytes_allocated == 0, "fused allocated intermediates")?;
    check(u.intermediate_bytes_allocated == intermediates, "unfused intermediates")?;
    // every intermediate is written once and read back once
    check(u.traffic() == fused_traffic + 2 * intermediates, format!("unfused traffic {}", u.traffic()))?;
    check(u.traffic() == 4 * f.traffic(), "traffic ratio")?;
    Ok(format!(
        "passes 1 vs 4, traffic {} vs {} bytes",
        f.traffic(),
        u.traffic()
    ))
}

fn horizontal_structure() -> Outcome {
    let (n, w, h) = (50usize, 60usize, 120usize);
    let mut r = rng(4);
    let sources: Vec<Plane> = (0..n).map(|_| random_plane(&mut r, 80, 140, ScalarKind::U8)).collect();
    let batch_out: Vec<Plane> = (0..n).map(|_| Plane::alloc(w, h, ScalarKind::F32).unwrap()).collect();
    let shared = || -> Vec<LazyHandle> {
        vec![
            convert_to(ScalarKind::U8, ScalarKind::F32).unwrap(),
            multiply(1.0f32 / 255.0),
            subtract(0.5f32),
            divide(0.25f32).unwrap(),
        ]
    };
    let offsets: Vec<(usize, usize)> = (0..n).map(|_| (r.gen_range(0..=20), r.gen_range(0..=20))).collect();
    let chains: Vec<Vec<LazyHandle>> = sources
        .iter()
        .zip(&batch_out)
        .zip(&offsets)
        .map(|((s, d), &(x, y))| vec![crop(s, x, y, w, h).unwrap(), write(d)])
        .collect();
    let report = execute_batch(&chains, &shared(), &ExecConfig::default()).map_err(|e| e.to_string())?;
    check(report.passes == 1, format!("{} passes", report.passes))?;
    let expected = (n * w * h) as u64;
    check(report.points_visited == expected, format!("visited {}", report.points_visited))?;
    for (z, (s, &(x, y))) in sources.iter().zip(&offsets).enumerate() {
        let single = Plane::alloc(w, h, ScalarKind::F32).unwrap();
        let mut chain = vec![crop(s, x, y, w, h).unwrap()];
        chain.extend(shared());
        chain.push(write(&single));
        execute_operations(&chain, &ExecConfig::default().with_workers(1)).map_err(|e| e.to_string())?;
        check(single.bits_eq(&batch_out[z]), format!("plane {z} differs from its own chain"))?;
    }

    // inactive planes yield the default, exhaustively over small cases
    let mut cases = 0;
    for kind in ScalarKind::ALL {
        let planes: Vec<Plane> = (0..4).map(|_| random_plane(&mut r, 3, 2, kind)).collect();
        let reads: Vec<_> = planes.iter().map(op_read_per_thread).collect();
        let default = common::random_value(&mut r, kind, false);
        for active in 1..=4 {
            let batch = op_batch_read(&reads, active, default).map_err(|e| e.to_string())?;
            let outs: Vec<Plane> = (0..4).map(|_| Plane::alloc(3, 2, kind).unwrap()).collect();
            let writes: Vec<_> = outs.iter().map(op_write_per_thread).collect();
            let chain = [batch.clone(), op_batch_write_all(&writes).unwrap()];
            execute_fused(&validate_chain(&chain).unwrap(), &ExecConfig::default());
            for z in 0..4 {
                for y in 0..2 {
                    for x in 0..3 {
                        let want = if z < active { planes[z].get(x, y).unwrap() } else { default };
                        let direct = read_exec(&batch, ThreadPoint::new(x, y, z)).unwrap();
                        let written = outs[z].get(x, y).unwrap();
                        check(direct.bits_eq(&want) && written.bits_eq(&want), format!("{kind:?} active {active} z {z}"))?;
                        cases += 1;
                    }
                }
            }
        }
    }
    Ok(format!("batch {n} visited {expected} points in one pass, {cases} default-value cases exact"))
}

fn lanes_of(p: &Plane) -> Vec<Vec<f64>> {
    p.values()
        .iter()
        .map(|v| (0..v.kind().lanes()).map(|l| v.lane_f64(l)).collect())
        .collect()
}

fn reduce_correctness() -> Outcome {
    let mut r = rng(5);
    let kinds = ScalarKind::ALL;
    let specs = [ReduceSpec::sum(), ReduceSpec::max(), ReduceSpec::min()];
    for i in 0..REDUCE_PLANES {
        let kind = kinds[i % kinds.len()];
        let (w, h) = (r.gen_range(1..=64), r.gen_range(1..=64));
        let plane = random_plane(&mut r, w, h, kind);
        let values = lanes_of(&plane);
        let lanes = kind.lanes();
        let mut results: Vec<Vec<Reduced>> = Vec::new();
        for workers in [1, 2, 4] {
            let probe = Arc::new(AtomicU64::new(0));
            let read = op_read_per_thread(&plane.clone().with_probe(probe.clone()));
            let cfg = ExecConfig::default().with_workers(workers);
            let out = multi_reduce_plane_with(&read, &specs, &cfg).map_err(|e| e.to_string())?;
            let points = (w * h) as u64;
            check(out.elements_read == points && probe.load(Ordering::Relaxed) == points, format!("plane {i}: read count"))?;
            results.push(out.values);
        }
        for l in 0..lanes {
            let column: Vec<f64> = values.iter().map(|v| v[l]).collect();
            let max = column.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = column.iter().cloned().fold(f64::INFINITY, f64::min);
            for (wi, res) in results.iter().enumerate() {
                let ctx = format!("plane {i} {kind:?} lane {l} worker set {wi}");
                check(res[1].as_f64(l) == max && res[2].as_f64(l) == min, format!("{ctx}: max/min"))?;
                if kind.is_float() {
                    let oracle: f64 = column.iter().sum();
                    let got = res[0].as_f64(l);
                    let first = results[0][0].as_f64(l);
                    let tol = oracle.abs() * FLOAT_SUM_REL_TOL;
                    check((got - oracle).abs() <= tol, format!("{ctx}: sum {got} vs {oracle}"))?;
                    check((got - first).abs() <= first.abs() * FLOAT_SUM_REL_TOL, format!("{ctx}: sum across workers"))?;
                } else {
                    let oracle: u64 = column.iter().map(|v| *v as u64).sum();
                    check(res[0].as_u64(l) == Some(oracle), format!("{ctx}: sum"))?;
                }
            }
        }
    }
    Ok(format!("{REDUCE_PLANES} planes, workers 1/2/4, integer exact, float sums within 2^-20"))
}

fn determinism() -> Outcome {
    let mut r = rng(6);
    for i in 0..DETERMINISM_PIPELINES {
        let spec = random_chain(&mut r, 8, 32, 8);
        let mut reference: Option<Vec<Plane>> = None;
        for workers in [1, 2, 4] {
            for block in [1, 4, 16] {
                let (chain, out) = spec.build();
                let cfg = ExecConfig::default()
                    .with_workers(workers)
                    .with_coarsening(CoarseningPlan::new(block).unwrap())
                    .with_chunk_rows(1 + i % 5);
                execute_fused(&validate_chain(&chain).unwrap(), &cfg);
                match &reference {
                    None => reference = Some(out),
                    Some(want) => check(
                        planes_bits_eq(want, &out),
                        format!("pipeline {i} differs at workers {workers} block {block}"),
                    )?,
                }
            }
        }
    }
    Ok(format!("{DETERMINISM_PIPELINES} pipelines bit-identical over 3 worker counts x 3 blocks"))
}

fn performance() -> Outcome {
    let start = Instant::now();
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cfg = BenchConfig::new(5, 1, 0, 16, 7).map_err(|e| e.to_string())?;
    let vf = bench_vf(&cfg, &[102], (4096, 2160)).map_err(|e| e.to_string())?;
    let per_op: Vec<usize> = (1..=96).step_by(5).chain([100]).collect();
    let ipo = bench_ipo(&cfg, 500, &per_op, (1024, 1024)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let speedups: Vec<f64> = ipo.iter().map(|r| r.speedup).collect();
    let summary = format!(
        "{cores} cores, vf n=102 speedup {:.2}, ipo speedups {:?}, {elapsed:.1?}",
        vf[0].speedup,
        speedups.iter().map(|s| (s * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
    check(vf[0].speedup > VF_MIN_SPEEDUP, format!("vf speedup too low; {summary}"))?;
    for (i, pair) in speedups.windows(2).enumerate() {
        check(
            pair[1] <= pair[0] * (1.0 + IPO_NOISE_BAND),
            format!("ipo rises between per_op {} and {}; {summary}", per_op[i], per_op[i + 1]),
        )?;
    }
    check(elapsed < PERF_BUDGET, format!("over time budget; {summary}"))?;
    Ok(summary)
}

fn facade_laziness() -> Outcome {
    let probe = Arc::new(AtomicU64::new(0));
    let mut r = rng(8);
    let source = random_plane(&mut r, 320, 240, ScalarKind::U8x3).with_probe(probe.clone());
    let dests: Vec<Plane> = (0..3).map(|_| Plane::alloc(60, 120, ScalarKind::F32).unwrap()).collect();
    let handles = preprocess_pipeline(&source, [&dests[0], &dests[1], &dests[2]], (20, 10, 240, 200))
        .map_err(|e| e.to_string())?;
    check(probe.load(Ordering::Relaxed) == 0, "constructing handles read elements")?;
    let cfg = ExecConfig::default();
    execute_operations(&handles, &cfg).map_err(|e| e.to_string())?;
    check(probe.load(Ordering::Relaxed) > 0, "execution did not read through the probe")?;
    let first: Vec<Plane> = dests.iter().map(|p| p.deep_copy().unwrap()).collect();
    for d in &dests {
        for y in 0..d.height() {
            for x in 0..d.width() {
                d.set(x, y, Value::F32(0.0)).unwrap();
            }
        }
    }
    execute_operations(&handles, &cfg).map_err(|e| e.to_string())?;
    check(planes_bits_eq(&first, &dests), "second execution differs")?;
    let validations = handles.last().unwrap().validations();
    check(validations == 1, format!("{validations} validations"))?;
    Ok("0 reads before execution, identical outputs over 2 executions, 1 validation".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("fusion equivalence", fusion_equivalence),
        ("memory accounting", memory_accounting),
        ("pass and traffic counts", pass_counts),
        ("horizontal fusion structure", horizontal_structure),
        ("reduce correctness", reduce_correctness),
        ("determinism", determinism),
        ("performance smoke", performance),
        ("facade laziness", facade_laziness),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
