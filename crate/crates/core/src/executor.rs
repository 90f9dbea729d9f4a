//! Parallel runtime with two strategies.
//!
//! [`execute_fused`] visits every point of the iteration space once and runs
//! the whole chain per point. [`execute_unfused`] runs one full pass per
//! compute op, materializing each op's output into freshly allocated planes
//! that the next pass reads back, then a final pass that feeds the write.
//! Both report logical element traffic so the pass-count argument can be
//! checked exactly.

use std::collections::HashMap;
use std::ops::Add;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::dpp::{transform_range, CoarseningPlan};
use crate::error::Result;
use crate::ops::{
    op_batch_read_all, op_batch_write_all, op_read_per_thread, op_write_per_thread,
    validate_chain, IOp, IterSpace, Pipeline,
};
use crate::tensor::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecConfig {
    /// Worker threads; 0 selects the hardware parallelism.
    pub workers: usize,
    pub coarsening: CoarseningPlan,
    /// Rows per scheduled task, at least 1.
    pub chunk_rows: usize,
}

impl Default for ExecConfig {
    fn default() -> ExecConfig {
        ExecConfig {
            workers: 0,
            coarsening: CoarseningPlan::default(),
            chunk_rows: 8,
        }
    }
}

impl ExecConfig {
    pub fn with_workers(mut self, workers: usize) -> ExecConfig {
        self.workers = workers;
        self
    }

    pub fn with_coarsening(mut self, plan: CoarseningPlan) -> ExecConfig {
        self.coarsening = plan;
        self
    }

    pub fn with_chunk_rows(mut self, rows: usize) -> ExecConfig {
        self.chunk_rows = rows.max(1);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ExecReport {
    pub wall_time_ns: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub intermediate_bytes_allocated: u64,
    /// Sweeps over the iteration space.
    pub passes: usize,
    /// Points visited across all passes.
    pub points_visited: u64,
}

impl Add for ExecReport {
    type Output = ExecReport;

    fn add(self, o: ExecReport) -> ExecReport {
        ExecReport {
            wall_time_ns: self.wall_time_ns + o.wall_time_ns,
            bytes_read: self.bytes_read + o.bytes_read,
            bytes_written: self.bytes_written + o.bytes_written,
            intermediate_bytes_allocated: self.intermediate_bytes_allocated
                + o.intermediate_bytes_allocated,
            passes: self.passes + o.passes,
            points_visited: self.points_visited + o.points_visited,
        }
    }
}

impl ExecReport {
    pub fn traffic(&self) -> u64 {
        self.bytes_read + self.bytes_written
    }
}

/// Rows `y_begin..y_end` of batch plane `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Task {
    pub z: usize,
    pub y_begin: usize,
    pub y_end: usize,
}

/// Disjoint z-major row-chunk tasks covering `space` exactly.
pub fn schedule(space: IterSpace, config: &ExecConfig) -> Vec<Task> {
    let chunk = config.chunk_rows.max(1);
    (0..space.batch)
        .flat_map(|z| {
            (0..space.height).step_by(chunk).map(move |y| Task {
                z,
                y_begin: y,
                y_end: (y + chunk).min(space.height),
            })
        })
        .collect()
}

pub(crate) fn resolve_workers(workers: usize) -> usize {
    if workers == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        workers
    }
}

fn pool(workers: usize) -> Arc<ThreadPool> {
    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<ThreadPool>>>> = OnceLock::new();
    let mut pools = POOLS
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    pools
        .entry(workers)
        .or_insert_with(|| {
            Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .thread_name(|i| format!("fusekit-{i}"))
                    .build()
                    .expect("worker pool"),
            )
        })
        .clone()
}

/// Runs `f` inside a pool of `workers` threads (pools are cached per size).
pub(crate) fn with_pool<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    pool(workers).install(f)
}

/// Runs `body` over every task and sums the per-task reports. With one
/// worker the tasks run in enumeration order on the calling thread.
pub(crate) fn run_tasks<F>(space: IterSpace, config: &ExecConfig, body: F) -> ExecReport
where
    F: Fn(&Task) -> ExecReport + Sync,
{
    let tasks = schedule(space, config);
    let workers = resolve_workers(config.workers);
    if workers == 1 {
        tasks.iter().map(&body).fold(ExecReport::default(), Add::add)
    } else {
        with_pool(workers, || {
            tasks
                .par_iter()
                .map(&body)
                .reduce(ExecReport::default, Add::add)
        })
    }
}

fn fused_pass(pipeline: &Pipeline, config: &ExecConfig) -> ExecReport {
    let space = pipeline.iter_space();
    let plan = config.coarsening;
    let (read, write) = (pipeline.read(), pipeline.write());
    let mut report = run_tasks(space, config, |t| {
        for y in t.y_begin..t.y_end {
            transform_range(pipeline, y, t.z, 0..space.width, plan);
        }
        let points = ((t.y_end - t.y_begin) * space.width) as u64;
        ExecReport {
            bytes_read: points * read.bytes_per_point(t.z) as u64,
            bytes_written: points * write.bytes_per_point(t.z) as u64,
            points_visited: points,
            ..ExecReport::default()
        }
    });
    report.passes = 1;
    report
}

/// One sweep over the iteration space running the whole chain per point.
pub fn execute_fused(pipeline: &Pipeline, config: &ExecConfig) -> ExecReport {
    let start = Instant::now();
    let mut report = fused_pass(pipeline, config);
    report.wall_time_ns = start.elapsed().as_nanos() as u64;
    report
}

fn intermediate_ops(planes: &[Plane]) -> Result<(IOp, IOp)> {
    if let [single] = planes {
        return Ok((op_read_per_thread(single), op_write_per_thread(single)));
    }
    let reads: Vec<IOp> = planes.iter().map(op_read_per_thread).collect();
    let writes: Vec<IOp> = planes.iter().map(op_write_per_thread).collect();
    Ok((op_batch_read_all(&reads)?, op_batch_write_all(&writes)?))
}

/// One pass per compute op plus a final write pass; each compute op's
/// output is materialized into new planes freed after the next pass.
pub fn execute_unfused(iops: &[IOp], config: &ExecConfig) -> Result<ExecReport> {
    let start = Instant::now();
    let pipeline = validate_chain(iops)?;
    let space = pipeline.iter_space();
    let chain = pipeline.iops();
    let (compute, write) = (&chain[1..chain.len() - 1], &chain[chain.len() - 1]);

    let mut report = ExecReport::default();
    let mut source = chain[0].clone();
    for op in compute {
        let kind = op.signature().output_kind.expect("compute output");
        let planes = (0..space.batch)
            .map(|_| Plane::alloc(space.width, space.height, kind))
            .collect::<Result<Vec<_>>>()?;
        let (next_read, next_write) = intermediate_ops(&planes)?;
        let pass = validate_chain(&[source, op.clone(), next_write])?;
        report = report + fused_pass(&pass, config);
        report.intermediate_bytes_allocated += (space.points() * kind.bytes()) as u64;
        // the previous intermediate is dropped here, after its consuming pass
        source = next_read;
    }
    let last = validate_chain(&[source, write.clone()])?;
    report = report + fused_pass(&last, config);
    report.wall_time_ns = start.elapsed().as_nanos() as u64;
    Ok(report)
}

/// Intermediate bytes the unfused strategy would allocate for `pipeline`.
pub fn plan_memory_savings(pipeline: &Pipeline) -> u64 {
    let points = pipeline.iter_space().points();
    pipeline
        .compute()
        .map(|op| (points * op.output_kind().bytes()) as u64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{op_add, op_mul};
    use crate::tensor::ScalarKind;

    #[test]
    fn schedule_counts() {
        let cfg = ExecConfig::default().with_chunk_rows(16);
        let tasks = schedule(IterSpace::new(64, 128, 50), &cfg);
        assert_eq!(tasks.len(), 400);
        assert_eq!(tasks[0], Task { z: 0, y_begin: 0, y_end: 16 });
        assert_eq!(tasks[8].z, 1);
        let ragged = schedule(IterSpace::new(3, 10, 1), &cfg.with_chunk_rows(4));
        assert_eq!(
            ragged.iter().map(|t| (t.y_begin, t.y_end)).collect::<Vec<_>>(),
            vec![(0, 4), (4, 8), (8, 10)]
        );
    }

    #[test]
    fn fused_report_invariants() {
        let src = Plane::alloc(37, 11, ScalarKind::U8).unwrap();
        let dst = Plane::alloc(37, 11, ScalarKind::U8).unwrap();
        let chain = [op_read_per_thread(&src), op_mul(3u8), op_add(1u8), op_write_per_thread(&dst)];
        let p = validate_chain(&chain).unwrap();
        let r = execute_fused(&p, &ExecConfig::default().with_workers(2));
        assert_eq!(r.passes, 1);
        assert_eq!(r.intermediate_bytes_allocated, 0);
        assert_eq!(r.points_visited, 37 * 11);
        assert_eq!(dst.get(36, 10).unwrap(), crate::Value::U8(1));

        let u = execute_unfused(&chain, &ExecConfig::default().with_workers(1)).unwrap();
        assert_eq!(u.passes, 3);
        assert_eq!(u.intermediate_bytes_allocated, 2 * 37 * 11);
        assert_eq!(u.intermediate_bytes_allocated, plan_memory_savings(&p));
    }
}
