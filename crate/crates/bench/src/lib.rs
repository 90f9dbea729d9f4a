//! Benchmark workloads comparing fused execution against the unfused
//! baseline. Every comparison first runs both strategies once and checks
//! their outputs are bit-identical; only then is anything timed.

use std::io;
use std::time::Instant;

use fusekit::api::{crop, cvt_color, divide, multiply, resize_to, split, subtract};
use fusekit::ops::{
    op_add, op_batch_read_all, op_batch_write_all, op_cast, op_div, op_mul, op_read_per_thread,
    op_static_loop, op_static_loop_body, op_sub, op_write_per_thread, ColorConversion, ResizeMode,
};
use fusekit::{
    execute_fused, execute_unfused, plan_memory_savings, validate_chain, CoarseningPlan,
    ExecConfig, FusionError, IOp, Plane, ScalarKind, Value,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const CSV_HEADER: [&str; 6] = ["experiment", "param", "fused_ns", "unfused_ns", "speedup", "rsd_pct"];

/// Chains longer than this run their arithmetic through a static loop.
pub const STATIC_LOOP_THRESHOLD: usize = 64;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("fused and unfused outputs differ for {experiment} at {param}")]
    Gate { experiment: &'static str, param: String },
    #[error("invalid benchmark parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    pub repeats: usize,
    pub warmup: usize,
    pub exec: ExecConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> BenchConfig {
        BenchConfig {
            repeats: 30,
            warmup: 2,
            exec: ExecConfig::default(),
            seed: 0x5eed,
        }
    }
}

impl BenchConfig {
    pub fn new(repeats: usize, warmup: usize, threads: usize, coarsen: usize, seed: u64) -> Result<BenchConfig> {
        if repeats < 3 {
            return Err(BenchError::Param(format!("repeats must be >= 3, got {repeats}")));
        }
        let plan = CoarseningPlan::new(coarsen)?;
        Ok(BenchConfig {
            repeats,
            warmup,
            exec: ExecConfig::default().with_workers(threads).with_coarsening(plan),
            seed,
        })
    }

    fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub experiment: &'static str,
    pub param: String,
    pub fused_ns: f64,
    pub unfused_ns: f64,
    pub speedup: f64,
    /// Larger of the two strategies' relative standard deviations.
    pub rsd_pct: f64,
}

/// Mean and relative standard deviation (percent) of the samples.
pub fn mean_rsd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 || mean == 0.0 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt() / mean * 100.0)
}

pub fn write_csv<W: io::Write>(records: &[BenchRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.experiment.to_string(),
            r.param.clone(),
            format!("{:.0}", r.fused_ns),
            format!("{:.0}", r.unfused_ns),
            format!("{:.4}", r.speedup),
            format!("{:.2}", r.rsd_pct),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One strategy: a closure performing a full execution, and the planes it
/// writes.
struct Side<'a> {
    run: Box<dyn FnMut() -> fusekit::Result<()> + 'a>,
    outputs: Vec<Plane>,
}

fn outputs_equal(a: &[Plane], b: &[Plane]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p.bits_eq(q))
}

fn compare(
    cfg: &BenchConfig,
    experiment: &'static str,
    param: String,
    mut fused: Side,
    mut unfused: Side,
) -> Result<BenchRecord> {
    (fused.run)()?;
    (unfused.run)()?;
    if !outputs_equal(&fused.outputs, &unfused.outputs) {
        return Err(BenchError::Gate { experiment, param });
    }
    let mut times = (Vec::new(), Vec::new());
    for i in 0..cfg.warmup + cfg.repeats {
        let t = Instant::now();
        (fused.run)()?;
        let f = t.elapsed().as_nanos() as f64;
        let t = Instant::now();
        (unfused.run)()?;
        let u = t.elapsed().as_nanos() as f64;
        if i >= cfg.warmup {
            times.0.push(f);
            times.1.push(u);
        }
    }
    let (fused_ns, rsd_f) = mean_rsd(&times.0);
    let (unfused_ns, rsd_u) = mean_rsd(&times.1);
    Ok(BenchRecord {
        experiment,
        param,
        fused_ns,
        unfused_ns,
        speedup: unfused_ns / fused_ns,
        rsd_pct: rsd_f.max(rsd_u),
    })
}

pub fn random_plane(rng: &mut ChaCha8Rng, w: usize, h: usize, kind: ScalarKind) -> Result<Plane> {
    let p = Plane::alloc(w, h, kind)?;
    let mut row = Vec::with_capacity(w);
    for y in 0..h {
        row.clear();
        match kind.lane_kind() {
            ScalarKind::U8 => row.extend((0..w * kind.lanes()).map(|_| rng.gen::<u8>() as f64)),
            _ => row.extend((0..w * kind.lanes()).map(|_| rng.gen_range(0.0..1.0))),
        }
        for x in 0..w {
            let l = &row[x * kind.lanes()..];
            let v = match kind {
                ScalarKind::U8 => Value::U8(l[0] as u8),
                ScalarKind::F32 => Value::F32(l[0] as f32),
                ScalarKind::F64 => Value::F64(l[0]),
                ScalarKind::U8x3 => Value::U8x3([l[0] as u8, l[1] as u8, l[2] as u8]),
                ScalarKind::F32x3 => Value::F32x3([l[0] as f32, l[1] as f32, l[2] as f32]),
                ScalarKind::F64x3 => Value::F64x3([l[0], l[1], l[2]]),
            };
            p.set(x, y, v)?;
        }
    }
    Ok(p)
}

fn constant(kind: ScalarKind, u8_value: u8, float_value: f64) -> Value {
    match kind {
        ScalarKind::U8 => Value::U8(u8_value),
        ScalarKind::F32 => Value::F32(float_value as f32),
        ScalarKind::F64 => Value::F64(float_value),
        _ => unreachable!("benchmarks use scalar kinds"),
    }
}

/// `n` alternating Mul and Add ops. With `compact`, long chains become a
/// static loop over the pair, which applies the same ops in the same order.
pub fn mul_add_ops(n: usize, kind: ScalarKind, compact: bool) -> Result<Vec<IOp>> {
    let mul = op_mul(constant(kind, 3, 0.999));
    let add = op_add(constant(kind, 1, 0.001));
    if compact && n > STATIC_LOOP_THRESHOLD {
        let mut ops = vec![op_static_loop_body(&[mul.clone(), add], n / 2)?];
        if n % 2 == 1 {
            ops.push(mul);
        }
        return Ok(ops);
    }
    Ok((0..n).map(|i| if i % 2 == 0 { mul.clone() } else { add.clone() }).collect())
}

fn chain(read: IOp, compute: &[IOp], write: IOp) -> Vec<IOp> {
    let mut c = Vec::with_capacity(compute.len() + 2);
    c.push(read);
    c.extend_from_slice(compute);
    c.push(write);
    c
}

fn fused_side<'a>(iops: Vec<IOp>, outputs: Vec<Plane>, exec: ExecConfig) -> Result<Side<'a>> {
    let pipeline = validate_chain(&iops)?;
    Ok(Side {
        run: Box::new(move || {
            execute_fused(&pipeline, &exec);
            Ok(())
        }),
        outputs,
    })
}

fn unfused_side<'a>(iops: Vec<IOp>, outputs: Vec<Plane>, exec: ExecConfig) -> Side<'a> {
    Side {
        run: Box::new(move || execute_unfused(&iops, &exec).map(|_| ())),
        outputs,
    }
}

/// Batch read and write ops over `planes`; a single plane stays per-thread.
fn batch_ends(sources: &[Plane], dests: &[Plane]) -> Result<(IOp, IOp)> {
    if let ([s], [d]) = (sources, dests) {
        return Ok((op_read_per_thread(s), op_write_per_thread(d)));
    }
    let reads: Vec<IOp> = sources.iter().map(op_read_per_thread).collect();
    let writes: Vec<IOp> = dests.iter().map(op_write_per_thread).collect();
    Ok((op_batch_read_all(&reads)?, op_batch_write_all(&writes)?))
}

fn alloc_like(n: usize, w: usize, h: usize, kind: ScalarKind) -> Result<Vec<Plane>> {
    Ok((0..n).map(|_| Plane::alloc(w, h, kind)).collect::<fusekit::Result<_>>()?)
}

/// Vertical fusion: `n` arithmetic ops on one plane.
pub fn bench_vf(cfg: &BenchConfig, n_ops: &[usize], dims: (usize, usize)) -> Result<Vec<BenchRecord>> {
    let (w, h) = dims;
    let src = random_plane(&mut cfg.rng(), w, h, ScalarKind::U8)?;
    n_ops
        .iter()
        .map(|&n| {
            if n < 2 {
                return Err(BenchError::Param(format!("vf needs at least 2 ops, got {n}")));
            }
            let (fd, ud) = (alloc_like(1, w, h, ScalarKind::U8)?, alloc_like(1, w, h, ScalarKind::U8)?);
            let fused = chain(op_read_per_thread(&src), &mul_add_ops(n, ScalarKind::U8, true)?, op_write_per_thread(&fd[0]));
            let unfused = chain(op_read_per_thread(&src), &mul_add_ops(n, ScalarKind::U8, false)?, op_write_per_thread(&ud[0]));
            compare(
                cfg,
                "vf",
                n.to_string(),
                fused_side(fused, fd, cfg.exec)?,
                unfused_side(unfused, ud, cfg.exec),
            )
        })
        .collect()
}

/// Read -> Cast -> Mul -> Sub -> Div -> Write, the normalization chain used
/// by the batch experiments.
fn normalize_ops(from: ScalarKind, to: ScalarKind) -> Result<Vec<IOp>> {
    Ok(vec![
        op_cast(from, to)?,
        op_mul(constant(to, 2, 1.0 / 255.0)),
        op_sub(constant(to, 1, 0.5)),
        op_div(constant(to, 3, 0.25))?,
    ])
}

/// Horizontal fusion: one batched execution against a loop of per-plane
/// fused executions.
pub fn bench_hf(cfg: &BenchConfig, batches: &[usize], dims: (usize, usize)) -> Result<Vec<BenchRecord>> {
    let (w, h) = dims;
    let mut rng = cfg.rng();
    let compute = normalize_ops(ScalarKind::U8, ScalarKind::F32)?;
    batches
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(BenchError::Param("batch must be >= 1".into()));
            }
            let sources = (0..n)
                .map(|_| random_plane(&mut rng, w, h, ScalarKind::U8))
                .collect::<Result<Vec<_>>>()?;
            let fd = alloc_like(n, w, h, ScalarKind::F32)?;
            let ld = alloc_like(n, w, h, ScalarKind::F32)?;
            let (r, wr) = batch_ends(&sources, &fd)?;
            let fused = fused_side(chain(r, &compute, wr), fd, cfg.exec)?;
            let per_plane = sources
                .iter()
                .zip(&ld)
                .map(|(s, d)| validate_chain(&chain(op_read_per_thread(s), &compute, op_write_per_thread(d))))
                .collect::<fusekit::Result<Vec<_>>>()?;
            let exec = cfg.exec;
            let looped = Side {
                run: Box::new(move || {
                    for p in &per_plane {
                        execute_fused(p, &exec);
                    }
                    Ok(())
                }),
                outputs: ld,
            };
            compare(cfg, "hf", n.to_string(), fused, looped)
        })
        .collect()
}

/// Both axes: `pairs` Mul+Add pairs over a batch, fused once against
/// unfused chains run plane by plane.
pub fn bench_vf_hf(
    cfg: &BenchConfig,
    pairs: &[usize],
    batch: usize,
    dims: (usize, usize),
) -> Result<Vec<BenchRecord>> {
    let (w, h) = dims;
    let mut rng = cfg.rng();
    let sources = (0..batch)
        .map(|_| random_plane(&mut rng, w, h, ScalarKind::U8))
        .collect::<Result<Vec<_>>>()?;
    pairs
        .iter()
        .map(|&p| {
            let fd = alloc_like(batch, w, h, ScalarKind::U8)?;
            let ud = alloc_like(batch, w, h, ScalarKind::U8)?;
            let (r, wr) = batch_ends(&sources, &fd)?;
            let fused = fused_side(chain(r, &mul_add_ops(2 * p, ScalarKind::U8, true)?, wr), fd, cfg.exec)?;
            let ops = mul_add_ops(2 * p, ScalarKind::U8, false)?;
            let chains: Vec<Vec<IOp>> = sources
                .iter()
                .zip(&ud)
                .map(|(s, d)| chain(op_read_per_thread(s), &ops, op_write_per_thread(d)))
                .collect();
            let exec = cfg.exec;
            let unfused = Side {
                run: Box::new(move || {
                    for c in &chains {
                        execute_unfused(c, &exec)?;
                    }
                    Ok(())
                }),
                outputs: ud,
            };
            compare(cfg, "vf-hf", p.to_string(), fused, unfused)
        })
        .collect()
}

/// Splits `total` Mul applications into ops of `per_op` each, the last op
/// taking the remainder.
pub fn split_instructions(total: usize, per_op: usize) -> Result<Vec<IOp>> {
    if per_op == 0 || per_op > total {
        return Err(BenchError::Param(format!("per_op must be in 1..={total}, got {per_op}")));
    }
    let mul = op_mul(1.0001f32);
    let mut left = total;
    let mut ops = Vec::with_capacity(total.div_ceil(per_op));
    while left > 0 {
        let n = per_op.min(left);
        ops.push(if n == 1 { mul.clone() } else { op_static_loop(&mul, n)? });
        left -= n;
    }
    Ok(ops)
}

/// Instructions per op: the same `total` multiplications, fused into one
/// pass against one pass per op.
pub fn bench_ipo(
    cfg: &BenchConfig,
    total: usize,
    per_op: &[usize],
    dims: (usize, usize),
) -> Result<Vec<BenchRecord>> {
    let (w, h) = dims;
    let src = random_plane(&mut cfg.rng(), w, h, ScalarKind::F32)?;
    per_op
        .iter()
        .map(|&k| {
            let ops = split_instructions(total, k)?;
            let fd = alloc_like(1, w, h, ScalarKind::F32)?;
            let ud = alloc_like(1, w, h, ScalarKind::F32)?;
            let fused = chain(op_read_per_thread(&src), &ops, op_write_per_thread(&fd[0]));
            let unfused = chain(op_read_per_thread(&src), &ops, op_write_per_thread(&ud[0]));
            compare(
                cfg,
                "ipo",
                k.to_string(),
                fused_side(fused, fd, cfg.exec)?,
                unfused_side(unfused, ud, cfg.exec),
            )
        })
        .collect()
}

/// Plane extents holding exactly `n` elements, as square as divisors allow.
pub fn plane_dims(n: usize) -> (usize, usize) {
    let mut h = (n as f64).sqrt() as usize;
    while h > 1 && !n.is_multiple_of(h) {
        h -= 1;
    }
    (n / h.max(1), h.max(1))
}

/// Data size: 100 Mul+Add pairs on f32 planes of growing element count.
pub fn bench_datasize(cfg: &BenchConfig, sizes: &[usize]) -> Result<Vec<BenchRecord>> {
    let mut rng = cfg.rng();
    sizes
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(BenchError::Param("element count must be >= 1".into()));
            }
            let (w, h) = plane_dims(n);
            let src = random_plane(&mut rng, w, h, ScalarKind::F32)?;
            let fd = alloc_like(1, w, h, ScalarKind::F32)?;
            let ud = alloc_like(1, w, h, ScalarKind::F32)?;
            let fused = chain(op_read_per_thread(&src), &mul_add_ops(200, ScalarKind::F32, true)?, op_write_per_thread(&fd[0]));
            let unfused = chain(op_read_per_thread(&src), &mul_add_ops(200, ScalarKind::F32, false)?, op_write_per_thread(&ud[0]));
            compare(
                cfg,
                "datasize",
                n.to_string(),
                fused_side(fused, fd, cfg.exec)?,
                unfused_side(unfused, ud, cfg.exec),
            )
        })
        .collect()
}

pub const DATATYPE_PAIRS: [(ScalarKind, ScalarKind); 8] = [
    (ScalarKind::U8, ScalarKind::U8),
    (ScalarKind::U8, ScalarKind::F32),
    (ScalarKind::U8, ScalarKind::F64),
    (ScalarKind::F32, ScalarKind::U8),
    (ScalarKind::F32, ScalarKind::F32),
    (ScalarKind::F32, ScalarKind::F64),
    (ScalarKind::F64, ScalarKind::F32),
    (ScalarKind::F64, ScalarKind::F64),
];

fn kind_name(k: ScalarKind) -> &'static str {
    match k {
        ScalarKind::U8 => "u8",
        ScalarKind::F32 => "f32",
        ScalarKind::F64 => "f64",
        ScalarKind::U8x3 => "u8x3",
        ScalarKind::F32x3 => "f32x3",
        ScalarKind::F64x3 => "f64x3",
    }
}

/// Data types: the normalization chain over a batch for each input and
/// output kind pair.
pub fn bench_datatype(
    cfg: &BenchConfig,
    pairs: &[(ScalarKind, ScalarKind)],
    batch: usize,
    dims: (usize, usize),
) -> Result<Vec<BenchRecord>> {
    let (w, h) = dims;
    let mut rng = cfg.rng();
    pairs
        .iter()
        .map(|&(from, to)| {
            let sources = (0..batch)
                .map(|_| random_plane(&mut rng, w, h, from))
                .collect::<Result<Vec<_>>>()?;
            let compute = normalize_ops(from, to)?;
            let fd = alloc_like(batch, w, h, to)?;
            let ud = alloc_like(batch, w, h, to)?;
            let (fr, fw) = batch_ends(&sources, &fd)?;
            let (ur, uw) = batch_ends(&sources, &ud)?;
            compare(
                cfg,
                "datatype",
                format!("{}->{}", kind_name(from), kind_name(to)),
                fused_side(chain(fr, &compute, fw), fd, cfg.exec)?,
                unfused_side(chain(ur, &compute, uw), ud, cfg.exec),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryRecord {
    pub pipeline: &'static str,
    pub bytes_saved: u64,
}

/// The crop, resize, color swap, normalize and split pipeline for one
/// `width` x `height` image, built through the facade.
pub fn preprocess_pipeline(
    source: &Plane,
    dests: [&Plane; 3],
    rect: (usize, usize, usize, usize),
) -> fusekit::Result<Vec<fusekit::api::LazyHandle>> {
    let (w, h) = dests[0].dims();
    let c = crop(source, rect.0, rect.1, rect.2, rect.3)?;
    let r = resize_to(&c, (w, h), ResizeMode::Bilinear, ScalarKind::F32x3)?;
    Ok(vec![
        c,
        r,
        cvt_color(ColorConversion::SwapRb, ScalarKind::F32x3)?,
        multiply([1.0f32 / 255.0; 3]),
        subtract([0.485f32, 0.456, 0.406]),
        divide([0.229f32, 0.224, 0.225])?,
        split(dests)?,
    ])
}

/// Intermediate bytes fusion avoids for a few reference pipelines.
pub fn report_memory() -> Result<Vec<MemoryRecord>> {
    let source = Plane::alloc(320, 240, ScalarKind::U8x3)?;
    let dests = alloc_like(3, 60, 120, ScalarKind::F32)?;
    let handles = preprocess_pipeline(&source, [&dests[0], &dests[1], &dests[2]], (10, 10, 200, 200))?;
    let preprocess = plan_memory_savings(&fusekit::api::build_pipeline(&handles)?);

    let identity = validate_chain(&[op_read_per_thread(&source), op_write_per_thread(&source)])?;

    let uhd = |kind| -> Result<u64> {
        let p = Plane::alloc(3840, 2160, kind)?;
        let chain = [op_read_per_thread(&p), op_cast(kind, kind)?, op_write_per_thread(&p)];
        Ok(plan_memory_savings(&validate_chain(&chain)?))
    };
    Ok(vec![
        MemoryRecord {
            pipeline: "preprocess-60x120-f32x3",
            bytes_saved: preprocess,
        },
        MemoryRecord {
            pipeline: "identity",
            bytes_saved: plan_memory_savings(&identity),
        },
        MemoryRecord {
            pipeline: "4k-rgb-u8-per-op",
            bytes_saved: uhd(ScalarKind::U8x3)?,
        },
        MemoryRecord {
            pipeline: "4k-rgb-f32-per-op",
            bytes_saved: uhd(ScalarKind::F32x3)?,
        },
    ])
}

pub fn write_memory_csv<W: io::Write>(records: &[MemoryRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pipeline", "bytes_saved"])?;
    for r in records {
        w.write_record([r.pipeline.to_string(), r.bytes_saved.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
