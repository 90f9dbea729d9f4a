// Shared generators for the integration and acceptance suites.
#![allow(dead_code)]

use fusekit::ops::{
    op_add, op_batch_read, op_batch_write, op_cast, op_color_convert, op_crop, op_div, op_mul,
    op_read_per_thread, op_resize_to, op_split_write, op_static_loop_body, op_sub,
    op_swap_rb_read, op_write_per_thread, ColorConversion, ResizeMode,
};
use fusekit::{IOp, IterSpace, Plane, ScalarKind, Value};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;
pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn lane_u8(rng: &mut TestRng, nonzero: bool) -> u8 {
    if nonzero {
        rng.gen_range(1..=255)
    } else {
        rng.gen()
    }
}

fn lane_f64(rng: &mut TestRng, nonzero: bool) -> f64 {
    loop {
        let v = match rng.gen_range(0..4) {
            0 => rng.gen_range(-4i32..=4) as f64,
            1 => rng.gen_range(-1.0..1.0),
            _ => rng.gen_range(-300.0..300.0),
        };
        if !nonzero || v != 0.0 {
            return v;
        }
    }
}

pub fn random_value(rng: &mut TestRng, kind: ScalarKind, nonzero: bool) -> Value {
    let mut u = || lane_u8(rng, nonzero);
    match kind {
        ScalarKind::U8 => Value::U8(u()),
        ScalarKind::U8x3 => Value::U8x3([u(), u(), u()]),
        _ => {
            let l: [f64; 3] = std::array::from_fn(|_| lane_f64(rng, nonzero));
            match kind {
                ScalarKind::F32 => Value::F32(l[0] as f32),
                ScalarKind::F64 => Value::F64(l[0]),
                ScalarKind::F32x3 => Value::F32x3(l.map(|v| v as f32)),
                _ => Value::F64x3(l),
            }
        }
    }
}

pub fn random_plane(rng: &mut TestRng, w: usize, h: usize, kind: ScalarKind) -> Plane {
    let p = Plane::alloc(w, h, kind).unwrap();
    for y in 0..h {
        for x in 0..w {
            p.set(x, y, random_value(rng, kind, false)).unwrap();
        }
    }
    p
}

pub fn random_kind(rng: &mut TestRng) -> ScalarKind {
    ScalarKind::ALL[rng.gen_range(0..ScalarKind::ALL.len())]
}

/// A chain minus its write end, which is rebuilt with fresh destinations for
/// every execution under comparison.
#[derive(Clone)]
pub struct ChainSpec {
    pub read: IOp,
    pub compute: Vec<IOp>,
    pub out_kind: ScalarKind,
    pub space: IterSpace,
    pub split: bool,
    pub write_active: usize,
    pub pad: (usize, usize),
}

impl ChainSpec {
    /// Full chain plus the destination planes it writes.
    pub fn build(&self) -> (Vec<IOp>, Vec<Plane>) {
        let (w, h) = (self.space.width + self.pad.0, self.space.height + self.pad.1);
        let mut chain = vec![self.read.clone()];
        chain.extend(self.compute.iter().cloned());
        let planes: Vec<Plane>;
        if self.split {
            let lane = self.out_kind.lane_kind();
            planes = (0..3).map(|_| Plane::alloc(w, h, lane).unwrap()).collect();
            chain.push(op_split_write([&planes[0], &planes[1], &planes[2]]).unwrap());
        } else if self.space.batch == 1 {
            planes = vec![Plane::alloc(w, h, self.out_kind).unwrap()];
            chain.push(op_write_per_thread(&planes[0]));
        } else {
            planes = (0..self.space.batch)
                .map(|_| Plane::alloc(w, h, self.out_kind).unwrap())
                .collect();
            let writes: Vec<IOp> = planes.iter().map(op_write_per_thread).collect();
            chain.push(op_batch_write(&writes, self.write_active).unwrap());
        }
        (chain, planes)
    }

    pub fn len(&self) -> usize {
        self.compute.len() + 2
    }
}

pub fn planes_bits_eq(a: &[Plane], b: &[Plane]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(p, q)| p.bits_eq(q))
}

fn random_read(rng: &mut TestRng, max_dim: usize, max_batch: usize) -> IOp {
    let kind = random_kind(rng);
    let (w, h) = (rng.gen_range(1..=max_dim), rng.gen_range(1..=max_dim));
    let batch = rng.gen_range(1..=max_batch);
    let single = |rng: &mut TestRng| -> IOp {
        match rng.gen_range(0..3) {
            0 => op_read_per_thread(&random_plane(rng, w, h, kind)),
            _ => {
                let (px, py) = (rng.gen_range(0..3), rng.gen_range(0..3));
                let src = random_plane(rng, w + px, h + py, kind);
                op_crop(&src, rng.gen_range(0..=px), rng.gen_range(0..=py), w, h).unwrap()
            }
        }
    };
    let read = if batch == 1 {
        match rng.gen_range(0..4) {
            0 => {
                let (sw, sh) = (rng.gen_range(1..=max_dim), rng.gen_range(1..=max_dim));
                let src = random_plane(rng, sw, sh, kind);
                let mode = if rng.gen() { ResizeMode::Nearest } else { ResizeMode::Bilinear };
                let out = if kind.is_float() || rng.gen() {
                    kind
                } else if kind.lanes() == 3 {
                    ScalarKind::F32x3
                } else {
                    ScalarKind::F32
                };
                op_resize_to(&src, (w, h), mode, out).unwrap()
            }
            _ => single(rng),
        }
    } else {
        let inner: Vec<IOp> = (0..batch).map(|_| single(rng)).collect();
        let active = rng.gen_range(1..=batch);
        let default = random_value(rng, kind, false);
        op_batch_read(&inner, active, default).unwrap()
    };
    let out = read.signature().output_kind.unwrap();
    if out.lanes() == 3 && rng.gen_range(0..4) == 0 {
        op_swap_rb_read(&read).unwrap()
    } else {
        read
    }
}

fn random_arith(rng: &mut TestRng, kind: ScalarKind) -> IOp {
    match rng.gen_range(0..4) {
        0 => op_mul(random_value(rng, kind, false)),
        1 => op_add(random_value(rng, kind, false)),
        2 => op_sub(random_value(rng, kind, false)),
        _ => op_div(random_value(rng, kind, true)).unwrap(),
    }
}

pub fn random_compute(rng: &mut TestRng, kind: ScalarKind) -> IOp {
    match rng.gen_range(0..10) {
        0..=4 => random_arith(rng, kind),
        5 | 6 => {
            let to = ScalarKind::ALL
                .into_iter()
                .filter(|k| k.lanes() == kind.lanes())
                .nth(rng.gen_range(0..3))
                .unwrap();
            op_cast(kind, to).unwrap()
        }
        7 if kind.lanes() == 3 => {
            let conv = if rng.gen() { ColorConversion::SwapRb } else { ColorConversion::ToGrayF32 };
            op_color_convert(conv, kind).unwrap()
        }
        _ => {
            let body: Vec<IOp> = (0..rng.gen_range(1..=2)).map(|_| random_arith(rng, kind)).collect();
            op_static_loop_body(&body, rng.gen_range(1..=5)).unwrap()
        }
    }
}

/// A valid chain of at most `max_len` ops over planes up to
/// `max_dim` x `max_dim` and batches up to `max_batch`.
pub fn random_chain(rng: &mut TestRng, max_len: usize, max_dim: usize, max_batch: usize) -> ChainSpec {
    let read = random_read(rng, max_dim, max_batch);
    let space = read.dims_hint().unwrap();
    let mut kind = read.signature().output_kind.unwrap();
    let compute: Vec<IOp> = (0..rng.gen_range(0..=max_len - 2))
        .map(|_| {
            let op = random_compute(rng, kind);
            kind = op.signature().output_kind.unwrap();
            op
        })
        .collect();
    let split = space.batch == 1 && kind.lanes() == 3 && rng.gen();
    ChainSpec {
        read,
        compute,
        out_kind: kind,
        space,
        split,
        write_active: rng.gen_range(1..=space.batch),
        pad: (rng.gen_range(0..2), rng.gen_range(0..2)),
    }
}
