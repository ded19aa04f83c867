//! Random instances of every differentiable tape operation, for finite-difference checks.
//!
//! Each case contracts the op's output with a fixed random weight tensor so the
//! scalar under test has a non-trivial gradient everywhere.

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;

pub type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
}

fn uniform(rng: &mut impl Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    Tensor::from_vec(dims.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero, so ReLU has no kink within the difference step.
fn away_from_zero(rng: &mut impl Rng, dims: &[usize]) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::from_vec(dims.to_vec(), data).unwrap()
}

/// Pairwise distinct values (spacing ≥ 0.05), so max pooling has no ties.
fn distinct(rng: &mut impl Rng, dims: &[usize]) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let data = order
        .into_iter()
        .map(|k| k as f64 * 0.1 + rng.random_range(-0.025..0.025))
        .collect();
    Tensor::from_vec(dims.to_vec(), data).unwrap()
}

fn contract(tape: &mut Tape<f64>, y: Var, weights: &Tensor<f64>) -> Result<Var> {
    let w = tape.constant(weights.clone());
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn one_hot(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        t[r * cols + rng.random_range(0..cols)] = 1.0;
    }
    Tensor::from_vec([rows, cols], t).unwrap()
}

/// Number of cases returned by [`cases`].
pub const OP_COUNT: usize = 15;

/// One random instance of every differentiable operation.
pub fn cases(rng: &mut impl Rng) -> Vec<OpCase> {
    let r = rng.random_range(2..5);
    let c = rng.random_range(2..6);
    let mut out = Vec::new();

    let w = uniform(rng, &[r, c], -1.0, 1.0);
    out.push(OpCase {
        name: "add",
        inputs: vec![uniform(rng, &[r, c], -2.0, 2.0), uniform(rng, &[r, c], -2.0, 2.0)],
        build: Box::new(move |t, v| {
            let y = t.add(v[0], v[1])?;
            contract(t, y, &w)
        }),
    });

    let w = uniform(rng, &[r, c], -1.0, 1.0);
    out.push(OpCase {
        name: "sub",
        inputs: vec![uniform(rng, &[r, c], -2.0, 2.0), uniform(rng, &[r, c], -2.0, 2.0)],
        build: Box::new(move |t, v| {
            let y = t.sub(v[0], v[1])?;
            contract(t, y, &w)
        }),
    });

    let w = uniform(rng, &[r, c], -1.0, 1.0);
    out.push(OpCase {
        name: "mul",
        inputs: vec![uniform(rng, &[r, c], -2.0, 2.0), uniform(rng, &[r, c], -2.0, 2.0)],
        build: Box::new(move |t, v| {
            let y = t.mul(v[0], v[1])?;
            contract(t, y, &w)
        }),
    });

    let w = uniform(rng, &[r, c], -1.0, 1.0);
    let s = rng.random_range(-3.0..3.0);
    out.push(OpCase {
        name: "scale",
        inputs: vec![uniform(rng, &[r, c], -2.0, 2.0)],
        build: Box::new(move |t, v| {
            let y = t.scale(v[0], s)?;
            contract(t, y, &w)
        }),
    });

    let w = uniform(rng, &[3, 2], -1.0, 1.0);
    out.push(OpCase {
        name: "matmul",
        inputs: vec![uniform(rng, &[3, 4], -1.0, 1.0), uniform(rng, &[4, 2], -1.0, 1.0)],
        build: Box::new(move |t, v| {
            let y = t.matmul(v[0], v[1])?;
            contract(t, y, &w)
        }),
    });

    let stride = rng.random_range(1..3);
    let pad = rng.random_range(0..2);
    let ho = (5 + 2 * pad - 3) / stride + 1;
    let w = uniform(rng, &[2, 4, ho, ho], -1.0, 1.0);
    out.push(OpCase {
        name: "conv2d",
        inputs: vec![
            uniform(rng, &[2, 3, 5, 5], -1.0, 1.0),
            uniform(rng, &[4, 3, 3, 3], -0.5, 0.5),
            uniform(rng, &[4], -0.5, 0.5),
        ],
        build: Box::new(move |t, v| {
            let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
            contract(t, y, &w)
        }),
    });

    let w = uniform(rng, &[r, c], -1.0, 1.0);
    out.push(OpCase {
        name: "relu",
        inputs: vec![away_from_zero(rng, &[r, c])],
        build: Box::new(move |t, v| {
            let y = t.relu(v[0])?;
            contract(t, y, &w)
        }),
    });

    let (window, stride) = if rng.random_bool(0.5) { (2, 2) } else { (3, 1) };
    let po = (6 - window) / stride + 1;
    let w = uniform(rng, &[2, 2, po, po], -1.0, 1.0);
    out.push(OpCase {
        name: "maxpool2d",
        inputs: vec![distinct(rng, &[2, 2, 6, 6])],
        build: Box::new(move |t, v| {
            let y = t.maxpool2d(v[0], window, stride)?;
            contract(t, y, &w)
        }),
    });

    let w = uniform(rng, &[2, 3], -1.0, 1.0);
    out.push(OpCase {
        name: "global_avg_pool",
        inputs: vec![uniform(rng, &[2, 3, 4, 3], -1.0, 1.0)],
        build: Box::new(move |t, v| {
            let y = t.global_avg_pool(v[0])?;
            contract(t, y, &w)
        }),
    });

    let w = uniform(rng, &[r, c], -1.0, 1.0);
    out.push(OpCase {
        name: "log_softmax",
        inputs: vec![uniform(rng, &[r, c], -3.0, 3.0)],
        build: Box::new(move |t, v| {
            let y = t.log_softmax(v[0])?;
            contract(t, y, &w)
        }),
    });

    let target = one_hot(rng, r, c);
    out.push(OpCase {
        name: "cross_entropy_from_logits",
        inputs: vec![uniform(rng, &[r, c], -3.0, 3.0)],
        build: Box::new(move |t, v| t.cross_entropy_from_logits(v[0], &target)),
    });

    out.push(OpCase {
        name: "sum",
        inputs: vec![uniform(rng, &[r, c], -2.0, 2.0)],
        build: Box::new(|t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.sum(sq)
        }),
    });

    out.push(OpCase {
        name: "mean",
        inputs: vec![uniform(rng, &[r, c], -2.0, 2.0)],
        build: Box::new(|t, v| {
            let sq = t.mul(v[0], v[0])?;
            t.mean(sq)
        }),
    });

    let w = uniform(rng, &[c, r], -1.0, 1.0);
    out.push(OpCase {
        name: "reshape",
        inputs: vec![uniform(rng, &[r, c], -2.0, 2.0)],
        build: Box::new(move |t, v| {
            let y = t.reshape(v[0], [c, r])?;
            contract(t, y, &w)
        }),
    });

    let w = uniform(rng, &[r, c], -1.0, 1.0);
    out.push(OpCase {
        name: "expand_rows",
        inputs: vec![uniform(rng, &[c], -2.0, 2.0)],
        build: Box::new(move |t, v| {
            let y = t.expand_rows(v[0], r)?;
            contract(t, y, &w)
        }),
    });

    out
}
