//! The finite-difference suite shared by `gradcheck` and `acceptance`.

use dropprof::model::{build, DropoutConfig, Family, ModelConfig, Pooling, TokenMatrix};
use dropprof::numerics::{Graph, RngStream, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub const FIXTURES: u64 = 50;

type Shapes = fn(&mut ChaCha8Rng) -> Vec<Vec<usize>>;
type Op = fn(&mut Graph<'_>, &[Var]) -> Var;

/// Contracts an op's output against fixed random weights so every output
/// element influences the scalar.
fn weighted(g: &mut Graph<'_>, y: Var, seed: u64) -> Var {
    let w = random_tensor(&mut rng(seed ^ 0xfeed), g.value(y).shape());
    let w = g.leaf(w, false);
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

fn dims(r: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5))
}

fn two(r: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let (m, n, _) = dims(r);
    vec![vec![m, n], vec![m, n]]
}

fn one(r: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let (m, n, _) = dims(r);
    vec![vec![m, n]]
}

pub const OPS: &[(&str, Shapes, Op)] = &[
    (
        "matmul",
        |r| {
            let (m, k, n) = dims(r);
            vec![vec![m, k], vec![k, n]]
        },
        |g, v| g.matmul(v[0], v[1]).unwrap(),
    ),
    (
        "matmul_t",
        |r| {
            let (m, k, n) = dims(r);
            vec![vec![m, k], vec![n, k]]
        },
        |g, v| g.matmul_t(v[0], v[1]).unwrap(),
    ),
    ("add", two, |g, v| g.add(v[0], v[1]).unwrap()),
    ("mul", two, |g, v| g.mul(v[0], v[1]).unwrap()),
    ("scale", one, |g, v| g.scale(v[0], -1.7)),
    (
        "add_row",
        |r| {
            let (m, n, _) = dims(r);
            vec![vec![m, n], vec![n]]
        },
        |g, v| g.add_row(v[0], v[1]).unwrap(),
    ),
    ("gelu", one, |g, v| g.gelu(v[0])),
    (
        "layer_norm",
        |r| {
            let m = r.gen_range(1..4);
            let n = r.gen_range(2..6);
            vec![vec![m, n], vec![n], vec![n]]
        },
        |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap(),
    ),
    ("softmax", one, |g, v| g.softmax(v[0])),
    (
        "causal_mask",
        |r| {
            let n = r.gen_range(1..5);
            vec![vec![n, n]]
        },
        |g, v| {
            let m = g.causal_mask(v[0]).unwrap();
            g.softmax(m)
        },
    ),
    (
        "embedding",
        |r| {
            let (v, d, _) = dims(r);
            vec![vec![v + 2, d]]
        },
        |g, v| g.embedding(v[0], &[1, 0, 1, 2]).unwrap(),
    ),
    (
        "cols",
        |_| vec![vec![3, 5]],
        |g, v| g.cols(v[0], 1, 3).unwrap(),
    ),
    (
        "concat_cols",
        |r| {
            let (m, a, b) = dims(r);
            vec![vec![m, a], vec![m, b]]
        },
        |g, v| g.concat_cols(&[v[0], v[1], v[0]]).unwrap(),
    ),
    ("row", |_| vec![vec![3, 4]], |g, v| g.row(v[0], 2).unwrap()),
    ("mean_rows", one, |g, v| g.mean_rows(v[0]).unwrap()),
    (
        "stack_rows",
        |r| {
            let (_, n, _) = dims(r);
            vec![vec![1, n], vec![2, n]]
        },
        |g, v| g.stack_rows(&[v[0], v[1]]).unwrap(),
    ),
    ("dropout", one, |g, v| {
        let mut mask_rng = RngStream::new(3, 4).generator();
        g.dropout(v[0], 0.4, &mut mask_rng, true).unwrap()
    }),
];

/// Worst relative error of one entry of [`OPS`] over all fixtures.
pub fn op_worst(name: &str) -> f64 {
    let &(_, shapes, op) = OPS.iter().find(|o| o.0 == name).unwrap();
    let mut worst: f64 = 0.0;
    for fixture in 0..FIXTURES {
        let seed = 1000 * fixture + name.len() as u64;
        let mut r = rng(seed);
        let inputs: Vec<Tensor> = shapes(&mut r)
            .iter()
            .map(|s| random_tensor(&mut r, s))
            .collect();
        let err = check_graph(&inputs, &move |g, v| {
            let y = op(g, v);
            weighted(g, y, seed)
        });
        worst = worst.max(err);
    }
    worst
}

pub fn cross_entropy_worst() -> f64 {
    let mut worst: f64 = 0.0;
    for fixture in 0..FIXTURES {
        let mut r = rng(fixture);
        let b = r.gen_range(1..6);
        let c = r.gen_range(2..4);
        let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..c)).collect();
        let input = random_tensor(&mut r, &[b, c]);
        worst = worst.max(check_graph(&[input], &move |g, v| {
            g.cross_entropy(v[0], &labels).unwrap()
        }));
    }
    worst
}

/// End-to-end check of `fixtures` random models with `layers` blocks,
/// alternating families and dropout settings.
pub fn model_worst(layers: usize, fixtures: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for fixture in 0..fixtures {
        let mut r = rng(77 + fixture + 1000 * layers as u64);
        let family = if fixture % 2 == 0 {
            Family::Encoder
        } else {
            Family::Decoder
        };
        let mut cfg = ModelConfig::new(family, layers, 2, 8, 12, 11, 7);
        if fixture % 5 == 4 {
            cfg.pooling = Pooling::Mean;
        }
        let mut ck = build(&cfg, fixture).unwrap();
        // Move off the symmetric initialisation so biases and gains matter.
        for t in ck.parameters.values_mut() {
            for v in t.data_mut() {
                *v += r.gen_range(-0.3..0.3);
            }
        }
        let rows: Vec<Vec<usize>> = (0..3)
            .map(|_| (0..r.gen_range(2..8)).map(|_| r.gen_range(1..11)).collect())
            .collect();
        let tokens = TokenMatrix::from_rows(&rows, 7).unwrap();
        let labels = vec![true, false, r.gen()];
        let dropout = if fixture % 3 == 0 {
            DropoutConfig::deterministic()
        } else {
            DropoutConfig::baseline()
        };
        let err = check_model(
            &ck,
            &tokens,
            &labels,
            &dropout,
            RngStream::new(fixture, 1),
            40,
            fixture,
        );
        worst = worst.max(err);
    }
    worst
}
