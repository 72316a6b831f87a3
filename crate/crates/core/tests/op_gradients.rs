//! Finite-difference sweep over every registered graph operation: for each
//! op the autodiff gradient must match central differences within 1e-4
//! relative error at 64-bit, across 10 random seeds.

use kunet_core::check::{grad_check, DEFAULT_STEP};
use kunet_core::params::{Binding, ParamId, ParamStore};
use kunet_core::rng::Rng;
use kunet_core::tensor::{Graph, TensorId};
use kunet_core::Result;

type BuildFn = fn(&ParamStore, &mut Graph, &mut Binding, &[ParamId]) -> Result<TensorId>;

fn check_op(name: &str, shapes: &[Vec<usize>], build: BuildFn) {
    for seed in 0..10u64 {
        let mut rng = Rng::new(seed * 7919 + 13);
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(i, shape)| {
                let n: usize = shape.iter().product();
                let data: Vec<f64> = (0..n).map(|_| rng.uniform(-1.2, 1.2)).collect();
                store.register(format!("p{i}"), shape.clone(), data).unwrap()
            })
            .collect();
        let report = grad_check(
            &mut store,
            &ids,
            |s, g, b| build(s, g, b, &ids),
            DEFAULT_STEP,
            1e-4,
        )
        .unwrap();
        assert!(
            report.passed(),
            "{name} seed {seed}: max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
    }
}

fn leafed(g: &mut Graph, s: &ParamStore, b: &mut Binding, ids: &[ParamId]) -> Result<Vec<TensorId>> {
    ids.iter().map(|&p| b.leaf(g, s, p)).collect()
}

// Squash through tanh and reduce so every output coordinate feeds the loss
// nonlinearly; a plain sum would hide scale errors in linear ops.
fn squash_loss(g: &mut Graph, x: TensorId) -> Result<TensorId> {
    let t = g.tanh(x)?;
    let sq = g.mul(t, t)?;
    g.mean_all(sq)
}

#[test]
fn matmul_2d() {
    check_op("matmul_2d", &[vec![3, 4], vec![4, 2]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.matmul(t[0], t[1])?;
        squash_loss(g, y)
    });
}

#[test]
fn matmul_batched_equal_prefix() {
    check_op("matmul_batched", &[vec![2, 3, 2], vec![2, 2, 3]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.matmul(t[0], t[1])?;
        squash_loss(g, y)
    });
}

#[test]
fn matmul_broadcast_rhs() {
    check_op("matmul_broadcast", &[vec![2, 3, 2], vec![2, 4]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.matmul(t[0], t[1])?;
        squash_loss(g, y)
    });
}

#[test]
fn add_sub_mul() {
    check_op("add", &[vec![2, 3], vec![2, 3]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.add(t[0], t[1])?;
        squash_loss(g, y)
    });
    check_op("sub", &[vec![2, 3], vec![2, 3]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.sub(t[0], t[1])?;
        squash_loss(g, y)
    });
    check_op("mul", &[vec![2, 3], vec![2, 3]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.mul(t[0], t[1])?;
        squash_loss(g, y)
    });
}

#[test]
fn add_bcast_suffixes() {
    // Bias over the last axis.
    check_op("add_bcast_1d", &[vec![2, 3, 4], vec![4]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.add_bcast(t[0], t[1])?;
        squash_loss(g, y)
    });
    // Table over the last two axes.
    check_op("add_bcast_2d", &[vec![2, 3, 4], vec![3, 4]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.add_bcast(t[0], t[1])?;
        squash_loss(g, y)
    });
}

#[test]
fn scale_tanh_sigmoid() {
    check_op("scale", &[vec![5]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.scale(t[0], -1.7)?;
        squash_loss(g, y)
    });
    check_op("tanh", &[vec![6]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.tanh(t[0])?;
        let sq = g.mul(y, y)?;
        g.mean_all(sq)
    });
    check_op("sigmoid", &[vec![6]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.sigmoid(t[0])?;
        squash_loss(g, y)
    });
}

#[test]
fn softmax_axes() {
    check_op("softmax_last", &[vec![3, 4]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.softmax(t[0], 1)?;
        squash_loss(g, y)
    });
    check_op("softmax_middle", &[vec![2, 3, 2]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.softmax(t[0], 1)?;
        squash_loss(g, y)
    });
}

#[test]
fn reshape_permute() {
    check_op("reshape", &[vec![2, 6]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.reshape(t[0], vec![3, 4])?;
        squash_loss(g, y)
    });
    check_op("permute", &[vec![2, 3, 4]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.permute(t[0], &[2, 0, 1])?;
        squash_loss(g, y)
    });
}

#[test]
fn concat_narrow() {
    check_op("concat", &[vec![2, 2], vec![2, 3]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.concat(&[t[0], t[1]], 1)?;
        squash_loss(g, y)
    });
    check_op("narrow", &[vec![3, 5]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let y = g.narrow(t[0], 1, 1, 3)?;
        squash_loss(g, y)
    });
}

#[test]
fn reductions() {
    check_op("sum_all", &[vec![2, 3]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let sq = g.mul(t[0], t[0])?;
        g.sum_all(sq)
    });
    check_op("mean_all", &[vec![2, 3]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let sq = g.mul(t[0], t[0])?;
        g.mean_all(sq)
    });
}

#[test]
fn shared_leaf_multiple_uses() {
    // One tensor feeding two branches: gradients must accumulate.
    check_op("shared_leaf", &[vec![2, 2], vec![2, 2]], |s, g, b, ids| {
        let t = leafed(g, s, b, ids)?;
        let prod = g.matmul(t[0], t[1])?;
        let sum = g.add(t[0], prod)?;
        let mixed = g.mul(sum, t[0])?;
        squash_loss(g, mixed)
    });
}
