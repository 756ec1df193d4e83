//! Random small instances for every differentiable operation, checked against central differences.

use mtal::autodiff::{Graph, NodeId, Padding};
use mtal::baselines::{cross_stitch, snr_route};
use mtal::data::{InputDims, TaskShape};
use mtal::model::{Binding, MultiTaskModel};
use mtal::network::{ArchSpec, MtalConfig, MtalSystem};
use mtal::sharing::{PhiMode, SharingPlan};
use mtal::similarity::SimilarityRecord;
use mtal::trainer::{task_loss, total_loss};
use mtal::Tensor;
use rand::Rng;

use super::{gradient_check, random_tensor, rng, weighted_sum};

pub const OPS: [&str; 10] = [
    "conv2d",
    "dense",
    "relu path",
    "pooling path",
    "softmax-ce",
    "aggregate_pair",
    "bank_average",
    "cross_stitch",
    "snr_route",
    "mtal end-to-end",
];

/// Worst relative error of one random instance of `op`.
pub fn instance(op: &str, seed: u64) -> f64 {
    let mut r = rng(seed);
    match op {
        "conv2d" => {
            let (n, c, m) = (r.random_range(1..=2), r.random_range(1..=3), r.random_range(1..=3));
            let (h, w) = (r.random_range(3..=6), r.random_range(3..=6));
            let k = if r.random_bool(0.5) { 3 } else { 1 };
            let padding = if r.random_bool(0.5) { Padding::Same } else { Padding::Valid };
            let xs = [
                random_tensor(&mut r, &[n, c, h, w], 1.0),
                random_tensor(&mut r, &[m, c, k, k], 1.0),
                random_tensor(&mut r, &[m], 1.0),
            ];
            gradient_check(&xs, &|g, ids| {
                let y = g.conv2d(ids[0], ids[1], ids[2], padding).unwrap();
                weighted_sum(g, y, seed)
            })
        }
        "dense" | "relu path" => {
            let (n, f, o) = (r.random_range(1..=4), r.random_range(1..=6), r.random_range(1..=5));
            let xs = [
                random_tensor(&mut r, &[n, f], 1.0),
                random_tensor(&mut r, &[f, o], 1.0),
                random_tensor(&mut r, &[o], 1.0),
            ];
            let relu = op == "relu path";
            gradient_check(&xs, &|g, ids| {
                let mut y = g.dense(ids[0], ids[1], Some(ids[2])).unwrap();
                if relu {
                    y = g.relu(y);
                }
                weighted_sum(g, y, seed)
            })
        }
        "pooling path" => {
            let (n, c) = (r.random_range(1..=2), r.random_range(1..=3));
            let (h, w) = (2 * r.random_range(2..=3), 2 * r.random_range(2..=3));
            let xs = [
                random_tensor(&mut r, &[n, c, h, w], 1.0),
                random_tensor(&mut r, &[c, c, 3, 3], 1.0),
                random_tensor(&mut r, &[c], 1.0),
            ];
            gradient_check(&xs, &|g, ids| {
                let y = g.conv2d(ids[0], ids[1], ids[2], Padding::Same).unwrap();
                let y = g.relu(y);
                let y = g.max_pool2d(y, 2).unwrap();
                weighted_sum(g, y, seed)
            })
        }
        "softmax-ce" => {
            let (n, c) = (r.random_range(1..=5), r.random_range(2..=6));
            let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
            let xs = [random_tensor(&mut r, &[n, c], 3.0)];
            gradient_check(&xs, &|g, ids| g.softmax_cross_entropy(ids[0], &labels).unwrap())
        }
        "aggregate_pair" => {
            let shape = [r.random_range(1..=3), 3, 3];
            let xs = [
                random_tensor(&mut r, &shape, 1.0),
                random_tensor(&mut r, &shape, 1.0),
                random_tensor(&mut r, &[], 2.0),
            ];
            gradient_check(&xs, &|g, ids| {
                let phi = g.sigmoid(ids[2]);
                let y = g.convex_combine(ids[0], ids[1], phi).unwrap();
                weighted_sum(g, y, seed)
            })
        }
        "bank_average" => {
            let k = r.random_range(1..=4);
            let shape = [r.random_range(1..=2), 3, 3];
            let mut xs = vec![random_tensor(&mut r, &shape, 1.0)];
            xs.extend((0..k).map(|_| random_tensor(&mut r, &shape, 1.0)));
            xs.extend((0..k).map(|_| random_tensor(&mut r, &[], 2.0)));
            gradient_check(&xs, &|g, ids| {
                let members: Vec<NodeId> = (0..k)
                    .map(|j| {
                        let phi = g.sigmoid(ids[1 + k + j]);
                        g.convex_combine(ids[0], ids[1 + j], phi).unwrap()
                    })
                    .collect();
                let y = g.mean(&members).unwrap();
                weighted_sum(g, y, seed)
            })
        }
        "cross_stitch" => {
            let shape = [r.random_range(1..=3), r.random_range(1..=3), 2, 2];
            let xs = [
                random_tensor(&mut r, &shape, 1.0),
                random_tensor(&mut r, &shape, 1.0),
                random_tensor(&mut r, &[2, 2], 1.0),
            ];
            gradient_check(&xs, &|g, ids| {
                let (a, b) = cross_stitch(g, ids[0], ids[1], ids[2]).unwrap();
                let sa = weighted_sum(g, a, seed);
                let sb = weighted_sum(g, b, seed + 1);
                g.add(&[sa, sb]).unwrap()
            })
        }
        "snr_route" => {
            let (inputs, outputs) = (r.random_range(1..=3), r.random_range(1..=3));
            let (b, d, e) = (r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=4));
            let mut xs: Vec<Tensor<f64>> = (0..inputs).map(|_| random_tensor(&mut r, &[b, d], 1.0)).collect();
            xs.push(random_tensor(&mut r, &[outputs, inputs], 1.0));
            xs.extend((0..outputs * inputs).map(|_| random_tensor(&mut r, &[d, e], 1.0)));
            gradient_check(&xs, &|g, ids| {
                let v = snr_route(g, &ids[..inputs], ids[inputs], &ids[inputs + 1..]).unwrap();
                let parts: Vec<NodeId> = v.iter().enumerate().map(|(k, &y)| weighted_sum(g, y, seed + k as u64)).collect();
                g.add(&parts).unwrap()
            })
        }
        "mtal end-to-end" => mtal_instance(seed),
        other => panic!("unknown op {other}"),
    }
}

/// Two tasks, one conv layer of two kernels, one forced shared pair, learnable phi and L2.
pub fn tiny_system(seed: u64) -> MtalSystem<f64> {
    let cfg = MtalConfig {
        arch: ArchSpec::uniform(1, 2, 3, vec![]),
        phi: PhiMode::Learnable,
        seed,
        ..MtalConfig::default()
    };
    let shapes = [
        TaskShape { id: 0, dims: InputDims::new(1, 4, 4), classes: 3 },
        TaskShape { id: 1, dims: InputDims::new(1, 3, 5), classes: 2 },
    ];
    let mut sys = MtalSystem::build(&shapes, cfg).unwrap();
    let record = SimilarityRecord { layer: 0, task_i: 0, kernel_p: 1, task_j: 1, kernel_q: 0, similarity: 1.0 };
    sys.set_plans(vec![SharingPlan::uniform(0, &[record], 0.5).unwrap()]).unwrap();
    sys
}

fn mtal_instance(seed: u64) -> f64 {
    let mut sys = tiny_system(seed);
    let mut r = rng(seed);
    // move phi away from 0.5 so both mixing directions are exercised
    for p in sys.phi.params_mut() {
        p.value = Tensor::scalar(r.random_range(-1.5..1.5));
    }
    let x0 = random_tensor(&mut r, &[2, 1, 4, 4], 1.0);
    let x1 = random_tensor(&mut r, &[3, 1, 3, 5], 1.0);
    let y0: Vec<usize> = (0..2).map(|_| r.random_range(0..3)).collect();
    let y1: Vec<usize> = (0..3).map(|_| r.random_range(0..2)).collect();
    let values: Vec<Tensor<f64>> = sys.params_mut().into_iter().map(|p| p.value.clone()).collect();
    gradient_check(&values, &|g: &mut Graph<f64>, ids: &[NodeId]| {
        let b = Binding { params: ids.to_vec() };
        let inputs = [Some(g.leaf(x0.clone())), Some(g.leaf(x1.clone()))];
        let logits = sys.forward(g, &b, &inputs).unwrap();
        let l0 = task_loss(g, logits[0].unwrap(), &y0, &sys.regularized(&b, 0), 0.1).unwrap();
        let l1 = task_loss(g, logits[1].unwrap(), &y1, &sys.regularized(&b, 1), 0.1).unwrap();
        total_loss(g, &[l0, l1]).unwrap()
    })
}

/// Worst error per op over `instances` seeds.
pub fn run(instances: u64) -> Vec<(&'static str, f64)> {
    OPS.iter()
        .map(|&op| {
            let worst = (0..instances).map(|s| instance(op, 1000 + s)).fold(0.0, f64::max);
            (op, worst)
        })
        .collect()
}
