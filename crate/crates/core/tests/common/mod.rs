//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use mtal::autodiff::{Graph, NodeId};
use mtal::similarity::{KernelSet, SimilarityRecord};
use mtal::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod gradient_suite;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

/// Norm-wise relative error `|a - n| / max(|a|, |n|)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-10 {
        0.0
    } else {
        diff / scale
    }
}

/// Largest relative error between reverse-mode gradients and central
/// differences of `f` at `inputs`. `f` builds a scalar from the input leaves.
pub fn gradient_check(inputs: &[Tensor<f64>], f: &dyn Fn(&mut Graph<f64>, &[NodeId]) -> NodeId) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = f(&mut g, &ids);
    g.backward(root).expect("scalar root");
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| g.grad(id).to_f64_vec()).collect();

    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let root = f(&mut g, &ids);
        g.value(root).item()
    };
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = Vec::with_capacity(input.len());
        for e in 0..input.len() {
            let mut xs = inputs.to_vec();
            xs[k].data_mut()[e] = input.data()[e] + h;
            let up = eval(&xs);
            xs[k].data_mut()[e] = input.data()[e] - h;
            let down = eval(&xs);
            numeric.push((up - down) / (2.0 * h));
        }
        worst = worst.max(relative_error(&analytic[k], &numeric));
    }
    worst
}

/// `sum(weights * y)` so that every output element gets a distinct random upstream gradient.
pub fn weighted_sum(g: &mut Graph<f64>, y: NodeId, seed: u64) -> NodeId {
    let shape = g.value(y).shape().to_vec();
    let mut r = rng(seed ^ 0x5eed);
    let w = g.leaf(random_tensor(&mut r, &shape, 1.0));
    let p = g.mul(w, y).unwrap();
    g.sum(p)
}

/// Direct six-loop convolution with zero padding `pad` on every side, stride 1.
pub fn naive_conv2d(x: &Tensor<f64>, k: &Tensor<f64>, b: &Tensor<f64>, pad: usize) -> Tensor<f64> {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [m, _, kh, kw] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
    let oh = h + 2 * pad + 1 - kh;
    let ow = w + 2 * pad + 1 - kw;
    let mut out = Tensor::zeros(&[n, m, oh, ow]);
    for i in 0..n {
        for o in 0..m {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = b.data()[o];
                    for ci in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = y as i64 + dy as i64 - pad as i64;
                                let ix = xo as i64 + dx as i64 - pad as i64;
                                if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                                    continue;
                                }
                                let xv = x.data()[((i * c + ci) * h + iy as usize) * w + ix as usize];
                                let kv = k.data()[((o * c + ci) * kh + dy) * kw + dx];
                                s += xv * kv;
                            }
                        }
                    }
                    out.data_mut()[((i * m + o) * oh + y) * ow + xo] = s;
                }
            }
        }
    }
    out
}

pub fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Exhaustive nomination oracle: for every `(i, p, j)` with `i != j`, score every `q`.
/// `got` must contain a pair for `(i, p, j)` exactly when the best score clears `delta`,
/// and its `q` must attain the best score. Scores within `1e-12` of `delta` or of each
/// other are float ties, so either outcome is accepted there.
pub fn check_nomination(sets: &[KernelSet<f64>], delta: f64, got: &[SimilarityRecord]) -> Result<(), String> {
    const TIE: f64 = 1e-12;
    let mut keys: Vec<_> = got.iter().map(|r| r.key()).collect();
    let sorted = keys.windows(2).all(|w| w[0] < w[1]);
    if !sorted {
        return Err("output is not strictly ordered by (i, p, j, q)".into());
    }
    for si in sets {
        for p in 0..si.count() {
            let a = si.kernel_slice(p);
            for sj in sets {
                if sj.task == si.task {
                    continue;
                }
                let found: Vec<usize> = keys
                    .iter()
                    .filter(|k| (k.0, k.1, k.2) == (si.task, p, sj.task))
                    .map(|k| k.3)
                    .collect();
                keys.retain(|k| (k.0, k.1, k.2) != (si.task, p, sj.task));
                if found.len() > 1 {
                    return Err(format!("more than one partner for {:?}", (si.task, p, sj.task)));
                }
                let scores: Vec<(usize, f64)> = if a.iter().all(|&v| v == 0.0) {
                    Vec::new()
                } else {
                    (0..sj.count())
                        .filter(|&q| sj.kernel_slice(q).iter().any(|&v| v != 0.0))
                        .map(|q| (q, naive_cosine(a, sj.kernel_slice(q)).clamp(-1.0, 1.0)))
                        .collect()
                };
                let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
                let must = best >= delta + TIE;
                let may = best >= delta - TIE;
                match found.first() {
                    None if must => return Err(format!("missing pair for {:?} (best {best})", (si.task, p, sj.task))),
                    Some(_) if !may => return Err(format!("spurious pair for {:?} (best {best})", (si.task, p, sj.task))),
                    Some(&q) => {
                        let s = scores.iter().find(|s| s.0 == q).map(|s| s.1);
                        if !s.is_some_and(|s| s >= best - TIE) {
                            return Err(format!("{:?} picked q={q} with score {s:?}, best {best}", (si.task, p, sj.task)));
                        }
                    }
                    None => {}
                }
            }
        }
    }
    if keys.is_empty() {
        Ok(())
    } else {
        Err(format!("pairs between unknown tasks: {keys:?}"))
    }
}

pub fn record_keys(records: &[SimilarityRecord]) -> Vec<(usize, usize, usize, usize)> {
    records.iter().map(|r| r.key()).collect()
}

/// Pearson correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

/// Generated tasks after a stratified split.
pub fn prepared_tasks(family: &mtal::data::SyntheticTaskFamily, requests: &[mtal::data::TaskRequest], seed: u64) -> Vec<mtal::data::TaskData> {
    mtal::data::generate_tasks(family, requests)
        .unwrap()
        .iter()
        .map(|s| mtal::data::TaskData::prepare(s, seed, mtal::data::SplitMode::Stratified).unwrap())
        .collect()
}

/// The same task twice, the copy renumbered as task 1.
pub fn duplicated(task: &mtal::data::TaskData) -> Vec<mtal::data::TaskData> {
    vec![task.clone(), mtal::data::TaskData { id: 1, ..task.clone() }]
}
