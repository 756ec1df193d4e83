use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SplitMode {
    /// 70/30 within every class.
    #[default]
    Stratified,
    /// 70/30 over the shuffled whole.
    Unstratified,
}

/// Disjoint train/test index sets, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn train_share(n: usize) -> usize {
    // round(0.7 * n), half up
    (7 * n + 5) / 10
}

/// Stratified 70/30 split of a dataset, deterministic in `seed`.
pub fn split_70_30(ds: &Dataset, seed: u64) -> Result<Split> {
    split_with(&ds.labels, ds.classes, seed, SplitMode::Stratified)
}

pub fn split_with(labels: &[usize], classes: usize, seed: u64, mode: SplitMode) -> Result<Split> {
    let n = labels.len();
    if n < 10 {
        return Err(Error::TooFewExamples(n));
    }
    let mut rng = rng::stream(seed, &[tag::SPLIT]);
    let mut train = Vec::with_capacity(train_share(n));
    let mut test = Vec::with_capacity(n - train_share(n));
    match mode {
        SplitMode::Stratified => {
            for class in 0..classes {
                let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
                idx.shuffle(&mut rng);
                let k = train_share(idx.len());
                train.extend_from_slice(&idx[..k]);
                test.extend_from_slice(&idx[k..]);
            }
        }
        SplitMode::Unstratified => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let k = train_share(n);
            train.extend_from_slice(&idx[..k]);
            test.extend_from_slice(&idx[k..]);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Per-channel standardization with statistics from one (training) set.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(ds: &Dataset) -> Self {
        let c = ds.dims.channels;
        let plane = ds.dims.height * ds.dims.width;
        let mut sum = vec![0f64; c];
        let mut sq = vec![0f64; c];
        for i in 0..ds.len() {
            let ex = ds.example(i);
            for ch in 0..c {
                for &v in &ex[ch * plane..(ch + 1) * plane] {
                    let v = v as f64;
                    sum[ch] += v;
                    sq[ch] += v * v;
                }
            }
        }
        let count = (ds.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / count - m * m).max(0.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    /// Normalized copy; the input is left untouched.
    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let plane = ds.dims.height * ds.dims.width;
        let vol = ds.dims.volume();
        let data = ds
            .data
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let ch = (k % vol) / plane;
                ((v as f64 - self.mean[ch]) / self.std[ch]) as f32
            })
            .collect();
        Dataset {
            data,
            ..ds.clone()
        }
    }
}
