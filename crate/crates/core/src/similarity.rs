//! Cross-task kernel similarity and thresholded pair nomination.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// The `m` convolution kernels of one layer of one task network.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSet<T = f32> {
    pub layer: usize,
    pub task: usize,
    /// `[m, C, kh, kw]`
    pub kernels: Tensor<T>,
}

impl<T: Real> KernelSet<T> {
    pub fn new(layer: usize, task: usize, kernels: Tensor<T>) -> Result<Self> {
        if kernels.rank() != 4 || kernels.shape()[0] == 0 {
            return Err(Error::shape("kernel set", kernels.shape(), &[0, 0, 0, 0]));
        }
        Ok(Self {
            layer,
            task,
            kernels,
        })
    }

    pub fn count(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn kernel_len(&self) -> usize {
        self.kernels.len() / self.count()
    }

    /// Row-major view of kernel `p` as a flat slice.
    pub fn kernel_slice(&self, p: usize) -> &[T] {
        let k = self.kernel_len();
        &self.kernels.data()[p * k..(p + 1) * k]
    }
}

/// One cross-task kernel pair and its cosine similarity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityRecord {
    pub layer: usize,
    pub task_i: usize,
    pub kernel_p: usize,
    pub task_j: usize,
    pub kernel_q: usize,
    pub similarity: f64,
}

impl SimilarityRecord {
    /// Ordering key `(i, p, j, q)`.
    pub fn key(&self) -> (usize, usize, usize, usize) {
        (self.task_i, self.kernel_p, self.task_j, self.kernel_q)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdConfig {
    delta: f64,
}

impl ThresholdConfig {
    pub const MIN: f64 = 0.1;
    pub const MAX: f64 = 0.9;
    /// Operating point for related tasks.
    pub const RELATED: f64 = 0.4;
    /// Operating point for unrelated tasks.
    pub const UNRELATED: f64 = 0.55;

    pub fn new(delta: f64) -> Result<Self> {
        // tolerate float noise from sweeps like 0.1 * 9
        if !(Self::MIN - 1e-12..=Self::MAX + 1e-12).contains(&delta) {
            return Err(Error::InvalidThreshold(delta));
        }
        Ok(Self { delta })
    }

    pub fn related() -> Self {
        Self {
            delta: Self::RELATED,
        }
    }

    pub fn unrelated() -> Self {
        Self {
            delta: Self::UNRELATED,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self::related()
    }
}

/// Row-major flattening of a single kernel `[C, kh, kw] -> [C*kh*kw]`.
pub fn vectorize<T: Real>(kernel: &Tensor<T>) -> Tensor<T> {
    kernel
        .reshape(&[kernel.len()])
        .expect("flattening preserves element count")
}

fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// sqrt(|a|^2 |b|^2) rather than |a| |b| so that identical vectors give exactly 1
fn cosine_from_parts(dot: f64, norm_sq_a: f64, norm_sq_b: f64) -> f64 {
    (dot / (norm_sq_a * norm_sq_b).sqrt()).clamp(-1.0, 1.0)
}

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", a.shape(), b.shape()));
    }
    let (a, b) = (a.to_f64_vec(), b.to_f64_vec());
    let (na, nb) = (norm_sq(&a), norm_sq(&b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(cosine_from_parts(dot(&a, &b), na, nb))
}

fn check_compatible<T: Real>(sets: &[KernelSet<T>]) -> Result<()> {
    let Some(first) = sets.first() else {
        return Ok(());
    };
    for s in sets {
        if s.kernels.shape() != first.kernels.shape() {
            return Err(Error::shape(
                "nominate_pairs",
                first.kernels.shape(),
                s.kernels.shape(),
            ));
        }
        if s.layer != first.layer {
            return Err(Error::config(
                "layer",
                format!("kernel sets from layers {} and {} mixed", first.layer, s.layer),
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Degenerate {
    Skip,
    Fail,
}

/// Nominates every cross-task pair with similarity at least `delta`,
/// keeping only the best-matching `q` for each `(i, p, j)`.
///
/// Zero-norm kernels never participate; they are skipped with a warning.
/// Output is ordered by `(i, p, j, q)`.
pub fn nominate_pairs<T: Real>(
    sets: &[KernelSet<T>],
    cfg: &ThresholdConfig,
) -> Result<Vec<SimilarityRecord>> {
    nominate(sets, cfg, Degenerate::Skip)
}

/// Like [`nominate_pairs`] but reports the first zero-norm kernel as an error.
pub fn nominate_pairs_strict<T: Real>(
    sets: &[KernelSet<T>],
    cfg: &ThresholdConfig,
) -> Result<Vec<SimilarityRecord>> {
    nominate(sets, cfg, Degenerate::Fail)
}

fn nominate<T: Real>(
    sets: &[KernelSet<T>],
    cfg: &ThresholdConfig,
    policy: Degenerate,
) -> Result<Vec<SimilarityRecord>> {
    check_compatible(sets)?;
    // (vector, squared norm) per task per kernel; zero norm marks a degenerate kernel
    let mut vecs: Vec<Vec<(Vec<f64>, f64)>> = Vec::with_capacity(sets.len());
    for s in sets {
        let mut per_task = Vec::with_capacity(s.count());
        for p in 0..s.count() {
            let v: Vec<f64> = s.kernel_slice(p).iter().map(|x| x.as_f64()).collect();
            let n = norm_sq(&v);
            if n == 0.0 {
                match policy {
                    Degenerate::Fail => {
                        return Err(Error::DegenerateKernel {
                            layer: s.layer,
                            task: s.task,
                            kernel: p,
                        })
                    }
                    Degenerate::Skip => log::warn!(
                        "skipping zero-norm kernel at layer {}, task {}, kernel {}",
                        s.layer,
                        s.task,
                        p
                    ),
                }
            }
            per_task.push((v, n));
        }
        vecs.push(per_task);
    }

    let delta = cfg.delta();
    let mut out = Vec::new();
    for (i, si) in sets.iter().enumerate() {
        for (p, (vp, np)) in vecs[i].iter().enumerate() {
            if *np == 0.0 {
                continue;
            }
            for (j, sj) in sets.iter().enumerate() {
                if i == j {
                    continue;
                }
                let mut best: Option<(usize, f64)> = None;
                for (q, (vq, nq)) in vecs[j].iter().enumerate() {
                    if *nq == 0.0 {
                        continue;
                    }
                    let s = cosine_from_parts(dot(vp, vq), *np, *nq);
                    if s >= delta && best.is_none_or(|(_, b)| s > b) {
                        best = Some((q, s));
                    }
                }
                if let Some((q, similarity)) = best {
                    out.push(SimilarityRecord {
                        layer: si.layer,
                        task_i: si.task,
                        kernel_p: p,
                        task_j: sj.task,
                        kernel_q: q,
                        similarity,
                    });
                }
            }
        }
    }
    out.sort_by_key(|r| r.key());
    Ok(out)
}

pub const SIMILARITY_CSV_HEADER: &str = "layer,task_i,kernel_p,task_j,kernel_q,similarity";

pub fn similarity_csv(records: &[SimilarityRecord]) -> String {
    let mut s = String::from(SIMILARITY_CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6}",
            r.layer, r.task_i, r.kernel_p, r.task_j, r.kernel_q, r.similarity
        );
    }
    s
}

pub fn write_similarity_csv<W: Write>(mut w: W, records: &[SimilarityRecord]) -> io::Result<()> {
    w.write_all(similarity_csv(records).as_bytes())
}
