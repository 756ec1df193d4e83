// Cosine similarity between kernels and threshold-based pair nomination.

use mtal::similarity::{cosine_similarity, nominate_pairs, similarity_csv, KernelSet, ThresholdConfig};
use mtal::Tensor;

fn main() -> mtal::Result<()> {
    let a = Tensor::<f32>::from_f64(&[1, 2, 2], &[1.0, 0.0, 0.5, -1.0])?;
    let b = a.map(|v| 3.0 * v);
    let c = Tensor::<f32>::from_f64(&[1, 2, 2], &[0.0, 1.0, 0.0, 0.2])?;
    println!("sim(a, 3a) = {:.4}", cosine_similarity(&a, &b)?);
    println!("sim(a, c)  = {:.4}", cosine_similarity(&a, &c)?);

    // two tasks with three 1x2x2 kernels each at layer 0
    let t0 = Tensor::stack(&[a.clone(), c.clone(), a.map(|v| -v)])?;
    let c_like = Tensor::<f32>::from_f64(&[1, 2, 2], &[1.0, 1.0, -0.5, 0.2])?;
    let t1 = Tensor::stack(&[c_like, b.clone(), a.map(|v| v + 0.3)])?;
    let sets = [KernelSet::new(0, 0, t0)?, KernelSet::new(0, 1, t1)?];
    for cfg in [ThresholdConfig::related(), ThresholdConfig::unrelated(), ThresholdConfig::new(0.9)?] {
        let pairs = nominate_pairs(&sets, &cfg)?;
        println!("delta {}: {} pairs", cfg.delta(), pairs.len());
        print!("{}", similarity_csv(&pairs));
    }
    Ok(())
}
