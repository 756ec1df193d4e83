// Sharing plans, pairwise aggregation, kernel banks and learnable mixing weights.

use mtal::sharing::{aggregate_pair, apply_sharing, kernel_banks, PairKey, PhiStore, SharingPlan};
use mtal::similarity::{nominate_pairs, KernelSet, ThresholdConfig};
use mtal::Tensor;

fn main() -> mtal::Result<()> {
    let w_i = Tensor::<f32>::from_f64(&[1, 1, 3], &[1.0, 2.0, 3.0])?;
    let w_j = Tensor::<f32>::from_f64(&[1, 1, 3], &[3.0, 2.0, 1.0])?;
    println!("0.25 w_i + 0.75 w_j = {:?}", aggregate_pair(&w_i, &w_j, 0.25)?.data());

    let sets = [
        KernelSet::new(0, 0, Tensor::stack(&[w_i.clone(), w_j.clone()])?)?,
        KernelSet::new(0, 1, Tensor::stack(&[w_i.map(|v| v + 0.1), Tensor::from_fn(&[1, 1, 3], |k| [1.0, -1.0, 0.5][k])])?)?,
    ];
    let records = nominate_pairs(&sets, &ThresholdConfig::related())?;
    let plan = SharingPlan::uniform(0, &records, 0.5)?;
    for bank in kernel_banks(&sets, &plan)? {
        println!("task {} kernel {}: bank of {}", bank.task, bank.kernel, bank.members.len());
    }
    for set in apply_sharing(&sets, &plan)? {
        println!("task {} effective kernels {:?}", set.task, set.kernels.data());
    }

    let mut phi = PhiStore::<f32>::new();
    let key = PairKey::from(&records[0]);
    phi.insert(key, 1.5);
    let (forward, backward) = phi.phi(&key);
    println!("{}: phi = ({forward:.4}, {backward:.4})", key.checkpoint_name());
    Ok(())
}
