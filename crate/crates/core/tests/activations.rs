mod common;

use common::{pearson, random_tensor};
use mtal::data::{InputDims, TaskShape};
use mtal::network::{ArchSpec, MtalConfig, MtalSystem};
use mtal::similarity::{cosine_similarity, ThresholdConfig};

fn map(t: &mtal::Tensor<f64>, sample: usize, kernel: usize) -> Vec<f64> {
    let [_, k, h, w] = [t.shape()[0], t.shape()[1], t.shape()[2], t.shape()[3]];
    let start = (sample * k + kernel) * h * w;
    t.data()[start..start + h * w].to_vec()
}

#[test]
fn shared_kernels_produce_correlated_activations() {
    let shape = TaskShape { id: 0, dims: InputDims::new(1, 12, 12), classes: 3 };
    let cfg = MtalConfig { arch: ArchSpec::uniform(2, 4, 3, vec![1]), seed: 5, ..MtalConfig::default() };
    let mut sys: MtalSystem<f64> = MtalSystem::build(&[shape, TaskShape { id: 1, ..shape }], cfg).unwrap();
    // make task 1 kernel 2 a noisy copy of task 0 kernel 1
    let mut r = common::rng(5);
    let src = sys.networks[0].convs[0].kernels.value.select(1).unwrap();
    let noise = random_tensor(&mut r, src.shape(), 0.05);
    let dst = &mut sys.networks[1].convs[0].kernels.value;
    let n = src.len();
    for k in 0..n {
        dst.data_mut()[2 * n + k] = src.data()[k] + noise.data()[k];
    }
    let sim = cosine_similarity(&src, &dst.select(2).unwrap()).unwrap();
    assert!(sim >= 0.9, "constructed similarity {sim}");

    let plans = sys.compute_plans(&ThresholdConfig::new(0.4).unwrap()).unwrap();
    assert!(plans[0].entries.iter().any(|e| {
        let rec = &e.record;
        (rec.task_i, rec.kernel_p, rec.task_j, rec.kernel_q) == (0, 1, 1, 2)
    }));
    sys.set_plans(plans).unwrap();

    let x = random_tensor(&mut r, &[4, 1, 12, 12], 1.0);
    let maps = sys.activations(0, &[Some(x.clone()), Some(x)]).unwrap();
    let (a, b) = (maps[0].as_ref().unwrap(), maps[1].as_ref().unwrap());
    for s in 0..4 {
        let rho = pearson(&map(a, s, 1), &map(b, s, 2));
        assert!(rho >= 0.8, "sample {s}: correlation {rho}");
    }
}

#[test]
fn activations_skip_tasks_without_input() {
    let shape = TaskShape { id: 0, dims: InputDims::new(1, 8, 8), classes: 3 };
    let sys: MtalSystem<f64> = MtalSystem::build(&[shape, TaskShape { id: 1, ..shape }], MtalConfig::default()).unwrap();
    let x = random_tensor(&mut common::rng(0), &[2, 1, 8, 8], 1.0);
    let maps = sys.activations(1, &[None, Some(x)]).unwrap();
    assert!(maps[0].is_none());
    assert_eq!(maps[1].as_ref().unwrap().shape(), &[2, 8, 8, 8]);
    assert!(maps[1].as_ref().unwrap().data().iter().all(|&v| v >= 0.0));
}
