mod common;

use common::gradient_suite::tiny_system;
use common::{naive_conv2d, random_tensor};
use mtal::autodiff::{Graph, NodeId};
use mtal::data::{generate_tasks, InputDims, SplitMode, SyntheticTaskFamily, TaskData, TaskRequest, TaskShape};
use mtal::model::MultiTaskModel;
use mtal::network::{ArchSpec, MtalConfig, MtalSystem};
use mtal::sharing::SharingPlan;
use mtal::similarity::SimilarityRecord;
use mtal::trainer::{fit, task_loss, total_loss, TrainOptions};
use mtal::{Error, Tensor};

fn logits(sys: &MtalSystem<f64>, inputs: &[Option<Tensor<f64>>]) -> Vec<Option<Tensor<f64>>> {
    let mut g = Graph::new();
    let b = sys.bind(&mut g);
    let ids: Vec<Option<NodeId>> = inputs.iter().map(|x| x.as_ref().map(|x| g.leaf(x.clone()))).collect();
    let out = sys.forward(&mut g, &b, &ids).unwrap();
    out.into_iter().map(|o| o.map(|id| g.value(id).clone())).collect()
}

fn dense_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let (n, f, o) = (x.shape()[0], w.shape()[0], w.shape()[1]);
    let mut out = vec![0.0; n * o];
    for i in 0..n {
        for k in 0..o {
            out[i * o + k] = b.data()[k] + (0..f).map(|j| x.data()[i * f + j] * w.data()[j * o + k]).sum::<f64>();
        }
    }
    out
}

#[test]
fn forward_matches_hand_unrolled_composition() {
    let mut sys = tiny_system(5);
    let mut r = common::rng(5);
    let rho = 0.8;
    for p in sys.phi.params_mut() {
        p.value = Tensor::scalar(rho);
    }
    let x0 = random_tensor(&mut r, &[2, 1, 4, 4], 1.0);
    let x1 = random_tensor(&mut r, &[2, 1, 3, 5], 1.0);
    let got = logits(&sys, &[Some(x0.clone()), Some(x1.clone())]);

    let phi = 1.0 / (1.0 + (-rho).exp());
    let w0 = sys.networks[0].convs[0].kernels.value.clone();
    let w1 = sys.networks[1].convs[0].kernels.value.clone();
    // task 0 kernel 1 is paired with task 1 kernel 0; everything else is raw
    let mut eff0 = w0.clone();
    for k in 0..9 {
        eff0.data_mut()[9 + k] = phi * w0.data()[9 + k] + (1.0 - phi) * w1.data()[k];
    }
    for (t, (x, eff)) in [(x0, eff0), (x1, w1)].into_iter().enumerate() {
        let net = &sys.networks[t];
        let y = naive_conv2d(&x, &eff, &net.convs[0].bias.value, 1).map(|v| v.max(0.0));
        let flat = y.reshape(&[y.shape()[0], y.len() / y.shape()[0]]).unwrap();
        let want = dense_oracle(&flat, &net.head_weight.value, &net.head_bias.value);
        let have = got[t].as_ref().unwrap();
        assert_eq!(have.shape(), &[2, net.classes]);
        for (a, b) in have.data().iter().zip(&want) {
            assert!((a - b).abs() <= 1e-5, "task {t}: {a} vs {b}");
        }
    }
}

#[test]
fn empty_plan_forward_equals_independent_networks() {
    let shapes = [
        TaskShape { id: 0, dims: InputDims::new(1, 8, 8), classes: 3 },
        TaskShape { id: 1, dims: InputDims::new(2, 12, 8), classes: 5 },
    ];
    let cfg = MtalConfig { arch: ArchSpec::uniform(2, 3, 3, vec![1]), seed: 11, ..MtalConfig::default() };
    let joint: MtalSystem<f64> = MtalSystem::build(&shapes, cfg.clone()).unwrap();
    let mut r = common::rng(1);
    let xs = [random_tensor(&mut r, &[3, 1, 8, 8], 1.0), random_tensor(&mut r, &[3, 2, 12, 8], 1.0)];
    let together = logits(&joint, &[Some(xs[0].clone()), Some(xs[1].clone())]);
    for t in 0..2 {
        let alone: MtalSystem<f64> = MtalSystem::build(&shapes[t..=t], cfg.clone()).unwrap();
        let out = logits(&alone, &[Some(xs[t].clone())]);
        assert_eq!(out[0], together[t]);
    }
}

#[test]
fn identical_tasks_with_self_similar_plan_give_identical_logits() {
    let shape = TaskShape { id: 0, dims: InputDims::new(1, 6, 6), classes: 4 };
    let cfg = MtalConfig { arch: ArchSpec::uniform(2, 3, 3, vec![]), ..MtalConfig::default() };
    let mut sys: MtalSystem<f64> = MtalSystem::build(&[shape, TaskShape { id: 1, ..shape }], cfg).unwrap();
    sys.networks[1] = mtal::network::TaskNetwork { task: 1, ..sys.networks[0].clone() };
    let plans = (0..2)
        .map(|l| {
            let recs: Vec<SimilarityRecord> = (0..2)
                .flat_map(|i| (0..3).map(move |p| SimilarityRecord { layer: l, task_i: i, kernel_p: p, task_j: 1 - i, kernel_q: p, similarity: 1.0 }))
                .collect();
            SharingPlan::uniform(l, &recs, 0.5).unwrap()
        })
        .collect();
    sys.set_plans(plans).unwrap();
    let x = random_tensor(&mut common::rng(2), &[2, 1, 6, 6], 1.0);
    let out = logits(&sys, &[Some(x.clone()), Some(x)]);
    assert_eq!(out[0], out[1]);
}

#[test]
fn same_seed_gives_identical_initial_checkpoints() {
    let shapes = [
        TaskShape { id: 0, dims: InputDims::new(1, 16, 16), classes: 4 },
        TaskShape { id: 1, dims: InputDims::new(1, 28, 28), classes: 10 },
    ];
    let a: MtalSystem<f32> = MtalSystem::build(&shapes, MtalConfig::default()).unwrap();
    let b: MtalSystem<f32> = MtalSystem::build(&shapes, MtalConfig::default()).unwrap();
    assert_eq!(a.checkpoint().to_bytes(), b.checkpoint().to_bytes());
    let c: MtalSystem<f32> = MtalSystem::build(&shapes, MtalConfig { seed: 1, ..MtalConfig::default() }).unwrap();
    assert_ne!(a.checkpoint().to_bytes(), c.checkpoint().to_bytes());
    assert_ne!(a.networks[0].convs[0].kernels, a.networks[1].convs[0].kernels);
}

#[test]
fn heterogeneous_tasks_train_without_coercion() {
    let fam = SyntheticTaskFamily { examples: 40, ..SyntheticTaskFamily::default() };
    let specs = generate_tasks(
        &fam,
        &[TaskRequest::new(InputDims::new(1, 16, 16), 4), TaskRequest::new(InputDims::new(1, 28, 28), 10)],
    )
    .unwrap();
    let tasks: Vec<TaskData> = specs.iter().map(|s| TaskData::prepare(s, 0, SplitMode::Stratified).unwrap()).collect();
    let shapes: Vec<TaskShape> = tasks.iter().map(TaskShape::from).collect();
    let cfg = MtalConfig { batch_size: 8, ..MtalConfig::default() };
    let mut sys: MtalSystem<f32> = MtalSystem::build(&shapes, cfg.clone()).unwrap();
    let out = fit(&mut sys, &tasks, &TrainOptions::from_config(&cfg, 1)).unwrap();
    assert_eq!(out.accuracy.len(), 2);
    assert_eq!(out.state.history.task.len(), 2 * out.state.step as usize);
    assert!(out.state.history.total.iter().all(|t| t.1.is_finite()));
    assert_eq!(sys.networks[1].head_weight.value.shape(), &[8 * 7 * 7, 10]);
}

#[test]
fn architecture_errors_name_the_task() {
    let shapes = [
        TaskShape { id: 0, dims: InputDims::new(1, 16, 16), classes: 4 },
        TaskShape { id: 7, dims: InputDims::new(1, 6, 6), classes: 4 },
    ];
    match MtalSystem::<f32>::build(&shapes, MtalConfig::default()) {
        Err(Error::Architecture { task: 7, .. }) => {}
        other => panic!("expected an architecture error for task 7, got {other:?}"),
    }
}

/// Gradient of task 0's loss with respect to task 1's raw kernel.
fn cross_gradient(sys: &MtalSystem<f64>) -> f64 {
    let mut r = common::rng(8);
    let mut g = Graph::new();
    let b = sys.bind(&mut g);
    let x0 = g.leaf(random_tensor(&mut r, &[2, 1, 4, 4], 1.0));
    let out = sys.forward(&mut g, &b, &[Some(x0), None]).unwrap();
    let loss = task_loss(&mut g, out[0].unwrap(), &[0, 2], &sys.regularized(&b, 0), 0.1).unwrap();
    g.backward(loss).unwrap();
    let task1_kernel = b.params[sys.networks[0].convs.len() * 2 + 2];
    g.grad(task1_kernel).sum_squares_f64().sqrt()
}

#[test]
fn shared_pair_couples_gradients_across_tasks() {
    let mut sys = tiny_system(3);
    assert!(cross_gradient(&sys) > 0.0);
    sys.set_plans(vec![SharingPlan::empty(0)]).unwrap();
    assert_eq!(cross_gradient(&sys), 0.0);
}

#[test]
fn perturbing_partner_kernel_moves_logits_only_when_shared() {
    let x = random_tensor(&mut common::rng(6), &[1, 1, 4, 4], 1.0);
    for shared in [true, false] {
        let mut sys = tiny_system(6);
        if !shared {
            sys.set_plans(vec![SharingPlan::empty(0)]).unwrap();
        }
        let before = logits(&sys, &[Some(x.clone()), None]);
        sys.networks[1].convs[0].kernels.value.data_mut()[0] += 0.5;
        let after = logits(&sys, &[Some(x.clone()), None]);
        assert_eq!(before != after, shared);
    }
}

#[test]
fn total_gradient_is_sum_of_task_gradients() {
    let sys = tiny_system(9);
    let mut r = common::rng(9);
    let xs = [random_tensor(&mut r, &[2, 1, 4, 4], 1.0), random_tensor(&mut r, &[2, 1, 3, 5], 1.0)];
    let labels = [vec![1, 2], vec![0, 1]];
    // per-task backward oracle
    let grads_for = |which: &[usize]| -> Vec<Vec<f64>> {
        let mut g = Graph::new();
        let b = sys.bind(&mut g);
        let ids = [Some(g.leaf(xs[0].clone())), Some(g.leaf(xs[1].clone()))];
        let out = sys.forward(&mut g, &b, &ids).unwrap();
        let losses: Vec<NodeId> = which
            .iter()
            .map(|&t| task_loss(&mut g, out[t].unwrap(), &labels[t], &sys.regularized(&b, t), 0.1).unwrap())
            .collect();
        let root = total_loss(&mut g, &losses).unwrap();
        g.backward(root).unwrap();
        b.params.iter().map(|&p| g.grad(p).to_f64_vec()).collect()
    };
    let (a, c, both) = (grads_for(&[0]), grads_for(&[1]), grads_for(&[0, 1]));
    for ((ga, gc), gt) in a.iter().zip(&c).zip(&both) {
        for ((x, y), z) in ga.iter().zip(gc).zip(gt) {
            assert!((x + y - z).abs() <= 1e-12 * (1.0 + z.abs()));
        }
    }
}

#[test]
fn doubling_weights_quadruples_the_penalty() {
    let mut sys = tiny_system(2);
    let penalty = |sys: &MtalSystem<f64>| -> f64 {
        let mut g = Graph::new();
        let b = sys.bind(&mut g);
        let norms: Vec<NodeId> = sys.regularized(&b, 0).iter().map(|&p| g.sum_squares(p)).collect();
        let s = g.add(&norms).unwrap();
        let s = g.scale(s, 0.1);
        g.value(s).item()
    };
    let before = penalty(&sys);
    // task 0 owns the first four parameters
    for p in sys.params_mut().into_iter().take(4) {
        p.value = p.value.map(|v| 2.0 * v);
    }
    assert_eq!(penalty(&sys), 4.0 * before);
}

#[test]
fn zero_weights_give_log_class_count() {
    let mut g = Graph::<f64>::new();
    let logits = g.leaf(Tensor::zeros(&[3, 10]));
    let w = g.leaf(Tensor::zeros(&[4, 4]));
    let l = task_loss(&mut g, logits, &[0, 5, 9], &[w], 0.1).unwrap();
    assert!((g.value(l).item() - 10f64.ln()).abs() < 1e-12);
}

#[test]
fn total_loss_sums() {
    let mut g = Graph::<f64>::new();
    let a = g.leaf(Tensor::scalar(1.0));
    let b = g.leaf(Tensor::scalar(2.5));
    let t = total_loss(&mut g, &[a, b]).unwrap();
    assert_eq!(g.value(t).item(), 3.5);
    let single = total_loss(&mut g, &[a]).unwrap();
    assert_eq!(g.value(single).item(), 1.0);
}

#[test]
fn trainable_state_is_raw_kernels_heads_biases_and_phi() {
    let mut sys = tiny_system(4);
    let phi_count = sys.phi.len();
    assert_eq!(phi_count, 1);
    assert_eq!(sys.params_mut().len(), 2 * 4 + phi_count);
    let names: Vec<String> = sys.checkpoint().names().map(String::from).collect();
    assert_eq!(names.len(), 2 * 4 + phi_count);
    assert!(names.iter().all(|n| n.starts_with("task") || n.starts_with("phi/")));

    let before = sys.checkpoint();
    let mut r = common::rng(4);
    let batches = vec![
        (random_tensor(&mut r, &[2, 1, 4, 4], 1.0), vec![0, 1]),
        (random_tensor(&mut r, &[2, 1, 3, 5], 1.0), vec![1, 0]),
    ];
    let mut sgd = mtal::autodiff::SgdState::default();
    mtal::trainer::train_step(&mut sys, &batches, 0.1, &mut sgd).unwrap();
    let after = sys.checkpoint();
    for n in before.names().filter(|n| n.starts_with("task")) {
        assert_ne!(before.get(n), after.get(n), "{n} did not move");
    }
}
