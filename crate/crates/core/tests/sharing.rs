mod common;

use mtal::autodiff::{sgd_step, Graph, SgdState};
use mtal::sharing::{aggregate_pair, apply_sharing, bank_average, KernelBank, PairKey, PhiStore, SharingPlan};
use mtal::similarity::{KernelSet, SimilarityRecord};
use mtal::Tensor;
use proptest::prelude::*;

proptest! {
    #[test]
    fn aggregate_pair_is_elementwise_convex(
        a in prop::collection::vec(-10.0f64..10.0, 18),
        b in prop::collection::vec(-10.0f64..10.0, 18),
        phi in 0.0f64..=1.0,
    ) {
        let ta = Tensor::from_f64(&[2, 3, 3], &a).unwrap();
        let tb = Tensor::from_f64(&[2, 3, 3], &b).unwrap();
        let out = aggregate_pair(&ta, &tb, phi).unwrap();
        for ((o, x), y) in out.data().iter().zip(&a).zip(&b) {
            let (lo, hi) = (x.min(*y), x.max(*y));
            prop_assert!(*o >= lo - 1e-12 && *o <= hi + 1e-12);
            prop_assert!((o - (phi * x + (1.0 - phi) * y)).abs() <= 1e-12);
        }
    }

    #[test]
    fn bank_of_identical_members_is_unchanged(v in prop::collection::vec(-3.0f32..3.0, 9), k in 1usize..8) {
        let t = Tensor::new(vec![1, 3, 3], v).unwrap();
        let bank = KernelBank { layer: 0, task: 0, kernel: 0, members: vec![t.clone(); k] };
        let avg = bank_average(&bank).unwrap();
        for (a, b) in avg.data().iter().zip(t.data()) {
            prop_assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn phi_halves_sum_to_one(rho in -30.0f32..30.0) {
        let mut store = PhiStore::<f32>::new();
        let key = PairKey { layer: 0, task_i: 0, kernel_p: 0, task_j: 1, kernel_q: 0 };
        store.insert(key, rho);
        let (f, b) = store.phi(&key);
        prop_assert_eq!(f + b, 1.0);
    }
}

#[test]
fn phi_sum_stays_exact_through_a_thousand_steps() {
    let mut store = PhiStore::<f32>::new();
    let keys: Vec<PairKey> = (0..5)
        .map(|p| PairKey { layer: 1, task_i: 0, kernel_p: p, task_j: 1, kernel_q: 4 - p })
        .collect();
    for k in &keys {
        store.entry(*k);
    }
    let mut sgd = SgdState::new(0.5).unwrap();
    let mut r = common::rng(4);
    for _ in 0..1000 {
        for p in store.params_mut() {
            p.grad = Tensor::scalar(rand::Rng::random_range(&mut r, -4.0f32..4.0));
        }
        let mut params: Vec<_> = store.params_mut().collect();
        sgd_step(&mut params, &mut sgd);
    }
    assert_eq!(sgd.steps, 1000);
    for k in &keys {
        let (f, b) = store.phi(k);
        assert_eq!(f + b, 1.0);
    }
}

#[test]
fn empty_plan_returns_sets_unchanged() {
    let mut r = common::rng(1);
    let sets: Vec<KernelSet<f64>> = (0..2)
        .map(|t| KernelSet::new(0, t, common::random_tensor(&mut r, &[3, 2, 3, 3], 1.0)).unwrap())
        .collect();
    let out = apply_sharing(&sets, &SharingPlan::empty(0)).unwrap();
    assert_eq!(out, sets);
}

#[test]
fn one_pair_touches_only_its_kernel() {
    let mut r = common::rng(2);
    let sets: Vec<KernelSet<f64>> = (0..2)
        .map(|t| KernelSet::new(0, t, common::random_tensor(&mut r, &[3, 1, 3, 3], 1.0)).unwrap())
        .collect();
    let rec = SimilarityRecord { layer: 0, task_i: 0, kernel_p: 2, task_j: 1, kernel_q: 0, similarity: 0.7 };
    let out = apply_sharing(&sets, &SharingPlan::uniform(0, &[rec], 0.25).unwrap()).unwrap();
    assert_eq!(out[1], sets[1]);
    for p in 0..3 {
        let got = &out[0].kernels.data()[p * 9..(p + 1) * 9];
        let own = sets[0].kernel_slice(p);
        if p == 2 {
            let partner = sets[1].kernel_slice(0);
            for k in 0..9 {
                assert!((got[k] - (0.25 * own[k] + 0.75 * partner[k])).abs() < 1e-12);
            }
        } else {
            assert_eq!(got, own);
        }
    }
}

#[test]
fn graph_and_tensor_aggregation_agree() {
    let mut r = common::rng(3);
    let a = common::random_tensor(&mut r, &[2, 3, 3], 1.0);
    let b = common::random_tensor(&mut r, &[2, 3, 3], 1.0);
    let mut g = Graph::<f64>::new();
    let (na, nb, np) = (g.leaf(a.clone()), g.leaf(b.clone()), g.constant(0.3));
    let y = g.convex_combine(na, nb, np).unwrap();
    assert_eq!(g.value(y), &aggregate_pair(&a, &b, 0.3).unwrap());
}
