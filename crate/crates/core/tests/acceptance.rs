//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use mtal::autodiff::{sgd_step, Graph, SgdState};
use mtal::baselines::{run_mtal, run_single, Method, MethodRun, RunSettings};
use mtal::checkpoint::Checkpoint;
use mtal::data::{load_dataset, write_dataset, InputDims, SyntheticTaskFamily, TaskRequest};
use mtal::experiments::{self, ExperimentConfig, ExperimentSummary};
use mtal::model::MultiTaskModel;
use mtal::network::{MtalConfig, Sharing};
use mtal::sharing::{aggregate_pair, bank_average, KernelBank, PairKey, PhiStore, SharingPlan};
use mtal::similarity::{cosine_similarity, nominate_pairs, KernelSet, ThresholdConfig};
use mtal::trainer::task_loss;
use mtal::Tensor;
use rand::Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(elapsed.as_secs() < limit_s, || format!("took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()))
}

fn threads() -> Option<usize> {
    std::env::var("MTAL_THREADS").ok().and_then(|v| v.parse().ok())
}

fn gradient_suite() -> Check {
    let start = Instant::now();
    let results = common::gradient_suite::run(20);
    let elapsed = start.elapsed();
    let worst = results.iter().cloned().fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    for (op, err) in &results {
        ensure(*err <= 1e-3, || format!("{op}: relative error {err:.3e}"))?;
    }
    within(elapsed, 120)?;
    Ok(format!(
        "{} ops x 20 instances, worst {} {:.2e}, {:.1}s",
        results.len(),
        worst.0,
        worst.1,
        elapsed.as_secs_f64()
    ))
}

fn similarity_axioms() -> Check {
    let mut r = common::rng(2);
    let mut max_scale_dev = 0.0f64;
    for _ in 0..500 {
        let len = r.random_range(1..=27);
        let a = common::random_tensor(&mut r, &[len], 2.0);
        let b = common::random_tensor(&mut r, &[len], 2.0);
        let s = cosine_similarity(&a, &a).unwrap();
        ensure(s == 1.0, || format!("self-similarity {s}"))?;
        let ab = cosine_similarity(&a, &b).unwrap();
        ensure(ab == cosine_similarity(&b, &a).unwrap(), || "asymmetric".into())?;
        ensure((-1.0..=1.0).contains(&ab), || format!("unclamped {ab}"))?;
        let c = r.random_range(1e-3..1e3);
        let scaled = cosine_similarity(&a.map(|v| c * v), &b).unwrap();
        max_scale_dev = max_scale_dev.max((scaled - ab).abs());
    }
    ensure(max_scale_dev <= 1e-6, || format!("scale deviation {max_scale_dev:.2e}"))?;
    let mut instances = 0;
    for seed in 0..400u64 {
        let mut r = common::rng(1000 + seed);
        let tasks = r.random_range(2..=3);
        let m = r.random_range(1..=4);
        let len = r.random_range(1..=9);
        let delta = r.random_range(0.1..=0.9);
        let sets: Vec<KernelSet<f64>> = (0..tasks)
            .map(|t| KernelSet::new(0, t, common::random_tensor(&mut r, &[m, 1, 1, len], 1.0)).unwrap())
            .collect();
        let got = nominate_pairs(&sets, &ThresholdConfig::new(delta).unwrap()).unwrap();
        common::check_nomination(&sets, delta, &got).map_err(|e| format!("seed {seed}: {e}"))?;
        instances += 1;
    }
    Ok(format!("500 axiom draws, scale deviation {max_scale_dev:.1e}, {instances} nomination instances"))
}

fn reduction_identity() -> Check {
    let start = Instant::now();
    let fam = SyntheticTaskFamily { examples: 200, ..SyntheticTaskFamily::default() };
    let reqs = [TaskRequest::new(InputDims::new(1, 16, 16), 4), TaskRequest::new(InputDims::new(1, 28, 28), 10)];
    let tasks = common::prepared_tasks(&fam, &reqs, 0);
    let cfg = MtalConfig { seed: 0, ..MtalConfig::default() };
    let settings = RunSettings::epochs(5);
    let joint = run_mtal(&tasks, &MtalConfig { sharing: Sharing::Disabled, ..cfg.clone() }, &settings).unwrap();
    let single = run_single(&tasks, &cfg, &settings).unwrap();
    ensure(joint.history.task == single.history.task, || "per-task losses differ".into())?;
    ensure(joint.history.total == single.history.total, || "total losses differ".into())?;
    ensure(joint.checkpoint.to_bytes() == single.checkpoint.to_bytes(), || "checkpoints differ".into())?;
    within(start.elapsed(), 300)?;
    Ok(format!("{} steps, losses and checkpoints byte-equal, {:.1}s", joint.history.total.len(), start.elapsed().as_secs_f64()))
}

fn sharing_algebra() -> Check {
    let mut store = PhiStore::<f32>::new();
    let keys: Vec<PairKey> = (0..8)
        .map(|p| PairKey { layer: p % 2, task_i: 0, kernel_p: p, task_j: 1, kernel_q: 7 - p })
        .collect();
    keys.iter().for_each(|k| {
        store.entry(*k);
    });
    let mut sgd = SgdState::new(0.5).unwrap();
    let mut r = common::rng(4);
    for _ in 0..1000 {
        for p in store.params_mut() {
            p.grad = Tensor::scalar(r.random_range(-4.0f32..4.0));
        }
        let mut params: Vec<_> = store.params_mut().collect();
        sgd_step(&mut params, &mut sgd);
    }
    for k in &keys {
        let (f, b) = store.phi(k);
        ensure(f + b == 1.0, || format!("{k:?}: {f} + {b} != 1"))?;
    }
    for _ in 0..500 {
        let a = common::random_tensor(&mut r, &[3, 3, 3], 5.0);
        let b = common::random_tensor(&mut r, &[3, 3, 3], 5.0);
        let phi = r.random_range(0.0..=1.0);
        let out = aggregate_pair(&a, &b, phi).unwrap();
        for ((o, x), y) in out.data().iter().zip(a.data()).zip(b.data()) {
            ensure(*o >= x.min(*y) - 1e-12 && *o <= x.max(*y) + 1e-12, || format!("{o} outside [{x}, {y}]"))?;
        }
    }
    for k in 1..=8 {
        let t = common::random_tensor(&mut r, &[2, 3, 3], 3.0).cast::<f32>();
        let bank = KernelBank { layer: 0, task: 0, kernel: 0, members: vec![t.clone(); k] };
        let avg = bank_average(&bank).unwrap();
        let dev = avg.data().iter().zip(t.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        ensure(dev <= 1e-7, || format!("bank of {k}: deviation {dev:e}"))?;
    }
    Ok("phi sums exact after 1000 steps, 500 convexity draws, banks of 1..8".into())
}

fn cross_gradient(shared: bool) -> f64 {
    let mut sys = common::gradient_suite::tiny_system(8);
    if !shared {
        sys.set_plans(vec![SharingPlan::empty(0)]).unwrap();
    }
    let mut r = common::rng(8);
    let mut g = Graph::new();
    let b = sys.bind(&mut g);
    let x = g.leaf(common::random_tensor(&mut r, &[3, 1, 4, 4], 1.0));
    let out = sys.forward(&mut g, &b, &[Some(x), None]).unwrap();
    let loss = task_loss(&mut g, out[0].unwrap(), &[0, 1, 2], &sys.regularized(&b, 0), 0.1).unwrap();
    g.backward(loss).unwrap();
    // task 1's raw conv kernel follows task 0's four parameters
    g.grad(b.params[4]).sum_squares_f64().sqrt()
}

fn coupling() -> Check {
    let (with, without) = (cross_gradient(true), cross_gradient(false));
    ensure(with > 0.0, || "no gradient through the shared pair".into())?;
    ensure(without == 0.0, || format!("gradient {without:e} without a pair"))?;
    Ok(format!("norm {with:.3e} shared, exactly 0 unshared"))
}

const TRANSFER: &str = "\
[experiment]
methods = mtal, single, multi-hard
seeds = 0, 1, 2, 3, 4
epochs = 50

[mtal]
delta = DELTA

[synthetic]
relatedness = R
examples = 300

[task.0]
dims = 1x16x16
classes = 4

[task.1]
dims = 1x16x16
classes = 6
";

fn transfer_run(r: f64, delta: f64, methods: &str, out: &Path) -> Result<(ExperimentSummary, Duration), String> {
    let text = TRANSFER
        .replace("DELTA", &delta.to_string())
        .replace("R\n", &format!("{r}\n"))
        .replace("mtal, single, multi-hard", methods);
    let cfg = ExperimentConfig::from_str(&text, out).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let summary = experiments::run_experiment(&cfg, out, threads()).map_err(|e| e.to_string())?;
    Ok((summary, start.elapsed()))
}

fn mean_of(s: &ExperimentSummary, m: Method) -> f64 {
    s.mean_accuracy(m).expect("method was run")
}

fn monotone_compression(related: &ExperimentSummary, out: &Path) -> Check {
    let cfg = ExperimentConfig::from_str(&TRANSFER.replace("DELTA", "0.4").replace("R\n", "0.9\n"), out).unwrap();
    let (sys, _) = experiments::load_system(&cfg, 0, Some(&related.out.join("mtal/seed0/checkpoint.bin"))).unwrap();
    let deltas: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
    let ratios: Vec<f64> = experiments::ratios_by_delta(&sys, &deltas)
        .unwrap()
        .iter()
        .map(|(_, r)| 100.0 * r.total_ratio())
        .collect();
    ensure(ratios.windows(2).all(|w| w[1] <= w[0]), || format!("ratios {ratios:?}"))?;
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.1}")).collect();
    Ok(format!("total % over delta 0.1..0.9: {}", shown.join(" ")))
}

fn related_transfer(s: &ExperimentSummary, elapsed: Duration) -> Check {
    let (mtal, single, hard) = (mean_of(s, Method::Mtal), mean_of(s, Method::Single), mean_of(s, Method::MultiHard));
    let detail = format!("mtal {mtal:.4}, single {single:.4}, hard-shared {hard:.4}, {:.0}s", elapsed.as_secs_f64());
    ensure(mtal >= single, || format!("{detail}: mtal below single"))?;
    ensure(mtal >= hard - 0.02, || format!("{detail}: mtal more than 2 points below hard-shared"))?;
    within(elapsed, 1200)?;
    Ok(detail)
}

fn unrelated_transfer(s: &ExperimentSummary) -> Check {
    let (mtal, single) = (mean_of(s, Method::Mtal), mean_of(s, Method::Single));
    let detail = format!("mtal {mtal:.4}, single {single:.4}");
    ensure(mtal >= single - 0.02, || format!("{detail}: more than 2 points of negative transfer"))?;
    Ok(detail)
}

fn moving_average(xs: &[f64], end: usize, window: usize) -> f64 {
    let lo = (end + 1).saturating_sub(window);
    xs[lo..=end].iter().sum::<f64>() / (end + 1 - lo) as f64
}

fn convergence(s: &ExperimentSummary) -> Check {
    let run: &MethodRun = s.runs.iter().find(|r| r.method == Method::Mtal && r.seed == 0).unwrap();
    let totals: Vec<f64> = run.history.total.iter().map(|t| t.1).collect();
    ensure(totals.len() > 200, || format!("only {} steps", totals.len()))?;
    let (early, late) = (moving_average(&totals, 20, 50), moving_average(&totals, 200, 50));
    ensure(late < early, || format!("moving average {early:.4} at step 20, {late:.4} at step 200"))?;
    Ok(format!("moving average {early:.4} at step 20 -> {late:.4} at step 200"))
}

const TINY: &str = "\
[experiment]
methods = mtal, single, cross-stitch
seeds = 0, 1
epochs = 2

[architecture]
kernels = 4
layers = 2
pool_after = 1

[synthetic]
examples = 40

[task.0]
dims = 1x8x8
classes = 3

[task.1]
dims = 1x8x8
classes = 2
";

fn format_round_trips(dir: &Path) -> Check {
    let mut r = common::rng(10);
    let mut c = Checkpoint::new();
    for k in 0..6 {
        let t = common::random_tensor(&mut r, &[k + 1, 3, 2], 10.0).cast::<f32>();
        c.push(format!("t{k}"), t);
    }
    c.push("special", Tensor::new(vec![4], vec![f32::MIN_POSITIVE, -0.0, f32::MAX, 1e-42]).unwrap());
    c.save(dir.join("c.bin")).map_err(|e| e.to_string())?;
    let back = Checkpoint::load(dir.join("c.bin")).map_err(|e| e.to_string())?;
    ensure(back.to_bytes() == c.to_bytes(), || "checkpoint bytes differ".into())?;

    let spec = mtal::data::generate_tasks(
        &SyntheticTaskFamily { examples: 50, ..SyntheticTaskFamily::default() },
        &[TaskRequest::new(InputDims::new(3, 7, 5), 4)],
    )
    .unwrap()
    .remove(0);
    write_dataset(dir.join("ds"), &spec.dataset).map_err(|e| e.to_string())?;
    let loaded = load_dataset(dir.join("ds")).map_err(|e| e.to_string())?;
    let bits = |d: &mtal::data::Dataset| d.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    ensure(bits(&loaded) == bits(&spec.dataset) && loaded == spec.dataset, || "dataset differs".into())?;

    let cfg = ExperimentConfig::from_str(TINY, dir).unwrap();
    let a = experiments::run_experiment(&cfg, &dir.join("a"), threads()).map_err(|e| e.to_string())?;
    let b = experiments::run_experiment(&cfg, &dir.join("b"), threads()).map_err(|e| e.to_string())?;
    let read = |s: &ExperimentSummary| std::fs::read(s.out.join("results.csv")).unwrap();
    ensure(read(&a) == read(&b), || "results.csv differs between identical runs".into())?;
    Ok("checkpoint, dataset and results.csv byte-identical".into())
}

fn report(n: usize, f: impl FnOnce() -> Check) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    match &result {
        Ok(detail) => println!("criterion {n}: PASS ({detail})"),
        Err(why) => println!("criterion {n}: FAIL ({why})"),
    }
    result.is_ok()
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let mut ok = true;
    ok &= report(1, gradient_suite);
    ok &= report(2, similarity_axioms);
    ok &= report(3, reduction_identity);
    ok &= report(4, sharing_algebra);
    ok &= report(5, coupling);

    let related = transfer_run(0.9, 0.4, "mtal, single, multi-hard", &dir.path().join("related"));
    let unrelated = transfer_run(0.0, 0.55, "mtal, single", &dir.path().join("unrelated"));
    ok &= report(6, || monotone_compression(&related.as_ref()?.0, dir.path()));
    ok &= report(7, || {
        let (s, t) = related.as_ref()?;
        related_transfer(s, *t)
    });
    ok &= report(8, || unrelated_transfer(&unrelated.as_ref()?.0));
    ok &= report(9, || convergence(&related.as_ref()?.0));
    ok &= report(10, || format_round_trips(dir.path()));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
