//! Config-driven experiment runs: method comparisons, threshold sweeps,
//! sharing reports, activation dumps and dataset generation.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::baselines::{metrics_csv, run_baseline, Method, MethodRun, RunSettings};
use crate::checkpoint::Checkpoint;
use crate::data::{write_dataset, TaskData, TaskShape};
use crate::error::{Error, Result};
use crate::network::{MtalSystem, Sharing};
use crate::sharing::SharingReport;
use crate::similarity::{similarity_csv, ThresholdConfig};
use crate::tensor::Tensor;

pub use config::{ExperimentConfig, SweepConfig, TaskSource};

/// Split and normalized tasks for one run seed.
pub fn prepare_tasks(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<TaskData>> {
    cfg.load_tasks(seed)?
        .iter()
        .map(|spec| TaskData::prepare(spec, seed, cfg.split).map_err(|e| e.in_task(spec.id)))
        .collect()
}

/// Runs `jobs` on a pool of `threads` workers (all cores when `None`), keeping input order.
pub fn parallel_map<I, O, F>(threads: Option<usize>, jobs: Vec<I>, f: F) -> Result<Vec<O>>
where
    I: Send,
    O: Send,
    F: Fn(I) -> Result<O> + Send + Sync,
{
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::config("MTAL_THREADS", e.to_string()))?;
    pool.install(|| jobs.into_par_iter().map(f).collect())
}

fn run_dir(out: &Path, method: Method, seed: u64) -> PathBuf {
    out.join(method.name()).join(format!("seed{seed}"))
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `method,task,seed,accuracy` rows per seed, then `mean` and `std` rows per (method, task).
pub fn results_csv(runs: &[MethodRun], methods: &[Method]) -> String {
    let mut s = String::from("method,task,seed,accuracy\n");
    for &m in methods {
        let of_method: Vec<&MethodRun> = runs.iter().filter(|r| r.method == m).collect();
        let Some(first) = of_method.first() else { continue };
        for &(task, _) in &first.accuracy {
            let mut accs = Vec::with_capacity(of_method.len());
            for r in &of_method {
                if let Some(&(_, a)) = r.accuracy.iter().find(|a| a.0 == task) {
                    let _ = writeln!(s, "{m},{task},{},{a}", r.seed);
                    accs.push(a);
                }
            }
            let (mean, std) = mean_std(&accs);
            let _ = writeln!(s, "{m},{task},mean,{mean}");
            let _ = writeln!(s, "{m},{task},std,{std}");
        }
    }
    s
}

fn write_run(dir: &Path, run: &MethodRun) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("losses.csv"), run.history.task_csv())?;
    fs::write(dir.join("total.csv"), run.history.total_csv())?;
    if let Some(r) = &run.report {
        fs::write(dir.join("sharing_report.csv"), r.to_csv())?;
    }
    run.checkpoint.save(dir.join("checkpoint.bin"))
}

#[derive(Clone, Debug)]
pub struct ExperimentSummary {
    pub runs: Vec<MethodRun>,
    pub out: PathBuf,
}

impl ExperimentSummary {
    /// Mean test accuracy over seeds and tasks for one method.
    pub fn mean_accuracy(&self, method: Method) -> Option<f64> {
        let accs: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.method == method)
            .flat_map(|r| r.accuracy.iter().map(|a| a.1))
            .collect();
        (!accs.is_empty()).then(|| mean_std(&accs).0)
    }
}

/// Trains every (method, seed) cell and writes per-run and aggregate files into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<ExperimentSummary> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let cells: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let runs = parallel_map(threads, cells, |(method, seed)| {
        log::info!("training {method} with seed {seed}");
        let tasks = prepare_tasks(cfg, seed)?;
        let dir = run_dir(out, method, seed);
        let settings = RunSettings {
            epochs: cfg.epochs,
            checkpoint_every: cfg.checkpoint_every,
            out_dir: cfg.checkpoint_every.map(|_| dir.clone()),
        };
        let run = run_baseline(method, &tasks, &cfg.mtal_for(seed), &settings)?;
        write_run(&dir, &run)?;
        Ok(run)
    })?;

    fs::write(out.join("results.csv"), results_csv(&runs, &cfg.methods))?;
    fs::write(out.join("metrics.csv"), metrics_csv(&runs))?;
    let mut losses = String::from("method,seed,step,task_id,loss\n");
    let mut totals = String::from("method,seed,step,total_loss\n");
    let mut sharing = String::from("method,seed,layer_name,ratio_percent\n");
    for r in &runs {
        for (step, t, l) in &r.history.task {
            let _ = writeln!(losses, "{},{},{step},{t},{l}", r.method, r.seed);
        }
        for (step, l) in &r.history.total {
            let _ = writeln!(totals, "{},{},{step},{l}", r.method, r.seed);
        }
        if let Some(rep) = &r.report {
            for line in rep.to_csv().lines().skip(1) {
                let _ = writeln!(sharing, "{},{},{line}", r.method, r.seed);
            }
        }
    }
    fs::write(out.join("losses.csv"), losses)?;
    fs::write(out.join("total.csv"), totals)?;
    fs::write(out.join("sharing_report.csv"), sharing)?;
    Ok(ExperimentSummary {
        runs,
        out: out.to_path_buf(),
    })
}

/// One row of `sweep.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub delta: f64,
    pub task: usize,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Total sharing ratio (percent) of the untrained networks at this threshold, averaged over seeds.
    pub sharing_ratio: f64,
    /// Total sharing ratio (percent) after training at this threshold, averaged over seeds.
    pub final_sharing_ratio: f64,
}

pub const SWEEP_CSV_HEADER: &str =
    "delta,task,mean_accuracy,std_accuracy,sharing_ratio_percent,final_sharing_ratio_percent";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.delta, r.task, r.mean_accuracy, r.std_accuracy, r.sharing_ratio, r.final_sharing_ratio
        );
    }
    s
}

fn system_for(cfg: &ExperimentConfig, seed: u64, tasks: &[TaskShape]) -> Result<MtalSystem<f32>> {
    MtalSystem::build(tasks, cfg.mtal_for(seed))
}

/// Total sharing ratio in percent of `sys`'s current kernels at each threshold.
pub fn ratios_by_delta(sys: &MtalSystem<f32>, deltas: &[f64]) -> Result<Vec<(f64, SharingReport)>> {
    deltas
        .iter()
        .map(|&d| {
            let plans = sys.compute_plans(&ThresholdConfig::new(d)?)?;
            Ok((d, sys.report_for(&plans)))
        })
        .collect()
}

/// Trains MTAL at every threshold for `cfg.sweep.epochs` epochs per seed and writes `sweep.csv`.
pub fn sweep_delta(cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let deltas = cfg.sweep.deltas.clone();
    let cells: Vec<(usize, u64)> = (0..deltas.len())
        .flat_map(|d| cfg.seeds.iter().map(move |&s| (d, s)))
        .collect();
    // (accuracy per task, initial ratio, final ratio) per cell
    let results = parallel_map(threads, cells.clone(), |(d, seed)| {
        let delta = deltas[d];
        let tasks = prepare_tasks(cfg, seed)?;
        let shapes: Vec<TaskShape> = tasks.iter().map(TaskShape::from).collect();
        let initial = system_for(cfg, seed, &shapes)?;
        let initial_ratio = ratios_by_delta(&initial, &[delta])?[0].1.total_ratio();
        let mut mcfg = cfg.mtal_for(seed);
        mcfg.sharing = Sharing::Adaptive(ThresholdConfig::new(delta)?);
        log::info!("sweep delta {delta} seed {seed}");
        let run = run_baseline(Method::Mtal, &tasks, &mcfg, &RunSettings::epochs(cfg.sweep.epochs))?;
        let final_ratio = run.report.as_ref().map_or(0.0, |r| r.total_ratio());
        Ok((run.accuracy, initial_ratio, final_ratio))
    })?;

    let mut rows = Vec::new();
    for (d, &delta) in deltas.iter().enumerate() {
        let cell: Vec<_> = cells
            .iter()
            .zip(&results)
            .filter(|((cd, _), _)| *cd == d)
            .map(|(_, r)| r)
            .collect();
        let init: Vec<f64> = cell.iter().map(|r| 100.0 * r.1).collect();
        let fin: Vec<f64> = cell.iter().map(|r| 100.0 * r.2).collect();
        for (k, &(task, _)) in cell[0].0.iter().enumerate() {
            let accs: Vec<f64> = cell.iter().map(|r| r.0[k].1).collect();
            let (mean, std) = mean_std(&accs);
            rows.push(SweepRow {
                delta,
                task,
                mean_accuracy: mean,
                std_accuracy: std,
                sharing_ratio: mean_std(&init).0,
                final_sharing_ratio: mean_std(&fin).0,
            });
        }
    }
    fs::write(out.join("sweep.csv"), sweep_csv(&rows))?;
    Ok(rows)
}

/// MTAL networks for `seed`, restored from `checkpoint` when given.
pub fn load_system(cfg: &ExperimentConfig, seed: u64, checkpoint: Option<&Path>) -> Result<(MtalSystem<f32>, Vec<TaskData>)> {
    let tasks = prepare_tasks(cfg, seed)?;
    let shapes: Vec<TaskShape> = tasks.iter().map(TaskShape::from).collect();
    let mut sys = system_for(cfg, seed, &shapes)?;
    if let Some(p) = checkpoint {
        sys.load_checkpoint(&Checkpoint::load(p)?)?;
    }
    Ok((sys, tasks))
}

/// Writes `sharing_report.csv` and `similarity.csv` at the configured threshold and
/// `sharing_by_delta.csv` over the sweep thresholds.
pub fn report_sharing(cfg: &ExperimentConfig, seed: u64, checkpoint: Option<&Path>, out: &Path) -> Result<SharingReport> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let (mut sys, _) = load_system(cfg, seed, checkpoint)?;
    sys.refresh_plans()?;
    let report = sys.sharing_report();
    fs::write(out.join("sharing_report.csv"), report.to_csv())?;
    let records: Vec<_> = sys.plans().iter().flat_map(|p| p.entries.iter().map(|e| e.record)).collect();
    fs::write(out.join("similarity.csv"), similarity_csv(&records))?;
    let mut by_delta = String::from("delta,layer_name,ratio_percent\n");
    for (d, rep) in ratios_by_delta(&sys, &cfg.sweep.deltas)? {
        for line in rep.to_csv().lines().skip(1) {
            let _ = writeln!(by_delta, "{d},{line}");
        }
    }
    fs::write(out.join("sharing_by_delta.csv"), by_delta)?;
    Ok(report)
}

/// One activation map as CSV: `H` lines of `W` comma-separated values.
pub fn grid_csv(map: &[f32], width: usize) -> String {
    let mut s = String::new();
    for row in map.chunks(width.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

/// Writes `task{i}/sample{s}/kernel{p}.csv` for the first `samples` test inputs of every task.
/// Returns the number of files written.
pub fn dump_activations(
    cfg: &ExperimentConfig,
    seed: u64,
    checkpoint: Option<&Path>,
    layer: usize,
    samples: usize,
    out: &Path,
) -> Result<usize> {
    cfg.validate()?;
    let (mut sys, tasks) = load_system(cfg, seed, checkpoint)?;
    sys.refresh_plans()?;
    let inputs: Vec<Option<Tensor<f32>>> = tasks
        .iter()
        .map(|t| {
            let idx: Vec<usize> = (0..samples.min(t.test.len())).collect();
            Some(t.test.batch::<f32>(&idx).0)
        })
        .collect();
    let maps = sys.activations(layer, &inputs)?;
    write_activation_maps(&tasks.iter().map(|t| t.id).collect::<Vec<_>>(), &maps, out)
}

/// Writes maps `[B, m, H, W]` per task as one CSV grid per (sample, kernel).
pub fn write_activation_maps(task_ids: &[usize], maps: &[Option<Tensor<f32>>], out: &Path) -> Result<usize> {
    let mut files = 0;
    for (&task, m) in task_ids.iter().zip(maps) {
        let Some(m) = m else { continue };
        let &[b, k, h, w] = m.shape() else {
            return Err(Error::shape("activation maps", &[0, 0, 0, 0], m.shape()));
        };
        for s in 0..b {
            let dir = out.join(format!("task{task}")).join(format!("sample{s}"));
            fs::create_dir_all(&dir)?;
            for p in 0..k {
                let start = (s * k + p) * h * w;
                fs::write(dir.join(format!("kernel{p}.csv")), grid_csv(&m.data()[start..start + h * w], w))?;
                files += 1;
            }
        }
    }
    Ok(files)
}

/// Writes every task's raw dataset for `seed` as `task{i}/` in the on-disk format.
pub fn gen_data(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    cfg.load_tasks(seed)?
        .iter()
        .map(|spec| {
            let dir = out.join(format!("task{}", spec.id));
            write_dataset(&dir, &spec.dataset)?;
            Ok(dir)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert_eq!(s, 2.0);
    }

    #[test]
    fn grid_rows() {
        assert_eq!(grid_csv(&[1.0, 2.0, 3.0, 4.5], 2), "1,2\n3,4.5\n");
    }
}
