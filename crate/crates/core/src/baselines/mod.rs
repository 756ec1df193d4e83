//! Reference strategies: single-task, hard-shared, cross-stitch and sub-network routing.

mod cross_stitch;
mod hard_shared;
mod snr;

pub use cross_stitch::{cross_stitch, CrossStitchNet, CrossStitchUnit};
pub use hard_shared::{common_dims, resize_task, HardSharedNet};
pub use snr::{snr_route, snr_route_one, SnrNet, SnrRouter, DEFAULT_ROUTED_WIDTH, DEFAULT_SUBNETWORKS};

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::checkpoint::Checkpoint;
use crate::data::{TaskData, TaskShape};
use crate::error::{Error, Result};
use crate::network::{MtalConfig, MtalSystem, Sharing};
use crate::sharing::SharingReport;
use crate::trainer::{fit, steps_per_epoch, LossHistory, TrainOptions, TrainOutcome};

/// Every method the experiment runner knows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mtal,
    Single,
    MultiHard,
    CrossStitch,
    Snr,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Mtal,
        Method::Single,
        Method::MultiHard,
        Method::CrossStitch,
        Method::Snr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Mtal => "mtal",
            Method::Single => "single",
            Method::MultiHard => "multi-hard",
            Method::CrossStitch => "cross-stitch",
            Method::Snr => "snr",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("method", format!("unknown method `{s}`")))
    }
}

/// One trained method on one seed, in a schema shared by every method.
#[derive(Clone, Debug)]
pub struct MethodRun {
    pub method: Method,
    pub seed: u64,
    /// `(task_id, test accuracy)`
    pub accuracy: Vec<(usize, f64)>,
    pub history: LossHistory,
    pub report: Option<SharingReport>,
    pub checkpoint: Checkpoint,
    pub stopped_early: bool,
}

impl MethodRun {
    fn from_outcome(method: Method, seed: u64, tasks: &[TaskData], o: TrainOutcome) -> Self {
        Self {
            method,
            seed,
            accuracy: tasks.iter().map(|t| t.id).zip(o.accuracy).collect(),
            history: o.state.history,
            report: o.report,
            checkpoint: o.checkpoint,
            stopped_early: o.state.stopped_early,
        }
    }

    pub fn mean_accuracy(&self) -> f64 {
        self.accuracy.iter().map(|a| a.1).sum::<f64>() / self.accuracy.len().max(1) as f64
    }
}

pub const METRICS_CSV_HEADER: &str = "method,task_id,seed,test_accuracy";

pub fn metrics_csv(runs: &[MethodRun]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    s.push('\n');
    for r in runs {
        for (task, acc) in &r.accuracy {
            let _ = writeln!(s, "{},{task},{},{acc}", r.method, r.seed);
        }
    }
    s
}

/// Epoch budget and optional periodic checkpoints for one run.
#[derive(Clone, Debug, Default)]
pub struct RunSettings {
    pub epochs: usize,
    pub checkpoint_every: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl RunSettings {
    pub fn epochs(epochs: usize) -> Self {
        Self {
            epochs,
            ..Self::default()
        }
    }
}

fn options(cfg: &MtalConfig, run: &RunSettings, tasks: &[TaskData]) -> TrainOptions {
    TrainOptions {
        steps_per_epoch: Some(steps_per_epoch(tasks, cfg.batch_size)),
        checkpoint_every: run.checkpoint_every,
        out_dir: run.out_dir.clone(),
        ..TrainOptions::from_config(cfg, run.epochs)
    }
}

pub fn run_mtal(tasks: &[TaskData], cfg: &MtalConfig, run: &RunSettings) -> Result<MethodRun> {
    let shapes: Vec<TaskShape> = tasks.iter().map(TaskShape::from).collect();
    let mut sys: MtalSystem<f32> = MtalSystem::build(&shapes, cfg.clone())?;
    let o = fit(&mut sys, tasks, &options(cfg, run, tasks))?;
    Ok(MethodRun::from_outcome(Method::Mtal, cfg.seed, tasks, o))
}

/// Independent one-task networks, each trained for the same number of steps as a joint run.
pub fn run_single(tasks: &[TaskData], cfg: &MtalConfig, settings: &RunSettings) -> Result<MethodRun> {
    let opts = options(cfg, settings, tasks);
    let cfg = MtalConfig {
        sharing: Sharing::Disabled,
        ..cfg.clone()
    };
    let mut run = MethodRun {
        method: Method::Single,
        seed: cfg.seed,
        accuracy: Vec::new(),
        history: LossHistory::default(),
        report: None,
        checkpoint: Checkpoint::new(),
        stopped_early: false,
    };
    let mut totals: Vec<(u64, f32)> = Vec::new();
    for t in tasks {
        let mut sys: MtalSystem<f32> = MtalSystem::build(&[TaskShape::from(t)], cfg.clone())?;
        let opts = TrainOptions {
            out_dir: opts.out_dir.as_ref().map(|d| d.join(format!("task{}", t.id))),
            ..opts.clone()
        };
        let o = fit(&mut sys, std::slice::from_ref(t), &opts).map_err(|e| e.in_task(t.id))?;
        run.accuracy.push((t.id, o.accuracy[0]));
        for (k, &(step, loss)) in o.state.history.total.iter().enumerate() {
            match totals.get_mut(k) {
                Some(slot) => slot.1 += loss as f32,
                None => totals.push((step, loss as f32)),
            }
        }
        run.history.task.extend(o.state.history.task);
        run.checkpoint.tensors.extend(o.checkpoint.tensors);
        run.stopped_early |= o.state.stopped_early;
    }
    run.history.task.sort_by_key(|r| (r.0, r.1));
    run.history.total = totals.into_iter().map(|(s, l)| (s, l as f64)).collect();
    Ok(run)
}

/// Tasks resized (nearest neighbour) to their largest common extent.
pub fn resized_tasks(tasks: &[TaskData]) -> Result<Vec<TaskData>> {
    let shapes: Vec<TaskShape> = tasks.iter().map(TaskShape::from).collect();
    let dims = common_dims(&shapes)?;
    Ok(tasks.iter().map(|t| resize_task(t, dims)).collect())
}

pub fn run_baseline(method: Method, tasks: &[TaskData], cfg: &MtalConfig, run: &RunSettings) -> Result<MethodRun> {
    cfg.validate()?;
    let opts = options(cfg, run, tasks);
    let o = match method {
        Method::Mtal => return run_mtal(tasks, cfg, run),
        Method::Single => return run_single(tasks, cfg, run),
        Method::MultiHard => {
            let tasks = resized_tasks(tasks)?;
            let shapes: Vec<TaskShape> = tasks.iter().map(TaskShape::from).collect();
            let mut net = HardSharedNet::<f32>::build(&shapes, cfg)?;
            fit(&mut net, &tasks, &opts)?
        }
        Method::CrossStitch => {
            let shapes: Vec<TaskShape> = tasks.iter().map(TaskShape::from).collect();
            let mut net = CrossStitchNet::<f32>::build(&shapes, cfg)?;
            fit(&mut net, tasks, &opts)?
        }
        Method::Snr => {
            let tasks = resized_tasks(tasks)?;
            let shapes: Vec<TaskShape> = tasks.iter().map(TaskShape::from).collect();
            let mut net = SnrNet::<f32>::build(&shapes, cfg, DEFAULT_SUBNETWORKS, DEFAULT_ROUTED_WIDTH)?;
            fit(&mut net, &tasks, &opts)?
        }
    };
    Ok(MethodRun::from_outcome(method, cfg.seed, tasks, o))
}
