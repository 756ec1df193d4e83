//! Joint SGD training over all tasks, losses and evaluation.

use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{sgd_step, Graph, NodeId, SgdState};
use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, TaskData};
use crate::error::{Error, Result};
use crate::model::MultiTaskModel;
use crate::network::MtalConfig;
use crate::rng::{self, tag};
use crate::sharing::SharingReport;
use crate::tensor::Real;

/// Softmax cross-entropy plus `lambda` times the squared Frobenius norm of `regularized`.
///
/// With `lambda == 0` the cross-entropy node is returned unchanged.
pub fn task_loss<T: Real>(
    g: &mut Graph<T>,
    logits: NodeId,
    labels: &[usize],
    regularized: &[NodeId],
    lambda: f64,
) -> Result<NodeId> {
    let ce = g.softmax_cross_entropy(logits, labels)?;
    if lambda == 0.0 || regularized.is_empty() {
        return Ok(ce);
    }
    let norms: Vec<NodeId> = regularized.iter().map(|&p| g.sum_squares(p)).collect();
    let l2 = g.add(&norms)?;
    let l2 = g.scale(l2, lambda);
    g.add(&[ce, l2])
}

/// Unweighted sum of per-task losses.
pub fn total_loss<T: Real>(g: &mut Graph<T>, task_losses: &[NodeId]) -> Result<NodeId> {
    g.add(task_losses)
}

/// Endless reshuffled pass over `n` training indices.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64, task: usize) -> Self {
        let mut rng = rng::stream(seed, &[tag::BATCHES, task as u64]);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Self { order, pos: 0, rng }
    }

    /// Next `min(size, n)` distinct indices; reshuffles when the pass runs out.
    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let size = size.min(self.order.len());
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let b = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        b
    }
}

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub epochs: usize,
    pub eta: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub early_stop: bool,
    /// Overrides the default of one pass over the largest training set.
    pub steps_per_epoch: Option<usize>,
    /// Write `ckpt_epoch{e}.bin` into `out_dir` every this many epochs.
    pub checkpoint_every: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl TrainOptions {
    pub fn from_config(cfg: &MtalConfig, epochs: usize) -> Self {
        Self {
            epochs,
            eta: cfg.eta,
            lambda: cfg.lambda,
            batch_size: cfg.batch_size,
            seed: cfg.seed,
            early_stop: cfg.early_stop,
            steps_per_epoch: None,
            checkpoint_every: None,
            out_dir: None,
        }
    }
}

/// Per-step loss traces.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossHistory {
    /// `(step, task_id, loss)`
    pub task: Vec<(u64, usize, f64)>,
    /// `(step, total_loss)`
    pub total: Vec<(u64, f64)>,
}

impl LossHistory {
    pub fn task_csv(&self) -> String {
        let mut s = String::from("step,task_id,loss\n");
        for (step, t, l) in &self.task {
            let _ = writeln!(s, "{step},{t},{l}");
        }
        s
    }

    pub fn total_csv(&self) -> String {
        let mut s = String::from("step,total_loss\n");
        for (step, l) in &self.total {
            let _ = writeln!(s, "{step},{l}");
        }
        s
    }

    /// Losses of one task in step order.
    pub fn of_task(&self, task: usize) -> Vec<f64> {
        self.task.iter().filter(|r| r.1 == task).map(|r| r.2).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub sgd: SgdState,
    pub history: LossHistory,
    pub stopped_early: bool,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    /// Test accuracy per task slot.
    pub accuracy: Vec<f64>,
    pub report: Option<SharingReport>,
    pub checkpoint: Checkpoint,
}

fn check_tasks<T: Real, M: MultiTaskModel<T>>(model: &M, tasks: &[TaskData]) -> Result<()> {
    let ids = model.task_ids();
    if ids.len() != tasks.len() {
        return Err(Error::shape("task count", &[ids.len()], &[tasks.len()]));
    }
    for (id, t) in ids.iter().zip(tasks) {
        if *id != t.id {
            return Err(Error::config("tasks", format!("model slot for task {id} got data for task {}", t.id)));
        }
        if t.train.is_empty() {
            return Err(Error::TooFewExamples(0).in_task(t.id));
        }
    }
    Ok(())
}

/// Steps per epoch: enough batches to cover the largest training set once.
pub fn steps_per_epoch(tasks: &[TaskData], batch_size: usize) -> usize {
    let n = tasks.iter().map(|t| t.train.len()).max().unwrap_or(0);
    n.div_ceil(batch_size.max(1)).max(1)
}

/// One optimizer step on a batch from every task. Returns per-task and total loss.
pub fn train_step<T: Real, M: MultiTaskModel<T>>(
    model: &mut M,
    batches: &[(crate::Tensor<T>, Vec<usize>)],
    lambda: f64,
    sgd: &mut SgdState,
) -> Result<(Vec<f64>, f64)> {
    model.before_step()?;
    let mut g = Graph::new();
    let binding = model.bind(&mut g);
    let inputs: Vec<Option<NodeId>> = batches.iter().map(|(x, _)| Some(g.leaf(x.clone()))).collect();
    let logits = model.forward(&mut g, &binding, &inputs)?;
    let ids = model.task_ids();
    let mut losses = Vec::with_capacity(batches.len());
    for (slot, ((_, labels), out)) in batches.iter().zip(&logits).enumerate() {
        let out = out.expect("every slot has input");
        let reg = model.regularized(&binding, slot);
        losses.push(task_loss(&mut g, out, labels, &reg, lambda).map_err(|e| e.in_task(ids[slot]))?);
    }
    let total = total_loss(&mut g, &losses)?;
    g.backward(total)?;
    let task_values = losses.iter().map(|&l| g.value(l).item().as_f64()).collect();
    let total_value = g.value(total).item().as_f64();
    let mut params = model.params_mut();
    for (p, &id) in params.iter_mut().zip(&binding.params) {
        p.accumulate(&g, id)?;
    }
    sgd_step(&mut params, sgd);
    Ok((task_values, total_value))
}

/// Trains `model` on `tasks` (aligned with its task slots), then evaluates on the test splits.
pub fn fit<T: Real, M: MultiTaskModel<T>>(
    model: &mut M,
    tasks: &[TaskData],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    check_tasks(model, tasks)?;
    if opts.batch_size == 0 {
        return Err(Error::config("batch_size", "must be at least 1"));
    }
    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut samplers: Vec<BatchSampler> = tasks
        .iter()
        .map(|t| BatchSampler::new(t.train.len(), opts.seed, t.id))
        .collect();
    let steps = opts
        .steps_per_epoch
        .unwrap_or_else(|| steps_per_epoch(tasks, opts.batch_size))
        .max(1);
    let mut state = TrainState {
        epoch: 0,
        step: 0,
        sgd: SgdState::new(opts.eta)?,
        history: LossHistory::default(),
        stopped_early: false,
    };
    let mut prev_epoch_loss: Option<f64> = None;
    for epoch in 0..opts.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps {
            let batches: Vec<_> = tasks
                .iter()
                .zip(&mut samplers)
                .map(|(t, s)| t.train.batch::<T>(&s.next_batch(opts.batch_size)))
                .collect();
            let (task_losses, total) = train_step(model, &batches, opts.lambda, &mut state.sgd)?;
            if !total.is_finite() {
                log::warn!("non-finite total loss {total} at step {}", state.step);
            }
            for (t, l) in tasks.iter().zip(task_losses) {
                state.history.task.push((state.step, t.id, l));
            }
            state.history.total.push((state.step, total));
            epoch_loss += total;
            state.step += 1;
        }
        state.epoch = epoch + 1;
        epoch_loss /= steps as f64;
        log::debug!("epoch {} mean total loss {epoch_loss:.5}", state.epoch);
        if let (Some(dir), Some(every)) = (&opts.out_dir, opts.checkpoint_every) {
            if every > 0 && state.epoch.is_multiple_of(every) {
                model.checkpoint().save(dir.join(format!("ckpt_epoch{}.bin", state.epoch)))?;
            }
        }
        if opts.early_stop {
            if let Some(prev) = prev_epoch_loss {
                if prev - epoch_loss < 1e-4 {
                    state.stopped_early = true;
                    log::info!("early stop after epoch {}", state.epoch);
                    break;
                }
            }
        }
        prev_epoch_loss = Some(epoch_loss);
    }
    let accuracy = evaluate(model, tasks)?;
    Ok(TrainOutcome {
        state,
        accuracy,
        report: model.sharing_report(),
        checkpoint: model.checkpoint(),
    })
}

const EVAL_BATCH: usize = 128;

/// Predicted class per example of `ds` for task slot `slot`.
pub fn predict<T: Real, M: MultiTaskModel<T>>(model: &M, slot: usize, ds: &Dataset) -> Result<Vec<usize>> {
    let slots = model.task_ids().len();
    let mut preds = Vec::with_capacity(ds.len());
    let all: Vec<usize> = (0..ds.len()).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let mut g = Graph::new();
        let b = model.bind(&mut g);
        let (x, _) = ds.batch::<T>(chunk);
        let mut inputs = vec![None; slots];
        inputs[slot] = Some(g.leaf(x));
        let out = model.forward(&mut g, &b, &inputs)?;
        let logits = g.value(out[slot].expect("slot has input"));
        let k = logits.shape()[1];
        for row in logits.data().chunks(k) {
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            preds.push(best);
        }
    }
    Ok(preds)
}

/// Test accuracy per task slot.
pub fn evaluate<T: Real, M: MultiTaskModel<T>>(model: &mut M, tasks: &[TaskData]) -> Result<Vec<f64>> {
    model.before_eval()?;
    tasks
        .iter()
        .enumerate()
        .map(|(slot, t)| {
            let preds = predict(model, slot, &t.test)?;
            let correct = preds.iter().zip(&t.test.labels).filter(|(p, l)| p == l).count();
            Ok(correct as f64 / t.test.len().max(1) as f64)
        })
        .collect()
}
