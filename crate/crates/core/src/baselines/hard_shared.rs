//! One literally shared conv trunk with per-task heads.

use crate::autodiff::{Graph, NodeId, Padding, Param};
use crate::checkpoint::Checkpoint;
use crate::data::{InputDims, TaskData, TaskShape};
use crate::error::{Error, Result};
use crate::model::{Binding, MultiTaskModel};
use crate::network::{init_conv_stack, init_dense, ConvBlock, MtalConfig};
use crate::rng::{self, tag};
use crate::tensor::Real;

#[derive(Clone, Debug)]
pub struct HardSharedNet<T = f32> {
    pub tasks: Vec<TaskShape>,
    pub trunk: Vec<ConvBlock<T>>,
    pub heads: Vec<(Param<T>, Param<T>)>,
    pool_window: usize,
}

/// Largest height and width over the tasks; channel counts must agree.
pub fn common_dims(tasks: &[TaskShape]) -> Result<InputDims> {
    let first = tasks.first().ok_or_else(|| Error::config("tasks", "at least one task is required"))?;
    if let Some(t) = tasks.iter().find(|t| t.dims.channels != first.dims.channels) {
        return Err(Error::Architecture {
            task: t.id,
            reason: format!(
                "shared trunk needs equal channel counts: {} vs {}",
                t.dims.channels, first.dims.channels
            ),
        });
    }
    let h = tasks.iter().map(|t| t.dims.height).max().unwrap_or(0);
    let w = tasks.iter().map(|t| t.dims.width).max().unwrap_or(0);
    Ok(InputDims::new(first.dims.channels, h, w))
}

/// Nearest-neighbour resize of both splits to `dims`.
pub fn resize_task(task: &TaskData, dims: InputDims) -> TaskData {
    if task.dims == dims {
        return task.clone();
    }
    TaskData {
        dims,
        train: task.train.resize_nearest(dims.height, dims.width),
        test: task.test.resize_nearest(dims.height, dims.width),
        ..task.clone()
    }
}

impl<T: Real> HardSharedNet<T> {
    /// `tasks` must already share one input size (see [`resize_task`]).
    pub fn build(tasks: &[TaskShape], cfg: &MtalConfig) -> Result<Self> {
        let dims = common_dims(tasks)?;
        if let Some(t) = tasks.iter().find(|t| t.dims != dims) {
            return Err(Error::Architecture {
                task: t.id,
                reason: format!("input {} not resized to the common {}", t.dims, dims),
            });
        }
        let flat = cfg
            .arch
            .flatten_size(dims)
            .map_err(|reason| Error::Architecture { task: tasks[0].id, reason })?;
        let mut rng = rng::stream(cfg.seed, &[tag::BASELINE, 1]);
        let trunk = init_conv_stack(&mut rng, &cfg.arch, dims.channels);
        let heads = tasks.iter().map(|t| init_dense(&mut rng, flat, t.classes)).collect();
        Ok(Self {
            tasks: tasks.to_vec(),
            trunk,
            heads,
            pool_window: cfg.arch.pool_window,
        })
    }
}

impl<T: Real> MultiTaskModel<T> for HardSharedNet<T> {
    fn task_ids(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.id).collect()
    }

    fn bind(&self, g: &mut Graph<T>) -> Binding {
        let mut params = Vec::with_capacity(2 * (self.trunk.len() + self.heads.len()));
        for c in &self.trunk {
            params.push(c.kernels.bind(g));
            params.push(c.bias.bind(g));
        }
        for (w, b) in &self.heads {
            params.push(w.bind(g));
            params.push(b.bind(g));
        }
        Binding { params }
    }

    fn forward(&self, g: &mut Graph<T>, b: &Binding, inputs: &[Option<NodeId>]) -> Result<Vec<Option<NodeId>>> {
        if inputs.len() != self.tasks.len() {
            return Err(Error::shape("hard-shared forward", &[self.tasks.len()], &[inputs.len()]));
        }
        let trunk = 2 * self.trunk.len();
        let mut out = vec![None; inputs.len()];
        for (t, x) in inputs.iter().enumerate() {
            let Some(mut h) = *x else { continue };
            for (l, block) in self.trunk.iter().enumerate() {
                h = g.conv2d(h, b.params[2 * l], b.params[2 * l + 1], Padding::Same)?;
                h = g.relu(h);
                if block.pool {
                    h = g.max_pool2d(h, self.pool_window)?;
                }
            }
            let flat = g.flatten(h)?;
            let hb = trunk + 2 * t;
            out[t] = Some(
                g.dense(flat, b.params[hb], Some(b.params[hb + 1]))
                    .map_err(|e| e.in_task(self.tasks[t].id))?,
            );
        }
        Ok(out)
    }

    /// The trunk's penalty is counted once, in the first task.
    fn regularized(&self, b: &Binding, task: usize) -> Vec<NodeId> {
        let trunk = 2 * self.trunk.len();
        let mut v = Vec::new();
        if task == 0 {
            v.extend_from_slice(&b.params[..trunk]);
        }
        v.extend_from_slice(&b.params[trunk + 2 * task..trunk + 2 * task + 2]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = Vec::new();
        for c in &mut self.trunk {
            v.push(&mut c.kernels);
            v.push(&mut c.bias);
        }
        for (w, b) in &mut self.heads {
            v.push(w);
            v.push(b);
        }
        v
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (l, c) in self.trunk.iter().enumerate() {
            ck.push(format!("trunk/conv{l}/kernels"), c.kernels.value.cast());
            ck.push(format!("trunk/conv{l}/bias"), c.bias.value.cast());
        }
        for (t, (w, b)) in self.tasks.iter().zip(&self.heads) {
            ck.push(format!("task{}/head/weight", t.id), w.value.cast());
            ck.push(format!("task{}/head/bias", t.id), b.value.cast());
        }
        ck
    }
}
