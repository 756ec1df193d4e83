//! Cross-stitch units: learned 2x2 linear mixing between two task streams.

use crate::autodiff::{Graph, NodeId, Param};
use crate::checkpoint::Checkpoint;
use crate::data::TaskShape;
use crate::error::{Error, Result};
use crate::model::{Binding, MultiTaskModel};
use crate::network::{check_architecture_identity, MtalConfig, TaskNetwork};
use crate::tensor::{Real, Tensor};

/// `[[a_AA, a_AB], [a_BA, a_BB]]`, stored row-major as a `[2, 2]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossStitchUnit<T = f32> {
    pub alpha: Param<T>,
}

impl<T: Real> CrossStitchUnit<T> {
    pub fn new(alpha: [[f64; 2]; 2]) -> Result<Self> {
        if alpha.iter().flatten().any(|a| !a.is_finite()) {
            return Err(Error::config("alpha", "cross-stitch weights must be finite"));
        }
        let flat = [alpha[0][0], alpha[0][1], alpha[1][0], alpha[1][1]];
        Ok(Self {
            alpha: Param::new(Tensor::from_f64(&[2, 2], &flat)?),
        })
    }

    /// Diagonal 0.9, off-diagonal 0.1.
    pub fn near_identity() -> Self {
        Self::new([[0.9, 0.1], [0.1, 0.9]]).expect("finite")
    }

    pub fn identity() -> Self {
        Self::new([[1.0, 0.0], [0.0, 1.0]]).expect("finite")
    }
}

/// `x_A' = a_AA x_A + a_AB x_B`, `x_B' = a_BA x_A + a_BB x_B`, differentiable in `alpha`.
pub fn cross_stitch<T: Real>(
    g: &mut Graph<T>,
    x_a: NodeId,
    x_b: NodeId,
    alpha: NodeId,
) -> Result<(NodeId, NodeId)> {
    if g.value(x_a).shape() != g.value(x_b).shape() {
        return Err(Error::shape("cross_stitch", g.value(x_a).shape(), g.value(x_b).shape()));
    }
    if g.value(alpha).shape() != [2, 2] {
        return Err(Error::shape("cross_stitch alpha", &[2, 2], g.value(alpha).shape()));
    }
    let flat = g.reshape(alpha, &[4])?;
    let a: Vec<NodeId> = (0..4).map(|k| g.select(flat, k)).collect::<Result<_>>()?;
    let aa = g.scale_by(a[0], x_a)?;
    let ab = g.scale_by(a[1], x_b)?;
    let ba = g.scale_by(a[2], x_a)?;
    let bb = g.scale_by(a[3], x_b)?;
    Ok((g.add(&[aa, ab])?, g.add(&[ba, bb])?))
}

/// Two task networks with a cross-stitch unit after every conv block.
///
/// Every batch passes through both streams; the owning task's head reads its own stream.
#[derive(Clone, Debug)]
pub struct CrossStitchNet<T = f32> {
    pub nets: Vec<TaskNetwork<T>>,
    pub units: Vec<CrossStitchUnit<T>>,
    /// Frozen units are applied but never updated.
    pub frozen: bool,
}

impl<T: Real> CrossStitchNet<T> {
    pub fn build(tasks: &[TaskShape], cfg: &MtalConfig) -> Result<Self> {
        if tasks.len() != 2 {
            return Err(Error::config("tasks", format!("cross-stitch needs exactly 2 tasks, got {}", tasks.len())));
        }
        if tasks[0].dims != tasks[1].dims {
            return Err(Error::config(
                "tasks",
                format!("cross-stitch needs equal input dims, got {} and {}", tasks[0].dims, tasks[1].dims),
            ));
        }
        let nets = tasks
            .iter()
            .map(|t| TaskNetwork::new(t.id, t.dims, t.classes, &cfg.arch, cfg.seed))
            .collect::<Result<Vec<_>>>()?;
        check_architecture_identity(&nets)?;
        let units = (0..cfg.arch.layers()).map(|_| CrossStitchUnit::near_identity()).collect();
        Ok(Self {
            nets,
            units,
            frozen: false,
        })
    }

    /// Units fixed at the identity: the two streams never mix.
    pub fn frozen_identity(mut self) -> Self {
        self.units.iter_mut().for_each(|u| *u = CrossStitchUnit::identity());
        self.frozen = true;
        self
    }

    fn net_params(&self, slot: usize) -> usize {
        self.nets[slot].param_count()
    }
}

impl<T: Real> MultiTaskModel<T> for CrossStitchNet<T> {
    fn task_ids(&self) -> Vec<usize> {
        self.nets.iter().map(|n| n.task).collect()
    }

    fn bind(&self, g: &mut Graph<T>) -> Binding {
        let mut params: Vec<NodeId> = self
            .nets
            .iter()
            .flat_map(|n| n.params())
            .map(|p| p.bind(g))
            .collect();
        if !self.frozen {
            params.extend(self.units.iter().map(|u| u.alpha.bind(g)));
        }
        Binding { params }
    }

    fn forward(&self, g: &mut Graph<T>, b: &Binding, inputs: &[Option<NodeId>]) -> Result<Vec<Option<NodeId>>> {
        if inputs.len() != 2 {
            return Err(Error::shape("cross-stitch forward", &[2], &[inputs.len()]));
        }
        let offsets = [0, self.net_params(0)];
        let alpha_base = offsets[1] + self.net_params(1);
        let layers = self.units.len();
        let mut out = vec![None; 2];
        for (slot, x) in inputs.iter().enumerate() {
            let Some(x) = *x else { continue };
            let mut s = [x, x];
            for l in 0..layers {
                let ya = self.nets[0].conv_block(g, s[0], b.params[2 * l], b.params[2 * l + 1], l)?;
                let yb = self.nets[1].conv_block(
                    g,
                    s[1],
                    b.params[offsets[1] + 2 * l],
                    b.params[offsets[1] + 2 * l + 1],
                    l,
                )?;
                let alpha = if self.frozen {
                    g.leaf(self.units[l].alpha.value.clone())
                } else {
                    b.params[alpha_base + l]
                };
                let (a, c) = cross_stitch(g, ya, yb, alpha)?;
                s = [a, c];
            }
            let base = offsets[slot] + 2 * layers;
            let flat = g.flatten(s[slot])?;
            out[slot] = Some(g.dense(flat, b.params[base], Some(b.params[base + 1]))?);
        }
        Ok(out)
    }

    fn regularized(&self, b: &Binding, task: usize) -> Vec<NodeId> {
        let start = if task == 0 { 0 } else { self.net_params(0) };
        b.params[start..start + self.net_params(task)].to_vec()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let frozen = self.frozen;
        let mut v: Vec<&mut Param<T>> = self.nets.iter_mut().flat_map(|n| n.params_mut()).collect();
        if !frozen {
            v.extend(self.units.iter_mut().map(|u| &mut u.alpha));
        }
        v
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        for n in &self.nets {
            for (name, p) in n.param_names().into_iter().zip(n.params()) {
                c.push(name, p.value.cast());
            }
        }
        for (l, u) in self.units.iter().enumerate() {
            c.push(format!("stitch/conv{l}/alpha"), u.alpha.value.cast());
        }
        c
    }
}
