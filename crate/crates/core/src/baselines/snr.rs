//! Sub-network routing: several shared conv sub-networks mixed per task by gated linear maps.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, Param};
use crate::checkpoint::Checkpoint;
use crate::data::TaskShape;
use crate::error::{Error, Result};
use crate::model::{Binding, MultiTaskModel};
use crate::network::{init_conv_stack, init_dense, ConvBlock, MtalConfig};
use crate::rng::{self, tag};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_SUBNETWORKS: usize = 3;
pub const DEFAULT_ROUTED_WIDTH: usize = 32;

/// Gate logits `[outputs, inputs]` (gates are their sigmoids) and one `[in, out]` map per gate.
#[derive(Clone, Debug, PartialEq)]
pub struct SnrRouter<T = f32> {
    pub gate_logits: Param<T>,
    /// Row-major over `(output r, input c)`.
    pub transforms: Vec<Param<T>>,
}

impl<T: Real> SnrRouter<T> {
    pub fn new(outputs: usize, inputs: usize, in_width: usize, out_width: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / in_width as f64).sqrt();
        let transforms = (0..outputs * inputs)
            .map(|_| {
                Param::new(Tensor::from_fn(&[in_width, out_width], |_| {
                    T::from_f64_lossy(rng.random_range(-bound..=bound))
                }))
            })
            .collect();
        Self {
            gate_logits: Param::new(Tensor::zeros(&[outputs, inputs])),
            transforms,
        }
    }

    pub fn outputs(&self) -> usize {
        self.gate_logits.value.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.gate_logits.value.shape()[1]
    }
}

/// `v_r = sum_c z[r, c] * (u_c W_rc)` for output `r`. `z` is `[R, C]`, `u_c` is `[B, D]`.
pub fn snr_route_one<T: Real>(
    g: &mut Graph<T>,
    u: &[NodeId],
    z: NodeId,
    w: &[NodeId],
    r: usize,
) -> Result<NodeId> {
    let zs = g.value(z).shape().to_vec();
    if zs.len() != 2 || zs[1] != u.len() || r >= zs[0] || w.len() != zs[0] * zs[1] {
        return Err(Error::shape("snr_route", &zs, &[r + 1, u.len(), w.len()]));
    }
    let row = g.select(z, r)?;
    let mut terms = Vec::with_capacity(u.len());
    for (c, &uc) in u.iter().enumerate() {
        let mapped = g.dense(uc, w[r * u.len() + c], None)?;
        let gate = g.select(row, c)?;
        terms.push(g.scale_by(gate, mapped)?);
    }
    g.add(&terms)
}

/// Every routed output `v_r`.
pub fn snr_route<T: Real>(g: &mut Graph<T>, u: &[NodeId], z: NodeId, w: &[NodeId]) -> Result<Vec<NodeId>> {
    let outputs = g.value(z).shape().first().copied().unwrap_or(0);
    (0..outputs).map(|r| snr_route_one(g, u, z, w, r)).collect()
}

/// Shared conv sub-networks, a router and per-task heads. Inputs share one size.
#[derive(Clone, Debug)]
pub struct SnrNet<T = f32> {
    pub tasks: Vec<TaskShape>,
    pub subnets: Vec<Vec<ConvBlock<T>>>,
    pub router: SnrRouter<T>,
    pub heads: Vec<(Param<T>, Param<T>)>,
    pool_window: usize,
}

impl<T: Real> SnrNet<T> {
    pub fn build(tasks: &[TaskShape], cfg: &MtalConfig, subnetworks: usize, routed_width: usize) -> Result<Self> {
        let first = tasks.first().ok_or_else(|| Error::config("tasks", "at least one task is required"))?;
        if let Some(t) = tasks.iter().find(|t| t.dims != first.dims) {
            return Err(Error::Architecture {
                task: t.id,
                reason: format!("snr needs a common input size: {} vs {}", t.dims, first.dims),
            });
        }
        if subnetworks == 0 || routed_width == 0 {
            return Err(Error::config("snr", "sub-network count and routed width must be positive"));
        }
        let flat = cfg
            .arch
            .flatten_size(first.dims)
            .map_err(|reason| Error::Architecture { task: first.id, reason })?;
        let mut rng = rng::stream(cfg.seed, &[tag::BASELINE, 2]);
        let subnets = (0..subnetworks)
            .map(|_| init_conv_stack(&mut rng, &cfg.arch, first.dims.channels))
            .collect();
        let router = SnrRouter::new(tasks.len(), subnetworks, flat, routed_width, &mut rng);
        let heads = tasks.iter().map(|t| init_dense(&mut rng, routed_width, t.classes)).collect();
        Ok(Self {
            tasks: tasks.to_vec(),
            subnets,
            router,
            heads,
            pool_window: cfg.arch.pool_window,
        })
    }

    fn layers(&self) -> usize {
        self.subnets[0].len()
    }

    fn subnet_params(&self) -> usize {
        self.subnets.len() * 2 * self.layers()
    }

    fn gate_index(&self) -> usize {
        self.subnet_params()
    }

    fn transform_base(&self) -> usize {
        self.gate_index() + 1
    }

    fn head_base(&self) -> usize {
        self.transform_base() + self.router.transforms.len()
    }

    fn all_params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = Vec::new();
        for s in &self.subnets {
            for c in s {
                v.push(&c.kernels);
                v.push(&c.bias);
            }
        }
        v.push(&self.router.gate_logits);
        v.extend(self.router.transforms.iter());
        for (w, b) in &self.heads {
            v.push(w);
            v.push(b);
        }
        v
    }
}

impl<T: Real> MultiTaskModel<T> for SnrNet<T> {
    fn task_ids(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.id).collect()
    }

    fn bind(&self, g: &mut Graph<T>) -> Binding {
        Binding {
            params: self.all_params().into_iter().map(|p| p.bind(g)).collect(),
        }
    }

    fn forward(&self, g: &mut Graph<T>, b: &Binding, inputs: &[Option<NodeId>]) -> Result<Vec<Option<NodeId>>> {
        if inputs.len() != self.tasks.len() {
            return Err(Error::shape("snr forward", &[self.tasks.len()], &[inputs.len()]));
        }
        let layers = self.layers();
        let mut out = vec![None; inputs.len()];
        for (r, x) in inputs.iter().enumerate() {
            let Some(x) = *x else { continue };
            let mut u = Vec::with_capacity(self.subnets.len());
            for (c, sub) in self.subnets.iter().enumerate() {
                let mut h = x;
                for (l, block) in sub.iter().enumerate() {
                    let k = b.params[c * 2 * layers + 2 * l];
                    h = g.conv2d(h, k, b.params[c * 2 * layers + 2 * l + 1], Default::default())?;
                    h = g.relu(h);
                    if block.pool {
                        h = g.max_pool2d(h, self.pool_window)?;
                    }
                }
                u.push(g.flatten(h)?);
            }
            let z = g.sigmoid(b.params[self.gate_index()]);
            let w = &b.params[self.transform_base()..self.head_base()];
            let v = snr_route_one(g, &u, z, w, r).map_err(|e| e.in_task(self.tasks[r].id))?;
            let v = g.relu(v);
            let hb = self.head_base() + 2 * r;
            out[r] = Some(g.dense(v, b.params[hb], Some(b.params[hb + 1]))?);
        }
        Ok(out)
    }

    /// Sub-networks are counted once, in the first task; each task owns its maps and head.
    fn regularized(&self, b: &Binding, task: usize) -> Vec<NodeId> {
        let c = self.router.inputs();
        let mut v = Vec::new();
        if task == 0 {
            v.extend_from_slice(&b.params[..self.subnet_params()]);
        }
        let tb = self.transform_base() + task * c;
        v.extend_from_slice(&b.params[tb..tb + c]);
        let hb = self.head_base() + 2 * task;
        v.extend_from_slice(&b.params[hb..hb + 2]);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = Vec::new();
        for s in &mut self.subnets {
            for c in s {
                v.push(&mut c.kernels);
                v.push(&mut c.bias);
            }
        }
        v.push(&mut self.router.gate_logits);
        v.extend(self.router.transforms.iter_mut());
        for (w, b) in &mut self.heads {
            v.push(w);
            v.push(b);
        }
        v
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        for (c, sub) in self.subnets.iter().enumerate() {
            for (l, block) in sub.iter().enumerate() {
                ck.push(format!("sub{c}/conv{l}/kernels"), block.kernels.value.cast());
                ck.push(format!("sub{c}/conv{l}/bias"), block.bias.value.cast());
            }
        }
        ck.push("router/gate_logits", self.router.gate_logits.value.cast());
        let inputs = self.router.inputs();
        for (k, w) in self.router.transforms.iter().enumerate() {
            ck.push(format!("router/w{}_{}", k / inputs, k % inputs), w.value.cast());
        }
        for (t, (w, b)) in self.tasks.iter().zip(&self.heads) {
            ck.push(format!("task{}/head/weight", t.id), w.value.cast());
            ck.push(format!("task{}/head/bias", t.id), b.value.cast());
        }
        ck
    }
}
