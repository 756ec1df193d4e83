//! N structurally identical convolutional task networks with per-task heads,
//! coupled through per-layer kernel sharing.

use rand::Rng;

use crate::autodiff::{Graph, NodeId, Padding, Param};
use crate::checkpoint::Checkpoint;
use crate::data::{InputDims, TaskShape};
use crate::error::{Error, Result};
use crate::model::{Binding, MultiTaskModel};
use crate::rng::{self, tag};
use crate::sharing::{
    apply_sharing_graph, sharing_report, PairKey, PhiMode, PhiStore, PlanEntry, SharingPlan,
    SharingReport,
};
use crate::similarity::{nominate_pairs, KernelSet, ThresholdConfig};
use crate::tensor::{Real, Tensor};

/// Conv stack shared in shape by every task network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchSpec {
    pub kernels_per_layer: Vec<usize>,
    pub kernel_size: usize,
    /// 0-based layer indices followed by a max-pool.
    pub pool_after: Vec<usize>,
    pub pool_window: usize,
}

impl Default for ArchSpec {
    /// Four 3x3 conv layers with 8 kernels each, pooling after the second and fourth.
    fn default() -> Self {
        Self {
            kernels_per_layer: vec![8; 4],
            kernel_size: 3,
            pool_after: vec![1, 3],
            pool_window: 2,
        }
    }
}

impl ArchSpec {
    pub fn uniform(layers: usize, kernels: usize, kernel_size: usize, pool_after: Vec<usize>) -> Self {
        Self {
            kernels_per_layer: vec![kernels; layers],
            kernel_size,
            pool_after,
            pool_window: 2,
        }
    }

    pub fn layers(&self) -> usize {
        self.kernels_per_layer.len()
    }

    pub fn pools(&self, layer: usize) -> bool {
        self.pool_after.contains(&layer)
    }

    /// Spatial extent after the conv stack, or why the input cannot pass through it.
    pub fn output_extent(&self, dims: InputDims) -> std::result::Result<(usize, usize), String> {
        if self.layers() == 0 {
            return Err("architecture has no conv layers".into());
        }
        if self.kernels_per_layer.contains(&0) {
            return Err("every conv layer needs at least one kernel".into());
        }
        let (mut h, mut w) = (dims.height, dims.width);
        for l in 0..self.layers() {
            if self.kernel_size == 0 || self.kernel_size > h || self.kernel_size > w {
                return Err(format!(
                    "{}x{} kernel does not fit {h}x{w} input at conv{l}",
                    self.kernel_size, self.kernel_size
                ));
            }
            if self.pools(l) {
                let p = self.pool_window;
                if p == 0 || h % p != 0 || w % p != 0 {
                    return Err(format!("pool window {p} does not divide {h}x{w} after conv{l}"));
                }
                h /= p;
                w /= p;
            }
        }
        Ok((h, w))
    }

    pub fn flatten_size(&self, dims: InputDims) -> std::result::Result<usize, String> {
        let (h, w) = self.output_extent(dims)?;
        Ok(h * w * self.kernels_per_layer.last().copied().unwrap_or(0))
    }
}

/// Whether and how kernels are shared between tasks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Sharing {
    Adaptive(ThresholdConfig),
    Disabled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MtalConfig {
    pub sharing: Sharing,
    pub eta: f64,
    pub lambda: f64,
    pub phi: PhiMode,
    /// Recompute sharing plans every k steps (1 = every batch).
    pub share_every: usize,
    pub arch: ArchSpec,
    pub seed: u64,
    pub batch_size: usize,
    /// Stop when the per-epoch mean total loss improves by less than 1e-4.
    pub early_stop: bool,
}

impl Default for MtalConfig {
    fn default() -> Self {
        Self {
            sharing: Sharing::Adaptive(ThresholdConfig::related()),
            eta: 0.01,
            lambda: 0.1,
            phi: PhiMode::Learnable,
            share_every: 1,
            arch: ArchSpec::default(),
            seed: 0,
            batch_size: 32,
            early_stop: false,
        }
    }
}

impl MtalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta", format!("must be positive, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", format!("must be non-negative, got {}", self.lambda)));
        }
        if let PhiMode::Fixed(p) = self.phi {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config("phi", format!("fixed phi {p} outside [0, 1]")));
            }
        }
        if self.share_every == 0 {
            return Err(Error::config("share_every", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if let Sharing::Adaptive(t) = self.sharing {
            ThresholdConfig::new(t.delta())?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T = f32> {
    /// `[m, C, k, k]`
    pub kernels: Param<T>,
    pub bias: Param<T>,
    pub pool: bool,
}

/// Conv stack followed by flatten and a dense head of width `classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskNetwork<T = f32> {
    pub task: usize,
    pub dims: InputDims,
    pub classes: usize,
    pub convs: Vec<ConvBlock<T>>,
    pub head_weight: Param<T>,
    pub head_bias: Param<T>,
    pub pool_window: usize,
}

fn uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-bound..=bound)))
}

/// Conv blocks with fan-in-scaled uniform kernels and zero biases.
pub(crate) fn init_conv_stack<T: Real>(
    rng: &mut impl Rng,
    arch: &ArchSpec,
    in_channels: usize,
) -> Vec<ConvBlock<T>> {
    let k = arch.kernel_size;
    let mut c = in_channels;
    let mut convs = Vec::with_capacity(arch.layers());
    for (l, &m) in arch.kernels_per_layer.iter().enumerate() {
        let fan_in = (c * k * k) as f64;
        convs.push(ConvBlock {
            kernels: Param::new(uniform(rng, &[m, c, k, k], (6.0 / fan_in).sqrt())),
            bias: Param::new(Tensor::zeros(&[m])),
            pool: arch.pools(l),
        });
        c = m;
    }
    convs
}

pub(crate) fn init_dense<T: Real>(rng: &mut impl Rng, fan_in: usize, out: usize) -> (Param<T>, Param<T>) {
    let bound = (3.0 / fan_in as f64).sqrt();
    (
        Param::new(uniform(rng, &[fan_in, out], bound)),
        Param::new(Tensor::zeros(&[out])),
    )
}

impl<T: Real> TaskNetwork<T> {
    pub fn new(task: usize, dims: InputDims, classes: usize, arch: &ArchSpec, seed: u64) -> Result<Self> {
        let flat = arch
            .flatten_size(dims)
            .map_err(|reason| Error::Architecture { task, reason })?;
        if classes < 2 {
            return Err(Error::Architecture {
                task,
                reason: format!("class count must be at least 2, got {classes}"),
            });
        }
        let mut rng = rng::stream(seed, &[tag::INIT, task as u64]);
        let convs = init_conv_stack(&mut rng, arch, dims.channels);
        let (head_weight, head_bias) = init_dense(&mut rng, flat, classes);
        Ok(Self {
            task,
            dims,
            classes,
            convs,
            head_weight,
            head_bias,
            pool_window: arch.pool_window,
        })
    }

    pub fn kernel_set(&self, layer: usize) -> KernelSet<T> {
        KernelSet {
            layer,
            task: self.task,
            kernels: self.convs[layer].kernels.value.clone(),
        }
    }

    pub(crate) fn params(&self) -> Vec<&Param<T>> {
        let mut v = Vec::with_capacity(2 * self.convs.len() + 2);
        for c in &self.convs {
            v.push(&c.kernels);
            v.push(&c.bias);
        }
        v.push(&self.head_weight);
        v.push(&self.head_bias);
        v
    }

    pub(crate) fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = Vec::with_capacity(2 * self.convs.len() + 2);
        for c in &mut self.convs {
            v.push(&mut c.kernels);
            v.push(&mut c.bias);
        }
        v.push(&mut self.head_weight);
        v.push(&mut self.head_bias);
        v
    }

    pub(crate) fn param_count(&self) -> usize {
        2 * self.convs.len() + 2
    }

    pub(crate) fn param_names(&self) -> Vec<String> {
        let t = self.task;
        let mut v = Vec::with_capacity(self.param_count());
        for l in 0..self.convs.len() {
            v.push(format!("task{t}/conv{l}/kernels"));
            v.push(format!("task{t}/conv{l}/bias"));
        }
        v.push(format!("task{t}/head/weight"));
        v.push(format!("task{t}/head/bias"));
        v
    }

    /// Runs conv blocks `layers` on `x`, using `kernels[l]` in place of raw kernels.
    pub(crate) fn conv_block(
        &self,
        g: &mut Graph<T>,
        x: NodeId,
        kernels: NodeId,
        bias: NodeId,
        layer: usize,
    ) -> Result<NodeId> {
        let y = g.conv2d(x, kernels, bias, Padding::Same)?;
        let y = g.relu(y);
        if self.convs[layer].pool {
            g.max_pool2d(y, self.pool_window)
        } else {
            Ok(y)
        }
    }
}

/// Builds one network per task with shape-identical conv stacks.
pub fn build_networks<T: Real>(specs: &[TaskShape], cfg: &MtalConfig) -> Result<Vec<TaskNetwork<T>>> {
    if specs.is_empty() {
        return Err(Error::config("tasks", "at least one task is required"));
    }
    let nets: Vec<TaskNetwork<T>> = specs
        .iter()
        .map(|s| TaskNetwork::new(s.id, s.dims, s.classes, &cfg.arch, cfg.seed))
        .collect::<Result<_>>()?;
    check_architecture_identity(&nets)?;
    Ok(nets)
}

/// Every layer's kernel tensor must have the same shape across tasks.
pub fn check_architecture_identity<T: Real>(nets: &[TaskNetwork<T>]) -> Result<()> {
    let Some(first) = nets.first() else {
        return Ok(());
    };
    for n in nets {
        if n.convs.len() != first.convs.len() {
            return Err(Error::Architecture {
                task: n.task,
                reason: format!("{} conv layers, expected {}", n.convs.len(), first.convs.len()),
            });
        }
        for (a, b) in n.convs.iter().zip(&first.convs) {
            if a.kernels.value.shape()[0] != b.kernels.value.shape()[0]
                || a.kernels.value.shape()[2..] != b.kernels.value.shape()[2..]
            {
                return Err(Error::shape(
                    "architecture identity",
                    b.kernels.value.shape(),
                    a.kernels.value.shape(),
                ));
            }
        }
    }
    // layer 0 input channels may differ per task; deeper layers cannot
    for n in nets {
        for (a, b) in n.convs.iter().zip(&first.convs).skip(1) {
            if a.kernels.value.shape() != b.kernels.value.shape() {
                return Err(Error::shape(
                    "architecture identity",
                    b.kernels.value.shape(),
                    a.kernels.value.shape(),
                ));
            }
        }
    }
    Ok(())
}

/// Task networks plus the sharing state that couples them.
#[derive(Clone, Debug)]
pub struct MtalSystem<T = f32> {
    pub networks: Vec<TaskNetwork<T>>,
    pub phi: PhiStore<T>,
    pub cfg: MtalConfig,
    plans: Vec<SharingPlan>,
    steps_seen: u64,
}

impl<T: Real> MtalSystem<T> {
    pub fn new(networks: Vec<TaskNetwork<T>>, cfg: MtalConfig) -> Result<Self> {
        cfg.validate()?;
        check_architecture_identity(&networks)?;
        let layers = networks.first().map_or(0, |n| n.convs.len());
        Ok(Self {
            networks,
            phi: PhiStore::new(),
            cfg,
            plans: (0..layers).map(SharingPlan::empty).collect(),
            steps_seen: 0,
        })
    }

    pub fn build(specs: &[TaskShape], cfg: MtalConfig) -> Result<Self> {
        let nets = build_networks(specs, &cfg)?;
        Self::new(nets, cfg)
    }

    pub fn layers(&self) -> usize {
        self.plans.len()
    }

    pub fn plans(&self) -> &[SharingPlan] {
        &self.plans
    }

    /// Replace the current plans, e.g. to force a specific pairing.
    pub fn set_plans(&mut self, plans: Vec<SharingPlan>) -> Result<()> {
        if plans.len() != self.layers() {
            return Err(Error::shape("set_plans", &[self.layers()], &[plans.len()]));
        }
        if self.cfg.phi == PhiMode::Learnable {
            for p in &plans {
                for e in &p.entries {
                    self.phi.entry(e.key());
                }
            }
        }
        self.plans = plans;
        Ok(())
    }

    /// All tasks' kernel sets at `layer`, indexed by position (task ids are positions here).
    pub fn kernel_sets(&self, layer: usize) -> Vec<KernelSet<T>> {
        self.networks
            .iter()
            .enumerate()
            .map(|(pos, n)| KernelSet {
                layer,
                task: pos,
                kernels: n.convs[layer].kernels.value.clone(),
            })
            .collect()
    }

    fn phi_forward(&self, key: &PairKey) -> f64 {
        match self.cfg.phi {
            PhiMode::Fixed(p) => p,
            PhiMode::Learnable => self.phi.phi(key).0.as_f64(),
        }
    }

    /// Nominate pairs from a snapshot of the current raw kernels and rebuild every layer's plan.
    pub fn refresh_plans(&mut self) -> Result<()> {
        let plans = match self.cfg.sharing {
            Sharing::Disabled => (0..self.layers()).map(SharingPlan::empty).collect(),
            Sharing::Adaptive(threshold) => self.compute_plans(&threshold)?,
        };
        self.set_plans(plans)
    }

    /// Plans the current kernels would get at `threshold`, without installing them.
    pub fn compute_plans(&self, threshold: &ThresholdConfig) -> Result<Vec<SharingPlan>> {
        (0..self.layers())
            .map(|l| {
                let sets = self.kernel_sets(l);
                let first_channels = sets[0].kernels.shape()[1];
                if sets.iter().any(|s| s.kernels.shape()[1] != first_channels) {
                    // input channels differ at the first layer: kernels are not comparable
                    return Ok(SharingPlan::empty(l));
                }
                let records = nominate_pairs(&sets, threshold)?;
                let entries = records
                    .iter()
                    .map(|r| PlanEntry::new(*r, self.phi_forward(&PairKey::from(r))))
                    .collect::<Result<_>>()?;
                Ok(SharingPlan { layer: l, entries })
            })
            .collect()
    }

    pub fn sharing_report(&self) -> SharingReport {
        self.report_for(&self.plans)
    }

    pub fn report_for(&self, plans: &[SharingPlan]) -> SharingReport {
        let sets: Vec<Vec<KernelSet<T>>> = (0..self.layers()).map(|l| self.kernel_sets(l)).collect();
        sharing_report(plans, &sets)
    }

    fn net_param_count(&self) -> usize {
        self.networks.iter().map(|n| n.param_count()).sum()
    }

    fn net_offset(&self, task: usize) -> usize {
        self.networks[..task].iter().map(|n| n.param_count()).sum()
    }

    /// Effective kernel node per task for `layer`.
    pub fn effective_kernels(&self, g: &mut Graph<T>, b: &Binding, layer: usize) -> Result<Vec<NodeId>> {
        let raw: Vec<NodeId> = (0..self.networks.len())
            .map(|t| b.params[self.net_offset(t) + 2 * layer])
            .collect();
        let plan = &self.plans[layer];
        if plan.is_empty() {
            return Ok(raw);
        }
        let phi_base = self.net_param_count();
        let keys: Vec<&PairKey> = self.phi.iter().map(|(k, _)| k).collect();
        let mut phi_nodes = Vec::with_capacity(plan.entries.len());
        for e in &plan.entries {
            let node = match self.cfg.phi {
                PhiMode::Fixed(p) => g.constant(T::from_f64_lossy(p)),
                PhiMode::Learnable => {
                    let key = e.key();
                    let idx = keys
                        .binary_search(&&key)
                        .map_err(|_| Error::config("phi", format!("no raw phi for {key:?}")))?;
                    g.sigmoid(b.params[phi_base + idx])
                }
            };
            phi_nodes.push(node);
        }
        apply_sharing_graph(g, &raw, plan, &phi_nodes)
    }

    /// Logits for every task with an input, using effective kernels from the current plans.
    pub fn forward_all(
        &self,
        g: &mut Graph<T>,
        b: &Binding,
        inputs: &[Option<NodeId>],
    ) -> Result<Vec<Option<NodeId>>> {
        if inputs.len() != self.networks.len() {
            return Err(Error::shape("forward_all", &[self.networks.len()], &[inputs.len()]));
        }
        let mut acts: Vec<Option<NodeId>> = inputs.to_vec();
        for l in 0..self.layers() {
            let eff = self.effective_kernels(g, b, l)?;
            for (t, net) in self.networks.iter().enumerate() {
                if let Some(x) = acts[t] {
                    let bias = b.params[self.net_offset(t) + 2 * l + 1];
                    let y = net
                        .conv_block(g, x, eff[t], bias, l)
                        .map_err(|e| e.in_task(net.task))?;
                    acts[t] = Some(y);
                }
            }
        }
        let mut out = Vec::with_capacity(acts.len());
        for (t, net) in self.networks.iter().enumerate() {
            out.push(match acts[t] {
                None => None,
                Some(x) => {
                    let base = self.net_offset(t) + 2 * self.layers();
                    let flat = g.flatten(x)?;
                    Some(
                        g.dense(flat, b.params[base], Some(b.params[base + 1]))
                            .map_err(|e| e.in_task(net.task))?,
                    )
                }
            });
        }
        Ok(out)
    }

    /// Post-relu, pre-pool maps `[B, m, H, W]` of conv layer `layer` for every task with an input.
    pub fn activations(&self, layer: usize, inputs: &[Option<Tensor<T>>]) -> Result<Vec<Option<Tensor<T>>>> {
        if layer >= self.layers() {
            return Err(Error::IndexOutOfRange {
                what: "layer",
                index: layer,
                limit: self.layers(),
                context: "activations".into(),
            });
        }
        if inputs.len() != self.networks.len() {
            return Err(Error::shape("activations", &[self.networks.len()], &[inputs.len()]));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let mut acts: Vec<Option<NodeId>> = inputs.iter().map(|x| x.as_ref().map(|x| g.leaf(x.clone()))).collect();
        for l in 0..=layer {
            let eff = self.effective_kernels(&mut g, &b, l)?;
            for (t, net) in self.networks.iter().enumerate() {
                let Some(x) = acts[t] else { continue };
                let bias = b.params[self.net_offset(t) + 2 * l + 1];
                acts[t] = Some(if l < layer {
                    net.conv_block(&mut g, x, eff[t], bias, l)
                } else {
                    g.conv2d(x, eff[t], bias, Padding::Same).map(|y| g.relu(y))
                }
                .map_err(|e| e.in_task(net.task))?);
            }
        }
        Ok(acts.into_iter().map(|a| a.map(|id| g.value(id).clone())).collect())
    }

    /// Restores parameters (and raw phi scalars) from a checkpoint written by [`MultiTaskModel::checkpoint`].
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for net in &mut self.networks {
            let names = net.param_names();
            for (p, name) in net.params_mut().into_iter().zip(names) {
                let t = ckpt
                    .get(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
                if t.shape() != p.value.shape() {
                    return Err(Error::shape("load_checkpoint", p.value.shape(), t.shape()));
                }
                *p = Param::new(t.cast());
            }
        }
        self.phi = PhiStore::new();
        for (name, t) in &ckpt.tensors {
            if let Some(key) = PairKey::parse_checkpoint_name(name) {
                self.phi.insert(key, T::from_f64_lossy(t.item() as f64));
            }
        }
        Ok(())
    }
}

impl<T: Real> MultiTaskModel<T> for MtalSystem<T> {
    fn task_ids(&self) -> Vec<usize> {
        self.networks.iter().map(|n| n.task).collect()
    }

    fn before_step(&mut self) -> Result<()> {
        if self.steps_seen.is_multiple_of(self.cfg.share_every as u64) {
            self.refresh_plans()?;
        }
        self.steps_seen += 1;
        Ok(())
    }

    fn before_eval(&mut self) -> Result<()> {
        self.refresh_plans()
    }

    fn bind(&self, g: &mut Graph<T>) -> Binding {
        let mut params = Vec::with_capacity(self.net_param_count() + self.phi.len());
        for n in &self.networks {
            params.extend(n.params().into_iter().map(|p| p.bind(g)));
        }
        if self.cfg.phi == PhiMode::Learnable {
            params.extend(self.phi.iter().map(|(_, p)| p.bind(g)));
        }
        Binding { params }
    }

    fn forward(&self, g: &mut Graph<T>, b: &Binding, inputs: &[Option<NodeId>]) -> Result<Vec<Option<NodeId>>> {
        self.forward_all(g, b, inputs)
    }

    fn regularized(&self, b: &Binding, task: usize) -> Vec<NodeId> {
        let start = self.net_offset(task);
        b.params[start..start + self.networks[task].param_count()].to_vec()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let learnable = self.cfg.phi == PhiMode::Learnable;
        let mut v: Vec<&mut Param<T>> = self
            .networks
            .iter_mut()
            .flat_map(|n| n.params_mut())
            .collect();
        if learnable {
            v.extend(self.phi.params_mut());
        }
        v
    }

    fn checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new();
        for n in &self.networks {
            for (name, p) in n.param_names().into_iter().zip(n.params()) {
                c.push(name, p.value.cast());
            }
        }
        for (key, p) in self.phi.iter() {
            c.push(key.checkpoint_name(), p.value.cast());
        }
        c
    }

    fn sharing_report(&self) -> Option<SharingReport> {
        Some(MtalSystem::sharing_report(self))
    }
}
