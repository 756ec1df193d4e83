//! Pairwise kernel aggregation, kernel banks, and sharing ratios.
//!
//! For a nominated pair `(i, p) ~ (j, q)` the aggregated kernel is
//! `phi * w[i][p] + (1 - phi) * w[j][q]`. Every aggregated kernel belonging
//! to `(i, p)` goes into its bank, and the bank mean replaces `w[i][p]` in
//! task `i`'s forward pass. Kernels without a partner pass through unchanged.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::autodiff::{Graph, NodeId, Param};
use crate::error::{Error, Result};
use crate::similarity::{KernelSet, SimilarityRecord};
use crate::tensor::{Real, Tensor};

/// Identifies one directed pair `(layer, i, p) -> (j, q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PairKey {
    pub layer: usize,
    pub task_i: usize,
    pub kernel_p: usize,
    pub task_j: usize,
    pub kernel_q: usize,
}

impl From<&SimilarityRecord> for PairKey {
    fn from(r: &SimilarityRecord) -> Self {
        Self {
            layer: r.layer,
            task_i: r.task_i,
            kernel_p: r.kernel_p,
            task_j: r.task_j,
            kernel_q: r.kernel_q,
        }
    }
}

impl PairKey {
    /// Checkpoint tensor name for this pair's raw mixing scalar.
    pub fn checkpoint_name(&self) -> String {
        format!(
            "phi/conv{}/task{}.k{}/task{}.k{}",
            self.layer, self.task_i, self.kernel_p, self.task_j, self.kernel_q
        )
    }

    pub fn parse_checkpoint_name(name: &str) -> Option<Self> {
        let rest = name.strip_prefix("phi/conv")?;
        let (layer, rest) = rest.split_once('/')?;
        let (a, b) = rest.split_once('/')?;
        let parse_end = |s: &str| -> Option<(usize, usize)> {
            let s = s.strip_prefix("task")?;
            let (t, k) = s.split_once(".k")?;
            Some((t.parse().ok()?, k.parse().ok()?))
        };
        let (task_i, kernel_p) = parse_end(a)?;
        let (task_j, kernel_q) = parse_end(b)?;
        Some(Self {
            layer: layer.parse().ok()?,
            task_i,
            kernel_p,
            task_j,
            kernel_q,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum PhiMode {
    /// One raw scalar `rho` per pair; `phi = sigmoid(rho)`, starting at 0.5.
    #[default]
    Learnable,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanEntry {
    pub record: SimilarityRecord,
    pub phi_forward: f64,
    pub phi_backward: f64,
}

impl PlanEntry {
    pub fn new(record: SimilarityRecord, phi_forward: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&phi_forward) {
            return Err(Error::InvalidPhi(phi_forward));
        }
        Ok(Self {
            record,
            phi_forward,
            phi_backward: 1.0 - phi_forward,
        })
    }

    pub fn key(&self) -> PairKey {
        PairKey::from(&self.record)
    }
}

/// Selected pairs of one layer with their mixing coefficients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SharingPlan {
    pub layer: usize,
    pub entries: Vec<PlanEntry>,
}

impl SharingPlan {
    pub fn empty(layer: usize) -> Self {
        Self {
            layer,
            entries: Vec::new(),
        }
    }

    /// Plan with every entry at the same `phi`.
    pub fn uniform(layer: usize, records: &[SimilarityRecord], phi: f64) -> Result<Self> {
        Ok(Self {
            layer,
            entries: records
                .iter()
                .map(|r| PlanEntry::new(*r, phi))
                .collect::<Result<_>>()?,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Persistent raw mixing scalars, keyed by pair. Entries survive while a
/// pair drops out of the plan and are reused when it returns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhiStore<T = f32> {
    raw: BTreeMap<PairKey, Param<T>>,
}

impl<T: Real> PhiStore<T> {
    pub fn new() -> Self {
        Self {
            raw: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    /// Raw parameter for `key`, created at zero (phi = 0.5) on first use.
    pub fn entry(&mut self, key: PairKey) -> &mut Param<T> {
        self.raw
            .entry(key)
            .or_insert_with(|| Param::new(Tensor::scalar(T::zero())))
    }

    pub fn get(&self, key: &PairKey) -> Option<&Param<T>> {
        self.raw.get(key)
    }

    pub fn insert(&mut self, key: PairKey, rho: T) {
        self.raw.insert(key, Param::new(Tensor::scalar(rho)));
    }

    /// Current `(phi_forward, phi_backward)` for `key`.
    pub fn phi(&self, key: &PairKey) -> (T, T) {
        let rho = self.raw.get(key).map_or(T::zero(), |p| p.value.item());
        let f = sigmoid(rho);
        (f, T::one() - f)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PairKey, &Param<T>)> {
        self.raw.iter()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.raw.values_mut()
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::from_f64_lossy(1.0 / (1.0 + (-x.as_f64()).exp()))
}

/// Kernels aggregated for one `(layer, task, kernel)`; averaged into its effective kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelBank<T = f32> {
    pub layer: usize,
    pub task: usize,
    pub kernel: usize,
    pub members: Vec<Tensor<T>>,
}

/// `phi * w_i + (1 - phi) * w_j`.
pub fn aggregate_pair<T: Real>(w_i: &Tensor<T>, w_j: &Tensor<T>, phi: f64) -> Result<Tensor<T>> {
    if w_i.shape() != w_j.shape() {
        return Err(Error::shape("aggregate_pair", w_i.shape(), w_j.shape()));
    }
    if !(0.0..=1.0).contains(&phi) {
        return Err(Error::InvalidPhi(phi));
    }
    let mut g = Graph::new();
    let a = g.leaf(w_i.clone());
    let b = g.leaf(w_j.clone());
    let p = g.constant(T::from_f64_lossy(phi));
    let out = g.convex_combine(a, b, p)?;
    Ok(g.value(out).clone())
}

/// Elementwise mean of the bank's members.
pub fn bank_average<T: Real>(bank: &KernelBank<T>) -> Result<Tensor<T>> {
    if bank.members.is_empty() {
        return Err(Error::EmptyBank {
            layer: bank.layer,
            task: bank.task,
            kernel: bank.kernel,
        });
    }
    let mut g = Graph::new();
    let ids: Vec<NodeId> = bank.members.iter().map(|m| g.leaf(m.clone())).collect();
    let out = g.mean(&ids)?;
    Ok(g.value(out).clone())
}

fn out_of_range(what: &'static str, index: usize, limit: usize, e: &PlanEntry) -> Error {
    let r = &e.record;
    Error::IndexOutOfRange {
        what,
        index,
        limit,
        context: format!(
            " in plan entry layer {} ({}, {}) -> ({}, {})",
            r.layer, r.task_i, r.kernel_p, r.task_j, r.kernel_q
        ),
    }
}

/// Graph form of kernel sharing for one layer.
///
/// `kernels[t]` is task `t`'s raw `[m, C, kh, kw]` node and `phi[e]` the
/// scalar node holding `phi_forward` for `plan.entries[e]`. Returns one
/// effective kernel node per task; tasks without entries get their raw node
/// back untouched.
pub fn apply_sharing_graph<T: Real>(
    g: &mut Graph<T>,
    kernels: &[NodeId],
    plan: &SharingPlan,
    phi: &[NodeId],
) -> Result<Vec<NodeId>> {
    if phi.len() != plan.entries.len() {
        return Err(Error::shape("apply_sharing phi", &[phi.len()], &[plan.entries.len()]));
    }
    let tasks = kernels.len();
    let m = match kernels.first() {
        Some(&k) => g.value(k).shape()[0],
        None => return Ok(Vec::new()),
    };
    for e in &plan.entries {
        let r = &e.record;
        if r.task_i >= tasks {
            return Err(out_of_range("task", r.task_i, tasks, e));
        }
        if r.task_j >= tasks {
            return Err(out_of_range("task", r.task_j, tasks, e));
        }
        if r.kernel_p >= m {
            return Err(out_of_range("kernel", r.kernel_p, m, e));
        }
        if r.kernel_q >= m {
            return Err(out_of_range("kernel", r.kernel_q, m, e));
        }
    }

    // bank members per (task, kernel), in plan order
    let mut banks: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (idx, e) in plan.entries.iter().enumerate() {
        banks
            .entry((e.record.task_i, e.record.kernel_p))
            .or_default()
            .push(idx);
    }

    let mut selected: BTreeMap<(usize, usize), NodeId> = BTreeMap::new();
    let mut select = |g: &mut Graph<T>, t: usize, k: usize| -> Result<NodeId> {
        if let Some(&id) = selected.get(&(t, k)) {
            return Ok(id);
        }
        let id = g.select(kernels[t], k)?;
        selected.insert((t, k), id);
        Ok(id)
    };

    let mut out = Vec::with_capacity(tasks);
    for (t, &raw) in kernels.iter().enumerate() {
        if !banks.keys().any(|&(bt, _)| bt == t) {
            out.push(raw);
            continue;
        }
        let mut parts = Vec::with_capacity(m);
        for p in 0..m {
            match banks.get(&(t, p)) {
                None => parts.push(select(g, t, p)?),
                Some(members) => {
                    let mut aggregated = Vec::with_capacity(members.len());
                    for &idx in members {
                        let r = &plan.entries[idx].record;
                        let own = select(g, t, p)?;
                        let partner = select(g, r.task_j, r.kernel_q)?;
                        aggregated.push(g.convex_combine(own, partner, phi[idx])?);
                    }
                    parts.push(g.mean(&aggregated)?);
                }
            }
        }
        out.push(g.stack(&parts)?);
    }
    Ok(out)
}

/// Effective kernel sets for one layer, using each entry's `phi_forward`.
pub fn apply_sharing<T: Real>(sets: &[KernelSet<T>], plan: &SharingPlan) -> Result<Vec<KernelSet<T>>> {
    let mut g = Graph::new();
    let kernels: Vec<NodeId> = sets.iter().map(|s| g.leaf(s.kernels.clone())).collect();
    let phi: Vec<NodeId> = plan
        .entries
        .iter()
        .map(|e| g.constant(T::from_f64_lossy(e.phi_forward)))
        .collect();
    let eff = apply_sharing_graph(&mut g, &kernels, plan, &phi)?;
    sets.iter()
        .zip(eff)
        .map(|(s, id)| KernelSet::new(s.layer, s.task, g.value(id).clone()))
        .collect()
}

/// Banks that a plan induces, for inspection.
pub fn kernel_banks<T: Real>(sets: &[KernelSet<T>], plan: &SharingPlan) -> Result<Vec<KernelBank<T>>> {
    let mut banks: BTreeMap<(usize, usize), Vec<Tensor<T>>> = BTreeMap::new();
    for e in &plan.entries {
        let r = &e.record;
        let own = sets
            .get(r.task_i)
            .ok_or_else(|| out_of_range("task", r.task_i, sets.len(), e))?
            .kernels
            .select(r.kernel_p)?;
        let partner = sets
            .get(r.task_j)
            .ok_or_else(|| out_of_range("task", r.task_j, sets.len(), e))?
            .kernels
            .select(r.kernel_q)?;
        banks
            .entry((r.task_i, r.kernel_p))
            .or_default()
            .push(aggregate_pair(&own, &partner, e.phi_forward)?);
    }
    Ok(banks
        .into_iter()
        .map(|((task, kernel), members)| KernelBank {
            layer: plan.layer,
            task,
            kernel,
            members,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerShare {
    pub name: String,
    pub shared: usize,
    pub total: usize,
}

impl LayerShare {
    pub fn ratio(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.shared as f64 / self.total as f64
        }
    }
}

/// Fraction of kernels participating in at least one nominated pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SharingReport {
    pub layers: Vec<LayerShare>,
}

impl SharingReport {
    pub fn shared(&self) -> usize {
        self.layers.iter().map(|l| l.shared).sum()
    }

    pub fn total_kernels(&self) -> usize {
        self.layers.iter().map(|l| l.total).sum()
    }

    pub fn total_ratio(&self) -> f64 {
        let total = self.total_kernels();
        if total == 0 {
            0.0
        } else {
            self.shared() as f64 / total as f64
        }
    }

    /// `layer_name,ratio_percent` rows and a `total` row, one decimal place.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer_name,ratio_percent\n");
        for l in &self.layers {
            let _ = writeln!(s, "{},{:.1}", l.name, 100.0 * l.ratio());
        }
        let _ = writeln!(s, "total,{:.1}", 100.0 * self.total_ratio());
        s
    }
}

pub fn layer_name(layer: usize) -> String {
    format!("conv{layer}")
}

/// `sets[l]` holds every task's kernel set at layer `l`; `plans[l]` that layer's plan.
pub fn sharing_report<T: Real>(plans: &[SharingPlan], sets: &[Vec<KernelSet<T>>]) -> SharingReport {
    let layers = sets
        .iter()
        .enumerate()
        .map(|(l, layer_sets)| {
            let total = layer_sets.iter().map(|s| s.count()).sum();
            let mut shared = BTreeSet::new();
            for plan in plans.iter().filter(|p| p.layer == l) {
                for e in &plan.entries {
                    shared.insert((e.record.task_i, e.record.kernel_p));
                    shared.insert((e.record.task_j, e.record.kernel_q));
                }
            }
            LayerShare {
                name: layer_name(l),
                shared: shared.len(),
                total,
            }
        })
        .collect();
    SharingReport { layers }
}
