use crate::autodiff::kernels::{self, Padding};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation that produced a node, with whatever it needs for the backward pass.
#[derive(Clone, Debug)]
pub enum Op {
    Leaf,
    Conv2d { padding: Padding },
    Dense { bias: bool },
    Relu,
    MaxPool { argmax: Vec<usize> },
    Reshape,
    SoftmaxCrossEntropy { probs: Vec<f64>, labels: Vec<usize> },
    Sum,
    SumSquares,
    Add,
    Mul,
    Scale(f64),
    ScaleBy,
    Sigmoid,
    ConvexCombine,
    Mean,
    Select(usize),
    Stack,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Dense { .. } => "dense",
            Op::Relu => "relu",
            Op::MaxPool { .. } => "max_pool2d",
            Op::Reshape => "reshape",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Sum => "sum",
            Op::SumSquares => "sum_squares",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::ScaleBy => "scale_by",
            Op::Sigmoid => "sigmoid",
            Op::ConvexCombine => "convex_combine",
            Op::Mean => "mean",
            Op::Select(_) => "select",
            Op::Stack => "stack",
        }
    }
}

/// A value in the graph together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct DiffNode<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub op: Op,
    pub parents: Vec<NodeId>,
}

/// Define-by-run computation graph. Nodes are appended in creation order,
/// so parents always precede children and the graph is acyclic.
#[derive(Debug)]
pub struct Graph<T = f32> {
    nodes: Vec<DiffNode<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &DiffNode<T> {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op, parents: Vec<NodeId>) -> NodeId {
        let grad = Tensor::zeros(value.shape());
        self.nodes.push(DiffNode {
            value,
            grad,
            op,
            parents,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, Vec::new())
    }

    pub fn constant(&mut self, value: T) -> NodeId {
        self.leaf(Tensor::scalar(value))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        padding: Padding,
    ) -> Result<NodeId> {
        let out = kernels::conv2d(self.value(input), self.value(kernels), self.value(bias), padding)?;
        Ok(self.push(out, Op::Conv2d { padding }, vec![input, kernels, bias]))
    }

    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        let out = kernels::dense(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
        )?;
        let mut parents = vec![input, weight];
        parents.extend(bias);
        Ok(self.push(out, Op::Dense { bias: bias.is_some() }, parents))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let out = self
            .value(input)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(out, Op::Relu, vec![input])
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let out = self.value(input).map(|v| {
            let x = v.as_f64();
            T::from_f64_lossy(1.0 / (1.0 + (-x).exp()))
        });
        self.push(out, Op::Sigmoid, vec![input])
    }

    pub fn max_pool2d(&mut self, input: NodeId, window: usize) -> Result<NodeId> {
        let (out, argmax) = kernels::max_pool2d(self.value(input), window)?;
        Ok(self.push(out, Op::MaxPool { argmax }, vec![input]))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(input).reshape(shape)?;
        Ok(self.push(out, Op::Reshape, vec![input]))
    }

    /// Collapse every axis after the first: `[N, ...] -> [N, rest]`.
    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId> {
        let shape = self.value(input).shape();
        let lead = *shape
            .first()
            .ok_or_else(|| Error::shape("flatten", shape, &[]))?;
        let rest: usize = shape[1..].iter().product();
        self.reshape(input, &[lead, rest])
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (loss, probs) = kernels::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Tensor::scalar(T::from_f64_lossy(loss)),
            Op::SoftmaxCrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            vec![logits],
        ))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).sum_f64();
        self.push(Tensor::scalar(T::from_f64_lossy(s)), Op::Sum, vec![input])
    }

    pub fn sum_squares(&mut self, input: NodeId) -> NodeId {
        let s = self.value(input).sum_squares_f64();
        self.push(Tensor::scalar(T::from_f64_lossy(s)), Op::SumSquares, vec![input])
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("add", &[], &[]))?;
        let mut out = self.value(first).clone();
        for &id in &inputs[1..] {
            let v = self.value(id);
            if v.shape() != out.shape() {
                return Err(Error::shape("add", out.shape(), v.shape()));
            }
            out.add_assign(v)?;
        }
        Ok(self.push(out, Op::Add, inputs.to_vec()))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::shape("mul", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul, vec![a, b]))
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let f = T::from_f64_lossy(factor);
        let out = self.value(input).map(|v| v * f);
        self.push(out, Op::Scale(factor), vec![input])
    }

    /// `s * x` for a single-element node `s`.
    pub fn scale_by(&mut self, s: NodeId, x: NodeId) -> Result<NodeId> {
        let sv = self.value(s);
        if sv.len() != 1 {
            return Err(Error::shape("scale_by", sv.shape(), &[]));
        }
        let f = sv.item();
        let out = self.value(x).map(|v| f * v);
        Ok(self.push(out, Op::ScaleBy, vec![s, x]))
    }

    /// `phi * a + (1 - phi) * b` for a single-element node `phi`.
    pub fn convex_combine(&mut self, a: NodeId, b: NodeId, phi: NodeId) -> Result<NodeId> {
        let (va, vb, vp) = (self.value(a), self.value(b), self.value(phi));
        if va.shape() != vb.shape() {
            return Err(Error::shape("convex_combine", va.shape(), vb.shape()));
        }
        if vp.len() != 1 {
            return Err(Error::shape("convex_combine", vp.shape(), &[]));
        }
        let p = vp.item();
        let q = T::one() - p;
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| p * x + q * y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::ConvexCombine, vec![a, b, phi]))
    }

    /// Elementwise mean of equally shaped nodes.
    pub fn mean(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape("mean", &[], &[]))?;
        let shape = self.value(first).shape().to_vec();
        let mut acc = vec![0f64; self.value(first).len()];
        for &id in inputs {
            let v = self.value(id);
            if v.shape() != shape.as_slice() {
                return Err(Error::shape("mean", &shape, v.shape()));
            }
            for (a, x) in acc.iter_mut().zip(v.data()) {
                *a += x.as_f64();
            }
        }
        let k = inputs.len() as f64;
        let data: Vec<f64> = acc.iter().map(|a| a / k).collect();
        let out = Tensor::from_f64(&shape, &data)?;
        Ok(self.push(out, Op::Mean, inputs.to_vec()))
    }

    pub fn select(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let out = self.value(input).select(index)?;
        Ok(self.push(out, Op::Select(index), vec![input]))
    }

    pub fn stack(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let parts: Vec<Tensor<T>> = inputs.iter().map(|&id| self.value(id).clone()).collect();
        let out = Tensor::stack(&parts)?;
        Ok(self.push(out, Op::Stack, inputs.to_vec()))
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad.fill_zero();
        }
    }

    /// Reverse-mode sweep from a scalar root. Gradients accumulate into
    /// every node reachable from `root`; all others stay zero.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let root_shape = self.value(root).shape().to_vec();
        if self.value(root).len() != 1 {
            return Err(Error::NonScalarRoot(root_shape));
        }
        let mut reachable = vec![false; root.0 + 1];
        reachable[root.0] = true;
        for i in (0..=root.0).rev() {
            if reachable[i] {
                for p in &self.nodes[i].parents {
                    reachable[p.0] = true;
                }
            }
        }
        self.nodes[root.0].grad.data_mut()[0] += T::one();
        for i in (0..=root.0).rev() {
            if !reachable[i] || self.nodes[i].parents.is_empty() {
                continue;
            }
            let contributions = self.local_gradients(i)?;
            for (parent, g) in contributions {
                self.nodes[parent.0].grad.add_assign(&g)?;
            }
        }
        Ok(())
    }

    fn local_gradients(&self, i: usize) -> Result<Vec<(NodeId, Tensor<T>)>> {
        let node = &self.nodes[i];
        let g = &node.grad;
        let p = &node.parents;
        let val = |k: usize| &self.nodes[p[k].0].value;
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { padding } => {
                let (gx, gk, gb) = kernels::conv2d_backward(val(0), val(1), g, *padding)?;
                vec![(p[0], gx), (p[1], gk), (p[2], gb)]
            }
            Op::Dense { bias } => {
                let (gx, gw, gb) = kernels::dense_backward(val(0), val(1), g)?;
                let mut v = vec![(p[0], gx), (p[1], gw)];
                if *bias {
                    v.push((p[2], gb));
                }
                v
            }
            Op::Relu => {
                let x = val(0);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                vec![(p[0], Tensor::new(x.shape().to_vec(), data)?)]
            }
            Op::Sigmoid => {
                let y = &node.value;
                let data = y
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&yv, &gv)| gv * yv * (T::one() - yv))
                    .collect();
                vec![(p[0], Tensor::new(y.shape().to_vec(), data)?)]
            }
            Op::MaxPool { argmax } => {
                let mut gx = Tensor::zeros(val(0).shape());
                let d = gx.data_mut();
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    d[src] += gv;
                }
                vec![(p[0], gx)]
            }
            Op::Reshape => vec![(p[0], g.reshape(val(0).shape())?)],
            Op::SoftmaxCrossEntropy { probs, labels } => {
                let shape = val(0).shape();
                let k = shape[1];
                let n = labels.len() as f64;
                let up = g.item().as_f64();
                let mut data: Vec<f64> = probs.iter().map(|&pv| pv * up / n).collect();
                for (row, &l) in labels.iter().enumerate() {
                    data[row * k + l] -= up / n;
                }
                vec![(p[0], Tensor::from_f64(shape, &data)?)]
            }
            Op::Sum => {
                let up = g.item();
                vec![(p[0], Tensor::full(val(0).shape(), up))]
            }
            Op::SumSquares => {
                let up = g.item();
                let two = T::from_f64_lossy(2.0);
                vec![(p[0], val(0).map(|v| two * v * up))]
            }
            Op::Add => p.iter().map(|&id| (id, g.clone())).collect(),
            Op::Mul => {
                let (a, b) = (val(0), val(1));
                let ga = zip_map(g, b, |gv, bv| gv * bv)?;
                let gb = zip_map(g, a, |gv, av| gv * av)?;
                vec![(p[0], ga), (p[1], gb)]
            }
            Op::Scale(f) => {
                let f = T::from_f64_lossy(*f);
                vec![(p[0], g.map(|v| v * f))]
            }
            Op::ScaleBy => {
                let (s, x) = (val(0), val(1));
                let ds: f64 = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(a, b)| a.as_f64() * b.as_f64())
                    .sum();
                let sv = s.item();
                vec![
                    (p[0], Tensor::new(s.shape().to_vec(), vec![T::from_f64_lossy(ds)])?),
                    (p[1], g.map(|v| sv * v)),
                ]
            }
            Op::ConvexCombine => {
                let (a, b, phi) = (val(0), val(1), val(2));
                let pv = phi.item();
                let qv = T::one() - pv;
                let dphi: f64 = g
                    .data()
                    .iter()
                    .zip(a.data().iter().zip(b.data()))
                    .map(|(gv, (av, bv))| gv.as_f64() * (av.as_f64() - bv.as_f64()))
                    .sum();
                vec![
                    (p[0], g.map(|v| pv * v)),
                    (p[1], g.map(|v| qv * v)),
                    (
                        p[2],
                        Tensor::new(phi.shape().to_vec(), vec![T::from_f64_lossy(dphi)])?,
                    ),
                ]
            }
            Op::Mean => {
                let k = T::from_f64_lossy(p.len() as f64);
                let share = g.map(|v| v / k);
                p.iter().map(|&id| (id, share.clone())).collect()
            }
            Op::Select(index) => {
                let src = val(0);
                let mut gx = Tensor::zeros(src.shape());
                let inner = g.len();
                gx.data_mut()[index * inner..(index + 1) * inner].copy_from_slice(g.data());
                vec![(p[0], gx)]
            }
            Op::Stack => p
                .iter()
                .enumerate()
                .map(|(k, &id)| Ok((id, g.select(k)?)))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(out)
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}
