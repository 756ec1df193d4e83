use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_LEARNING_RATE: f64 = 0.01;

/// A trainable tensor that outlives any single graph.
///
/// Each step binds the value into a fresh graph as a leaf, then pulls the
/// leaf's gradient back with [`Param::accumulate`].
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }

    pub fn bind(&self, graph: &mut Graph<T>) -> NodeId {
        graph.leaf(self.value.clone())
    }

    pub fn accumulate(&mut self, graph: &Graph<T>, id: NodeId) -> Result<()> {
        self.grad.add_assign(graph.grad(id))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    lr: f64,
    pub steps: u64,
}

impl SgdState {
    pub fn new(lr: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config("eta", format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self { lr, steps: 0 })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }
}

impl Default for SgdState {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LEARNING_RATE,
            steps: 0,
        }
    }
}

/// Plain SGD: `value -= lr * grad`, then zero the gradient.
pub fn sgd_step<T: Real>(params: &mut [&mut Param<T>], state: &mut SgdState) {
    let lr = T::from_f64_lossy(state.lr);
    for p in params.iter_mut() {
        let Param { value, grad } = &mut **p;
        for (v, &g) in value.data_mut().iter_mut().zip(grad.data()) {
            *v -= lr * g;
        }
        grad.fill_zero();
    }
    state.steps += 1;
}
