//! Common interface between multi-task models and the training loop.

use crate::autodiff::{Graph, NodeId, Param};
use crate::checkpoint::Checkpoint;
use crate::error::Result;
use crate::sharing::SharingReport;
use crate::tensor::Real;

/// Graph leaves for a model's parameters, in [`MultiTaskModel::params_mut`] order.
#[derive(Clone, Debug, Default)]
pub struct Binding {
    pub params: Vec<NodeId>,
}

pub trait MultiTaskModel<T: Real> {
    /// Task id per input slot.
    fn task_ids(&self) -> Vec<usize>;

    /// Called once before every optimizer step.
    fn before_step(&mut self) -> Result<()> {
        Ok(())
    }

    /// Called once before evaluation.
    fn before_eval(&mut self) -> Result<()> {
        Ok(())
    }

    fn bind(&self, g: &mut Graph<T>) -> Binding;

    /// Logits per task slot; slots without input produce `None`.
    fn forward(&self, g: &mut Graph<T>, b: &Binding, inputs: &[Option<NodeId>]) -> Result<Vec<Option<NodeId>>>;

    /// Parameter nodes entering task slot `task`'s L2 penalty.
    fn regularized(&self, b: &Binding, task: usize) -> Vec<NodeId>;

    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn checkpoint(&self) -> Checkpoint;

    fn sharing_report(&self) -> Option<SharingReport> {
        None
    }
}
