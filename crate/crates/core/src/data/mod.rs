//! Task datasets: in-memory form, on-disk format, splits and synthetic tasks.

mod disk;
mod split;
mod synthetic;

pub use disk::{load_dataset, write_dataset};
pub use split::{split_70_30, split_with, Normalizer, Split, SplitMode};
pub use synthetic::{generate_tasks, SyntheticTaskFamily, TaskRequest, TaskTransform};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct InputDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl InputDims {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn volume(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Parses `CxHxW`, e.g. `1x16x16`.
    pub fn parse(s: &str) -> Option<Self> {
        let mut it = s.trim().split('x').map(|p| p.trim().parse::<usize>().ok());
        let dims = Self::new(it.next()??, it.next()??, it.next()??);
        (it.next().is_none() && dims.volume() > 0).then_some(dims)
    }
}

impl std::fmt::Display for InputDims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Examples stored back to back as raw `f32`, with 0-based labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dims: InputDims,
    pub classes: usize,
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dims: InputDims, classes: usize, data: Vec<f32>, labels: Vec<usize>) -> Result<Self> {
        if data.len() != labels.len() * dims.volume() {
            return Err(Error::DataLength {
                shape: vec![labels.len(), dims.channels, dims.height, dims.width],
                len: data.len(),
            });
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::LabelOutOfRange {
                index,
                label,
                classes,
            });
        }
        Ok(Self {
            dims,
            classes,
            data,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn example(&self, i: usize) -> &[f32] {
        let v = self.dims.volume();
        &self.data[i * v..(i + 1) * v]
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut data = Vec::with_capacity(indices.len() * self.dims.volume());
        for &i in indices {
            data.extend_from_slice(self.example(i));
        }
        Dataset {
            dims: self.dims,
            classes: self.classes,
            data,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// `[B, C, H, W]` batch and labels for the given indices.
    pub fn batch<T: Real>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let mut data = Vec::with_capacity(indices.len() * self.dims.volume());
        for &i in indices {
            data.extend(self.example(i).iter().map(|&v| T::from_f64_lossy(v as f64)));
        }
        let shape = vec![
            indices.len(),
            self.dims.channels,
            self.dims.height,
            self.dims.width,
        ];
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (
            Tensor::new(shape, data).expect("batch volume matches dims"),
            labels,
        )
    }

    /// Nearest-neighbour spatial resize to `height x width`.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Dataset {
        let d = self.dims;
        if d.height == height && d.width == width {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.len() * d.channels * height * width);
        for i in 0..self.len() {
            let ex = self.example(i);
            for c in 0..d.channels {
                for y in 0..height {
                    let sy = y * d.height / height;
                    for x in 0..width {
                        let sx = x * d.width / width;
                        data.push(ex[(c * d.height + sy) * d.width + sx]);
                    }
                }
            }
        }
        Dataset {
            dims: InputDims::new(d.channels, height, width),
            classes: self.classes,
            data,
            labels: self.labels.clone(),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// What a task network needs to know about its task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaskShape {
    pub id: usize,
    pub dims: InputDims,
    pub classes: usize,
}

impl From<&TaskSpec> for TaskShape {
    fn from(t: &TaskSpec) -> Self {
        Self { id: t.id, dims: t.dims, classes: t.classes }
    }
}

impl From<&TaskData> for TaskShape {
    fn from(t: &TaskData) -> Self {
        Self { id: t.id, dims: t.dims, classes: t.classes }
    }
}

/// One heterogeneous task: its id, input dimensions, class count and data.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub id: usize,
    pub dims: InputDims,
    pub classes: usize,
    pub dataset: Dataset,
}

impl TaskSpec {
    pub fn new(id: usize, dataset: Dataset) -> Result<Self> {
        if dataset.classes < 2 {
            return Err(Error::Architecture {
                task: id,
                reason: format!("class count must be at least 2, got {}", dataset.classes),
            });
        }
        Ok(Self {
            id,
            dims: dataset.dims,
            classes: dataset.classes,
            dataset,
        })
    }

    pub fn examples(&self) -> usize {
        self.dataset.len()
    }
}

/// A task after splitting and normalization, ready for training.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub id: usize,
    pub dims: InputDims,
    pub classes: usize,
    pub train: Dataset,
    pub test: Dataset,
}

impl TaskData {
    /// Stratified 70/30 split, then per-channel normalization fitted on train.
    pub fn prepare(spec: &TaskSpec, seed: u64, mode: SplitMode) -> Result<Self> {
        let split = split_with(&spec.dataset.labels, spec.classes, seed, mode)?;
        let train = spec.dataset.subset(&split.train);
        let test = spec.dataset.subset(&split.test);
        let norm = Normalizer::fit(&train);
        Ok(Self {
            id: spec.id,
            dims: spec.dims,
            classes: spec.classes,
            train: norm.apply(&train),
            test: norm.apply(&test),
        })
    }
}
