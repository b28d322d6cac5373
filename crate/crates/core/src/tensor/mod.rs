//! Minimal reverse-mode autodiff over dense `f32` tensors.
//!
//! A [`Tensor`] is a plain value: a shape, a row-major buffer and, for
//! parameters, an optional gradient slot. Computation happens on a
//! [`Graph`], which records every operation so that [`Graph::backward`] can
//! replay them in reverse. Model parameters live outside the graph in a
//! [`ParamSet`]; each forward pass registers them as leaves and copies the
//! resulting gradients back afterwards.
//!
//! Only the operations needed by the forecasting models are provided:
//! 1-, 2- and 3-D cross-correlation, 2x2 max pooling, affine maps, the
//! usual pointwise nonlinearities, dropout, MSE, and the LSTM / ConvLSTM
//! cells built from them.

mod cells;
mod conv;
mod graph;
mod init;
mod optim;
mod params;

pub use cells::{convlstm_cell, lstm_cell, ConvLstmVars, LstmVars};
pub use conv::Padding;
pub use graph::{Graph, Var};
pub use init::{glorot_uniform, recurrent_uniform};
pub use optim::Adam;
pub use params::{BoundParams, ParamSet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dim(format!("zero-sized dimension in shape {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::dim(format!(
                "shape {shape:?} needs {} elements, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(&[1], value)
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Option<Vec<f32>>) -> Result<()> {
        if let Some(g) = &grad {
            if g.len() != self.data.len() {
                return Err(Error::dim(format!(
                    "gradient of length {} for tensor of shape {:?}",
                    g.len(),
                    self.shape
                )));
            }
        }
        self.grad = grad;
        Ok(())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
            requires_grad: false,
            grad: None,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Slice `[index]` along the leading axis.
    pub fn index_first(&self, index: usize) -> Result<Tensor> {
        let lead = *self
            .shape
            .first()
            .ok_or_else(|| Error::dim("index_first on rank-0 tensor"))?;
        if index >= lead {
            return Err(Error::dim(format!("index {index} out of range for axis of {lead}")));
        }
        let inner: Vec<usize> = if self.shape.len() == 1 {
            vec![1]
        } else {
            self.shape[1..].to_vec()
        };
        let step = numel(&inner);
        Tensor::new(inner, self.data[index * step..(index + 1) * step].to_vec())
    }

    /// Stack equally-shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::dim("stack of zero tensors"))?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::dim(format!(
                    "stack: shape {:?} differs from {:?}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Tensor::new(shape, data)
    }

    /// Non-overlapping average pooling over the last two axes.
    ///
    /// Used as a fixed (parameter-free) image stem; `factor` must divide
    /// both spatial dimensions.
    pub fn avg_pool_last2(&self, factor: usize) -> Result<Tensor> {
        let r = self.shape.len();
        if r < 2 {
            return Err(Error::dim("avg_pool_last2 needs rank >= 2"));
        }
        let (h, w) = (self.shape[r - 2], self.shape[r - 1]);
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::dim(format!(
                "pool factor {factor} does not divide {h}x{w}"
            )));
        }
        if factor == 1 {
            return Ok(self.clone().with_requires_grad(false));
        }
        let (oh, ow) = (h / factor, w / factor);
        let outer = numel(&self.shape[..r - 2]);
        let scale = 1.0 / (factor * factor) as f32;
        let mut out = vec![0.0f32; outer * oh * ow];
        for o in 0..outer {
            let src = &self.data[o * h * w..(o + 1) * h * w];
            let dst = &mut out[o * oh * ow..(o + 1) * oh * ow];
            for y in 0..h {
                let row = &src[y * w..(y + 1) * w];
                let drow = &mut dst[(y / factor) * ow..(y / factor + 1) * ow];
                for (x, v) in row.iter().enumerate() {
                    drow[x / factor] += v;
                }
            }
            dst.iter_mut().for_each(|v| *v *= scale);
        }
        let mut shape = self.shape[..r - 2].to_vec();
        shape.extend_from_slice(&[oh, ow]);
        Tensor::new(shape, out)
    }
}
