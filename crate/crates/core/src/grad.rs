//! Flat parameter-shaped vectors: model weights, gradients and residuals.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ParamDesc {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamDesc {
    pub fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        ParamDesc {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    pub fn size(&self) -> usize {
        numel(&self.shape)
    }
}

/// Ordered parameter descriptors. Shared behind an `Arc` so vectors over the
/// same model compare layouts by pointer first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout(Arc<Vec<ParamDesc>>);

impl Layout {
    pub fn new(params: Vec<ParamDesc>) -> Self {
        Layout(Arc::new(params))
    }

    pub fn params(&self) -> &[ParamDesc] {
        &self.0
    }

    pub fn total(&self) -> usize {
        self.0.iter().map(ParamDesc::size).sum()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.0.iter().map(ParamDesc::size).collect()
    }

    /// Start/end offsets of each block inside the flat vector.
    pub fn ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut start = 0;
        self.0
            .iter()
            .map(|p| {
                let r = start..start + p.size();
                start = r.end;
                r
            })
            .collect()
    }

    pub fn same(&self, other: &Layout) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradVector<S> {
    layout: Layout,
    values: Vec<S>,
}

impl<S: Scalar> GradVector<S> {
    pub fn new(layout: Layout, values: Vec<S>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(Error::LayoutMismatch);
        }
        Ok(GradVector { layout, values })
    }

    pub fn zeros(layout: &Layout) -> Self {
        GradVector {
            values: vec![S::zero(); layout.total()],
            layout: layout.clone(),
        }
    }

    /// Concatenates one tensor per block, in layout order.
    pub fn from_blocks(layout: &Layout, blocks: &[Tensor<S>]) -> Result<Self> {
        if blocks.len() != layout.params().len() {
            return Err(Error::LayoutMismatch);
        }
        let mut values = Vec::with_capacity(layout.total());
        for (desc, block) in layout.params().iter().zip(blocks) {
            if block.shape() != desc.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "from_blocks",
                    left: desc.shape.clone(),
                    right: block.shape().to_vec(),
                });
            }
            values.extend_from_slice(block.data());
        }
        Ok(GradVector {
            layout: layout.clone(),
            values,
        })
    }

    /// Splits back into per-block tensors.
    pub fn to_blocks(&self) -> Vec<Tensor<S>> {
        self.layout
            .params()
            .iter()
            .zip(self.layout.ranges())
            .map(|(d, r)| Tensor::from_parts(d.shape.clone(), self.values[r].to_vec()))
            .collect()
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn block(&self, index: usize) -> &[S] {
        let r = self.layout.ranges()[index].clone();
        &self.values[r]
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.layout.same(&other.layout) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch)
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        Ok(self.zip(other, |a, b| a - b))
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: S, other: &Self) -> Result<()> {
        self.check(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, c: S) -> Self {
        GradVector {
            layout: self.layout.clone(),
            values: self.values.iter().map(|&v| v * c).collect(),
        }
    }

    pub fn norm(&self) -> S {
        self.values.iter().map(|&v| v * v).sum::<S>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<S> {
        self.check(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn zip(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        GradVector {
            layout: self.layout.clone(),
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}
