//! Differentiable classifiers over a flat parameter vector.

pub mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::grad::{GradVector, Layout, ParamDesc};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const CONV1_CHANNELS: usize = 8;
const CONV2_CHANNELS: usize = 16;
const KERNEL: usize = 5;
const PAD: usize = 2;

pub const DEFAULT_MLP_HIDDEN: [usize; 2] = [128, 64];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    /// Fully connected layers with ReLU between them.
    Mlp { hidden: Vec<usize> },
    /// conv(1→8, 5x5) → ReLU → pool → conv(8→16, 5x5) → ReLU → pool → linear.
    Cnn,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Architecture,
    /// Per-sample shape: `[d]` for flat data, `[H, W, C]` for images.
    pub input_shape: Vec<usize>,
    pub num_classes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

impl ModelSpec {
    pub fn mlp(input_shape: &[usize], hidden: &[usize], num_classes: usize) -> Result<Self> {
        let spec = ModelSpec {
            arch: Architecture::Mlp {
                hidden: hidden.to_vec(),
            },
            input_shape: input_shape.to_vec(),
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn cnn(input_shape: &[usize], num_classes: usize) -> Result<Self> {
        let spec = ModelSpec {
            arch: Architecture::Cnn,
            input_shape: input_shape.to_vec(),
            num_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::InvalidSpec(format!("bad input shape {:?}", self.input_shape)));
        }
        match &self.arch {
            Architecture::Mlp { hidden } => {
                if hidden.contains(&0) {
                    return Err(Error::InvalidSpec("hidden widths must be positive".into()));
                }
            }
            Architecture::Cnn => {
                let s = &self.input_shape;
                if s.len() != 3 || s[2] != 1 {
                    return Err(Error::InvalidSpec(format!(
                        "cnn takes single-channel H x W x 1 images, got {s:?}"
                    )));
                }
                if s[0] < 4 || s[1] < 4 {
                    return Err(Error::InvalidSpec(format!("image {s:?} too small for two pools")));
                }
            }
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Parameter blocks in a fixed order; a pure function of the spec.
    pub fn layout(&self) -> Layout {
        let mut params = Vec::new();
        match &self.arch {
            Architecture::Mlp { hidden } => {
                let mut widths = vec![self.input_len()];
                widths.extend(hidden);
                widths.push(self.num_classes);
                for (i, w) in widths.windows(2).enumerate() {
                    params.push(ParamDesc::new(format!("fc{}.weight", i + 1), &[w[0], w[1]]));
                    params.push(ParamDesc::new(format!("fc{}.bias", i + 1), &[w[1]]));
                }
            }
            Architecture::Cnn => {
                let (h, w) = (self.input_shape[0] / 4, self.input_shape[1] / 4);
                params.push(ParamDesc::new("conv1.weight", &[CONV1_CHANNELS, 1, KERNEL, KERNEL]));
                params.push(ParamDesc::new("conv1.bias", &[CONV1_CHANNELS]));
                params.push(ParamDesc::new(
                    "conv2.weight",
                    &[CONV2_CHANNELS, CONV1_CHANNELS, KERNEL, KERNEL],
                ));
                params.push(ParamDesc::new("conv2.bias", &[CONV2_CHANNELS]));
                params.push(ParamDesc::new("fc.weight", &[CONV2_CHANNELS * h * w, self.num_classes]));
                params.push(ParamDesc::new("fc.bias", &[self.num_classes]));
            }
        }
        Layout::new(params)
    }
}

/// Glorot-uniform bound for a weight block; `None` for biases.
fn init_bound(desc: &ParamDesc) -> Option<f64> {
    let s = &desc.shape;
    let (fan_in, fan_out) = match s.len() {
        2 => (s[0], s[1]),
        4 => (s[1] * s[2] * s[3], s[0] * s[2] * s[3]),
        _ => return None,
    };
    Some((6.0 / (fan_in + fan_out) as f64).sqrt())
}

/// A model spec together with its current weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<S> {
    spec: ModelSpec,
    params: GradVector<S>,
}

impl<S: Scalar> ModelState<S> {
    /// Weights uniform in ±sqrt(6 / (fan_in + fan_out)), biases zero.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(layout.total());
        for desc in layout.params() {
            match init_bound(desc) {
                Some(a) => values.extend((0..desc.size()).map(|_| S::from_f64_lossy(rng.gen_range(-a..a)))),
                None => values.extend(std::iter::repeat_n(S::zero(), desc.size())),
            }
        }
        let params = GradVector::new(layout, values)?;
        Ok(ModelState { spec, params })
    }

    pub fn from_params(spec: ModelSpec, params: GradVector<S>) -> Result<Self> {
        spec.validate()?;
        if params.layout() != &spec.layout() {
            return Err(Error::LayoutMismatch);
        }
        Ok(ModelState { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &GradVector<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut GradVector<S> {
        &mut self.params
    }

    /// Puts every parameter block on `g`, differentiable or constant.
    pub fn bind<'g>(&self, g: &'g Graph<S>, trainable: bool) -> Vec<Var<'g, S>> {
        self.params
            .to_blocks()
            .into_iter()
            .map(|t| if trainable { g.input(t) } else { g.constant(t) })
            .collect()
    }

    fn check_input(&self, shape: &[usize]) -> Result<usize> {
        if shape.len() != self.spec.input_shape.len() + 1 || shape[1..] != self.spec.input_shape[..] {
            let mut want = vec![0];
            want.extend(&self.spec.input_shape);
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: want,
                right: shape.to_vec(),
            });
        }
        Ok(shape[0])
    }

    /// Logits `[N, M]` for a batch `x` of shape `[N, ..input_shape]`.
    pub fn logits<'g>(&self, params: &[Var<'g, S>], x: Var<'g, S>) -> Result<Var<'g, S>> {
        let n = self.check_input(&x.shape())?;
        match &self.spec.arch {
            Architecture::Mlp { .. } => {
                let mut h = x.reshape(&[n, self.spec.input_len()])?;
                let layers = params.len() / 2;
                for (i, pair) in params.chunks(2).enumerate() {
                    h = h.matmul(pair[0])?.bias_add(pair[1])?;
                    if i + 1 < layers {
                        h = h.relu()?;
                    }
                }
                Ok(h)
            }
            Architecture::Cnn => {
                let (ih, iw) = (self.spec.input_shape[0], self.spec.input_shape[1]);
                // H x W x 1 and 1 x H x W share a memory layout
                let h = x.reshape(&[n, 1, ih, iw])?;
                let h = h.conv2d(params[0], PAD)?.bias_add(params[1])?.relu()?.maxpool2()?;
                let h = h.conv2d(params[2], PAD)?.bias_add(params[3])?.relu()?.maxpool2()?;
                h.flatten()?.matmul(params[4])?.bias_add(params[5])
            }
        }
    }

    /// Cross-entropy over a batch; `Sum` adds the per-sample losses.
    pub fn loss<'g>(
        &self,
        params: &[Var<'g, S>],
        x: Var<'g, S>,
        labels: &[usize],
        reduction: Reduction,
    ) -> Result<Var<'g, S>> {
        let n = self.check_input(&x.shape())?;
        if labels.len() != n {
            return Err(Error::ShapeMismatch {
                op: "labels",
                left: vec![n],
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.spec.num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: self.spec.num_classes,
            });
        }
        let total = self.logits(params, x)?.softmax_xent(labels)?;
        match reduction {
            Reduction::Sum => Ok(total),
            Reduction::Mean => total.scale(S::one() / S::from_usize(n).unwrap()),
        }
    }

    pub fn loss_value(&self, x: &Tensor<S>, labels: &[usize]) -> Result<S> {
        let g = Graph::inference();
        let params = self.bind(&g, false);
        Ok(self
            .loss(&params, g.constant(x.clone()), labels, Reduction::Sum)?
            .item())
    }

    /// Summed loss and its gradient with respect to the weights.
    pub fn param_gradient(&self, x: &Tensor<S>, labels: &[usize]) -> Result<(S, GradVector<S>)> {
        let g = Graph::new();
        let params = self.bind(&g, true);
        let loss = self.loss(&params, g.constant(x.clone()), labels, Reduction::Sum)?;
        let grads = g.backward(loss, &params, false)?;
        let blocks: Vec<_> = grads.iter().map(Var::value).collect();
        Ok((loss.item(), GradVector::from_blocks(self.params.layout(), &blocks)?))
    }

    /// Gradient of the summed loss with respect to the input batch.
    pub fn input_gradient(&self, x: &Tensor<S>, labels: &[usize]) -> Result<Tensor<S>> {
        let g = Graph::new();
        let params = self.bind(&g, false);
        let xv = g.input(x.clone());
        let loss = self.loss(&params, xv, labels, Reduction::Sum)?;
        Ok(g.backward(loss, &[xv], false)?[0].value())
    }

    /// Arg-max class per sample; ties go to the lowest index.
    pub fn predict(&self, x: &Tensor<S>) -> Result<Vec<usize>> {
        let g = Graph::inference();
        let params = self.bind(&g, false);
        let logits = self.logits(&params, g.constant(x.clone()))?.value();
        let m = self.spec.num_classes;
        Ok(logits
            .data()
            .chunks(m)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }

    /// Plain gradient step `w -= lr * grad`.
    pub fn step(&mut self, lr: S, grad: &GradVector<S>) -> Result<()> {
        self.params.axpy(-lr, grad)
    }
}
