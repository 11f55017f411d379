//! Gradient-matching representatives.
//!
//! A same-label batch is replaced by one point `x̄ + δ` near its mean whose
//! parameter gradient is as close as possible to the batch mean gradient,
//! optionally corrected by the residual left over from the previous call.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::grad::{GradVector, Layout};
use crate::models::{ModelState, Reduction};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_IMAGE_BUDGET: f64 = 2.0;
pub const DEFAULT_ETA_DELTA: f64 = 0.1;
pub const DEFAULT_INNER_EPOCHS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepConfig {
    /// L2 radius `s` around the batch mean.
    pub budget: f64,
    /// Inner descent steps `H`.
    pub inner_epochs: usize,
    pub eta_delta: f64,
    pub use_residual: bool,
}

impl RepConfig {
    /// Budget 2.0 for images and `0.1 * sqrt(d)` for flat features.
    pub fn default_for(input_shape: &[usize]) -> Self {
        let budget = if input_shape.len() == 3 {
            DEFAULT_IMAGE_BUDGET
        } else {
            0.1 * (input_shape.iter().product::<usize>() as f64).sqrt()
        };
        RepConfig {
            budget,
            inner_epochs: DEFAULT_INNER_EPOCHS,
            eta_delta: DEFAULT_ETA_DELTA,
            use_residual: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::Config(format!("budget must be >= 0, got {}", self.budget)));
        }
        if self.inner_epochs == 0 {
            return Err(Error::Config("inner epochs must be >= 1".into()));
        }
        if !(self.eta_delta > 0.0 && self.eta_delta.is_finite()) {
            return Err(Error::Config(format!("eta_delta must be > 0, got {}", self.eta_delta)));
        }
        Ok(())
    }
}

/// Synthetic stand-in for one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Representative<S> {
    /// Same shape as one raw sample, entries in [0, 1].
    pub x: Tensor<S>,
    pub label: usize,
    pub batch_size: usize,
    /// Best matching loss found by the inner search.
    pub matching_loss: S,
    /// Summed cross-entropy of the raw batch at the weights used.
    pub batch_loss: S,
    /// Parameter gradient of `(x, label)` at the weights used.
    pub gradient: GradVector<S>,
}

/// Gradient discrepancy carried from one representative to the next.
#[derive(Clone, Debug, PartialEq)]
pub struct Residual<S> {
    pub tau: GradVector<S>,
}

impl<S: Scalar> Residual<S> {
    pub fn zeros(layout: &Layout) -> Self {
        Residual {
            tau: GradVector::zeros(layout),
        }
    }

    pub fn norm(&self) -> S {
        self.tau.norm()
    }
}

/// Element-wise mean of equally shaped samples, accumulated as a running
/// mean so a batch of identical samples returns that sample exactly.
pub fn batch_mean<S: Scalar>(samples: &[Tensor<S>]) -> Result<Tensor<S>> {
    let first = samples.first().ok_or(Error::EmptyBatch)?;
    let mut mean = first.clone();
    for (k, s) in samples.iter().enumerate().skip(1) {
        let w = S::one() / S::from_usize(k + 1).unwrap();
        mean = mean.zip_map(s, "batch mean", |m, v| m + (v - m) * w)?;
    }
    Ok(mean)
}

fn rows_mean<S: Scalar>(x: &Tensor<S>, sample_shape: &[usize]) -> Tensor<S> {
    let n = x.shape()[0];
    let d = x.len() / n;
    let mut mean = x.data()[..d].to_vec();
    for (k, row) in x.data().chunks(d).enumerate().skip(1) {
        let w = S::one() / S::from_usize(k + 1).unwrap();
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += (v - *m) * w;
        }
    }
    Tensor::new(sample_shape.to_vec(), mean).expect("mean keeps the sample shape")
}

/// `||∇_w L(w, x_cand, label) - target + tau||₂`, differentiable in `x_cand`.
///
/// `x_cand` has the shape of one sample and must live on a recording graph.
pub fn matching_loss<'g, S: Scalar>(
    model: &ModelState<S>,
    g: &'g Graph<S>,
    x_cand: Var<'g, S>,
    label: usize,
    target: &GradVector<S>,
    tau: &GradVector<S>,
) -> Result<Var<'g, S>> {
    let layout = model.params().layout();
    if !target.layout().same(layout) || !tau.layout().same(layout) {
        return Err(Error::LayoutMismatch);
    }
    let offset = target.sub(tau)?;
    let params = model.bind(g, true);
    let mut shape = vec![1];
    shape.extend(x_cand.shape());
    let loss = model.loss(&params, x_cand.reshape(&shape)?, &[label], Reduction::Sum)?;
    let grads = g.backward(loss, &params, true)?;
    let mut acc: Option<Var<'g, S>> = None;
    for (gr, off) in grads.iter().zip(offset.to_blocks()) {
        let d = gr.sub(g.constant(off))?;
        let sq = d.dot(d)?;
        acc = Some(match acc {
            Some(a) => a.add(sq)?,
            None => sq,
        });
    }
    acc.expect("models have at least one block").sqrt()
}

/// Result of the inner search.
#[derive(Clone, Debug, PartialEq)]
pub struct DeltaSearch<S> {
    /// Best perturbation seen, `||delta|| <= s`.
    pub delta: Tensor<S>,
    /// Matching loss at `delta`.
    pub loss: S,
    /// Matching loss at every visited iterate, starting with `delta = 0`.
    pub trace: Vec<S>,
}

fn loss_and_grad<S: Scalar>(
    model: &ModelState<S>,
    mean: &Tensor<S>,
    delta: &Tensor<S>,
    label: usize,
    target: &GradVector<S>,
    tau: &GradVector<S>,
    want_grad: bool,
) -> Result<(S, Option<Tensor<S>>)> {
    let g = Graph::new();
    let dv = g.input(delta.clone());
    let x = g.constant(mean.clone()).add(dv)?;
    let l = matching_loss(model, &g, x, label, target, tau)?;
    let grad = if want_grad { Some(g.grad_of_grad(l, dv)?) } else { None };
    Ok((l.item(), grad))
}

/// Projected gradient descent on `δ` from zero for `H` steps, returning the
/// best iterate by matching loss.
pub fn optimize_delta<S: Scalar>(
    model: &ModelState<S>,
    mean: &Tensor<S>,
    label: usize,
    target: &GradVector<S>,
    tau: &GradVector<S>,
    cfg: &RepConfig,
) -> Result<DeltaSearch<S>> {
    cfg.validate()?;
    let budget = S::from_f64_lossy(cfg.budget);
    let eta = S::from_f64_lossy(cfg.eta_delta);
    let numeric = |it: usize| {
        move |e: Error| match e {
            Error::NonFinite { .. } => Error::InnerNonFinite { iteration: it },
            other => other,
        }
    };

    let mut delta = Tensor::zeros(mean.shape());
    let mut best = (delta.clone(), S::infinity());
    let mut trace = Vec::with_capacity(cfg.inner_epochs + 1);
    for it in 0..cfg.inner_epochs {
        let (l, grad) = loss_and_grad(model, mean, &delta, label, target, tau, true).map_err(numeric(it))?;
        trace.push(l);
        if l < best.1 {
            best = (delta.clone(), l);
        }
        if l == S::zero() {
            return Ok(DeltaSearch {
                delta: best.0,
                loss: best.1,
                trace,
            });
        }
        let grad = grad.expect("requested");
        if !grad.all_finite() {
            return Err(Error::InnerNonFinite { iteration: it });
        }
        delta = delta.sub(&grad.scale(eta))?;
        let n = delta.norm();
        if n > budget {
            delta = delta.scale(budget / n);
        }
    }
    let it = cfg.inner_epochs;
    let (l, _) = loss_and_grad(model, mean, &delta, label, target, tau, false).map_err(numeric(it))?;
    trace.push(l);
    if l < best.1 {
        best = (delta, l);
    }
    Ok(DeltaSearch {
        delta: best.0,
        loss: best.1,
        trace,
    })
}

/// Builds the representative of `batch` and the residual to carry forward.
///
/// The matching target is the batch mean gradient; the new residual is the
/// gap between the clipped representative's gradient and that target.
pub fn build_representative<S: Scalar>(
    model: &ModelState<S>,
    ds: &Dataset<S>,
    batch: &Batch,
    residual: &Residual<S>,
    cfg: &RepConfig,
) -> Result<(Representative<S>, Residual<S>)> {
    let (x, labels) = ds.batch(batch.indices());
    let b = batch.len();
    let (batch_loss, sum) = model.param_gradient(&x, &labels)?;
    let target = sum.scale(S::one() / S::from_usize(b).unwrap());
    let mean = rows_mean(&x, ds.feature_shape());
    let zeros;
    let tau = if cfg.use_residual {
        &residual.tau
    } else {
        zeros = GradVector::zeros(model.params().layout());
        &zeros
    };
    let search = optimize_delta(model, &mean, batch.label(), &target, tau, cfg)?;
    let xr = mean.add(&search.delta)?.clamp(S::zero(), S::one());
    let mut shape = vec![1];
    shape.extend(ds.feature_shape());
    let (_, gradient) = model.param_gradient(&xr.reshape(&shape)?, &[batch.label()])?;
    let tau = gradient.sub(&target)?;
    Ok((
        Representative {
            x: xr,
            label: batch.label(),
            batch_size: b,
            matching_loss: search.loss,
            batch_loss,
            gradient,
        },
        Residual { tau },
    ))
}
