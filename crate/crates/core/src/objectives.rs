//! Disease and source losses, the min-max objective pair, and SGD.
//!
//! Both losses are negated log-likelihoods averaged over the batch, so they
//! are non-negative and minimized. Probabilities are clamped to
//! `[EPS, 1 − EPS]` before the logarithm.

use std::collections::BTreeMap;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

pub const EPS: f64 = 1e-7;

fn check_binary(labels: &[f64]) -> Result<()> {
    match labels.iter().position(|&y| y != 0.0 && y != 1.0) {
        Some(i) => Err(Error::Validation(format!("label {} at row {i} is not 0 or 1", labels[i]))),
        None => Ok(()),
    }
}

/// Sum over all elements of `y·log p + (1−y)·log(1−p)` with `p` clamped.
fn binary_log_likelihood(g: &mut Graph, probs: Var, targets: &Tensor) -> Result<Var> {
    let p = g.clamp(probs, EPS, 1.0 - EPS);
    let log_p = g.log(p)?;
    let neg = g.scale(p, -1.0);
    let q = g.add_scalar(neg, 1.0);
    let log_q = g.log(q)?;
    let y = g.constant(targets.clone());
    let not_y = Tensor::new(targets.shape().to_vec(), targets.data().iter().map(|v| 1.0 - v).collect())?;
    let not_y = g.constant(not_y);
    let a = g.mul(log_p, y)?;
    let b = g.mul(log_q, not_y)?;
    let ll = g.add(a, b)?;
    Ok(g.sum(ll))
}

/// Mean binary cross-entropy of `N×1` probabilities against 0/1 labels.
pub fn bce_loss(g: &mut Graph, y_hat: Var, y: &[f64]) -> Result<Var> {
    let shape = g.value(y_hat).shape().to_vec();
    if shape.len() != 2 || shape[1] != 1 || shape[0] != y.len() {
        return Err(Error::shape("bce_loss", format!("predictions {shape:?} for {} labels", y.len())));
    }
    check_binary(y)?;
    let targets = Tensor::new(shape, y.to_vec())?;
    let ll = binary_log_likelihood(g, y_hat, &targets)?;
    Ok(g.scale(ll, -1.0 / y.len() as f64))
}

/// Mean over rows of `−Σ_i [y_i log ŝ_i + (1−y_i) log(1−ŝ_i)]` for
/// per-source sigmoid scores `N×S` and one-hot targets `N×S`.
pub fn source_ce_loss(g: &mut Graph, s_hat: Var, y_s: &Tensor) -> Result<Var> {
    let shape = g.value(s_hat).shape().to_vec();
    if shape.len() != 2 || y_s.shape() != shape.as_slice() {
        return Err(Error::shape("source_ce_loss", format!("scores {shape:?} vs targets {:?}", y_s.shape())));
    }
    check_binary(y_s.data())?;
    for (i, row) in y_s.data().chunks(shape[1]).enumerate() {
        if row.iter().filter(|&&v| v == 1.0).count() != 1 {
            return Err(Error::Validation(format!("source target row {i} is not one-hot: {row:?}")));
        }
    }
    let ll = binary_log_likelihood(g, s_hat, y_s)?;
    Ok(g.scale(ll, -1.0 / shape[0] as f64))
}

/// One-hot `N×S` matrix from source indices.
pub fn one_hot(sources: &[usize], num_sources: usize) -> Result<Tensor> {
    let mut data = vec![0.0; sources.len() * num_sources];
    for (row, &s) in sources.iter().enumerate() {
        if s >= num_sources {
            return Err(Error::Validation(format!("source index {s} with only {num_sources} sources")));
        }
        data[row * num_sources + s] = 1.0;
    }
    Tensor::new(vec![sources.len(), num_sources], data)
}

/// The two objectives of the min-max game: `L_p − λ·L_s`, minimized over
/// extractor and classifier, and `L_s`, minimized over the discriminator.
pub fn minmax_objectives(g: &mut Graph, l_p: Var, l_s: Var, lambda: f64) -> Result<(Var, Var)> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let pen = g.scale(l_s, -lambda);
    let extractor_objective = g.add(l_p, pen)?;
    Ok((extractor_objective, l_s))
}

/// SGD with heavy-ball momentum: `v ← βv + g`, `θ ← θ − ηv`.
#[derive(Clone, Debug)]
pub struct Sgd {
    lr: f64,
    momentum: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        Ok(Sgd { lr, momentum, velocity: BTreeMap::new() })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn velocity(&self, name: &str) -> Option<&[f64]> {
        self.velocity.get(name).map(Vec::as_slice)
    }

    /// Applies one update to every listed parameter. Fails without touching
    /// anything if one of them has no gradient. Gradients are left in place;
    /// callers zero them.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = (String, &'a mut Tensor)>) -> Result<()> {
        let params: Vec<_> = params.into_iter().collect();
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::Validation(format!("parameter {name} has no gradient")));
        }
        for (name, t) in params {
            let grad = t.grad().expect("checked above").to_vec();
            let v = self.velocity.entry(name).or_insert_with(|| vec![0.0; grad.len()]);
            for ((vi, gi), theta) in v.iter_mut().zip(&grad).zip(t.data_mut()) {
                *vi = self.momentum * *vi + gi;
                *theta -= self.lr * *vi;
            }
        }
        Ok(())
    }
}
