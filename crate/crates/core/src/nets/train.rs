use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::classifier::argmax;
use super::fragment::VideoFragment;
use super::models::{ClsNet, NetInput, NetKind};
use super::params::{Ctx, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{OptKind, Optimizer, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub optimizer: OptKind,
    /// Learning-rate multiplier for parameters a `+` net does not inherit.
    pub fresh_lr_scale: f64,
    /// Cosine decay ends at `lr * lr_floor`; 1 keeps the rate constant.
    pub lr_floor: f64,
    /// Samples drawn per epoch; 0 uses every sample once.
    pub samples_per_epoch: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning rate must be positive and momentum in [0,1)".into()));
        }
        if !(self.fresh_lr_scale > 0.0 && self.fresh_lr_scale.is_finite()) {
            return Err(Error::Config("fresh learning-rate scale must be positive".into()));
        }
        if !(self.lr_floor > 0.0 && self.lr_floor <= 1.0) {
            return Err(Error::Config("learning-rate floor must lie in (0,1]".into()));
        }
        Ok(())
    }

    /// Rate for `epoch`: cosine from `lr` down to `lr * lr_floor` at the
    /// last epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs < 2 {
            return self.lr;
        }
        let t = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.lr * (self.lr_floor + (1.0 - self.lr_floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
    }
}

/// Mean loss and mean parameter gradients over one batch. Per-sample work
/// runs in parallel; the reduction runs in sample order so the result does
/// not depend on the thread count.
pub fn batch_gradients<T, S, F>(store: &ParamStore<T>, batch: &[S], loss: F) -> Result<(f64, Vec<Tensor<T>>)>
where
    T: Scalar,
    S: Sync,
    F: Fn(&mut Ctx<T>, &S) -> Result<Var> + Sync,
{
    let per: Vec<(f64, Vec<Tensor<T>>)> = batch
        .par_iter()
        .map(|s| {
            let mut ctx = Ctx::new(store, true);
            let l = loss(&mut ctx, s)?;
            ctx.g.backward(l)?;
            Ok((ctx.g.value(l).item().as_f64(), ctx.grads()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = T::of_usize(batch.len());
    let mut total = 0.0;
    let mut grads: Vec<Tensor<T>> = store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect();
    for (l, gs) in per {
        total += l;
        for (acc, g) in grads.iter_mut().zip(gs) {
            for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok((total / batch.len() as f64, grads))
}

pub fn apply_gradients<T: Scalar>(store: &mut ParamStore<T>, grads: Vec<Tensor<T>>, opt: &mut Optimizer<T>) -> Result<()> {
    for (p, g) in store.params_mut().iter_mut().zip(grads) {
        p.grad = Some(g);
    }
    opt.step(store.params_mut())
}

/// One epoch's sample order: a shuffle, truncated or cycled to the budget.
pub fn epoch_order(n: usize, budget: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let want = if budget == 0 { n } else { budget };
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        out.extend(idx.into_iter().take(want - out.len()));
    }
    out
}

/// One training example for a classification net.
#[derive(Clone, Debug)]
pub struct ClsExample {
    pub target: VideoFragment,
    pub granular: Option<[VideoFragment; 2]>,
    pub gate: f64,
    /// 0/1 target per output.
    pub label: Vec<f64>,
}

impl ClsExample {
    pub fn input(&self) -> NetInput<'_> {
        NetInput {
            target: &self.target,
            gate: self.gate,
            granular: self.granular.as_ref().map(|[a, b]| [a, b]),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
}

/// Minibatch training on the multilabel soft-margin loss. `make` builds example
/// `i` for the current epoch (granularity partners are re-drawn from `rng`).
pub fn train_classifier<T, M>(
    net: &mut ClsNet<T>,
    n: usize,
    make: M,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut log: impl FnMut(EpochLog),
) -> Result<Vec<f64>>
where
    T: Scalar,
    M: Fn(usize, &mut ChaCha8Rng) -> Result<ClsExample>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer, T::of(cfg.lr), T::of(cfg.momentum), net.lr_scales(cfg.fresh_lr_scale));
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.set_lr(T::of(cfg.lr_at(epoch)));
        let order = epoch_order(n, cfg.samples_per_epoch, rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch = chunk.iter().map(|&i| make(i, rng)).collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_gradients(&net.store, &batch, |ctx, ex: &ClsExample| {
                let out = net.forward(ctx, &ex.input())?;
                let label: Vec<T> = ex.label.iter().map(|&v| T::of(v)).collect();
                ctx.g.msm_loss(out.logits, &label)
            })
            .and_then(|r| {
                if r.0.is_finite() {
                    Ok(r)
                } else {
                    Err(Error::NonFinite("loss".into()))
                }
            })
            .map_err(|e| numeric_context(e, epoch, b))?;
            apply_gradients(&mut net.store, grads, &mut opt).map_err(|e| numeric_context(e, epoch, b))?;
            sum += loss * chunk.len() as f64;
        }
        let mean = sum / order.len() as f64;
        log(EpochLog { epoch, loss: mean });
        losses.push(mean);
    }
    Ok(losses)
}

pub fn numeric_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NonFinite(what) => Error::Numeric(format!("non-finite {what} at epoch {epoch}, batch {batch}")),
        other => other,
    }
}

/// Share of examples whose prediction matches the label: argmax for class
/// nets, the strict ½ threshold for the audio switch.
pub fn accuracy<T: Scalar>(net: &ClsNet<T>, examples: &[ClsExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("no examples to score".into()));
    }
    let hits = examples
        .par_iter()
        .map(|ex| {
            let (out, _) = net.predict(&ex.input())?;
            Ok(if net.kind() == NetKind::Switch {
                (out.confidences[0] > 0.5) == (ex.label[0] > 0.5)
            } else {
                argmax(&out.logits) == argmax(&ex.label)
            })
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / examples.len() as f64)
}
