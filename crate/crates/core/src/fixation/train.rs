use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::model::FpNet;
use crate::error::{Error, Result};
use crate::metrics;
use crate::nets::train::{apply_gradients, batch_gradients, epoch_order, numeric_context, TrainConfig};
use crate::nets::{ParamStore, VideoFragment};
use crate::scalar::Scalar;
use crate::tensor::{Optimizer, Tensor};

pub type FpTrainConfig = TrainConfig;

/// Fragments with their audio gates, and one pseudofixation per output map.
#[derive(Clone, Debug)]
pub struct FpExample {
    pub inputs: Vec<(VideoFragment, f64)>,
    pub targets: Vec<Tensor<f64>>,
}

impl FpExample {
    pub fn refs(&self) -> Vec<(&VideoFragment, f64)> {
        self.inputs.iter().map(|(f, g)| (f, *g)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FpTrainReport {
    pub losses: Vec<f64>,
    pub held_out_cc: Vec<f64>,
    pub best_epoch: usize,
}

/// Mean CC between the first predicted map and the first target over
/// examples whose maps are non-constant.
pub fn held_out_cc<T: Scalar>(net: &FpNet<T>, examples: &[FpExample]) -> Result<f64> {
    let ccs = examples
        .par_iter()
        .map(|ex| {
            let pred = net.predict(&ex.refs())?;
            Ok(metrics::cc(&pred[0], &ex.targets[0]).ok())
        })
        .collect::<Result<Vec<Option<f64>>>>()?;
    let valid: Vec<f64> = ccs.into_iter().flatten().collect();
    if valid.is_empty() {
        return Err(Error::Numeric("no held-out example has a non-constant map".into()));
    }
    Ok(valid.iter().sum::<f64>() / valid.len() as f64)
}

/// Minibatch SGD on `Σ (BCE + KL)` over the output maps. The returned net
/// holds the weights of the epoch with the best held-out CC.
pub fn train_fixation<T, M>(
    net: &mut FpNet<T>,
    n: usize,
    make: M,
    held_out: &[FpExample],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut log: impl FnMut(usize, f64, f64),
) -> Result<FpTrainReport>
where
    T: Scalar,
    M: Fn(usize, &mut ChaCha8Rng) -> Result<FpExample>,
{
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    if held_out.is_empty() {
        return Err(Error::InvalidInput("empty held-out set".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer, T::of(cfg.lr), T::of(cfg.momentum), Vec::new());
    let mut best: Option<(f64, usize, ParamStore<T>)> = None;
    let mut report = FpTrainReport {
        losses: Vec::new(),
        held_out_cc: Vec::new(),
        best_epoch: 0,
    };
    for epoch in 0..cfg.epochs {
        opt.set_lr(T::of(cfg.lr_at(epoch)));
        let order = epoch_order(n, cfg.samples_per_epoch, rng);
        let mut sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let batch = chunk.iter().map(|&i| make(i, rng)).collect::<Result<Vec<_>>>()?;
            let (loss, grads) = batch_gradients(&net.store, &batch, |ctx, ex: &FpExample| {
                let maps = net.forward(ctx, &ex.refs())?;
                if maps.len() != ex.targets.len() {
                    return Err(Error::InvalidInput("one pseudofixation per output map is required".into()));
                }
                let mut total = None;
                for (&m, t) in maps.iter().zip(&ex.targets) {
                    let t = t.cast::<T>();
                    let bce = ctx.g.bce_loss(m, &t)?;
                    let kl = ctx.g.kl_loss(m, &t)?;
                    let l = ctx.g.add(bce, kl)?;
                    total = Some(match total {
                        None => l,
                        Some(acc) => ctx.g.add(acc, l)?,
                    });
                }
                total.ok_or_else(|| Error::InvalidInput("no output maps".into()))
            })
            .map_err(|e| numeric_context(e, epoch, b))?;
            apply_gradients(&mut net.store, grads, &mut opt).map_err(|e| numeric_context(e, epoch, b))?;
            sum += loss * chunk.len() as f64;
        }
        let mean = sum / order.len() as f64;
        let cc = held_out_cc(net, held_out)?;
        log(epoch, mean, cc);
        report.losses.push(mean);
        report.held_out_cc.push(cc);
        if best.as_ref().map_or(true, |(b, _, _)| cc > *b) {
            best = Some((cc, epoch, net.store.clone()));
        }
    }
    let (_, epoch, store) = best.expect("at least one epoch");
    net.store = store;
    report.best_epoch = epoch;
    Ok(report)
}
