use rand::Rng;

use super::layers::Conv;
use super::params::{Ctx, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// 1×1 convolution to `c` class maps followed by global average pooling.
#[derive(Clone, Debug)]
pub struct Classifier {
    pub conv: Conv,
    pub classes: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// Pre-pooling class maps, `c×h×w`.
    pub map: Var,
    pub logits: Var,
}

/// Logits and their sigmoid confidences.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierOutput {
    pub logits: Vec<f64>,
    pub confidences: Vec<f64>,
}

impl ClassifierOutput {
    pub fn from_logits<T: Scalar>(logits: &Tensor<T>) -> Self {
        let logits = logits.to_f64_vec();
        let confidences = logits.iter().map(|&x| f64::sigmoid(x)).collect();
        ClassifierOutput { logits, confidences }
    }

    /// First index of the largest logit.
    pub fn argmax(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl Classifier {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, cin: usize, classes: usize, rng: &mut R) -> Self {
        Classifier {
            conv: Conv::pointwise(store, name, cin, classes, rng),
            classes,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, feature: Var) -> Result<HeadOutput> {
        if ctx.g.shape(feature).len() != 3 {
            return Err(Error::invalid_shape("classify", format!("rank-3 feature required, got {:?}", ctx.g.shape(feature))));
        }
        let map = self.conv.forward(ctx, feature)?;
        let logits = ctx.g.gap(map)?;
        Ok(HeadOutput { map, logits })
    }
}
