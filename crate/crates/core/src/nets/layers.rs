use rand::Rng;

use super::params::{Ctx, ParamId, ParamStore};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Var;

#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        Conv {
            w: store.add_weight(format!("{name}.w"), &[cout, cin, k, k], cin * k * k, rng),
            b: store.add_zeros(format!("{name}.b"), &[cout]),
            stride,
            pad,
        }
    }

    /// 1×1 convolution, the channel-mixing "refine" layer.
    pub fn pointwise<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, rng: &mut R) -> Self {
        Self::new(store, name, cin, cout, 1, 1, 0, rng)
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.w), ctx.p(self.b));
        let y = ctx.g.conv2d(x, w, self.stride, self.pad)?;
        ctx.g.add_channel(y, b)
    }

    pub fn forward_relu<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let y = self.forward(ctx, x)?;
        ctx.g.relu(y)
    }
}

#[derive(Clone, Debug)]
pub struct Deconv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
}

impl Deconv {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut R) -> Self {
        Deconv {
            w: store.add_weight(format!("{name}.w"), &[cin, cout, k, k], cin * k * k / (stride * stride).max(1), rng),
            b: store.add_zeros(format!("{name}.b"), &[cout]),
            stride,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.w), ctx.p(self.b));
        let y = ctx.g.deconv2d(x, w, self.stride, 0)?;
        ctx.g.add_channel(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct Conv3 {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv3 {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kt: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        Conv3 {
            w: store.add_weight(format!("{name}.w"), &[cout, cin, kt, k, k], cin * kt * k * k, rng),
            b: store.add_zeros(format!("{name}.b"), &[cout]),
            stride,
            pad,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.w), ctx.p(self.b));
        let y = ctx.g.conv3d(x, w, self.stride, self.pad)?;
        ctx.g.add_channel(y, b)
    }
}
