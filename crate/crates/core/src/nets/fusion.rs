use super::encoders::AudioProjector;
use super::params::Ctx;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

/// `Relu(σ(m) ⊙ s + s)`: `m` modulates `s` through a sigmoid gate.
pub fn gated_residual<T: Scalar>(g: &mut Graph<T>, s: Var, m: Var) -> Result<Var> {
    if g.shape(s) != g.shape(m) {
        return Err(Error::shape("fuse", g.shape(s), g.shape(m)));
    }
    let gate = g.sigmoid(m)?;
    let x = g.mul(gate, s)?;
    let x = g.add(x, s)?;
    g.relu(x)
}

/// Spatial-audio fusion: `Relu(σ(DeConv(φ·a)) ⊙ s + s) ⊗ s`.
pub fn sa_fuse<T: Scalar>(ctx: &mut Ctx<T>, proj: &AudioProjector, s: Var, a: Var, gate: T) -> Result<Var> {
    let m = proj.forward(ctx, a, gate)?;
    let x = gated_residual(&mut ctx.g, s, m)?;
    ctx.g.concat(&[x, s])
}

/// Spatial-temporal fusion: `Relu(σ(v) ⊙ s + s) ⊗ s`.
pub fn st_fuse<T: Scalar>(g: &mut Graph<T>, s: Var, v: Var) -> Result<Var> {
    let x = gated_residual(g, s, v)?;
    g.concat(&[x, s])
}
