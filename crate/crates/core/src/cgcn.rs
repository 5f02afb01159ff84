//! Graph reasoning between a target node and multi-granularity nodes:
//! inter-attention edges, gated node updates, and the fixation refine layer.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nets::layers::Conv;
use crate::nets::params::{Ctx, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Fixation refine layer thresholds: `td` picks the high-response pixels,
/// `tr` is the extra attenuation applied to the rest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frl {
    pub td: f64,
    pub tr: f64,
}

impl Default for Frl {
    fn default() -> Self {
        Frl { td: 0.8, tr: 0.6 }
    }
}

const QUERY_INIT_SCALE: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct Cgcn {
    qa: Conv,
    qb: Conv,
    pub channels: usize,
    pub steps: usize,
    pub frl: Option<Frl>,
}

/// Node features, all `c×h×w`.
#[derive(Clone, Debug)]
pub struct GraphState {
    pub ta: Var,
    pub mg: Vec<Var>,
    pub step: usize,
}

/// `ta_mg[i]` carries messages from `MG_i` into the target, `mg_ta[i]` the
/// reverse, and `mg_mg[i][j]` from `MG_j` into `MG_i` (`None` on the diagonal).
#[derive(Clone, Debug)]
pub struct Edges {
    pub ta_mg: Vec<Var>,
    pub mg_ta: Vec<Var>,
    pub mg_mg: Vec<Vec<Option<Var>>>,
}

impl Cgcn {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, channels: usize, steps: usize, frl: Option<Frl>, rng: &mut R) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("reasoning needs at least one step".into()));
        }
        let qa = Conv::pointwise(store, &format!("{name}.qa"), channels, channels, rng);
        let qb = Conv::pointwise(store, &format!("{name}.qb"), channels, channels, rng);
        // near-zero projections start every edge close to uniform
        for w in [qa.w, qb.w] {
            store.get_mut(w).data_mut().iter_mut().for_each(|x| *x *= T::of(QUERY_INIT_SCALE));
        }
        Ok(Cgcn {
            qa,
            qb,
            channels,
            steps,
            frl,
        })
    }

    /// Same parameters for both attention branches; only for tests of the
    /// transpose symmetry.
    pub fn with_shared_branches(mut self) -> Self {
        self.qb = self.qa.clone();
        self
    }

    /// `F = R(conv(h_a))ᵀ ⊛ R(conv(h_b))`, an `(hw)×(hw)` affinity.
    pub fn interattention<T: Scalar>(&self, ctx: &mut Ctx<T>, ha: Var, hb: Var) -> Result<Var> {
        if ctx.g.shape(ha) != ctx.g.shape(hb) {
            return Err(Error::shape("interattention", ctx.g.shape(ha), ctx.g.shape(hb)));
        }
        let qa = self.qa.forward(ctx, ha)?;
        let qb = self.qb.forward(ctx, hb)?;
        let ra = flatten(&mut ctx.g, qa)?;
        let rb = flatten(&mut ctx.g, qb)?;
        let rat = ctx.g.transpose(ra)?;
        ctx.g.matmul(rat, rb)
    }

    /// Row-stochastic edge `softmax(F(h_x, h_y)ᵀ)` for messages from `y` into `x`.
    pub fn edge<T: Scalar>(&self, ctx: &mut Ctx<T>, hx: Var, hy: Var) -> Result<Var> {
        let f = self.interattention(ctx, hx, hy)?;
        let ft = ctx.g.transpose(f)?;
        ctx.g.softmax_rows(ft)
    }

    pub fn edges<T: Scalar>(&self, ctx: &mut Ctx<T>, state: &GraphState) -> Result<Edges> {
        let n = state.mg.len();
        let mut ta_mg = Vec::with_capacity(n);
        let mut mg_ta = Vec::with_capacity(n);
        let mut mg_mg = Vec::with_capacity(n);
        for i in 0..n {
            ta_mg.push(self.edge(ctx, state.ta, state.mg[i])?);
            mg_ta.push(self.edge(ctx, state.mg[i], state.ta)?);
            let mut row = Vec::with_capacity(n);
            for j in 0..n {
                row.push(if i == j { None } else { Some(self.edge(ctx, state.mg[i], state.mg[j])?) });
            }
            mg_mg.push(row);
        }
        Ok(Edges { ta_mg, mg_ta, mg_mg })
    }

    /// One full round: edges, simultaneous node updates, then refinement of
    /// every node.
    pub fn step<T: Scalar>(&self, ctx: &mut Ctx<T>, state: &GraphState) -> Result<GraphState> {
        let e = self.edges(ctx, state)?;
        let mut ta = update_target(&mut ctx.g, state, &e)?;
        let mut mg = (0..state.mg.len())
            .map(|i| update_mg(&mut ctx.g, state, &e, i))
            .collect::<Result<Vec<_>>>()?;
        if let Some(frl) = self.frl {
            ta = frl_apply(&mut ctx.g, ta, frl)?;
            for h in &mut mg {
                *h = frl_apply(&mut ctx.g, *h, frl)?;
            }
        }
        Ok(GraphState {
            ta,
            mg,
            step: state.step + 1,
        })
    }

    /// Runs the configured number of reasoning steps.
    pub fn reason<T: Scalar>(&self, ctx: &mut Ctx<T>, state: GraphState) -> Result<GraphState> {
        if state.mg.is_empty() {
            return Err(Error::InvalidInput("graph needs at least one granularity node".into()));
        }
        let shape = ctx.g.shape(state.ta).to_vec();
        if shape.len() != 3 || shape[0] != self.channels {
            return Err(Error::invalid_shape("reason", format!("node shape {shape:?} for {} channels", self.channels)));
        }
        for &h in &state.mg {
            if ctx.g.shape(h) != shape {
                return Err(Error::shape("reason", &shape, ctx.g.shape(h)));
            }
        }
        let mut s = state;
        for _ in 0..self.steps {
            s = self.step(ctx, &s)?;
        }
        Ok(s)
    }
}

fn flatten<T: Scalar>(g: &mut Graph<T>, h: Var) -> Result<Var> {
    let s = g.shape(h).to_vec();
    if s.len() != 3 {
        return Err(Error::invalid_shape("flatten", format!("rank-3 node required, got {s:?}")));
    }
    g.reshape(h, &[s[0], s[1] * s[2]])
}

/// `R⁻¹(R(h) ⊙ σ(Σ R(h_y) ⊛ e))` over the given `(h_y, e)` messages.
fn gated_update<T: Scalar>(g: &mut Graph<T>, h: Var, messages: &[(Var, Var)]) -> Result<Var> {
    let shape = g.shape(h).to_vec();
    let rh = flatten(g, h)?;
    let mut total: Option<Var> = None;
    for &(hy, e) in messages {
        let ry = flatten(g, hy)?;
        let m = g.matmul(ry, e)?;
        total = Some(match total {
            None => m,
            Some(t) => g.add(t, m)?,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidInput("node has no neighbours".into()))?;
    let gate = g.sigmoid(total)?;
    let out = g.mul(rh, gate)?;
    g.reshape(out, &shape)
}

/// New target state from the messages of all granularity nodes.
pub fn update_target<T: Scalar>(g: &mut Graph<T>, state: &GraphState, edges: &Edges) -> Result<Var> {
    if edges.ta_mg.len() != state.mg.len() {
        return Err(Error::InvalidInput("missing target edge".into()));
    }
    let msgs: Vec<(Var, Var)> = state.mg.iter().copied().zip(edges.ta_mg.iter().copied()).collect();
    gated_update(g, state.ta, &msgs)
}

/// New state of `MG_i` from its peers and the target.
pub fn update_mg<T: Scalar>(g: &mut Graph<T>, state: &GraphState, edges: &Edges, i: usize) -> Result<Var> {
    let n = state.mg.len();
    if i >= n || edges.mg_ta.len() != n || edges.mg_mg.len() != n {
        return Err(Error::InvalidInput(format!("missing edge for granularity node {i}")));
    }
    let mut msgs = Vec::with_capacity(n);
    for j in 0..n {
        if j != i {
            let e = edges.mg_mg[i][j].ok_or_else(|| Error::InvalidInput(format!("missing edge {i}<-{j}")))?;
            msgs.push((state.mg[j], e));
        }
    }
    msgs.push((state.ta, edges.mg_ta[i]));
    gated_update(g, state.mg[i], &msgs)
}

/// Channel mean of a `c×h×w` value, as an `h×w` map.
pub fn channel_mean<T: Scalar>(h: &Tensor<T>) -> Result<Tensor<T>> {
    let s = h.shape();
    if s.len() != 3 {
        return Err(Error::invalid_shape("cmean", format!("rank-3 node required, got {s:?}")));
    }
    let hw = s[1] * s[2];
    let mut out = vec![T::zero(); hw];
    for plane in h.data().chunks(hw) {
        for (o, &v) in out.iter_mut().zip(plane) {
            *o += v;
        }
    }
    let n = T::of_usize(s[0]);
    out.iter_mut().for_each(|o| *o /= n);
    Ok(Tensor::from_parts(vec![s[1], s[2]], out))
}

/// 1 where the channel mean falls strictly below `td · max`, else 0.
pub fn frl_mask<T: Scalar>(h: &Tensor<T>, td: f64) -> Result<Tensor<T>> {
    Ok(mask_from_cmean(&channel_mean(h)?, td))
}

pub fn mask_from_cmean<T: Scalar>(cm: &Tensor<T>, td: f64) -> Tensor<T> {
    let thr = cm.max() * T::of(td);
    cm.map(|v| if thr - v > T::zero() { T::one() } else { T::zero() })
}

/// `½[h ⊙ (Tr·σ(cMean h) ⊙ mask + σ(cMean h) ⊙ (1−mask)) + h]`; the mask is
/// treated as a constant.
pub fn frl_refine<T: Scalar>(g: &mut Graph<T>, h: Var, mask: &Tensor<T>, tr: f64) -> Result<Var> {
    let cm = g.channel_mean(h)?;
    if g.shape(cm) != mask.shape() {
        return Err(Error::shape("frl_refine", g.shape(cm), mask.shape()));
    }
    let sig = g.sigmoid(cm)?;
    let tr = T::of(tr);
    let weights = g.constant(mask.map(|m| tr * m + (T::one() - m)));
    let factor = g.mul(sig, weights)?;
    let x = g.mul_pixel(h, factor)?;
    let x = g.add(x, h)?;
    g.scale(x, T::half())
}

fn frl_apply<T: Scalar>(g: &mut Graph<T>, h: Var, frl: Frl) -> Result<Var> {
    let mask = frl_mask(g.value(h), frl.td)?;
    frl_refine(g, h, &mask, frl.tr)
}
