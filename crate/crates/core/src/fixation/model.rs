use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::camscam::Granularity;
use crate::cgcn::{Cgcn, Frl, GraphState};
use crate::error::{Error, Result};
use crate::nets::encoders::{check_frame_dims, AudioEncoder, AudioProjector, SpatialEncoder, TemporalEncoder, FEATURE_CHANNELS, GRID_STRIDE, WIDTHS};
use crate::nets::checkpoint::{decode_spec, encode_spec, Checkpoint};
use crate::nets::layers::Conv;
use crate::nets::{Ctx, ParamStore, VideoFragment};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Channel count every refine layer maps to.
pub const REFINE: usize = 32;

/// `Relu(Cov((σ(DeConv(φ·a)) ⊙ s + s) ⊗ (σ(v) ⊙ s + s)))` with `Cov` a 1×1
/// convolution.
#[allow(clippy::too_many_arguments)]
pub fn sta_fuse<T: Scalar>(ctx: &mut Ctx<T>, proj: &AudioProjector, cov: &Conv, s: Var, v: Var, a: Var, gate: T) -> Result<Var> {
    let m = proj.forward(ctx, a, gate)?;
    let audio = residual_gate(ctx, s, m)?;
    let temporal = residual_gate(ctx, s, v)?;
    let x = ctx.g.concat(&[audio, temporal])?;
    cov.forward_relu(ctx, x)
}

/// `σ(m) ⊙ s + s` without the outer ReLU of the classification fusions.
fn residual_gate<T: Scalar>(ctx: &mut Ctx<T>, s: Var, m: Var) -> Result<Var> {
    if ctx.g.shape(s) != ctx.g.shape(m) {
        return Err(Error::shape("sta_fuse", ctx.g.shape(s), ctx.g.shape(m)));
    }
    let gte = ctx.g.sigmoid(m)?;
    let x = ctx.g.mul(gte, s)?;
    ctx.g.add(x, s)
}

#[derive(Clone, Copy, Debug)]
pub struct StaOutput {
    pub sta: Var,
    pub s: Var,
    pub f3: Var,
    pub f4: Var,
    pub f5: Var,
}

/// Spatial, temporal and audio encoders joined by [`sta_fuse`].
#[derive(Clone, Debug)]
pub struct StaBranch {
    enc: SpatialEncoder,
    temporal: TemporalEncoder,
    audio: AudioEncoder,
    proj: AudioProjector,
    cov: Conv,
}

impl StaBranch {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, grid: usize, rng: &mut R) -> Result<Self> {
        Ok(StaBranch {
            enc: SpatialEncoder::new(store, "enc", rng),
            temporal: TemporalEncoder::new(store, "tmp", rng),
            audio: AudioEncoder::new(store, "aud", rng),
            proj: AudioProjector::new(store, "proj", grid, rng)?,
            cov: Conv::pointwise(store, "cov", 2 * FEATURE_CHANNELS, REFINE, rng),
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, frag: &VideoFragment, gate: f64) -> Result<StaOutput> {
        let x = ctx.input(frag.middle().cast());
        let sp = self.enc.forward(ctx, x)?;
        let vol = ctx.input(frag.volume().cast());
        let v = self.temporal.forward(ctx, vol)?;
        let spec = ctx.input(frag.spectrogram().cast());
        let a = self.audio.forward(ctx, spec)?;
        let sta = sta_fuse(ctx, &self.proj, &self.cov, sp.s, v, a, T::of(gate))?;
        Ok(StaOutput {
            sta,
            s: sp.s,
            f3: sp.f3,
            f4: sp.f4,
            f5: sp.f5,
        })
    }
}

/// Three-level refine/concat/upsample decoder ending in a 1-channel
/// sigmoid map.
#[derive(Clone, Debug)]
pub struct Decoder {
    side: [Conv; 3],
    merge: [Conv; 3],
    out: Conv,
}

impl Decoder {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, sta_channels: usize, rng: &mut R) -> Self {
        Decoder {
            side: [
                Conv::pointwise(store, "dec.f5", WIDTHS[2], REFINE, rng),
                Conv::pointwise(store, "dec.f4", WIDTHS[1], REFINE, rng),
                Conv::pointwise(store, "dec.f3", WIDTHS[0], REFINE, rng),
            ],
            merge: [
                Conv::pointwise(store, "dec.m5", REFINE + sta_channels, REFINE, rng),
                Conv::pointwise(store, "dec.m4", 2 * REFINE, REFINE, rng),
                Conv::pointwise(store, "dec.m3", 2 * REFINE, REFINE, rng),
            ],
            out: Conv::pointwise(store, "dec.out", REFINE, 1, rng),
        }
    }

    /// `f5` shares the grid of `sta`; `f4` and `f3` are 2× and 4× finer.
    /// Returns an `h×w` map in `(0,1)`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, sta: Var, f3: Var, f4: Var, f5: Var, h: usize, w: usize) -> Result<Var> {
        let mut x = sta;
        for (level, tap) in [f5, f4, f3].into_iter().enumerate() {
            let ts = ctx.g.shape(tap).to_vec();
            let xs = ctx.g.shape(x).to_vec();
            if ts.len() != 3 || xs.len() != 3 {
                return Err(Error::invalid_shape("decode", format!("rank-3 features required, got {ts:?} and {xs:?}")));
            }
            if xs[1..] != ts[1..] {
                if level == 0 {
                    return Err(Error::shape("decode", &xs, &ts));
                }
                x = ctx.g.upsample(x, ts[1], ts[2])?;
            }
            let side = self.side[level].forward_relu(ctx, tap)?;
            let cat = ctx.g.concat(&[side, x])?;
            x = self.merge[level].forward_relu(ctx, cat)?;
        }
        // The 1×1 readout commutes with bilinear upsampling, so it runs on
        // the smaller grid.
        let y = self.out.forward(ctx, x)?;
        let y = ctx.g.upsample(y, h, w)?;
        let y = ctx.g.sigmoid(y)?;
        ctx.g.reshape(y, &[h, w])
    }
}

/// `Ref_1(↑(Ref_32(h ⊗ S)))` followed by a sigmoid.
#[derive(Clone, Debug)]
pub struct ReadOut {
    r32: Conv,
    r1: Conv,
}

impl ReadOut {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, node: usize, rng: &mut R) -> Self {
        ReadOut {
            r32: Conv::pointwise(store, "ro.r32", node + FEATURE_CHANNELS, REFINE, rng),
            r1: Conv::pointwise(store, "ro.r1", REFINE, 1, rng),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, node: Var, s: Var, h: usize, w: usize) -> Result<Var> {
        let x = ctx.g.concat(&[node, s])?;
        let x = self.r32.forward_relu(ctx, x)?;
        let y = self.r1.forward(ctx, x)?;
        let y = ctx.g.upsample(y, h, w)?;
        let y = ctx.g.sigmoid(y)?;
        ctx.g.reshape(y, &[h, w])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FpKind {
    Sta,
    /// STA+ with short- or long-term partners.
    StaPlus(Granularity),
}

impl fmt::Display for FpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FpKind::Sta => f.write_str("sta"),
            FpKind::StaPlus(g) => write!(f, "sta+{g}"),
        }
    }
}

impl FromStr for FpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sta" => Ok(FpKind::Sta),
            "sta+short" => Ok(FpKind::StaPlus(Granularity::Short)),
            "sta+long" => Ok(FpKind::StaPlus(Granularity::Long)),
            _ => Err(Error::Config(format!("unknown fixation net `{s}`"))),
        }
    }
}

impl FpKind {
    pub fn code(self) -> u8 {
        match self {
            FpKind::Sta => 0,
            FpKind::StaPlus(Granularity::Short) => 1,
            FpKind::StaPlus(Granularity::Long) => 2,
            FpKind::StaPlus(Granularity::Cross) => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => FpKind::Sta,
            1 => FpKind::StaPlus(Granularity::Short),
            2 => FpKind::StaPlus(Granularity::Long),
            3 => FpKind::StaPlus(Granularity::Cross),
            _ => return Err(Error::Format(format!("unknown fixation net code {code}"))),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FpSpec {
    pub kind: FpKind,
    pub frame: usize,
    pub steps: usize,
    pub frl: Option<Frl>,
}

#[derive(Clone, Debug)]
struct PlusParts {
    cgcn: Cgcn,
    readout: ReadOut,
}

/// STA (decoder head) or STA+ (graph reasoning plus per-node readout).
#[derive(Clone, Debug)]
pub struct FpNet<T: Scalar> {
    pub spec: FpSpec,
    pub store: ParamStore<T>,
    branch: StaBranch,
    decoder: Option<Decoder>,
    plus: Option<PlusParts>,
}

impl<T: Scalar> FpNet<T> {
    pub fn new<R: Rng>(spec: FpSpec, rng: &mut R) -> Result<Self> {
        check_frame_dims(spec.frame, spec.frame)?;
        if spec.kind == FpKind::StaPlus(Granularity::Cross) {
            return Err(Error::Config("fixation nets use short or long partners only".into()));
        }
        let mut store = ParamStore::new();
        let branch = StaBranch::new(&mut store, spec.frame / GRID_STRIDE, rng)?;
        let (decoder, plus) = match spec.kind {
            FpKind::Sta => (Some(Decoder::new(&mut store, REFINE, rng)), None),
            FpKind::StaPlus(_) => {
                let cgcn = Cgcn::new(&mut store, "cgcn", REFINE, spec.steps, spec.frl, rng)?;
                let readout = ReadOut::new(&mut store, REFINE, rng);
                (None, Some(PlusParts { cgcn, readout }))
            }
        };
        Ok(FpNet {
            spec,
            store,
            branch,
            decoder,
            plus,
        })
    }

    /// Predicted maps: one for STA; target then the two partners for STA+.
    /// `inputs` pairs each fragment with its audio gate.
    pub fn forward(&self, ctx: &mut Ctx<T>, inputs: &[(&VideoFragment, f64)]) -> Result<Vec<Var>> {
        let want = if self.plus.is_some() { 3 } else { 1 };
        if inputs.len() != want {
            return Err(Error::InvalidInput(format!("{} net takes {want} fragments, got {}", self.spec.kind, inputs.len())));
        }
        for (f, _) in inputs {
            if f.height() != self.spec.frame || f.width() != self.spec.frame {
                return Err(Error::invalid_shape("fixation", format!("net expects {0}×{0} frames", self.spec.frame)));
            }
        }
        let (h, w) = (self.spec.frame, self.spec.frame);
        let outs = inputs
            .iter()
            .map(|(f, g)| self.branch.forward(ctx, f, *g))
            .collect::<Result<Vec<_>>>()?;
        match (&self.decoder, &self.plus) {
            (Some(dec), _) => {
                let o = outs[0];
                Ok(vec![dec.forward(ctx, o.sta, o.f3, o.f4, o.f5, h, w)?])
            }
            (None, Some(p)) => {
                let state = GraphState {
                    ta: outs[0].sta,
                    mg: vec![outs[1].sta, outs[2].sta],
                    step: 0,
                };
                let fin = p.cgcn.reason(ctx, state)?;
                let s = outs[0].s;
                let mut maps = vec![p.readout.forward(ctx, fin.ta, s, h, w)?];
                for node in fin.mg {
                    maps.push(p.readout.forward(ctx, node, s, h, w)?);
                }
                Ok(maps)
            }
            (None, None) => unreachable!("fixation net has a head"),
        }
    }

    pub fn to_checkpoint(&self, epoch: usize, seed: u64, config_hash: u64) -> Checkpoint<T> {
        let s = self.spec;
        Checkpoint {
            net_id: s.kind.to_string(),
            epoch,
            seed,
            config_hash,
            meta: vec![("spec".into(), encode_spec(s.kind.code(), 0, s.frame, s.steps, s.frl))],
            tensors: self.store.table(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let (code, _, frame, steps, frl) = decode_spec(ck)?;
        let spec = FpSpec {
            kind: FpKind::from_code(code)?,
            frame,
            steps,
            frl,
        };
        let mut net = FpNet::new(spec, &mut rand::rngs::mock::StepRng::new(0, 1))?;
        net.store.load(&ck.tensors)?;
        Ok(net)
    }

    pub fn predict(&self, inputs: &[(&VideoFragment, f64)]) -> Result<Vec<Tensor<f64>>> {
        let mut ctx = Ctx::new(&self.store, false);
        let maps = self.forward(&mut ctx, inputs)?;
        Ok(maps.into_iter().map(|m| ctx.g.value(m).cast()).collect())
    }
}
