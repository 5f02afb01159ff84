use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::checkpoint::{decode_spec, encode_spec, Checkpoint};
use super::classifier::{Classifier, ClassifierOutput, HeadOutput};
use super::encoders::{check_frame_dims, AudioEncoder, AudioProjector, SpatialEncoder, TemporalEncoder, FEATURE_CHANNELS, GRID_STRIDE};
use super::fragment::VideoFragment;
use super::fusion::{sa_fuse, st_fuse};
use super::layers::Conv;
use super::params::{Ctx, ParamStore};
use crate::cgcn::{Cgcn, Frl, GraphState};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, Var};

/// Visual-audio source a classification net draws on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    S,
    Sa,
    St,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::S, Source::Sa, Source::St];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NetKind {
    Base(Source),
    Plus(Source),
    /// SA-structured binary classifier predicting audio relevance.
    Switch,
}

impl NetKind {
    pub fn source(self) -> Source {
        match self {
            NetKind::Base(s) | NetKind::Plus(s) => s,
            NetKind::Switch => Source::Sa,
        }
    }

    pub fn is_plus(self) -> bool {
        matches!(self, NetKind::Plus(_))
    }

    pub fn code(self) -> u8 {
        match self {
            NetKind::Base(Source::S) => 0,
            NetKind::Base(Source::Sa) => 1,
            NetKind::Base(Source::St) => 2,
            NetKind::Plus(Source::S) => 3,
            NetKind::Plus(Source::Sa) => 4,
            NetKind::Plus(Source::St) => 5,
            NetKind::Switch => 6,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => NetKind::Base(Source::S),
            1 => NetKind::Base(Source::Sa),
            2 => NetKind::Base(Source::St),
            3 => NetKind::Plus(Source::S),
            4 => NetKind::Plus(Source::Sa),
            5 => NetKind::Plus(Source::St),
            6 => NetKind::Switch,
            _ => return Err(Error::Format(format!("unknown net code {code}"))),
        })
    }
}

impl fmt::Display for NetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            NetKind::Base(Source::S) => "s",
            NetKind::Base(Source::Sa) => "sa",
            NetKind::Base(Source::St) => "st",
            NetKind::Plus(Source::S) => "s+",
            NetKind::Plus(Source::Sa) => "sa+",
            NetKind::Plus(Source::St) => "st+",
            NetKind::Switch => "switch",
        };
        f.write_str(s)
    }
}

impl FromStr for NetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "s" => NetKind::Base(Source::S),
            "sa" => NetKind::Base(Source::Sa),
            "st" => NetKind::Base(Source::St),
            "s+" => NetKind::Plus(Source::S),
            "sa+" => NetKind::Plus(Source::Sa),
            "st+" => NetKind::Plus(Source::St),
            "switch" => NetKind::Switch,
            _ => return Err(Error::Config(format!("unknown net `{s}`"))),
        })
    }
}

/// Input to a classification net. `gate` scales the audio feature; `granular`
/// holds the two extra fragments a `+` net reasons over.
#[derive(Clone, Copy, Debug)]
pub struct NetInput<'a> {
    pub target: &'a VideoFragment,
    pub gate: f64,
    pub granular: Option<[&'a VideoFragment; 2]>,
}

impl<'a> NetInput<'a> {
    pub fn single(target: &'a VideoFragment, gate: f64) -> Self {
        NetInput { target, gate, granular: None }
    }
}

#[derive(Clone, Debug)]
struct PlusParts {
    node: Conv,
    cgcn: Cgcn,
}

/// Construction options for [`ClsNet`].
#[derive(Clone, Copy, Debug)]
pub struct NetSpec {
    pub kind: NetKind,
    pub classes: usize,
    pub frame: usize,
    pub steps: usize,
    pub frl: Option<Frl>,
}

/// S/SA/ST classifiers, their `+` counterparts, and the audio switch.
#[derive(Clone, Debug)]
pub struct ClsNet<T: Scalar> {
    pub spec: NetSpec,
    pub store: ParamStore<T>,
    enc: SpatialEncoder,
    temporal: Option<TemporalEncoder>,
    audio: Option<(AudioEncoder, AudioProjector)>,
    plus: Option<PlusParts>,
    head: Classifier,
}

impl<T: Scalar> ClsNet<T> {
    pub fn new<R: Rng>(spec: NetSpec, rng: &mut R) -> Result<Self> {
        check_frame_dims(spec.frame, spec.frame)?;
        if spec.classes < 2 && spec.kind != NetKind::Switch {
            return Err(Error::Config("classification needs at least two classes".into()));
        }
        let outputs = if spec.kind == NetKind::Switch { 1 } else { spec.classes };
        let mut store = ParamStore::new();
        let src = spec.kind.source();
        let enc = SpatialEncoder::new(&mut store, "enc", rng);
        let temporal = (src == Source::St).then(|| TemporalEncoder::new(&mut store, "tmp", rng));
        let audio = if src == Source::Sa {
            let a = AudioEncoder::new(&mut store, "aud", rng);
            let p = AudioProjector::new(&mut store, "proj", spec.frame / GRID_STRIDE, rng)?;
            Some((a, p))
        } else {
            None
        };
        let width = if src == Source::S { FEATURE_CHANNELS } else { 2 * FEATURE_CHANNELS };
        let (plus, head_in) = if spec.kind.is_plus() {
            let node = Conv::pointwise(&mut store, "node", width, outputs, rng);
            let cgcn = Cgcn::new(&mut store, "cgcn", outputs, spec.steps, spec.frl, rng)?;
            (Some(PlusParts { node, cgcn }), outputs)
        } else {
            (None, width)
        };
        let head = Classifier::new(&mut store, "head", head_in, outputs, rng);
        Ok(ClsNet {
            spec,
            store,
            enc,
            temporal,
            audio,
            plus,
            head,
        })
    }

    pub fn kind(&self) -> NetKind {
        self.spec.kind
    }

    pub fn head(&self) -> &Classifier {
        &self.head
    }

    /// Source feature (`s`, `sa` or `st`) of one fragment on the grid.
    pub fn branch(&self, ctx: &mut Ctx<T>, frag: &VideoFragment, gate: f64) -> Result<Var> {
        if frag.height() != self.spec.frame || frag.width() != self.spec.frame {
            return Err(Error::invalid_shape(
                "classify",
                format!("net expects {0}×{0} frames, got {1}×{2}", self.spec.frame, frag.height(), frag.width()),
            ));
        }
        let x = ctx.input(frag.middle().cast());
        let s = self.enc.forward(ctx, x)?.s;
        match self.spec.kind.source() {
            Source::S => Ok(s),
            Source::St => {
                let t = self.temporal.as_ref().expect("temporal encoder");
                let vol = ctx.input(frag.volume().cast());
                let v = t.forward(ctx, vol)?;
                st_fuse(&mut ctx.g, s, v)
            }
            Source::Sa => {
                let (ae, proj) = self.audio.as_ref().expect("audio encoder");
                let spec = ctx.input(frag.spectrogram().cast());
                let a = ae.forward(ctx, spec)?;
                sa_fuse(ctx, proj, s, a, T::of(gate))
            }
        }
    }

    /// Target-node feature before the head: the branch output for plain
    /// nets, the reasoned target node for `+` nets.
    pub fn feature(&self, ctx: &mut Ctx<T>, input: &NetInput) -> Result<Var> {
        let Some(plus) = &self.plus else {
            return self.branch(ctx, input.target, input.gate);
        };
        let granular = input
            .granular
            .ok_or_else(|| Error::InvalidInput(format!("{} net needs two granularity fragments", self.spec.kind)))?;
        let mut nodes = Vec::with_capacity(3);
        for frag in [input.target, granular[0], granular[1]] {
            let b = self.branch(ctx, frag, input.gate)?;
            nodes.push(plus.node.forward(ctx, b)?);
        }
        let state = GraphState {
            ta: nodes[0],
            mg: nodes[1..].to_vec(),
            step: 0,
        };
        Ok(plus.cgcn.reason(ctx, state)?.ta)
    }

    pub fn forward(&self, ctx: &mut Ctx<T>, input: &NetInput) -> Result<HeadOutput> {
        let f = self.feature(ctx, input)?;
        self.head.forward(ctx, f)
    }

    /// Inference: confidences plus the pre-pooling class maps.
    pub fn predict(&self, input: &NetInput) -> Result<(ClassifierOutput, Tensor<T>)> {
        let mut ctx = Ctx::new(&self.store, false);
        let out = self.forward(&mut ctx, input)?;
        Ok((ClassifierOutput::from_logits(ctx.g.value(out.logits)), ctx.g.value(out.map).clone()))
    }

    /// Initialises a `+` net from its trained base net: shared encoder
    /// weights are copied, the base head seeds the node projection and the
    /// new head starts as the identity.
    pub fn warm_start(&mut self, base: &ClsNet<T>) -> Result<usize> {
        if !self.spec.kind.is_plus() || base.spec.kind != NetKind::Base(self.spec.kind.source()) || base.spec.classes != self.spec.classes {
            return Err(Error::InvalidInput(format!("cannot warm-start {} from {}", self.spec.kind, base.spec.kind)));
        }
        let copied = self.store.copy_matching(&base.store, |n| match n.strip_prefix("head.") {
            Some(rest) => format!("node.{rest}"),
            None => n.to_string(),
        });
        let c = self.spec.classes;
        let w = self.store.get_mut(self.head.conv.w);
        w.data_mut().iter_mut().for_each(|v| *v = T::zero());
        for i in 0..c {
            w.data_mut()[i * c + i] = T::one();
        }
        Ok(copied)
    }

    /// Learning-rate multipliers per parameter: `fresh` for the parts a
    /// `+` net does not share with its base net, 1 elsewhere.
    pub fn lr_scales(&self, fresh: f64) -> Vec<T> {
        self.store
            .params()
            .iter()
            .map(|p| {
                let own = self.spec.kind.is_plus() && ["node.", "cgcn.", "head."].iter().any(|q| p.name.starts_with(q));
                T::of(if own { fresh } else { 1.0 })
            })
            .collect()
    }

    pub fn to_checkpoint(&self, epoch: usize, seed: u64, config_hash: u64) -> Checkpoint<T> {
        let s = self.spec;
        Checkpoint {
            net_id: s.kind.to_string(),
            epoch,
            seed,
            config_hash,
            meta: vec![("spec".into(), encode_spec(s.kind.code(), s.classes, s.frame, s.steps, s.frl))],
            tensors: self.store.table(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint<T>) -> Result<Self> {
        let (code, classes, frame, steps, frl) = decode_spec(ck)?;
        let spec = NetSpec {
            kind: NetKind::from_code(code)?,
            classes,
            frame,
            steps,
            frl,
        };
        // weights are overwritten by the load, so the init stream is irrelevant
        let mut net = ClsNet::new(spec, &mut rand::rngs::mock::StepRng::new(0, 1))?;
        net.store.load(&ck.tensors)?;
        Ok(net)
    }

    /// Audio-switch decision: 1 iff the relevance output strictly exceeds ½.
    pub fn switch_gate(&self, frag: &VideoFragment) -> Result<f64> {
        if self.spec.kind != NetKind::Switch {
            return Err(Error::InvalidInput(format!("{} net is not an audio switch", self.spec.kind)));
        }
        let (out, _) = self.predict(&NetInput::single(frag, 1.0))?;
        Ok(if out.confidences[0] > 0.5 { 1.0 } else { 0.0 })
    }
}
