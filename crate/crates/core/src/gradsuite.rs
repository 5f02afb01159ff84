//! Finite-difference sweep over every differentiable op and the composite
//! nets. Used by the `gradcheck` command and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cgcn::{Cgcn, Frl, GraphState};
use crate::error::Result;
use crate::fixation::{Decoder, FpKind, FpNet, FpSpec};
use crate::nets::gradcheck::check_params;
use crate::nets::{ClsNet, Ctx, NetInput, NetKind, NetSpec, ParamStore, VideoFragment};
use crate::tensor::gradcheck::check;
use crate::tensor::{Graph, Tensor, Var};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_err: f64,
    pub checked: usize,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Random-weighted sum, so each output element has its own sensitivity.
fn weighted_sum(g: &mut Graph<f64>, v: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let w = g.constant(rand_t(rng, &shape, -1.0, 1.0));
    let p = g.mul(v, w)?;
    g.sum(p)
}

type OpFn = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pgt = rand_t(&mut rng, &[3, 3], 0.0, 1.0);
    let pgt2 = pgt.clone();
    let sh = |v: &[&[usize]]| v.iter().map(|s| s.to_vec()).collect::<Vec<_>>();
    vec![
        ("add", sh(&[&[2, 3], &[2, 3]]), Box::new(|g, v| g.add(v[0], v[1]))),
        ("sub", sh(&[&[2, 3], &[2, 3]]), Box::new(|g, v| g.sub(v[0], v[1]))),
        ("mul", sh(&[&[2, 3], &[2, 3]]), Box::new(|g, v| g.mul(v[0], v[1]))),
        ("add_channel", sh(&[&[3, 2, 2], &[3]]), Box::new(|g, v| g.add_channel(v[0], v[1]))),
        ("mul_pixel", sh(&[&[3, 2, 2], &[2, 2]]), Box::new(|g, v| g.mul_pixel(v[0], v[1]))),
        ("scale", sh(&[&[5]]), Box::new(|g, v| g.scale(v[0], 2.5))),
        ("add_scalar", sh(&[&[5]]), Box::new(|g, v| g.add_scalar(v[0], -0.5))),
        ("relu", sh(&[&[4, 3]]), Box::new(|g, v| g.relu(v[0]))),
        ("sigmoid", sh(&[&[4, 3]]), Box::new(|g, v| g.sigmoid(v[0]))),
        ("matmul", sh(&[&[4, 5], &[5, 3]]), Box::new(|g, v| g.matmul(v[0], v[1]))),
        ("transpose", sh(&[&[4, 5]]), Box::new(|g, v| g.transpose(v[0]))),
        ("softmax_rows", sh(&[&[4, 6]]), Box::new(|g, v| g.softmax_rows(v[0]))),
        ("conv2d", sh(&[&[2, 6, 7], &[3, 2, 3, 3]]), Box::new(|g, v| g.conv2d(v[0], v[1], 2, 1))),
        ("deconv2d", sh(&[&[3, 3, 3], &[3, 2, 2, 2]]), Box::new(|g, v| g.deconv2d(v[0], v[1], 2, 0))),
        ("conv3d", sh(&[&[2, 3, 6, 6], &[2, 2, 3, 3, 3]]), Box::new(|g, v| g.conv3d(v[0], v[1], 2, 1))),
        ("gap", sh(&[&[3, 4, 4]]), Box::new(|g, v| g.gap(v[0]))),
        ("channel_mean", sh(&[&[3, 4, 4]]), Box::new(|g, v| g.channel_mean(v[0]))),
        ("concat", sh(&[&[2, 3, 3], &[1, 3, 3]]), Box::new(|g, v| g.concat(&[v[0], v[1]]))),
        ("reshape", sh(&[&[2, 3, 4]]), Box::new(|g, v| g.reshape(v[0], &[6, 4]))),
        ("upsample", sh(&[&[2, 3, 3]]), Box::new(|g, v| g.upsample(v[0], 7, 5))),
        ("sum", sh(&[&[2, 3]]), Box::new(|g, v| g.sum(v[0]))),
        ("mean", sh(&[&[2, 3]]), Box::new(|g, v| g.mean(v[0]))),
        ("msm_loss", sh(&[&[4]]), Box::new(|g, v| g.msm_loss(v[0], &[0.0, 1.0, 0.0, 0.0]))),
        (
            "bce_loss",
            sh(&[&[3, 3]]),
            Box::new(move |g, v| {
                let p = g.sigmoid(v[0])?;
                g.bce_loss(p, &pgt)
            }),
        ),
        (
            "kl_loss",
            sh(&[&[3, 3]]),
            Box::new(move |g, v| {
                let p = g.sigmoid(v[0])?;
                g.kl_loss(p, &pgt2)
            }),
        ),
    ]
}

/// Each op on three random instances.
pub fn op_results() -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for (name, shapes, f) in op_cases() {
        let mut worst = 0.0f64;
        let mut checked = 0;
        for inst in 0..3u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + inst);
            let inputs: Vec<_> = shapes.iter().map(|s| rand_t(&mut rng, s, -1.0, 1.0)).collect();
            let r = check(&inputs, STEP, |g, v| {
                let y = f(g, v)?;
                let mut wr = ChaCha8Rng::seed_from_u64(200 + inst);
                weighted_sum(g, y, &mut wr)
            })?;
            worst = worst.max(r.max_rel_err);
            checked += r.checked;
        }
        out.push(CaseResult {
            name: name.into(),
            max_rel_err: worst,
            checked,
        });
    }
    Ok(out)
}

fn fragment(rng: &mut ChaCha8Rng, side: usize) -> Result<VideoFragment> {
    let frames = [
        rand_t(rng, &[3, side, side], 0.0, 1.0),
        rand_t(rng, &[3, side, side], 0.0, 1.0),
        rand_t(rng, &[3, side, side], 0.0, 1.0),
    ];
    VideoFragment::new(frames, rand_t(rng, &[32, 32], 0.0, 1.0), 1, 0, 1, true)
}

fn summarize(name: &str, r: crate::nets::gradcheck::ParamGradReport) -> CaseResult {
    CaseResult {
        name: name.into(),
        max_rel_err: r.max_rel_err(),
        checked: r.checked,
    }
}

const PER_PARAM: usize = 6;

fn cls_case(kind: &str) -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let kind: NetKind = kind.parse()?;
    let spec = NetSpec {
        kind,
        classes: 3,
        frame: 32,
        steps: 2,
        frl: Some(Frl::default()),
    };
    let net = ClsNet::<f64>::new(spec, &mut rng)?;
    let frags = [fragment(&mut rng, 32)?, fragment(&mut rng, 32)?, fragment(&mut rng, 32)?];
    let input = NetInput {
        target: &frags[0],
        gate: 1.0,
        granular: kind.is_plus().then_some([&frags[1], &frags[2]]),
    };
    let label: &[f64] = if kind == NetKind::Switch { &[1.0] } else { &[0.0, 1.0, 0.0] };
    let r = check_params(&net.store, PER_PARAM, STEP, &mut rng, |ctx| {
        let out = net.forward(ctx, &input)?;
        ctx.g.msm_loss(out.logits, label)
    })?;
    Ok(summarize(&format!("net {kind}"), r))
}

fn cgcn_case() -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::<f64>::new();
    let cg = Cgcn::new(&mut store, "cgcn", 4, 1, Some(Frl::default()), &mut rng)?;
    // undo the small query init so the edges are far from uniform
    for p in store.params_mut() {
        p.value = p.value.map(|v| v * 20.0);
    }
    let nodes: Vec<Tensor<f64>> = (0..3).map(|_| rand_t(&mut rng, &[4, 4, 4], 0.0, 1.0)).collect();
    let r = check_params(&store, PER_PARAM, STEP, &mut rng, |ctx: &mut Ctx<f64>| {
        let vs: Vec<Var> = nodes.iter().map(|t| ctx.input(t.clone())).collect();
        let s = cg.step(ctx, &GraphState { ta: vs[0], mg: vs[1..].to_vec(), step: 0 })?;
        let cat = ctx.g.concat(&[s.ta, s.mg[0], s.mg[1]])?;
        let mut wr = ChaCha8Rng::seed_from_u64(13);
        weighted_sum(&mut ctx.g, cat, &mut wr)
    })?;
    Ok(summarize("c-gcn step", r))
}

fn sta_case(kind: FpKind) -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let spec = FpSpec {
        kind,
        frame: 32,
        steps: 1,
        frl: Some(Frl::default()),
    };
    let net = FpNet::<f64>::new(spec, &mut rng)?;
    let n = if kind == FpKind::Sta { 1 } else { 3 };
    let frags = (0..n).map(|_| fragment(&mut rng, 32)).collect::<Result<Vec<_>>>()?;
    let targets: Vec<Tensor<f64>> = (0..n).map(|_| rand_t(&mut rng, &[32, 32], 0.0, 1.0)).collect();
    let inputs: Vec<(&VideoFragment, f64)> = frags.iter().map(|f| (f, 1.0)).collect();
    let r = check_params(&net.store, PER_PARAM, STEP, &mut rng, |ctx| {
        let maps = net.forward(ctx, &inputs)?;
        let mut total = None;
        for (&m, t) in maps.iter().zip(&targets) {
            let b = ctx.g.bce_loss(m, t)?;
            let k = ctx.g.kl_loss(m, t)?;
            let l = ctx.g.add(b, k)?;
            total = Some(match total {
                None => l,
                Some(acc) => ctx.g.add(acc, l)?,
            });
        }
        Ok(total.expect("at least one map"))
    })?;
    Ok(summarize(&format!("net {kind}"), r))
}

fn decoder_case() -> Result<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut store = ParamStore::<f64>::new();
    let dec = Decoder::new(&mut store, 32, &mut rng);
    let sta = rand_t(&mut rng, &[32, 4, 4], 0.0, 1.0);
    let f5 = rand_t(&mut rng, &[24, 4, 4], 0.0, 1.0);
    let f4 = rand_t(&mut rng, &[16, 8, 8], 0.0, 1.0);
    let f3 = rand_t(&mut rng, &[8, 16, 16], 0.0, 1.0);
    let target = rand_t(&mut rng, &[32, 32], 0.0, 1.0);
    let r = check_params(&store, PER_PARAM, STEP, &mut rng, |ctx| {
        let [a, b, c, d] = [&sta, &f3, &f4, &f5].map(|t| ctx.input(t.clone()));
        let m = dec.forward(ctx, a, b, c, d, 32, 32)?;
        ctx.g.bce_loss(m, &target)
    })?;
    Ok(summarize("decoder", r))
}

/// Composite nets on small inputs: parameter gradients of the training loss.
pub fn net_results() -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for k in ["s", "sa", "st", "switch", "s+"] {
        out.push(cls_case(k)?);
    }
    out.push(cgcn_case()?);
    out.push(sta_case(FpKind::Sta)?);
    out.push(sta_case(FpKind::StaPlus(crate::camscam::Granularity::Short))?);
    out.push(decoder_case()?);
    Ok(out)
}

pub fn run_all() -> Result<Vec<CaseResult>> {
    let mut all = op_results()?;
    all.extend(net_results()?);
    Ok(all)
}
