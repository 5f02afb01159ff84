//! Map generation shared by the pseudofixation stage and the localization
//! and distillation reports.

use rayon::prelude::*;

use super::{PgtMethod, Pipeline, Stage};
use crate::camscam::{
    average_cam, cam, multistage_scam, net_cam, resize_map, sample, scam_fuse_with, soft_filter, target_cams, CamMap,
    CamSource, Granularity, SourceNets,
};
use crate::cgcn::{frl_mask, frl_refine, Frl};
use crate::error::{Error, Result};
use crate::imageio;
use crate::metrics;
use crate::nets::{ClassifierOutput, ClsNet, Ctx, NetInput, NetKind, Source, VideoFragment};
use crate::rng;
use crate::synthdata::{mass_in_region, sample_points, Corpus, FrameRef, Split};
use crate::tensor::Tensor;

/// Fixation points drawn from a pseudofixation map when scoring NSS.
pub const PGT_POINTS: usize = 20;

fn index(src: Source) -> usize {
    Source::ALL.iter().position(|&s| s == src).expect("source listed")
}

fn as_sources(nets: &[ClsNet<f64>; 3]) -> SourceNets<'_, f64> {
    SourceNets {
        s: &nets[index(Source::S)],
        sa: &nets[index(Source::Sa)],
        st: &nets[index(Source::St)],
    }
}

/// Trained classifiers in [`Source::ALL`] order.
pub struct CamNets {
    pub coarse: [ClsNet<f64>; 3],
    pub fine: Option<[ClsNet<f64>; 3]>,
    pub plus: Option<[ClsNet<f64>; 3]>,
}

impl CamNets {
    pub fn load(p: &Pipeline, fine: bool, plus: bool) -> Result<Self> {
        let load = |make: fn(Source) -> NetKind, stage: Stage| -> Result<[ClsNet<f64>; 3]> {
            let [a, b, c] = Source::ALL.map(|s| p.load_cls(make(s), stage));
            Ok([a?, b?, c?])
        };
        Ok(CamNets {
            coarse: load(NetKind::Base, Stage::Coarse)?,
            fine: if fine { Some(load(NetKind::Base, Stage::Fine)?) } else { None },
            plus: if plus { Some(load(NetKind::Plus, Stage::Coarse)?) } else { None },
        })
    }

    pub fn for_method(p: &Pipeline, method: PgtMethod) -> Result<Self> {
        match method {
            PgtMethod::Cam | PgtMethod::Ac => Self::load(p, false, false),
            PgtMethod::Scam => Self::load(p, true, false),
            PgtMethod::ScamPlus => Self::load(p, true, true),
        }
    }

    pub fn coarse(&self) -> SourceNets<'_, f64> {
        as_sources(&self.coarse)
    }

    fn fine(&self) -> Result<SourceNets<'_, f64>> {
        self.fine
            .as_ref()
            .map(as_sources)
            .ok_or_else(|| Error::InvalidInput("fine nets were not loaded".into()))
    }

    /// The eight granularity CAMs of `frag`. Partners are drawn per
    /// granularity from a stream keyed by the frame, so every source shares
    /// them.
    pub fn granular_cams(&self, corpus: &Corpus, r: FrameRef, frag: &VideoFragment, gate: f64) -> Result<Vec<CamMap>> {
        let plus = self
            .plus
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("+ nets were not loaded".into()))?;
        let mut partners = Vec::with_capacity(3);
        for g in Granularity::ALL {
            let mut rng = rng::stream(corpus.config.seed, &format!("pgt/{}/{}/{g}", r.seq, r.frame));
            let gs = sample(g, r, corpus, &mut rng)?;
            partners.push((g, [corpus.fragment(gs.refs[0])?, corpus.fragment(gs.refs[1])?]));
        }
        CamSource::GRANULAR
            .iter()
            .map(|&cs| {
                let CamSource::Granular(src, g) = cs else { unreachable!("granular list") };
                let (_, [a, b]) = partners.iter().find(|(pg, _)| *pg == g).expect("all granularities sampled");
                let input = NetInput {
                    target: frag,
                    gate,
                    granular: Some([a, b]),
                };
                net_cam(&plus[index(src)], &input, cs, frag.height())
            })
            .collect()
    }

    /// Pseudofixation map of one frame.
    pub fn pgt_map(
        &self,
        method: PgtMethod,
        corpus: &Corpus,
        r: FrameRef,
        frag: &VideoFragment,
        gate: f64,
        lambda: f64,
    ) -> Result<Tensor<f64>> {
        match method {
            PgtMethod::Cam => Ok(net_cam(&self.coarse[index(Source::S)], &NetInput::single(frag, gate), CamSource::Target(Source::S), frag.height())?.map),
            PgtMethod::Ac => {
                let cams = target_cams(&self.coarse(), frag, gate)?;
                average_cam(&cams.iter().map(|c| &c.map).collect::<Vec<_>>())
            }
            PgtMethod::Scam => Ok(multistage_scam(frag, &self.coarse(), &self.fine()?, gate, &[], lambda)?.fine),
            PgtMethod::ScamPlus => {
                let extra = self.granular_cams(corpus, r, frag, gate)?;
                Ok(multistage_scam(frag, &self.coarse(), &self.fine()?, gate, &extra, lambda)?.fine)
            }
        }
    }
}

/// CAM of a coarse net after feature refinement of the pre-head feature.
pub fn frl_cam(net: &ClsNet<f64>, frag: &VideoFragment, gate: f64, frl: Frl) -> Result<CamMap> {
    let tag = frag.tag;
    let mut ctx = Ctx::new(&net.store, false);
    let f = net.feature(&mut ctx, &NetInput::single(frag, gate))?;
    let mask = frl_mask(ctx.g.value(f), frl.td)?;
    let refined = frl_refine(&mut ctx.g, f, &mask, frl.tr)?;
    let out = net.head().forward(&mut ctx, refined)?;
    let pred = ClassifierOutput::from_logits(ctx.g.value(out.logits));
    Ok(CamMap {
        map: resize_map(&cam(ctx.g.value(out.map), tag)?, frag.height(), frag.width()),
        source: CamSource::Target(net.kind().source()),
        confidence: soft_filter(&pred.confidences, tag),
    })
}

/// Mean share of map mass inside the glyph box, per method.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationReport {
    pub frames: usize,
    pub rows: Vec<(&'static str, f64)>,
}

impl LocalizationReport {
    pub const METHODS: [&'static str; 9] =
        ["cam_s", "cam_sa", "cam_st", "ac", "scam_coarse", "scam_fine", "scam_plus", "scam_frl_off", "scam_frl_on"];

    pub fn get(&self, name: &str) -> Option<f64> {
        self.rows.iter().find(|(n, _)| *n == name).map(|r| r.1)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,mass_in_region\n");
        for (n, v) in &self.rows {
            out.push_str(&format!("{n},{v:.6}\n"));
        }
        out
    }
}

/// Localization of every held-out frame whose index is a multiple of
/// `stride`. SCAM+ and the FRL pair are fused at the coarse stage, the
/// resolution their inputs share; gates come from the audio switch.
pub fn localization(p: &Pipeline, stride: usize) -> Result<LocalizationReport> {
    let corpus = p.corpus()?;
    let nets = CamNets::load(p, true, true)?;
    let switch = p.load_cls(NetKind::Switch, Stage::Coarse)?;
    let frl = Frl { td: p.cfg.td, tr: p.cfg.tr };
    let lambda = p.cfg.lambda;
    let refs: Vec<FrameRef> = corpus
        .frame_refs(Some(Split::HeldOut))
        .into_iter()
        .step_by(stride.max(1))
        .collect();
    let per_frame = refs
        .par_iter()
        .map(|&r| {
            let frag = corpus.fragment(r)?;
            let gate = switch.switch_gate(&frag)?;
            let b = corpus.glyph_box(r)?;
            let cams = target_cams(&nets.coarse(), &frag, gate)?;
            let scam = scam_fuse_with(&cams, lambda)?;
            let ac = average_cam(&cams.iter().map(|c| &c.map).collect::<Vec<_>>())?;
            let fine = multistage_scam(&frag, &nets.coarse(), &nets.fine()?, gate, &[], lambda)?.fine;
            let mut plus_in = cams.clone();
            plus_in.extend(nets.granular_cams(&corpus, r, &frag, gate)?);
            let plus = scam_fuse_with(&plus_in, lambda)?;
            let refined = nets
                .coarse
                .iter()
                .map(|n| frl_cam(n, &frag, gate, frl))
                .collect::<Result<Vec<_>>>()?;
            let frl_on = scam_fuse_with(&refined, lambda)?;
            let m = |t: &Tensor<f64>| mass_in_region(t, &b);
            Ok([m(&cams[0].map), m(&cams[1].map), m(&cams[2].map), m(&ac), m(&scam), m(&fine), m(&plus), m(&scam), m(&frl_on)])
        })
        .collect::<Result<Vec<[f64; 9]>>>()?;
    if per_frame.is_empty() {
        return Err(Error::InvalidInput("no held-out frames to localize".into()));
    }
    let n = per_frame.len() as f64;
    let rows = LocalizationReport::METHODS
        .iter()
        .enumerate()
        .map(|(i, &name)| (name, per_frame.iter().map(|f| f[i]).sum::<f64>() / n))
        .collect();
    Ok(LocalizationReport {
        frames: per_frame.len(),
        rows,
    })
}

/// Held-out agreement of one prediction set with the pseudofixations and
/// with ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillRow {
    pub set: String,
    pub cc_pgt: f64,
    pub nss_pgt: f64,
    pub cc_gt: f64,
}

/// Scores the prediction sets under `pred/` against the pseudofixations of
/// the configured method. NSS points are drawn from each pseudofixation map.
pub fn distillation(p: &Pipeline, sets: &[&str]) -> Result<Vec<DistillRow>> {
    let corpus = p.corpus()?;
    let hw = corpus.config.hw;
    let refs = corpus.frame_refs(Some(Split::HeldOut));
    sets.iter()
        .map(|&set| {
            let scores = refs
                .par_iter()
                .map(|&r| {
                    let pred = imageio::read_map(&p.layout.pred(set, r), hw, hw)?;
                    let pgt = imageio::read_map(&p.layout.pgt(p.cfg.pgt_method, r), hw, hw)?;
                    let mut rng = rng::stream(p.cfg.seed, &format!("pgt-points/{}/{}", r.seq, r.frame));
                    let points = sample_points(&pgt, PGT_POINTS, &mut rng);
                    let (cf, _) = corpus.ground_truth(r)?;
                    Ok((
                        metrics::cc(&pred, &pgt).ok(),
                        metrics::nss(&pred, &points).ok(),
                        metrics::cc(&pred, &cf).ok(),
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let mean = |xs: Vec<Option<f64>>| {
                let v: Vec<f64> = xs.into_iter().flatten().collect();
                if v.is_empty() {
                    f64::NAN
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            };
            Ok(DistillRow {
                set: set.to_string(),
                cc_pgt: mean(scores.iter().map(|s| s.0).collect()),
                nss_pgt: mean(scores.iter().map(|s| s.1).collect()),
                cc_gt: mean(scores.iter().map(|s| s.2).collect()),
            })
        })
        .collect()
}
