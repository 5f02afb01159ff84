use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::analysis::CamNets;
use super::{FuseMode, PgtMethod, Pipeline, RunLog};
use crate::camscam::{coarse_box, crop_fragment, sample, sample_long, sample_short, scam_fuse_with, target_cams, CamSource, Granularity};
use crate::error::{Error, Result};
use crate::fixation::{fuse_agg, fuse_final, train_fixation, FpExample, FpKind, FpNet, FpSpec};
use crate::fsio;
use crate::imageio;
use crate::metrics::{self, FrameScores, MetricsReport};
use crate::nets::classifier::argmax;
use crate::nets::{train_classifier, ClsExample, ClsNet, NetKind, NetSpec, Source, VideoFragment};
use crate::region::Rect;
use crate::rng;
use crate::synthdata::{generate_corpus, Corpus, FrameRef, Split};
use crate::tensor::Tensor;

/// Held-out frames of other sequences whose fixations serve as s-AUC
/// negatives.
const SAUC_OTHERS: usize = 10;

/// Every n-th held-out frame scores fixation-net epochs.
const FP_HELD_OUT_STRIDE: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stage {
    Coarse,
    Fine,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
        })
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Stage::Coarse),
            "fine" => Ok(Stage::Fine),
            _ => Err(Error::Config(format!("unknown stage `{s}`"))),
        }
    }
}

/// Outcome of a classifier run: per-epoch loss and final accuracy (train
/// accuracy for class nets, held-out gate accuracy for the switch).
#[derive(Clone, Debug, PartialEq)]
pub struct ClsReport {
    pub kind: NetKind,
    pub stage: Stage,
    pub losses: Vec<f64>,
    pub accuracy: f64,
}

fn one_hot(tag: usize, classes: usize) -> Vec<f64> {
    (0..classes).map(|c| if c == tag { 1.0 } else { 0.0 }).collect()
}

fn gt_gate(frag: &VideoFragment) -> f64 {
    if frag.audio_relevant {
        1.0
    } else {
        0.0
    }
}

/// Partner kinds a `+` net is trained on: those its SCAM+ pairs use.
fn granularities(src: Source) -> Vec<Granularity> {
    CamSource::GRANULAR
        .iter()
        .filter_map(|c| match c {
            CamSource::Granular(s, g) if *s == src => Some(*g),
            _ => None,
        })
        .collect()
}

impl Pipeline {
    pub fn gen_data(&self) -> Result<()> {
        let mut log = RunLog::new(&self.layout, "gen-data", &self.cfg);
        let corpus = generate_corpus(&self.cfg.corpus())?;
        corpus.write(&self.layout.data())?;
        log.line(format!(
            "sequences {} train_frames {} held_out_frames {}",
            corpus.sequences.len(),
            corpus.frame_refs(Some(Split::Train)).len(),
            corpus.frame_refs(Some(Split::HeldOut)).len()
        ));
        log.finish()
    }

    fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        if corpus.config.hw != self.cfg.frame || corpus.config.classes != self.cfg.classes {
            return Err(Error::Config(format!(
                "corpus has {} classes at {}px but the config asks for {} at {}px; rerun gen-data",
                corpus.config.classes, corpus.config.hw, self.cfg.classes, self.cfg.frame
            )));
        }
        Ok(())
    }

    /// SCAM boxes of the coarse nets, under the ground-truth audio gate.
    fn coarse_boxes(&self, corpus: &Corpus, refs: &[FrameRef]) -> Result<Vec<Rect>> {
        let nets = CamNets::load(self, false, false)?;
        refs.par_iter()
            .map(|&r| {
                let f = corpus.fragment(r)?;
                let cams = target_cams(&nets.coarse(), &f, gt_gate(&f))?;
                Ok(coarse_box(&scam_fuse_with(&cams, self.cfg.lambda)?))
            })
            .collect()
    }

    pub fn train_cls(&self, kind: NetKind, stage: Stage) -> Result<ClsReport> {
        match (kind, stage) {
            (NetKind::Switch, _) => return Err(Error::Config("the audio switch trains with train-switch".into())),
            (NetKind::Plus(_), Stage::Fine) => return Err(Error::Config("+ nets train at the coarse stage only".into())),
            _ => {}
        }
        let mut log = RunLog::new(&self.layout, &format!("train-cls_{kind}_{stage}"), &self.cfg);
        let corpus = self.corpus()?;
        self.check_corpus(&corpus)?;
        let refs = corpus.frame_refs(Some(Split::Train));
        let classes = self.cfg.classes;
        let frame = match stage {
            Stage::Coarse => self.cfg.frame,
            Stage::Fine => self.cfg.fine_frame,
        };
        let spec = NetSpec {
            kind,
            classes,
            frame,
            steps: self.cfg.steps,
            frl: self.cfg.frl(),
        };
        let mut net = ClsNet::new(spec, &mut self.rng(&format!("init/{kind}/{stage}")))?;
        let (tc, boxes) = match (kind, stage) {
            (NetKind::Base(src), Stage::Coarse) => {
                if src == Source::Sa {
                    // without a trained visual stream the net leans on audio
                    // and misses gate-0 sequences
                    let s = self.load_cls(NetKind::Base(Source::S), Stage::Coarse)?;
                    let copied = net.store.copy_matching(&s.store, |n| n.to_string());
                    log.line(format!("warm start: {copied} tensors from the s net"));
                }
                (self.cfg.cls_train(self.cfg.lr_cls, self.cfg.batch_coarse, self.cfg.samples_cls), None)
            }
            (NetKind::Base(_), _) => {
                let boxes = self.coarse_boxes(&corpus, &refs)?;
                let copied = net.store.copy_matching(&self.load_cls(kind, Stage::Coarse)?.store, |n| n.to_string());
                log.line(format!("warm start: {copied} tensors from the coarse net"));
                (self.cfg.cls_train(self.cfg.lr_fine, self.cfg.batch_fine, self.cfg.samples_fine), Some(boxes))
            }
            (NetKind::Plus(src), _) => {
                let copied = net.warm_start(&self.load_cls(NetKind::Base(src), Stage::Coarse)?)?;
                log.line(format!("warm start: {copied} tensors from the base net"));
                (self.cfg.cls_train(self.cfg.lr_plus, self.cfg.batch_plus, self.cfg.samples_plus), None)
            }
            (NetKind::Switch, _) => unreachable!("rejected above"),
        };
        let make = |i: usize, rng: &mut ChaCha8Rng| -> Result<ClsExample> {
            let r = refs[i];
            let f = corpus.fragment(r)?;
            let gate = gt_gate(&f);
            let label = one_hot(f.tag, classes);
            let target = match &boxes {
                Some(b) => crop_fragment(&f, &b[i], frame)?,
                None => f,
            };
            let granular = match kind {
                NetKind::Plus(src) => {
                    let kinds = granularities(src);
                    let g = *kinds.choose(rng).expect("every source has partners");
                    let gs = sample(g, r, &corpus, rng)?;
                    Some([corpus.fragment(gs.refs[0])?, corpus.fragment(gs.refs[1])?])
                }
                _ => None,
            };
            Ok(ClsExample {
                target,
                granular,
                gate,
                label,
            })
        };
        let mut rng = self.rng(&format!("train/{kind}/{stage}"));
        let losses = train_classifier(&mut net, refs.len(), &make, &tc, &mut rng, |e| {
            log.line(format!("epoch {} loss {:.6}", e.epoch, e.loss))
        })?;
        let hits = (0..refs.len())
            .into_par_iter()
            .map(|i| {
                let mut rng = self.rng(&format!("score/{kind}/{stage}/{i}"));
                let ex = make(i, &mut rng)?;
                let (out, _) = net.predict(&ex.input())?;
                Ok(argmax(&out.logits) == argmax(&ex.label))
            })
            .collect::<Result<Vec<bool>>>()?;
        let accuracy = hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64;
        log.line(format!("train_accuracy {accuracy:.4}"));
        self.save_cls(&net, stage, tc.epochs)?;
        log.finish()?;
        Ok(ClsReport {
            kind,
            stage,
            losses,
            accuracy,
        })
    }

    pub fn train_switch(&self) -> Result<ClsReport> {
        let mut log = RunLog::new(&self.layout, "train-switch", &self.cfg);
        let corpus = self.corpus()?;
        self.check_corpus(&corpus)?;
        let refs = corpus.frame_refs(Some(Split::Train));
        let spec = NetSpec {
            kind: NetKind::Switch,
            classes: self.cfg.classes,
            frame: self.cfg.frame,
            steps: self.cfg.steps,
            frl: self.cfg.frl(),
        };
        let mut net = ClsNet::new(spec, &mut self.rng("init/switch"))?;
        let tc = self.cfg.cls_train(self.cfg.lr_cls, self.cfg.batch_coarse, self.cfg.samples_cls);
        let make = |i: usize, _: &mut ChaCha8Rng| -> Result<ClsExample> {
            let f = corpus.fragment(refs[i])?;
            let label = vec![gt_gate(&f)];
            Ok(ClsExample {
                target: f,
                granular: None,
                gate: 1.0,
                label,
            })
        };
        let mut rng = self.rng("train/switch");
        let losses = train_classifier(&mut net, refs.len(), make, &tc, &mut rng, |e| {
            log.line(format!("epoch {} loss {:.6}", e.epoch, e.loss))
        })?;
        let held = corpus.frame_refs(Some(Split::HeldOut));
        let hits = held
            .par_iter()
            .map(|&r| {
                let f = corpus.fragment(r)?;
                Ok(net.switch_gate(&f)? == gt_gate(&f))
            })
            .collect::<Result<Vec<bool>>>()?;
        let accuracy = hits.iter().filter(|&&h| h).count() as f64 / hits.len().max(1) as f64;
        log.line(format!("held_out_gate_accuracy {accuracy:.4}"));
        self.save_cls(&net, super::Stage::Coarse, tc.epochs)?;
        log.finish()?;
        Ok(ClsReport {
            kind: NetKind::Switch,
            stage: Stage::Coarse,
            losses,
            accuracy,
        })
    }

    /// Switch gates of every frame, keyed by frame.
    fn gates(&self, corpus: &Corpus, switch: &ClsNet<f64>) -> Result<HashMap<FrameRef, f64>> {
        corpus
            .frame_refs(None)
            .par_iter()
            .map(|&r| Ok((r, switch.switch_gate(&corpus.fragment(r)?)?)))
            .collect()
    }

    pub fn gen_pgt(&self, method: PgtMethod) -> Result<()> {
        let mut log = RunLog::new(&self.layout, &format!("gen-pgt_{method}"), &self.cfg);
        let corpus = self.corpus()?;
        self.check_corpus(&corpus)?;
        let switch = self.load_cls(NetKind::Switch, Stage::Coarse)?;
        let nets = CamNets::for_method(self, method)?;
        let refs = corpus.frame_refs(None);
        refs.par_iter().try_for_each(|&r| {
            let f = corpus.fragment(r)?;
            let gate = switch.switch_gate(&f)?;
            let map = nets.pgt_map(method, &corpus, r, &f, gate, self.cfg.lambda)?;
            if !map.data().iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite pseudofixation for sequence {} frame {}", r.seq, r.frame)));
            }
            imageio::write_map_pair(&self.layout.pgt(method, r), &map)
        })?;
        log.line(format!("frames {}", refs.len()));
        log.finish()
    }

    pub fn train_fp(&self, kind: FpKind) -> Result<()> {
        let partner_kind = match kind {
            FpKind::Sta => None,
            FpKind::StaPlus(Granularity::Cross) => {
                return Err(Error::Config("fixation nets use short or long partners only".into()))
            }
            FpKind::StaPlus(g) => Some(g),
        };
        let mut log = RunLog::new(&self.layout, &format!("train-fp_{kind}"), &self.cfg);
        let corpus = self.corpus()?;
        self.check_corpus(&corpus)?;
        let switch = self.load_cls(NetKind::Switch, Stage::Coarse)?;
        let method = self.cfg.pgt_method;
        let hw = self.cfg.frame;
        let pgts: HashMap<FrameRef, Tensor<f64>> = corpus
            .frame_refs(None)
            .par_iter()
            .map(|&r| Ok((r, imageio::read_map(&self.layout.pgt(method, r), hw, hw)?)))
            .collect::<Result<_>>()?;
        let gates = self.gates(&corpus, &switch)?;
        let example = |r: FrameRef, rng: &mut ChaCha8Rng| -> Result<FpExample> {
            let mut frames = vec![r];
            if let Some(g) = partner_kind {
                frames.extend(sample(g, r, &corpus, rng)?.refs);
            }
            let inputs = frames
                .iter()
                .map(|&x| Ok((corpus.fragment(x)?, gates[&x])))
                .collect::<Result<Vec<_>>>()?;
            let targets = frames.iter().map(|x| pgts[x].clone()).collect();
            Ok(FpExample { inputs, targets })
        };
        let refs = corpus.frame_refs(Some(Split::Train));
        let held = corpus
            .frame_refs(Some(Split::HeldOut))
            .into_iter()
            .step_by(FP_HELD_OUT_STRIDE)
            .map(|r| example(r, &mut rng::stream(self.cfg.seed, &format!("fp-held/{}/{}", r.seq, r.frame))))
            .collect::<Result<Vec<_>>>()?;
        let spec = FpSpec {
            kind,
            frame: hw,
            steps: self.cfg.steps,
            frl: self.cfg.frl(),
        };
        let mut net = FpNet::<f64>::new(spec, &mut self.rng(&format!("init/{kind}")))?;
        let tc = self.cfg.fp_train(match kind {
            FpKind::Sta => self.cfg.samples_fp,
            FpKind::StaPlus(_) => self.cfg.samples_fp_plus,
        });
        let mut rng = self.rng(&format!("train/{kind}"));
        let report = train_fixation(&mut net, refs.len(), |i, rng| example(refs[i], rng), &held, &tc, &mut rng, |e, loss, cc| {
            log.line(format!("epoch {e} loss {loss:.6} held_out_cc {cc:.4}"))
        })?;
        log.line(format!(
            "best_epoch {} held_out_cc {:.4}",
            report.best_epoch, report.held_out_cc[report.best_epoch]
        ));
        net.to_checkpoint(report.best_epoch, self.cfg.seed, self.cfg.hash())
            .save(&self.layout.fp_ckpt(kind))?;
        log.finish()
    }

    pub fn predict(&self, fuse: FuseMode) -> Result<()> {
        let mut log = RunLog::new(&self.layout, &format!("predict_{fuse}"), &self.cfg);
        let sta = self.load_fp(FpKind::Sta)?;
        let plus = match fuse {
            FuseMode::Single => None,
            _ => Some((
                self.load_fp(FpKind::StaPlus(Granularity::Short))?,
                self.load_fp(FpKind::StaPlus(Granularity::Long))?,
            )),
        };
        let switch = self.load_cls(NetKind::Switch, Stage::Coarse)?;
        let corpus = self.corpus()?;
        self.check_corpus(&corpus)?;
        let refs = corpus.frame_refs(Some(Split::HeldOut));
        let set = fuse.to_string();
        refs.par_iter().try_for_each(|&r| {
            let f = corpus.fragment(r)?;
            let gate = switch.switch_gate(&f)?;
            let sta_map = sta.predict(&[(&f, gate)])?.remove(0);
            let Some((short, long)) = &plus else {
                return imageio::write_map_pair(&self.layout.pred(&set, r), &sta_map);
            };
            let mut rng = rng::stream(self.cfg.seed, &format!("predict/{}/{}", r.seq, r.frame));
            let run = |net: &FpNet<f64>, refs: [FrameRef; 2]| -> Result<Tensor<f64>> {
                let a = corpus.fragment(refs[0])?;
                let b = corpus.fragment(refs[1])?;
                let (ga, gb) = (switch.switch_gate(&a)?, switch.switch_gate(&b)?);
                Ok(net.predict(&[(&f, gate), (&a, ga), (&b, gb)])?.remove(0))
            };
            let short_map = run(short, sample_short(r, &corpus)?.refs)?;
            let long_map = run(long, sample_long(r, &corpus, &mut rng)?.refs)?;
            let fused = match fuse {
                FuseMode::Final => fuse_final(&sta_map, &short_map, &long_map)?,
                _ => fuse_agg(&sta_map, &short_map, &long_map)?,
            };
            imageio::write_map_pair(&self.layout.pred("sta", r), &sta_map)?;
            imageio::write_map_pair(&self.layout.pred("sta+short", r), &short_map)?;
            imageio::write_map_pair(&self.layout.pred("sta+long", r), &long_map)?;
            imageio::write_map_pair(&self.layout.pred(&set, r), &fused)
        })?;
        log.line(format!("frames {}", refs.len()));
        log.finish()
    }

    /// Scores `pred/<set>` on held-out ground truth and writes
    /// `metrics_<set>.csv`.
    pub fn evaluate(&self, set: &str) -> Result<MetricsReport> {
        let mut log = RunLog::new(&self.layout, &format!("evaluate_{set}"), &self.cfg);
        let corpus = self.corpus()?;
        let hw = corpus.config.hw;
        let refs = corpus.frame_refs(Some(Split::HeldOut));
        fsio::require(&self.layout.pred_dir(set))?;
        let frames = refs
            .par_iter()
            .map(|&r| {
                let ps = imageio::read_map(&self.layout.pred(set, r), hw, hw)?;
                let (cf, fl) = corpus.ground_truth(r)?;
                let mut rng = rng::stream(self.cfg.seed, &format!("sauc/{}/{}", r.seq, r.frame));
                let pool: Vec<FrameRef> = refs.iter().copied().filter(|o| o.seq != r.seq).collect();
                let others = pool
                    .choose_multiple(&mut rng, SAUC_OTHERS)
                    .map(|&o| Ok(corpus.ground_truth(o)?.1))
                    .collect::<Result<Vec<_>>>()?;
                let other_refs: Vec<&[(usize, usize)]> = others.iter().map(|v| v.as_slice()).collect();
                let s_auc = metrics::shuffled_auc(&ps, &fl, &other_refs, &mut rng)?;
                Ok(FrameScores {
                    seq: r.seq,
                    frame: r.frame,
                    auc_j: metrics::auc_judd(&ps, &fl)?,
                    s_auc,
                    nss: metrics::nss(&ps, &fl)?,
                    cc: metrics::cc(&ps, &cf)?,
                    sim: metrics::sim(&ps, &cf)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let report = MetricsReport { frames };
        fsio::atomic_write(&self.layout.metrics(set), report.to_csv().as_bytes())?;
        let m = report.mean();
        log.line(format!(
            "mean auc_j {:.4} s_auc {:.4} nss {:.4} cc {:.4} sim {:.4}",
            m[0], m[1], m[2], m[3], m[4]
        ));
        log.finish()?;
        Ok(report)
    }
}
