//! Class activation maps, selective confidence-weighted fusion, coarse-box
//! refinement and multi-granularity sampling.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nets::{ClsNet, NetInput, Source, VideoFragment};
use crate::region::Rect;
use crate::scalar::Scalar;
use crate::synthdata::{Corpus, FrameRef};
use crate::tensor::{kernels, minmax_normalize, Tensor};

/// Guard added to both sides of the fusion ratio.
pub const LAMBDA: f64 = 1e-8;

pub type CoarseBox = Rect;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Granularity {
    Short,
    Long,
    Cross,
}

impl Granularity {
    pub const ALL: [Granularity; 3] = [Granularity::Short, Granularity::Long, Granularity::Cross];
}

impl fmt::Display for Granularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Granularity::Short => "short",
            Granularity::Long => "long",
            Granularity::Cross => "cross",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CamSource {
    Target(Source),
    Granular(Source, Granularity),
}

impl CamSource {
    /// The eight granularity pairs fused by SCAM+. SA is not paired with the
    /// short term: its audio window already spans the neighbouring frames.
    pub const GRANULAR: [CamSource; 8] = [
        CamSource::Granular(Source::S, Granularity::Short),
        CamSource::Granular(Source::S, Granularity::Long),
        CamSource::Granular(Source::S, Granularity::Cross),
        CamSource::Granular(Source::St, Granularity::Short),
        CamSource::Granular(Source::St, Granularity::Long),
        CamSource::Granular(Source::St, Granularity::Cross),
        CamSource::Granular(Source::Sa, Granularity::Long),
        CamSource::Granular(Source::Sa, Granularity::Cross),
    ];

    pub const TARGET: [CamSource; 3] = [
        CamSource::Target(Source::S),
        CamSource::Target(Source::Sa),
        CamSource::Target(Source::St),
    ];
}

/// A normalized activation map plus its filtered confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct CamMap {
    pub map: Tensor<f64>,
    pub source: CamSource,
    pub confidence: f64,
}

/// Channel `tag` of the pre-pooling class maps, min-max normalized. With a
/// 1×1-conv head this equals the weighted feature sum of classic CAM.
pub fn cam<T: Scalar>(pre_gap: &Tensor<T>, tag: usize) -> Result<Tensor<f64>> {
    let s = pre_gap.shape();
    if s.len() != 3 || tag >= s[0] {
        return Err(Error::InvalidInput(format!("tag {tag} outside class maps {s:?}")));
    }
    let plane = pre_gap.channel(tag)?.cast::<f64>();
    Ok(minmax_normalize(&plane))
}

/// The tag's confidence if it strictly beats every other class, else 0.
pub fn soft_filter(confidences: &[f64], tag: usize) -> f64 {
    let Some(&c) = confidences.get(tag) else {
        return 0.0;
    };
    let wins = confidences.iter().enumerate().all(|(i, &o)| i == tag || c > o);
    if wins {
        c
    } else {
        0.0
    }
}

fn same_dims<'a>(maps: impl Iterator<Item = &'a Tensor<f64>>) -> Result<Vec<usize>> {
    let mut shape: Option<Vec<usize>> = None;
    for m in maps {
        match &shape {
            None => shape = Some(m.shape().to_vec()),
            Some(s) if s != m.shape() => return Err(Error::shape("fuse", s, m.shape())),
            _ => {}
        }
    }
    shape.ok_or_else(|| Error::InvalidInput("no maps to fuse".into()))
}

/// Pixelwise `Z((Σ w_k Φ_k + λ) / (Σ w_k + λ))` with `w_k` the filtered
/// confidences and λ = [`LAMBDA`].
pub fn scam_fuse(cams: &[CamMap]) -> Result<Tensor<f64>> {
    scam_fuse_with(cams, LAMBDA)
}

pub fn scam_fuse_with(cams: &[CamMap], lambda: f64) -> Result<Tensor<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("fusion guard {lambda} must be positive")));
    }
    let shape = same_dims(cams.iter().map(|c| &c.map))?;
    let n: usize = shape.iter().product();
    let mut num = vec![lambda; n];
    let mut den = lambda;
    for c in cams {
        if c.confidence < 0.0 || !c.confidence.is_finite() {
            return Err(Error::InvalidInput(format!("confidence {} is not a nonnegative number", c.confidence)));
        }
        den += c.confidence;
        for (a, &v) in num.iter_mut().zip(c.map.data()) {
            *a += c.confidence * v;
        }
    }
    let fused = Tensor::from_parts(shape, num.into_iter().map(|v| v / den).collect());
    Ok(minmax_normalize(&fused))
}

/// Plain mean of the given maps.
pub fn average_cam(maps: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
    let shape = same_dims(maps.iter().copied())?;
    let n: usize = shape.iter().product();
    let mut acc = vec![0.0; n];
    for m in maps {
        for (a, &v) in acc.iter_mut().zip(m.data()) {
            *a += v;
        }
    }
    let k = maps.len() as f64;
    Ok(Tensor::from_parts(shape, acc.into_iter().map(|v| v / k).collect()))
}

/// SCAM over the three target pairs and the eight granularity pairs.
pub fn scam_plus_fuse(target: &[CamMap], granular: &[CamMap]) -> Result<Tensor<f64>> {
    for want in CamSource::TARGET {
        if !target.iter().any(|c| c.source == want) {
            return Err(Error::InvalidInput(format!("missing target pair {want:?}")));
        }
    }
    for want in CamSource::GRANULAR {
        if !granular.iter().any(|c| c.source == want) {
            return Err(Error::InvalidInput(format!("missing granularity pair {want:?}")));
        }
    }
    let all: Vec<CamMap> = target.iter().chain(granular).cloned().collect();
    scam_fuse(&all)
}

/// Tight box around pixels strictly above twice the mean; the whole frame
/// when none qualify.
pub fn coarse_box(map: &Tensor<f64>) -> Rect {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let thr = 2.0 * map.mean();
    let mut b: Option<Rect> = None;
    for (i, &v) in map.data().iter().enumerate() {
        if v > thr {
            let (y, x) = (i / w, i % w);
            b = Some(match b {
                None => Rect { x0: x, y0: y, x1: x, y1: y },
                Some(r) => Rect {
                    x0: r.x0.min(x),
                    y0: r.y0.min(y),
                    x1: r.x1.max(x),
                    y1: r.y1.max(y),
                },
            });
        }
    }
    b.unwrap_or_else(|| Rect::full(h, w))
}

/// Crops `C×H×W` to `r` and resizes bilinearly (corner-aligned) to `oh×ow`.
pub fn crop_resize(img: &Tensor<f64>, r: &Rect, oh: usize, ow: usize) -> Result<Tensor<f64>> {
    let s = img.shape();
    if s.len() != 3 || !r.fits(s[1], s[2]) {
        return Err(Error::InvalidInput(format!("box {r} outside image {s:?}")));
    }
    let (c, w) = (s[0], s[2]);
    let (bh, bw) = (r.height(), r.width());
    let mut crop = Vec::with_capacity(c * bh * bw);
    for ch in 0..c {
        let plane = &img.data()[ch * s[1] * w..(ch + 1) * s[1] * w];
        for y in r.y0..=r.y1 {
            crop.extend_from_slice(&plane[y * w + r.x0..=y * w + r.x1]);
        }
    }
    Ok(Tensor::from_parts(vec![c, oh, ow], kernels::upsample_forward(&crop, c, bh, bw, oh, ow)))
}

/// Crops an `H×W` map; see [`crop_resize`].
pub fn crop_resize_map(map: &Tensor<f64>, r: &Rect, oh: usize, ow: usize) -> Result<Tensor<f64>> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let out = crop_resize(&map.reshape(&[1, h, w])?, r, oh, ow)?;
    out.reshape(&[oh, ow])
}

/// Bilinear (corner-aligned) resize of an `H×W` map.
pub fn resize_map(map: &Tensor<f64>, oh: usize, ow: usize) -> Tensor<f64> {
    let (h, w) = (map.shape()[0], map.shape()[1]);
    Tensor::from_parts(vec![oh, ow], kernels::upsample_forward(map.data(), 1, h, w, oh, ow))
}

fn nearest(i: usize, from: usize, to: usize) -> usize {
    if from <= 1 {
        0
    } else {
        ((i as f64) * (to - 1) as f64 / (from - 1) as f64).round() as usize
    }
}

/// Maps a patch back onto an `h×w` frame inside `r` by nearest
/// (corner-aligned) lookup; zeros elsewhere.
pub fn paste_back(patch: &Tensor<f64>, r: &Rect, h: usize, w: usize) -> Result<Tensor<f64>> {
    if !r.fits(h, w) || patch.rank() != 2 {
        return Err(Error::InvalidInput(format!("cannot paste {:?} into box {r} of {h}×{w}", patch.shape())));
    }
    let (ph, pw) = (patch.shape()[0], patch.shape()[1]);
    let mut out = vec![0.0; h * w];
    for y in r.y0..=r.y1 {
        let py = nearest(y - r.y0, r.height(), ph);
        for x in r.x0..=r.x1 {
            let px = nearest(x - r.x0, r.width(), pw);
            out[y * w + x] = patch.data()[py * pw + px];
        }
    }
    Ok(Tensor::from_parts(vec![h, w], out))
}

pub fn crop_fragment(frag: &VideoFragment, r: &Rect, size: usize) -> Result<VideoFragment> {
    frag.map_frames(|f| crop_resize(f, r, size, size))
}

/// The S, SA and ST classifiers of one stage.
#[derive(Clone, Copy, Debug)]
pub struct SourceNets<'a, T: Scalar> {
    pub s: &'a ClsNet<T>,
    pub sa: &'a ClsNet<T>,
    pub st: &'a ClsNet<T>,
}

impl<'a, T: Scalar> SourceNets<'a, T> {
    pub fn get(&self, src: Source) -> &'a ClsNet<T> {
        match src {
            Source::S => self.s,
            Source::Sa => self.sa,
            Source::St => self.st,
        }
    }

    pub fn frame(&self) -> usize {
        self.s.spec.frame
    }
}

/// CAM of one net for `input`, resized to `out×out`.
pub fn net_cam<T: Scalar>(net: &ClsNet<T>, input: &NetInput, source: CamSource, out: usize) -> Result<CamMap> {
    let tag = input.target.tag;
    let (pred, maps) = net.predict(input)?;
    Ok(CamMap {
        map: resize_map(&cam(&maps, tag)?, out, out),
        source,
        confidence: soft_filter(&pred.confidences, tag),
    })
}

/// S, SA and ST CAMs of `frag` at frame resolution.
pub fn target_cams<T: Scalar>(nets: &SourceNets<T>, frag: &VideoFragment, gate: f64) -> Result<Vec<CamMap>> {
    let size = frag.height();
    Source::ALL
        .iter()
        .map(|&src| net_cam(nets.get(src), &NetInput::single(frag, gate), CamSource::Target(src), size))
        .collect()
}

/// Result of the two-stage refinement.
#[derive(Clone, Debug)]
pub struct Multistage {
    pub coarse: Tensor<f64>,
    pub fine: Tensor<f64>,
    pub region: Rect,
}

/// Stage 1 fuses the coarse CAMs and boxes the result; stage 2 reruns the
/// fine nets on the resized crop and pastes their fusion back. `extra`
/// (full-frame maps, e.g. granularity CAMs) join stage 1 as they are and
/// stage 2 after the same crop.
pub fn multistage_scam<T: Scalar>(
    frag: &VideoFragment,
    coarse: &SourceNets<T>,
    fine: &SourceNets<T>,
    gate: f64,
    extra: &[CamMap],
    lambda: f64,
) -> Result<Multistage> {
    let (h, w) = (frag.height(), frag.width());
    let mut stage1 = target_cams(coarse, frag, gate)?;
    stage1.extend(extra.iter().cloned());
    let coarse_map = scam_fuse_with(&stage1, lambda)?;
    let region = coarse_box(&coarse_map);
    let size = fine.frame();
    let patch = crop_fragment(frag, &region, size)?;
    let mut stage2 = target_cams(fine, &patch, gate)?;
    for e in extra {
        stage2.push(CamMap {
            map: crop_resize_map(&e.map, &region, size, size)?,
            source: e.source,
            confidence: e.confidence,
        });
    }
    let fine_map = paste_back(&scam_fuse_with(&stage2, lambda)?, &region, h, w)?;
    Ok(Multistage {
        coarse: coarse_map,
        fine: fine_map,
        region,
    })
}

/// Two partner fragments for a target.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GranularitySample {
    pub kind: Granularity,
    pub refs: [FrameRef; 2],
}

/// The fragments centred two frames before and after the target, so each
/// partner triplet abuts the target triplet; clamped at sequence ends.
pub fn sample_short(target: FrameRef, corpus: &Corpus) -> Result<GranularitySample> {
    let n = corpus.seq(target.seq)?.frames.len();
    let t = target.frame;
    Ok(GranularitySample {
        kind: Granularity::Short,
        refs: [
            FrameRef {
                seq: target.seq,
                frame: t.saturating_sub(2),
            },
            FrameRef {
                seq: target.seq,
                frame: (t + 2).min(n - 1),
            },
        ],
    })
}

/// Two distinct frames of the same sequence outside the 8 frames around the
/// target; if fewer than two exist, the two farthest frames.
pub fn sample_long<R: Rng>(target: FrameRef, corpus: &Corpus, rng: &mut R) -> Result<GranularitySample> {
    let n = corpus.seq(target.seq)?.frames.len();
    let t = target.frame;
    let far: Vec<usize> = (0..n).filter(|&f| f.abs_diff(t) > 4).collect();
    let pick = if far.len() >= 2 {
        let mut two: Vec<usize> = far.choose_multiple(rng, 2).copied().collect();
        two.sort_unstable();
        two
    } else {
        let mut all: Vec<usize> = (0..n).filter(|&f| f != t).collect();
        all.sort_by_key(|&f| (std::cmp::Reverse(f.abs_diff(t)), f));
        let mut two = all.into_iter().take(2).collect::<Vec<_>>();
        two.sort_unstable();
        two
    };
    if pick.len() < 2 {
        return Err(Error::InvalidInput(format!("sequence {} is too short for long-term sampling", target.seq)));
    }
    Ok(GranularitySample {
        kind: Granularity::Long,
        refs: [FrameRef { seq: target.seq, frame: pick[0] }, FrameRef { seq: target.seq, frame: pick[1] }],
    })
}

/// Two random frames from other sequences of the same tag and split.
pub fn sample_cross<R: Rng>(target: FrameRef, corpus: &Corpus, rng: &mut R) -> Result<GranularitySample> {
    let me = corpus.seq(target.seq)?;
    let pool: Vec<&crate::synthdata::Sequence> = corpus
        .sequences
        .iter()
        .filter(|s| s.id != me.id && s.class == me.class && s.split == me.split)
        .collect();
    if pool.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no other sequence shares tag {} for cross sampling",
            me.class
        )));
    }
    let mut pick = || {
        let s = pool[rng.gen_range(0..pool.len())];
        FrameRef {
            seq: s.id,
            frame: rng.gen_range(0..s.frames.len()),
        }
    };
    let a = pick();
    let mut b = pick();
    while b == a {
        b = pick();
    }
    Ok(GranularitySample {
        kind: Granularity::Cross,
        refs: [a, b],
    })
}

pub fn sample<R: Rng>(kind: Granularity, target: FrameRef, corpus: &Corpus, rng: &mut R) -> Result<GranularitySample> {
    match kind {
        Granularity::Short => sample_short(target, corpus),
        Granularity::Long => sample_long(target, corpus, rng),
        Granularity::Cross => sample_cross(target, corpus, rng),
    }
}
