//! Procedural visual-audio corpus with a planted class glyph per sequence,
//! class-agnostic distractors, drift motion, audio-relevance flags and
//! ground-truth fixation data.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fsio;
use crate::imageio;
use crate::nets::encoders::{SPEC_BINS, SPEC_FRAMES};
use crate::nets::fragment::VideoFragment;
use crate::region::Rect;
use crate::rng;
use crate::tensor::Tensor;

pub const GLYPH: usize = 16;
const DISTRACTORS: usize = 2;
const SHAPES: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    HeldOut,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::HeldOut => "heldout",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub seed: u64,
    pub classes: usize,
    pub seqs_per_class: usize,
    pub frames: usize,
    pub hw: usize,
    /// Per-pixel uniform noise amplitude.
    pub noise: f64,
    /// Largest per-frame glyph displacement in pixels.
    pub motion: usize,
    /// Ground-truth Gaussian width in pixels.
    pub sigma: f64,
    pub fixations: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 7,
            classes: 6,
            seqs_per_class: 10,
            frames: 30,
            hw: 64,
            noise: 0.04,
            motion: 2,
            sigma: 4.0,
            fixations: 20,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.seqs_per_class < 2 {
            return Err(Error::Config("need at least 2 sequences per class".into()));
        }
        if self.frames < 12 {
            return Err(Error::Config("need at least 12 frames per sequence".into()));
        }
        if self.hw < 2 * GLYPH || self.hw % 32 != 0 {
            return Err(Error::Config(format!("frame side {} must be a multiple of 32 and at least {}", self.hw, 2 * GLYPH)));
        }
        if !(0.0..0.5).contains(&self.noise) || self.motion == 0 || self.motion > 4 || self.sigma <= 0.0 || self.fixations == 0 {
            return Err(Error::Config("noise, motion, sigma or fixation count out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: usize,
    pub class: usize,
    pub split: Split,
    pub audio_relevant: bool,
    /// Glyph box per frame.
    pub boxes: Vec<Rect>,
    /// `3×H×W` frames, quantized to 8 bits.
    pub frames: Vec<Tensor<f64>>,
    /// `F×T` spectrogram window per frame.
    pub audio: Vec<Tensor<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub sequences: Vec<Sequence>,
}

/// Frame address within a corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameRef {
    pub seq: usize,
    pub frame: usize,
}

fn hue_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as usize % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Class glyph coverage at normalized coordinates `u, v ∈ [-1,1]`.
pub fn glyph_shape(class: usize, u: f64, v: f64) -> bool {
    let (au, av) = (u.abs(), v.abs());
    let r = (u * u + v * v).sqrt();
    match class % SHAPES {
        0 => r < 0.95,
        1 => au.max(av) < 0.95 && au.max(av) > 0.45,
        2 => au.max(av) < 0.95 && (au < 0.35 || av < 0.35),
        3 => v > -0.9 && v < 0.9 && au < (v + 0.9) * 0.55,
        4 => au + av < 1.0,
        5 => au.max(av) < 0.95 && (au - av).abs() < 0.35,
        6 => r < 0.95 && r > 0.5,
        _ => au.max(av) < 0.95 && (v < -0.35 || au > 0.55),
    }
}

pub fn glyph_colour(class: usize, classes: usize) -> [f64; 3] {
    hue_rgb(class as f64 / classes as f64, 0.85, 0.95)
}

/// Class stripe texture in `[0,1]`.
fn glyph_texture(class: usize, u: f64, v: f64) -> f64 {
    let freq = 1.5 + 0.75 * (class % 4) as f64;
    let theta = PI * (class % 3) as f64 / 3.0;
    0.5 + 0.5 * (PI * freq * (u * theta.cos() + v * theta.sin())).cos()
}

struct Mover {
    x: i64,
    y: i64,
    vx: i64,
    vy: i64,
    size: i64,
}

impl Mover {
    fn advance(&mut self, side: i64) {
        for (p, v) in [(&mut self.x, &mut self.vx), (&mut self.y, &mut self.vy)] {
            let next = *p + *v;
            if next < 0 || next + self.size > side {
                *v = -*v;
            }
            *p = (*p + *v).clamp(0, side - self.size);
        }
    }
}

fn random_mover(rng: &mut ChaCha8Rng, side: i64, size: i64, motion: i64) -> Mover {
    let mut v = || loop {
        let d = rng.gen_range(-motion..=motion);
        if d != 0 {
            return d;
        }
    };
    let (vx, vy) = (v(), v());
    Mover {
        x: rng.gen_range(0..=side - size),
        y: rng.gen_range(0..=side - size),
        vx,
        vy,
        size,
    }
}

struct Distractor {
    mover: Mover,
    colour: [f64; 3],
    round: bool,
}

fn band_bin(class: usize, classes: usize) -> usize {
    2 + class * (SPEC_BINS - 4) / classes
}

fn spectrogram(rng: &mut ChaCha8Rng, class: usize, classes: usize, relevant: bool, t: usize) -> Tensor<f64> {
    let mut d: Vec<f64> = (0..SPEC_BINS * SPEC_FRAMES).map(|_| rng.gen_range(0.0..0.15)).collect();
    if relevant {
        let b = band_bin(class, classes);
        let period = 2 + class % 3;
        for bin in b..b + 2 {
            for col in 0..SPEC_FRAMES {
                let on = ((col + t) / period) % 2 == 0;
                d[bin * SPEC_FRAMES + col] = if on { rng.gen_range(0.75..0.95) } else { rng.gen_range(0.45..0.6) };
            }
        }
    }
    Tensor::from_parts(vec![SPEC_BINS, SPEC_FRAMES], d)
}

/// Bin with the most mean energy; recovers the class for relevant audio.
pub fn dominant_band(spec: &Tensor<f64>) -> usize {
    let t = spec.shape()[1];
    let rows: Vec<f64> = spec.data().chunks(t).map(|r| r.iter().sum::<f64>()).collect();
    let mut best = 0;
    for (i, &e) in rows.iter().enumerate() {
        if e > rows[best] {
            best = i;
        }
    }
    best
}

pub fn band_class(bin: usize, classes: usize) -> Option<usize> {
    (0..classes).find(|&k| (band_bin(k, classes)..band_bin(k, classes) + 2).contains(&bin))
}

fn render_sequence(cfg: &CorpusConfig, id: usize, class: usize, split: Split, relevant: bool) -> Sequence {
    let mut rng = rng::stream(cfg.seed, &format!("sequence/{id}"));
    let side = cfg.hw as i64;
    let hw = cfg.hw;
    let mut glyph = random_mover(&mut rng, side, GLYPH as i64, cfg.motion as i64);
    let mut distractors: Vec<Distractor> = (0..DISTRACTORS)
        .map(|_| {
            let size = rng.gen_range(8..=12);
            Distractor {
                mover: random_mover(&mut rng, side, size, 1),
                colour: hue_rgb(rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.35), rng.gen_range(0.5..0.9)),
                round: rng.gen_bool(0.5),
            }
        })
        .collect();
    let bg0: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.15..0.45));
    let bg1: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.15..0.45));
    let angle = rng.gen_range(0.0..2.0 * PI);
    let colour = glyph_colour(class, cfg.classes);

    let mut boxes = Vec::with_capacity(cfg.frames);
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut audio = Vec::with_capacity(cfg.frames);
    for t in 0..cfg.frames {
        let mut img = vec![0.0; 3 * hw * hw];
        for y in 0..hw {
            for x in 0..hw {
                let s = ((x as f64 * angle.cos() + y as f64 * angle.sin()) / hw as f64).clamp(-1.0, 1.0) * 0.5 + 0.5;
                for c in 0..3 {
                    img[c * hw * hw + y * hw + x] = bg0[c] * (1.0 - s) + bg1[c] * s;
                }
            }
        }
        for d in &distractors {
            let m = &d.mover;
            let r = m.size as f64 / 2.0;
            for yy in 0..m.size {
                for xx in 0..m.size {
                    let (u, v) = ((xx as f64 + 0.5 - r) / r, (yy as f64 + 0.5 - r) / r);
                    if d.round && u * u + v * v > 1.0 {
                        continue;
                    }
                    let (px, py) = ((m.x + xx) as usize, (m.y + yy) as usize);
                    for c in 0..3 {
                        img[c * hw * hw + py * hw + px] = d.colour[c];
                    }
                }
            }
        }
        let g = GLYPH as f64 / 2.0;
        for yy in 0..GLYPH {
            for xx in 0..GLYPH {
                let (u, v) = ((xx as f64 + 0.5 - g) / g, (yy as f64 + 0.5 - g) / g);
                if !glyph_shape(class, u, v) {
                    continue;
                }
                let tex = 0.55 + 0.45 * glyph_texture(class, u, v);
                let (px, py) = (glyph.x as usize + xx, glyph.y as usize + yy);
                for c in 0..3 {
                    img[c * hw * hw + py * hw + px] = colour[c] * tex;
                }
            }
        }
        for v in &mut img {
            *v = f64::from(imageio::quantize(*v + rng.gen_range(-cfg.noise..=cfg.noise))) / 255.0;
        }
        boxes.push(Rect {
            x0: glyph.x as usize,
            y0: glyph.y as usize,
            x1: glyph.x as usize + GLYPH - 1,
            y1: glyph.y as usize + GLYPH - 1,
        });
        frames.push(Tensor::from_parts(vec![3, hw, hw], img));
        audio.push(spectrogram(&mut rng, class, cfg.classes, relevant, t));
        glyph.advance(side);
        for d in &mut distractors {
            d.mover.advance(side);
        }
    }
    Sequence {
        id,
        class,
        split,
        audio_relevant: relevant,
        boxes,
        frames,
        audio,
    }
}

pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut sequences = Vec::with_capacity(cfg.classes * cfg.seqs_per_class);
    let n_train = ((cfg.seqs_per_class as f64) * 0.7).round() as usize;
    for class in 0..cfg.classes {
        let mut rng = rng::stream(cfg.seed, &format!("split/{class}"));
        let mut order: Vec<usize> = (0..cfg.seqs_per_class).collect();
        order.shuffle(&mut rng);
        for j in 0..cfg.seqs_per_class {
            let id = class * cfg.seqs_per_class + j;
            let rank = order.iter().position(|&o| o == j).expect("permutation");
            let split = if rank < n_train { Split::Train } else { Split::HeldOut };
            // Alternate by rank so both splits see relevant and irrelevant audio.
            let relevant = rank % 2 == 0;
            sequences.push(render_sequence(cfg, id, class, split, relevant));
        }
    }
    let corpus = Corpus { config: cfg.clone(), sequences };
    corpus.verify()?;
    Ok(corpus)
}

/// Continuous fixation density: an isotropic Gaussian on the glyph centre,
/// scaled to a maximum of 1.
pub fn density(b: &Rect, h: usize, w: usize, sigma: f64) -> Tensor<f64> {
    let cx = (b.x0 + b.x1) as f64 / 2.0;
    let cy = (b.y0 + b.y1) as f64 / 2.0;
    let mut d = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let r2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            d.push((-r2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let m = d.iter().copied().fold(0.0, f64::max);
    Tensor::from_parts(vec![h, w], d.into_iter().map(|v| v / m).collect())
}

/// Share of a map's total mass inside `b`; 0 for an all-zero map.
pub fn mass_in_region(map: &Tensor<f64>, b: &Rect) -> f64 {
    let w = map.shape()[1];
    let (mut inside, mut total) = (0.0, 0.0);
    for (i, &v) in map.data().iter().enumerate() {
        total += v;
        if b.contains(i / w, i % w) {
            inside += v;
        }
    }
    if total > 0.0 {
        inside / total
    } else {
        0.0
    }
}

/// Distinct `(row, col)` points drawn with probability proportional to a
/// nonnegative `H×W` map; at most as many as the map has positive pixels.
pub fn sample_points<R: Rng>(map: &Tensor<f64>, n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let w = map.shape()[1];
    let positive = map.data().iter().filter(|&&v| v > 0.0).count();
    let want = n.min(positive);
    let total: f64 = map.data().iter().filter(|&&v| v > 0.0).sum();
    let last = map.data().iter().rposition(|&v| v > 0.0).unwrap_or(0);
    let mut points = Vec::with_capacity(want);
    while points.len() < want {
        let mut u = rng.gen_range(0.0..total);
        let mut idx = last;
        for (i, &v) in map.data().iter().enumerate() {
            if v <= 0.0 {
                continue;
            }
            if u < v {
                idx = i;
                break;
            }
            u -= v;
        }
        let p = (idx / w, idx % w);
        if !points.contains(&p) {
            points.push(p);
        }
    }
    points
}

impl Corpus {
    pub fn seq(&self, id: usize) -> Result<&Sequence> {
        self.sequences
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("no sequence {id}")))
    }

    pub fn frame_refs(&self, split: Option<Split>) -> Vec<FrameRef> {
        self.sequences
            .iter()
            .filter(|s| split.map_or(true, |sp| s.split == sp))
            .flat_map(|s| (0..s.frames.len()).map(move |frame| FrameRef { seq: s.id, frame }))
            .collect()
    }

    /// Fragment centred at `r`, with boundary frames repeated.
    pub fn fragment(&self, r: FrameRef) -> Result<VideoFragment> {
        let s = self.seq(r.seq)?;
        let n = s.frames.len();
        if r.frame >= n {
            return Err(Error::InvalidInput(format!("sequence {} has no frame {}", r.seq, r.frame)));
        }
        let prev = r.frame.saturating_sub(1);
        let next = (r.frame + 1).min(n - 1);
        VideoFragment::new(
            [s.frames[prev].clone(), s.frames[r.frame].clone(), s.frames[next].clone()],
            s.audio[r.frame].clone(),
            s.class,
            s.id,
            r.frame,
            s.audio_relevant,
        )
    }

    pub fn glyph_box(&self, r: FrameRef) -> Result<Rect> {
        self.seq(r.seq)?
            .boxes
            .get(r.frame)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("sequence {} has no frame {}", r.seq, r.frame)))
    }

    /// Density map and sampled fixation points for one frame.
    pub fn ground_truth(&self, r: FrameRef) -> Result<(Tensor<f64>, Vec<(usize, usize)>)> {
        let b = self.glyph_box(r)?;
        let hw = self.config.hw;
        let cf = density(&b, hw, hw, self.config.sigma);
        let mut rng = rng::stream(self.config.seed, &format!("fixations/{}/{}", r.seq, r.frame));
        let points = sample_points(&cf, self.config.fixations, &mut rng);
        Ok((cf, points))
    }

    /// Generation-time oracles: glyph density concentrated in its box and
    /// relevant audio recoverable from band energy.
    fn verify(&self) -> Result<()> {
        let hw = self.config.hw;
        for s in &self.sequences {
            for (t, b) in s.boxes.iter().enumerate() {
                if !b.fits(hw, hw) {
                    return Err(Error::Numeric(format!("glyph leaves the frame in sequence {} frame {t}", s.id)));
                }
                let m = mass_in_region(&density(b, hw, hw, self.config.sigma), b);
                if m < 0.6 {
                    return Err(Error::Numeric(format!("density mass {m:.3} in glyph box is below 0.6")));
                }
            }
            if s.audio_relevant {
                for a in &s.audio {
                    if band_class(dominant_band(a), self.config.classes) != Some(s.class) {
                        return Err(Error::Numeric(format!("audio of sequence {} is not class-separable", s.id)));
                    }
                }
            }
        }
        Ok(())
    }

    fn seq_dir(&self, s: &Sequence) -> PathBuf {
        PathBuf::from("corpus").join(s.class.to_string()).join(s.id.to_string())
    }

    pub fn manifest(&self) -> String {
        let c = &self.config;
        let mut m = String::new();
        for (k, v) in [
            ("seed", c.seed.to_string()),
            ("classes", c.classes.to_string()),
            ("seqs_per_class", c.seqs_per_class.to_string()),
            ("frames", c.frames.to_string()),
            ("hw", c.hw.to_string()),
            ("noise", c.noise.to_string()),
            ("motion", c.motion.to_string()),
            ("sigma", c.sigma.to_string()),
            ("fixations", c.fixations.to_string()),
            ("spec_bins", SPEC_BINS.to_string()),
            ("spec_frames", SPEC_FRAMES.to_string()),
        ] {
            let _ = writeln!(m, "{k}={v}");
        }
        for s in &self.sequences {
            let _ = writeln!(
                m,
                "seq.{}=class:{};split:{};relevant:{}",
                s.id,
                s.class,
                s.split.as_str(),
                u8::from(s.audio_relevant)
            );
            for (t, b) in s.boxes.iter().enumerate() {
                let _ = writeln!(m, "box.{}.{}={b}", s.id, t);
            }
        }
        m
    }

    /// Writes frames, audio, ground truth and the manifest under `root`.
    pub fn write(&self, root: &Path) -> Result<()> {
        for s in &self.sequences {
            let dir = root.join(self.seq_dir(s));
            for (t, (f, a)) in s.frames.iter().zip(&s.audio).enumerate() {
                fsio::atomic_write(&dir.join(format!("frame_{t:04}.ppm")), &imageio::encode_ppm(f)?)?;
                fsio::atomic_write(&dir.join(format!("audio_{t:04}.f64")), &fsio::f64_bytes(a.data()))?;
                let (cf, fl) = self.ground_truth(FrameRef { seq: s.id, frame: t })?;
                let stem = root.join("gt").join(s.id.to_string()).join(format!("{t:04}"));
                imageio::write_map_pair(&stem, &cf)?;
                fsio::atomic_write(&stem.with_extension("pts"), &imageio::encode_points(&fl))?;
            }
        }
        fsio::atomic_write(&root.join("manifest.txt"), self.manifest().as_bytes())
    }

    /// Reads a corpus previously written by [`Corpus::write`].
    pub fn load(root: &Path) -> Result<Corpus> {
        let path = root.join("manifest.txt");
        let text = String::from_utf8(fsio::read_dependency(&path)?).map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
        let kv: BTreeMap<&str, &str> = text.lines().filter_map(|l| l.split_once('=')).collect();
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| Error::Format(format!("manifest lacks `{k}`")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|e| Error::Format(format!("manifest `{k}`: {e}"))) };
        let real = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|e| Error::Format(format!("manifest `{k}`: {e}"))) };
        if num("spec_bins")? != SPEC_BINS || num("spec_frames")? != SPEC_FRAMES {
            return Err(Error::Format("manifest spectrogram size differs from this build".into()));
        }
        let config = CorpusConfig {
            seed: get("seed")?.parse().map_err(|e| Error::Format(format!("manifest `seed`: {e}")))?,
            classes: num("classes")?,
            seqs_per_class: num("seqs_per_class")?,
            frames: num("frames")?,
            hw: num("hw")?,
            noise: real("noise")?,
            motion: num("motion")?,
            sigma: real("sigma")?,
            fixations: num("fixations")?,
        };
        config.validate()?;
        let mut corpus = Corpus {
            config: config.clone(),
            sequences: Vec::new(),
        };
        for id in 0..config.classes * config.seqs_per_class {
            let desc = get(&format!("seq.{id}"))?;
            let field = |name: &str| {
                desc.split(';')
                    .find_map(|p| p.strip_prefix(name).and_then(|r| r.strip_prefix(':')))
                    .ok_or_else(|| Error::Format(format!("sequence {id} lacks `{name}`")))
            };
            let class: usize = field("class")?.parse().map_err(|e| Error::Format(format!("sequence {id}: {e}")))?;
            let split = match field("split")? {
                "train" => Split::Train,
                "heldout" => Split::HeldOut,
                other => return Err(Error::Format(format!("sequence {id}: unknown split `{other}`"))),
            };
            let relevant = field("relevant")? == "1";
            let boxes = (0..config.frames)
                .map(|t| get(&format!("box.{id}.{t}"))?.parse())
                .collect::<Result<Vec<Rect>>>()?;
            let mut s = Sequence {
                id,
                class,
                split,
                audio_relevant: relevant,
                boxes,
                frames: Vec::with_capacity(config.frames),
                audio: Vec::with_capacity(config.frames),
            };
            let dir = root.join(corpus.seq_dir(&s));
            for t in 0..config.frames {
                let f = imageio::decode_ppm(&fsio::read_dependency(&dir.join(format!("frame_{t:04}.ppm")))?)?;
                if f.shape() != [3, config.hw, config.hw] {
                    return Err(Error::Format(format!("frame {t} of sequence {id} has shape {:?}", f.shape())));
                }
                let a = fsio::f64_from_bytes(&fsio::read_dependency(&dir.join(format!("audio_{t:04}.f64")))?)?;
                s.frames.push(f);
                s.audio.push(Tensor::new(&[SPEC_BINS, SPEC_FRAMES], a)?);
            }
            corpus.sequences.push(s);
        }
        Ok(corpus)
    }
}
