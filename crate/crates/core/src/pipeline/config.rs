//! Line-oriented `key = value` run configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::cgcn::Frl;
use crate::error::{Error, Result};
use crate::nets::TrainConfig;
use crate::synthdata::CorpusConfig;
use crate::tensor::OptKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FuseMode {
    Single,
    Final,
    Agg,
}

impl Display for FuseMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FuseMode::Single => "single",
            FuseMode::Final => "final",
            FuseMode::Agg => "agg",
        })
    }
}

impl FromStr for FuseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(FuseMode::Single),
            "final" => Ok(FuseMode::Final),
            "agg" => Ok(FuseMode::Agg),
            _ => Err(Error::Config(format!("unknown fusion mode `{s}`"))),
        }
    }
}

/// Pseudofixation generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PgtMethod {
    /// Spatial-only CAM.
    Cam,
    /// Plain average of the three source CAMs.
    Ac,
    Scam,
    ScamPlus,
}

impl PgtMethod {
    pub const ALL: [PgtMethod; 4] = [PgtMethod::Cam, PgtMethod::Ac, PgtMethod::Scam, PgtMethod::ScamPlus];
}

impl Display for PgtMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PgtMethod::Cam => "cam",
            PgtMethod::Ac => "ac",
            PgtMethod::Scam => "scam",
            PgtMethod::ScamPlus => "scam+",
        })
    }
}

impl FromStr for PgtMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cam" => Ok(PgtMethod::Cam),
            "ac" => Ok(PgtMethod::Ac),
            "scam" => Ok(PgtMethod::Scam),
            "scam+" => Ok(PgtMethod::ScamPlus),
            _ => Err(Error::Config(format!("unknown pseudofixation method `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,

    pub classes: usize,
    pub seqs_per_class: usize,
    pub frames: usize,
    pub frame: usize,
    pub fine_frame: usize,
    pub noise: f64,
    pub sigma: f64,
    pub fixations: usize,

    pub steps: usize,
    pub mg_nodes: usize,
    pub frl: bool,
    pub td: f64,
    pub tr: f64,
    pub lambda: f64,

    pub cls_optimizer: OptKind,
    pub lr_cls: f64,
    pub lr_fine: f64,
    pub lr_plus: f64,
    pub fresh_lr_scale: f64,
    pub lr_floor_cls: f64,
    pub momentum: f64,
    pub batch_coarse: usize,
    pub batch_fine: usize,
    pub batch_plus: usize,
    pub epochs_cls: usize,
    pub samples_cls: usize,
    pub samples_fine: usize,
    pub samples_plus: usize,

    pub fp_optimizer: OptKind,
    pub lr: f64,
    pub batch_fp: usize,
    pub epochs_fp: usize,
    pub samples_fp: usize,
    pub samples_fp_plus: usize,
    pub pgt_method: PgtMethod,
    pub fuse: FuseMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 7,
            out: PathBuf::from("run"),
            classes: 6,
            seqs_per_class: 10,
            frames: 30,
            frame: 64,
            fine_frame: 96,
            noise: 0.04,
            sigma: 4.0,
            fixations: 20,
            steps: 3,
            mg_nodes: 2,
            frl: true,
            td: 0.8,
            tr: 0.6,
            lambda: crate::camscam::LAMBDA,
            cls_optimizer: OptKind::Adam,
            lr_cls: 0.003,
            lr_fine: 0.001,
            lr_plus: 0.0005,
            fresh_lr_scale: 10.0,
            lr_floor_cls: 0.05,
            momentum: 0.9,
            batch_coarse: 20,
            batch_fine: 3,
            batch_plus: 16,
            epochs_cls: 30,
            samples_cls: 200,
            samples_fine: 120,
            samples_plus: 160,
            fp_optimizer: OptKind::Adam,
            lr: 0.001,
            batch_fp: 3,
            epochs_fp: 20,
            samples_fp: 150,
            samples_fp_plus: 60,
            pgt_method: PgtMethod::ScamPlus,
            fuse: FuseMode::Final,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad value `{v}` for `{key}`"))),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "classes" => self.classes = parse(key, v)?,
            "seqs_per_class" => self.seqs_per_class = parse(key, v)?,
            "frames" => self.frames = parse(key, v)?,
            "frame" => self.frame = parse(key, v)?,
            "fine_frame" => self.fine_frame = parse(key, v)?,
            "noise" => self.noise = parse(key, v)?,
            "sigma" => self.sigma = parse(key, v)?,
            "fixations" => self.fixations = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "mg_nodes" => self.mg_nodes = parse(key, v)?,
            "frl" => self.frl = parse_bool(key, v)?,
            "td" => self.td = parse(key, v)?,
            "tr" => self.tr = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "cls_optimizer" => self.cls_optimizer = v.parse()?,
            "lr_cls" => self.lr_cls = parse(key, v)?,
            "lr_fine" => self.lr_fine = parse(key, v)?,
            "lr_plus" => self.lr_plus = parse(key, v)?,
            "fresh_lr_scale" => self.fresh_lr_scale = parse(key, v)?,
            "lr_floor_cls" => self.lr_floor_cls = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "batch_coarse" => self.batch_coarse = parse(key, v)?,
            "batch_fine" => self.batch_fine = parse(key, v)?,
            "batch_plus" => self.batch_plus = parse(key, v)?,
            "epochs_cls" => self.epochs_cls = parse(key, v)?,
            "samples_cls" => self.samples_cls = parse(key, v)?,
            "samples_fine" => self.samples_fine = parse(key, v)?,
            "samples_plus" => self.samples_plus = parse(key, v)?,
            "fp_optimizer" => self.fp_optimizer = v.parse()?,
            "lr" => self.lr = parse(key, v)?,
            "batch_fp" => self.batch_fp = parse(key, v)?,
            "epochs_fp" => self.epochs_fp = parse(key, v)?,
            "samples_fp" => self.samples_fp = parse(key, v)?,
            "samples_fp_plus" => self.samples_fp_plus = parse(key, v)?,
            "pgt_method" => self.pgt_method = v.parse()?,
            "fuse" => self.fuse = v.parse()?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("classes", self.classes.to_string()),
            ("seqs_per_class", self.seqs_per_class.to_string()),
            ("frames", self.frames.to_string()),
            ("frame", self.frame.to_string()),
            ("fine_frame", self.fine_frame.to_string()),
            ("noise", self.noise.to_string()),
            ("sigma", self.sigma.to_string()),
            ("fixations", self.fixations.to_string()),
            ("steps", self.steps.to_string()),
            ("mg_nodes", self.mg_nodes.to_string()),
            ("frl", self.frl.to_string()),
            ("td", self.td.to_string()),
            ("tr", self.tr.to_string()),
            ("lambda", self.lambda.to_string()),
            ("cls_optimizer", self.cls_optimizer.to_string()),
            ("lr_cls", self.lr_cls.to_string()),
            ("lr_fine", self.lr_fine.to_string()),
            ("lr_plus", self.lr_plus.to_string()),
            ("fresh_lr_scale", self.fresh_lr_scale.to_string()),
            ("lr_floor_cls", self.lr_floor_cls.to_string()),
            ("momentum", self.momentum.to_string()),
            ("batch_coarse", self.batch_coarse.to_string()),
            ("batch_fine", self.batch_fine.to_string()),
            ("batch_plus", self.batch_plus.to_string()),
            ("epochs_cls", self.epochs_cls.to_string()),
            ("samples_cls", self.samples_cls.to_string()),
            ("samples_fine", self.samples_fine.to_string()),
            ("samples_plus", self.samples_plus.to_string()),
            ("fp_optimizer", self.fp_optimizer.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_fp", self.batch_fp.to_string()),
            ("epochs_fp", self.epochs_fp.to_string()),
            ("samples_fp", self.samples_fp.to_string()),
            ("samples_fp_plus", self.samples_fp_plus.to_string()),
            ("pgt_method", self.pgt_method.to_string()),
            ("fuse", self.fuse.to_string()),
        ]
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Hash of every setting except the output directory, so relocated
    /// reruns share it.
    pub fn hash(&self) -> u64 {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if k != "out" {
                h.update(format!("{k}={v}\n").as_bytes());
            }
        }
        u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        self.corpus().validate()?;
        if self.fine_frame % 32 != 0 || self.fine_frame == 0 {
            return bad("fine_frame must be a positive multiple of 32");
        }
        if self.steps == 0 || self.steps > 8 {
            return bad("steps must be in 1..=8");
        }
        if self.mg_nodes != 2 {
            return bad("mg_nodes must be 2: nets reason over exactly two partner fragments");
        }
        if !(0.0..=1.0).contains(&self.td) || !(0.0..=1.0).contains(&self.tr) {
            return bad("td and tr must lie in [0,1]");
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad("lambda must lie in (0,1)");
        }
        for lr in [self.lr_cls, self.lr_fine, self.lr_plus, self.lr] {
            if !(lr > 0.0 && lr <= 1.0) {
                return bad("learning rates must lie in (0,1]");
            }
        }
        if !(self.fresh_lr_scale > 0.0 && self.fresh_lr_scale <= 1000.0) {
            return bad("fresh_lr_scale must lie in (0,1000]");
        }
        if !(self.lr_floor_cls > 0.0 && self.lr_floor_cls <= 1.0) {
            return bad("lr_floor_cls must lie in (0,1]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0,1)");
        }
        let counts = [
            self.batch_coarse,
            self.batch_fine,
            self.batch_plus,
            self.batch_fp,
            self.epochs_cls,
            self.epochs_fp,
        ];
        if counts.iter().any(|&c| c == 0) {
            return bad("batch sizes and epoch budgets must be positive");
        }
        Ok(())
    }

    pub fn corpus(&self) -> CorpusConfig {
        CorpusConfig {
            seed: self.seed,
            classes: self.classes,
            seqs_per_class: self.seqs_per_class,
            frames: self.frames,
            hw: self.frame,
            noise: self.noise,
            sigma: self.sigma,
            fixations: self.fixations,
            ..CorpusConfig::default()
        }
    }

    pub fn frl(&self) -> Option<Frl> {
        self.frl.then_some(Frl { td: self.td, tr: self.tr })
    }

    pub fn cls_train(&self, lr: f64, batch: usize, samples: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs_cls,
            batch,
            lr,
            momentum: self.momentum,
            optimizer: self.cls_optimizer,
            fresh_lr_scale: self.fresh_lr_scale,
            lr_floor: self.lr_floor_cls,
            samples_per_epoch: samples,
        }
    }

    pub fn fp_train(&self, samples: usize) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs_fp,
            batch: self.batch_fp,
            lr: self.lr,
            momentum: self.momentum,
            optimizer: self.fp_optimizer,
            fresh_lr_scale: 1.0,
            lr_floor: 1.0,
            samples_per_epoch: samples,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.set("steps", "2").unwrap();
        cfg.set("fuse", "agg").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_blank_lines_and_unknown_keys() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# header\n\nseed = 9   # trailing\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert!(matches!(cfg.apply_text("sede = 9"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply_text("seed 9"), Err(Error::Config(_))));
        assert!(matches!(cfg.apply_text("seed = nine"), Err(Error::Config(_))));
    }

    #[test]
    fn range_checks() {
        for (k, v) in [("td", "1.5"), ("mg_nodes", "3"), ("lambda", "0"), ("batch_fp", "0"), ("frame", "48")] {
            let mut cfg = RunConfig::default();
            cfg.set(k, v).unwrap();
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{k}={v}");
        }
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
    }
}
