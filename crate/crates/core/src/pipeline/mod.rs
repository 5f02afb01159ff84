//! The staged pipeline behind the command-line tool: data generation,
//! classifier training, pseudofixation generation, distillation, prediction
//! and evaluation. Every stage reads its inputs from and writes its outputs
//! to a run directory.

pub mod analysis;
pub mod config;
mod stages;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

pub use config::{FuseMode, PgtMethod, RunConfig};
pub use stages::{ClsReport, Stage};

use crate::error::Result;
use crate::fixation::{FpKind, FpNet};
use crate::fsio;
use crate::nets::{Checkpoint, ClsNet, NetKind};
use crate::synthdata::{Corpus, FrameRef};

/// File-system layout of a run directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

/// `+` is awkward in file names; `s+` becomes `s-plus`.
pub fn file_stem(name: &str) -> String {
    name.replace('+', "-plus-")
        .replace("-_", "_")
        .trim_end_matches('-')
        .to_string()
}

fn frame_stem(r: FrameRef) -> String {
    format!("{:03}_{:04}", r.seq, r.frame)
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn ckpt(&self, name: &str) -> PathBuf {
        self.root.join("ckpt").join(format!("{}.stan", file_stem(name)))
    }

    pub fn cls_ckpt(&self, kind: NetKind, stage: Stage) -> PathBuf {
        match kind {
            NetKind::Switch => self.ckpt("switch"),
            _ => self.ckpt(&format!("{kind}_{stage}")),
        }
    }

    pub fn fp_ckpt(&self, kind: FpKind) -> PathBuf {
        self.ckpt(&kind.to_string())
    }

    pub fn pgt_dir(&self, method: PgtMethod) -> PathBuf {
        self.root.join("pgt").join(file_stem(&method.to_string()))
    }

    pub fn pgt(&self, method: PgtMethod, r: FrameRef) -> PathBuf {
        self.pgt_dir(method).join(frame_stem(r))
    }

    pub fn pred_dir(&self, set: &str) -> PathBuf {
        self.root.join("pred").join(file_stem(set))
    }

    pub fn pred(&self, set: &str, r: FrameRef) -> PathBuf {
        self.pred_dir(set).join(frame_stem(r))
    }

    pub fn metrics(&self, set: &str) -> PathBuf {
        self.root.join(format!("metrics_{}.csv", file_stem(set)))
    }

    pub fn log(&self, command: &str) -> PathBuf {
        self.root.join("logs").join(format!("{}.log", file_stem(command)))
    }
}

/// Peak resident set size of this process in KiB, where the platform
/// reports it.
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// Per-command log, echoed to stderr and written atomically on `finish`.
pub struct RunLog {
    path: PathBuf,
    text: String,
    start: Instant,
    quiet: bool,
}

impl RunLog {
    pub fn new(layout: &Layout, command: &str, cfg: &RunConfig) -> Self {
        let mut log = RunLog {
            path: layout.log(command),
            text: String::new(),
            start: Instant::now(),
            quiet: std::env::var_os("SCAMKIT_QUIET").is_some(),
        };
        log.line(format!("command {command}"));
        log.line(format!("config_hash {:016x}", cfg.hash()));
        log
    }

    pub fn line(&mut self, s: impl AsRef<str>) {
        let s = s.as_ref();
        if !self.quiet {
            eprintln!("{s}");
        }
        self.text.push_str(s);
        self.text.push('\n');
    }

    pub fn finish(mut self) -> Result<()> {
        let secs = self.start.elapsed().as_secs_f64();
        let _ = writeln!(self.text, "elapsed_s {secs:.2}");
        if let Some(kib) = peak_rss_kib() {
            let _ = writeln!(self.text, "peak_rss_kib {kib}");
        }
        fsio::atomic_write(&self.path, self.text.as_bytes())
    }
}

/// A run: configuration plus its directory.
pub struct Pipeline {
    pub cfg: RunConfig,
    pub layout: Layout,
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let layout = Layout::new(cfg.out.clone());
        Ok(Pipeline { cfg, layout })
    }

    pub fn corpus(&self) -> Result<Corpus> {
        Corpus::load(&self.layout.data())
    }

    pub fn load_cls(&self, kind: NetKind, stage: Stage) -> Result<ClsNet<f64>> {
        ClsNet::from_checkpoint(&Checkpoint::load(&self.layout.cls_ckpt(kind, stage))?)
    }

    pub fn load_fp(&self, kind: FpKind) -> Result<FpNet<f64>> {
        FpNet::from_checkpoint(&Checkpoint::load(&self.layout.fp_ckpt(kind))?)
    }

    pub fn save_cls(&self, net: &ClsNet<f64>, stage: Stage, epoch: usize) -> Result<()> {
        net.to_checkpoint(epoch, self.cfg.seed, self.cfg.hash())
            .save(&self.layout.cls_ckpt(net.kind(), stage))
    }

    pub fn rng(&self, label: &str) -> rand_chacha::ChaCha8Rng {
        crate::rng::stream(self.cfg.seed, label)
    }

    /// Every stage of the default pipeline in dependency order.
    pub fn run_all(&self) -> Result<()> {
        use crate::camscam::Granularity;
        use crate::nets::Source;
        self.gen_data()?;
        for src in Source::ALL {
            self.train_cls(NetKind::Base(src), Stage::Coarse)?;
        }
        for src in Source::ALL {
            self.train_cls(NetKind::Base(src), Stage::Fine)?;
        }
        for src in Source::ALL {
            self.train_cls(NetKind::Plus(src), Stage::Coarse)?;
        }
        self.train_switch()?;
        self.gen_pgt(self.cfg.pgt_method)?;
        for kind in [FpKind::Sta, FpKind::StaPlus(Granularity::Short), FpKind::StaPlus(Granularity::Long)] {
            self.train_fp(kind)?;
        }
        self.predict(self.cfg.fuse)?;
        self.evaluate(&self.cfg.fuse.to_string())?;
        Ok(())
    }
}
