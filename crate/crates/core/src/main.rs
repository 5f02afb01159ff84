use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scamkit::fixation::FpKind;
use scamkit::fsio;
use scamkit::gradsuite;
use scamkit::nets::NetKind;
use scamkit::pipeline::{analysis, FuseMode, PgtMethod, Pipeline, RunConfig, Stage};
use scamkit::{Error, Result};

#[derive(Parser)]
#[command(name = "scamkit", version, about = "Fixation prediction trained from video class tags alone")]
struct Cli {
    /// `key = value` config file; `#` starts a comment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory (overrides `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides one config key, e.g. `--set epochs_cls=10`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    GenData,
    /// Train a class net: s, sa, st at either stage, or s+, sa+, st+.
    TrainCls {
        #[arg(long)]
        net: NetKind,
        #[arg(long, default_value = "coarse")]
        stage: Stage,
    },
    /// Train the audio switch.
    TrainSwitch,
    /// Write pseudofixations for every frame.
    GenPgt {
        #[arg(long)]
        method: Option<PgtMethod>,
    },
    /// Train a fixation net on the pseudofixations.
    TrainFp {
        #[arg(long)]
        net: FpKind,
    },
    /// Predict held-out fixation maps.
    Predict {
        #[arg(long)]
        fuse: Option<FuseMode>,
    },
    /// Score a prediction set against held-out ground truth.
    Evaluate {
        /// Prediction set under `pred/`; defaults to the configured fusion.
        #[arg(long)]
        pred: Option<String>,
    },
    /// Localization and distillation summaries of a finished run.
    Report {
        /// Score every n-th held-out frame for localization.
        #[arg(long, default_value_t = 3)]
        stride: usize,
    },
    /// Finite-difference check of every op and net.
    Gradcheck,
    /// The default pipeline end to end.
    RunAll,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("`--set {kv}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads() -> Result<()> {
    let Some(v) = std::env::var_os("SCAMKIT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .to_str()
        .and_then(|s| s.parse().ok())
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("SCAMKIT_THREADS={v:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn gradcheck() -> Result<bool> {
    let results = gradsuite::run_all()?;
    for r in &results {
        println!(
            "{:<18} max_rel_err {:.3e} checked {:>4} {}",
            r.name,
            r.max_rel_err,
            r.checked,
            if r.passed() { "ok" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    println!("{} cases, {failed} above {:e}", results.len(), gradsuite::TOLERANCE);
    Ok(failed == 0)
}

fn report(p: &Pipeline, stride: usize) -> Result<()> {
    let loc = analysis::localization(p, stride)?;
    fsio::atomic_write(&p.layout.root.join("report_localization.csv"), loc.to_csv().as_bytes())?;
    print!("{}", loc.to_csv());
    let rows = analysis::distillation(p, &["sta", "sta+short", "sta+long", &p.cfg.fuse.to_string()])?;
    let mut csv = String::from("set,cc_pgt,nss_pgt,cc_gt\n");
    for r in &rows {
        csv.push_str(&format!("{},{:.6},{:.6},{:.6}\n", r.set, r.cc_pgt, r.nss_pgt, r.cc_gt));
    }
    fsio::atomic_write(&p.layout.root.join("report_distillation.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    init_threads()?;
    if let Command::Gradcheck = cli.command {
        return gradcheck();
    }
    let p = Pipeline::new(load_config(cli)?)?;
    match &cli.command {
        Command::GenData => p.gen_data()?,
        Command::TrainCls { net, stage } => {
            let r = p.train_cls(*net, *stage)?;
            println!("{} {} train_accuracy {:.4}", r.kind, r.stage, r.accuracy);
        }
        Command::TrainSwitch => {
            let r = p.train_switch()?;
            println!("switch held_out_gate_accuracy {:.4}", r.accuracy);
        }
        Command::GenPgt { method } => p.gen_pgt(method.unwrap_or(p.cfg.pgt_method))?,
        Command::TrainFp { net } => p.train_fp(*net)?,
        Command::Predict { fuse } => p.predict(fuse.unwrap_or(p.cfg.fuse))?,
        Command::Evaluate { pred } => {
            let set = pred.clone().unwrap_or_else(|| p.cfg.fuse.to_string());
            let m = p.evaluate(&set)?.mean();
            println!("{set} auc_j {:.4} s_auc {:.4} nss {:.4} cc {:.4} sim {:.4}", m[0], m[1], m[2], m[3], m[4]);
        }
        Command::Report { stride } => report(&p, *stride)?,
        Command::RunAll => p.run_all()?,
        Command::Gradcheck => unreachable!("handled above"),
    }
    Ok(true)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::MissingDependency(_) => 3,
        Error::Numeric(_) | Error::NonFinite(_) => 4,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
