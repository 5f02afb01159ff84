//! Acceptance suite: one PASS/FAIL line per criterion. Criteria 4 to 8 run
//! the default pipeline twice through the binary, so this target takes
//! roughly half an hour on one core.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scamkit::camscam::{scam_fuse, soft_filter, CamMap, CamSource};
use scamkit::fixation::fuse_final;
use scamkit::fsio;
use scamkit::gradsuite;
use scamkit::imageio;
use scamkit::metrics::{auc_judd, cc, nss, sim};
use scamkit::pipeline::{analysis, Pipeline, RunConfig};
use scamkit::tensor::{minmax_normalize, Graph, Tensor};

const GRAD_TOL: f64 = 1e-4;
const GRAD_SECONDS: f64 = 120.0;
const AUC_ORACLE_TOL: f64 = 1e-9;
const IDENTITY_TOL: f64 = 1e-12;
const NSS_HAND: f64 = 1.7320508;
const NSS_TOL: f64 = 1e-6;
const ALGEBRA_TOL: f64 = 1e-9;
const LOCALIZATION_SLACK: f64 = 0.01;
const LOCALIZATION_STRIDE: usize = 3;
const CLS_ACCURACY: f64 = 0.90;
const SWITCH_ACCURACY: f64 = 0.95;
const STA_CC: f64 = 0.8;
const STA_NSS: f64 = 1.0;
const FINAL_SLACK: f64 = 0.01;
const PIPELINE_SECONDS: f64 = 1800.0;
const PEAK_KIB: u64 = 2 * 1024 * 1024;

struct Outcome {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn report(id: usize, title: &'static str, pass: bool, detail: String) -> Outcome {
    println!("criterion {id} {} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    Outcome { id, title, pass, detail }
}

fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Tensor<f64> {
    Tensor::new(&[h, w], (0..h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

/// Judd ROC area by exhaustive counting: every threshold is a fixated
/// pixel's value, each rate is recounted from scratch over all pixels.
fn auc_oracle(ps: &Tensor<f64>, fl: &[(usize, usize)]) -> f64 {
    let w = ps.shape()[1];
    let fixated: Vec<usize> = fl.iter().map(|&(r, c)| r * w + c).collect();
    let is_pos = |i: usize| fixated.contains(&i);
    let np = fixated.len() as f64;
    let nn = (ps.len() - fixated.len()) as f64;
    let mut points = vec![(0.0, 0.0), (1.0, 1.0)];
    for &t in fixated.iter().map(|&i| &ps.data()[i]) {
        let tp = (0..ps.len()).filter(|&i| is_pos(i) && ps.data()[i] >= t).count() as f64;
        let fp = (0..ps.len()).filter(|&i| !is_pos(i) && ps.data()[i] >= t).count() as f64;
        points.push((fp / nn, tp / np));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    points.dedup();
    points.windows(2).map(|p| (p[1].0 - p[0].0) * (p[1].1 + p[0].1) / 2.0).sum()
}

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let results = gradsuite::run_all().expect("gradient suite runs");
    let secs = t.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
    let failed: Vec<&str> = results.iter().filter(|r| r.max_rel_err > GRAD_TOL).map(|r| r.name.as_str()).collect();
    let nets = ["net s", "net sa", "net st", "c-gcn step", "net sta", "decoder"];
    let missing: Vec<&str> = nets
        .iter()
        .copied()
        .filter(|n| !results.iter().any(|r| r.name == *n))
        .collect();
    report(
        1,
        "gradient suite",
        failed.is_empty() && missing.is_empty() && secs < GRAD_SECONDS,
        format!(
            "{} cases, worst rel err {worst:.2e} (limit {GRAD_TOL:e}), {secs:.1} s (limit {GRAD_SECONDS} s), failed {failed:?}, missing {missing:?}",
            results.len()
        ),
    )
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_auc: f64 = 0.0;
    for case in 0..50 {
        let mut ps = random_map(&mut rng, 16, 16);
        if case % 2 == 1 {
            // coarse levels force ties between positives and negatives
            ps = ps.map(|v| (v * 8.0).floor() / 8.0);
        }
        let n = rng.gen_range(1..40);
        let mut fl = Vec::new();
        while fl.len() < n {
            let p = (rng.gen_range(0..16), rng.gen_range(0..16));
            if !fl.contains(&p) {
                fl.push(p);
            }
        }
        worst_auc = worst_auc.max((auc_judd(&ps, &fl).unwrap() - auc_oracle(&ps, &fl)).abs());
    }
    let x = random_map(&mut rng, 16, 16);
    let cc_err = (cc(&x, &x).unwrap() - 1.0).abs();
    let sim_err = (sim(&x, &x).unwrap() - 1.0).abs();
    let mut g = Graph::<f64>::new();
    let v = g.constant(x.clone());
    let k = g.kl_loss(v, &x).unwrap();
    let kl_err = g.value(k).item().abs();
    let constant = Tensor::new(&[16, 16], vec![0.3; 256]).unwrap();
    let const_auc = auc_judd(&constant, &[(1, 2), (7, 7), (15, 0)]).unwrap();
    let hand = nss(&Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap(), &[(0, 0)]).unwrap();
    let pass = worst_auc <= AUC_ORACLE_TOL
        && cc_err <= IDENTITY_TOL
        && sim_err <= IDENTITY_TOL
        && kl_err <= IDENTITY_TOL
        && const_auc == 0.5
        && (hand - NSS_HAND).abs() <= NSS_TOL;
    report(
        2,
        "metric oracles",
        pass,
        format!(
            "auc_judd vs oracle max |d| {worst_auc:.1e} over 50 cases; |cc(x,x)-1| {cc_err:.1e}; kl(x,x) {kl_err:.1e}; |sim(x,x)-1| {sim_err:.1e}; constant AUC {const_auc}; NSS hand case {hand:.7}"
        ),
    )
}

fn cams(maps: &[Tensor<f64>], conf: &[f64]) -> Vec<CamMap> {
    maps.iter()
        .zip(conf)
        .zip(CamSource::TARGET)
        .map(|((m, &c), source)| CamMap {
            map: m.clone(),
            source,
            confidence: c,
        })
        .collect()
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn fusion_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut single, mut scale, mut perm): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..20 {
        let maps: Vec<Tensor<f64>> = (0..3).map(|_| random_map(&mut rng, 8, 8)).collect();
        let hot = rng.gen_range(0..3);
        let mut conf = vec![0.0; 3];
        conf[hot] = rng.gen_range(0.2..1.0);
        single = single.max(max_diff(&scam_fuse(&cams(&maps, &conf)).unwrap(), &minmax_normalize(&maps[hot])));

        let w: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..1.0)).collect();
        let total: f64 = w.iter().sum();
        let mix: Vec<f64> = (0..64)
            .map(|i| maps.iter().zip(&w).map(|(m, wk)| wk * m.data()[i]).sum::<f64>() / total)
            .collect();
        let reference = minmax_normalize(&Tensor::new(&[8, 8], mix).unwrap());
        for k in [0.5, 2.0] {
            let scaled: Vec<f64> = w.iter().map(|v| v * k).collect();
            scale = scale.max(max_diff(&scam_fuse(&cams(&maps, &scaled)).unwrap(), &reference));
        }

        let base = fuse_final(&maps[0], &maps[1], &maps[2]).unwrap();
        for [a, b, c] in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            perm = perm.max(max_diff(&fuse_final(&maps[a], &maps[b], &maps[c]).unwrap(), &base));
        }
    }
    let tie = soft_filter(&[0.5, 0.5], 0);
    let strict = soft_filter(&[0.7, 0.2, 0.1], 0);
    let pass = single <= ALGEBRA_TOL && scale <= ALGEBRA_TOL && perm <= ALGEBRA_TOL && tie == 0.0 && strict == 0.7;
    report(
        3,
        "fusion algebra",
        pass,
        format!(
            "single-confidence |d| {single:.1e}; scale k=0.5,2 vs lambda-free |d| {scale:.1e}; fuse_final permutations |d| {perm:.1e}; tie (0.5,0.5) -> {tie}; (0.7,0.2,0.1) -> {strict}"
        ),
    )
}

/// Runs the default pipeline on one worker; returns its wall time.
fn run_pipeline(out: &Path) -> f64 {
    let t = Instant::now();
    let status = Command::new(env!("CARGO_BIN_EXE_scamkit"))
        .args(["run-all", "--out"])
        .arg(out)
        .env("SCAMKIT_THREADS", "1")
        .env("SCAMKIT_QUIET", "1")
        .status()
        .expect("binary starts");
    assert!(status.success(), "pipeline failed with {status}");
    t.elapsed().as_secs_f64()
}

fn log_values(root: &Path, key: &str) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(root.join("logs")).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        for line in text.lines() {
            if let Some(v) = line.strip_prefix(key).and_then(|r| r.strip_prefix(' ')) {
                out.insert(path.file_stem().unwrap().to_string_lossy().into_owned(), v.to_string());
            }
        }
    }
    out
}

fn localization(p: &Pipeline) -> Outcome {
    let r = analysis::localization(p, LOCALIZATION_STRIDE).unwrap();
    let get = |n: &str| r.get(n).unwrap();
    let checks = [
        ("scam_fine", "scam_coarse"),
        ("scam_coarse", "ac"),
        ("scam_coarse", "cam_s"),
        ("scam_coarse", "cam_sa"),
        ("scam_coarse", "cam_st"),
        ("scam_plus", "scam_coarse"),
        ("scam_frl_on", "scam_frl_off"),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (a, b) in checks {
        let margin = get(a) - get(b);
        pass &= margin >= -LOCALIZATION_SLACK;
        parts.push(format!("{a}-{b} {margin:+.4}"));
    }
    let table: Vec<String> = r.rows.iter().map(|(n, v)| format!("{n} {v:.4}")).collect();
    report(
        4,
        "localization direction",
        pass,
        format!("{} frames; margins {}; means {}", r.frames, parts.join(", "), table.join(", ")),
    )
}

fn learnability(root: &Path) -> Outcome {
    let acc = log_values(root, "train_accuracy");
    let mut pass = true;
    let mut parts = Vec::new();
    for net in ["s", "sa", "st", "s-plus", "sa-plus", "st-plus"] {
        let v: f64 = acc[&format!("train-cls_{net}_coarse")].parse().unwrap();
        pass &= v >= CLS_ACCURACY;
        parts.push(format!("{net} {v}"));
    }
    for net in ["s", "sa", "st"] {
        parts.push(format!("{net} fine {}", acc[&format!("train-cls_{net}_fine")]));
    }
    let gate: f64 = log_values(root, "held_out_gate_accuracy")["train-switch"].parse().unwrap();
    pass &= gate >= SWITCH_ACCURACY;
    report(
        5,
        "classification learnability",
        pass,
        format!("train accuracy {} (limit {CLS_ACCURACY}); switch held-out {gate} (limit {SWITCH_ACCURACY})", parts.join(", ")),
    )
}

fn distillation(p: &Pipeline) -> Outcome {
    let rows = analysis::distillation(p, &["sta", "sta+short", "sta+long", "final"]).unwrap();
    let sta = &rows[0];
    let best_single = rows[..3].iter().map(|r| r.cc_gt).fold(f64::MIN, f64::max);
    let fin = rows[3].cc_gt;
    let pass = sta.cc_pgt >= STA_CC && sta.nss_pgt >= STA_NSS && fin >= best_single - FINAL_SLACK;
    let table: Vec<String> = rows.iter().map(|r| format!("{} {:.4}", r.set, r.cc_gt)).collect();
    report(
        6,
        "distillation",
        pass,
        format!(
            "STA vs pGT CC {:.4} (limit {STA_CC}), NSS {:.4} (limit {STA_NSS}); CC vs GT {}; final - best single {:+.4}",
            sta.cc_pgt,
            sta.nss_pgt,
            table.join(", "),
            fin - best_single
        ),
    )
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    // logs carry timings and are excluded from the comparison
    let fa: Vec<PathBuf> = files(a).into_iter().filter(|p| !p.starts_with("logs")).collect();
    let fb: Vec<PathBuf> = files(b).into_iter().filter(|p| !p.starts_with("logs")).collect();
    let differing: Vec<&PathBuf> = fa
        .iter()
        .filter(|p| std::fs::read(a.join(p)).unwrap() != std::fs::read(b.join(p)).ok().unwrap_or_default())
        .collect();
    let count = |ext: &str| fa.iter().filter(|p| p.extension().is_some_and(|e| e == ext)).count();
    let (mut pairs, mut worst_preview, mut exact) = (0, 0.0f64, true);
    for p in fa.iter().filter(|p| p.extension().is_some_and(|e| e == "pgm")) {
        let stem = a.join(p).with_extension("");
        let raw = std::fs::read(stem.with_extension("f64")).unwrap();
        let values = fsio::f64_from_bytes(&raw).unwrap();
        exact &= fsio::f64_bytes(&values) == raw;
        let preview = imageio::decode_pgm(&std::fs::read(a.join(p)).unwrap()).unwrap();
        exact &= preview.len() == values.len();
        for (q, v) in preview.data().iter().zip(&values) {
            worst_preview = worst_preview.max((q - v.clamp(0.0, 1.0)).abs());
        }
        pairs += 1;
    }
    let preview_ok = worst_preview <= 0.5 / 255.0 + 1e-12;
    let pass = fa == fb && differing.is_empty() && exact && preview_ok && pairs > 0;
    report(
        7,
        "determinism and formats",
        pass,
        format!(
            "{} files compared ({} .stan, {} .f64, {} .csv), {} differ; {pairs} pgm/f64 pairs, worst preview error {worst_preview:.5} (limit {:.5}), f64 exact {exact}",
            fa.len(),
            count("stan"),
            count("f64"),
            count("csv"),
            differing.len(),
            0.5 / 255.0
        ),
    )
}

fn runtime(root: &Path, secs: f64) -> Outcome {
    let peak = log_values(root, "peak_rss_kib")
        .values()
        .map(|v| v.parse::<u64>().unwrap())
        .max()
        .unwrap_or(0);
    report(
        8,
        "runtime",
        secs <= PIPELINE_SECONDS && peak > 0 && peak <= PEAK_KIB,
        format!(
            "default pipeline {secs:.0} s on 1 worker (limit {PIPELINE_SECONDS} s), peak RSS {:.0} MiB (limit 2048 MiB)",
            peak as f64 / 1024.0
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let mut outcomes = vec![gradient_suite(), metric_oracles(), fusion_algebra()];

    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("first"), dir.path().join("second"));
    let secs = run_pipeline(&a);
    let cfg = RunConfig {
        out: a.clone(),
        ..RunConfig::default()
    };
    let p = Pipeline::new(cfg).unwrap();
    outcomes.push(localization(&p));
    outcomes.push(learnability(&a));
    outcomes.push(distillation(&p));
    run_pipeline(&b);
    outcomes.push(determinism(&a, &b));
    outcomes.push(runtime(&a, secs));

    println!("---");
    for o in &outcomes {
        println!("criterion {} {} {}", o.id, if o.pass { "PASS" } else { "FAIL" }, o.title);
    }
    let failed: Vec<String> = outcomes.iter().filter(|o| !o.pass).map(|o| format!("{}: {}", o.id, o.detail)).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:#?}");
}
