//! Saliency agreement measures between a predicted map and fixation data.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn same(a: &Tensor<f64>, b: &Tensor<f64>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    // the summed mean of a constant map can miss it by an ulp
    if let Some(&first) = x.first().filter(|&&f| x.iter().all(|&v| v == f)) {
        return (first, 0.0);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Pearson correlation of the flattened maps.
pub fn cc(ps: &Tensor<f64>, cf: &Tensor<f64>) -> Result<f64> {
    same(ps, cf, "cc")?;
    let (ma, sa) = mean_std(ps.data());
    let (mb, sb) = mean_std(cf.data());
    if sa == 0.0 || sb == 0.0 {
        return Err(Error::Numeric("correlation of a constant map is undefined".into()));
    }
    let n = ps.len() as f64;
    let cov = ps.data().iter().zip(cf.data()).map(|(&a, &b)| (a - ma) * (b - mb)).sum::<f64>() / n;
    Ok((cov / (sa * sb)).clamp(-1.0, 1.0))
}

/// Histogram intersection of the sum-normalized maps.
pub fn sim(ps: &Tensor<f64>, cf: &Tensor<f64>) -> Result<f64> {
    same(ps, cf, "sim")?;
    let (sa, sb) = (ps.sum(), cf.sum());
    if sa <= 0.0 || sb <= 0.0 {
        return Err(Error::Numeric("similarity needs maps with positive mass".into()));
    }
    let s: f64 = ps.data().iter().zip(cf.data()).map(|(&a, &b)| (a / sa).min(b / sb)).sum();
    Ok(s.clamp(0.0, 1.0))
}

fn index(ps: &Tensor<f64>, fl: &[(usize, usize)]) -> Result<Vec<usize>> {
    if ps.rank() != 2 {
        return Err(Error::invalid_shape("fixations", format!("H×W map required, got {:?}", ps.shape())));
    }
    let (h, w) = (ps.shape()[0], ps.shape()[1]);
    let mut idx = Vec::with_capacity(fl.len());
    for &(r, c) in fl {
        if r >= h || c >= w {
            return Err(Error::InvalidInput(format!("fixation ({r},{c}) outside {h}×{w}")));
        }
        let i = r * w + c;
        if !idx.contains(&i) {
            idx.push(i);
        }
    }
    if idx.is_empty() {
        return Err(Error::InvalidInput("no fixations".into()));
    }
    Ok(idx)
}

/// Mean of the standardized map (population std) at the fixations.
pub fn nss(ps: &Tensor<f64>, fl: &[(usize, usize)]) -> Result<f64> {
    let idx = index(ps, fl)?;
    let (m, s) = mean_std(ps.data());
    if s == 0.0 {
        return Err(Error::Numeric("NSS of a constant map is undefined".into()));
    }
    Ok(idx.iter().map(|&i| (ps.data()[i] - m) / s).sum::<f64>() / idx.len() as f64)
}

/// ROC area with thresholds at the positives' saliency values: each
/// threshold `t` gives TPR = share of positives ≥ t and FPR = share of
/// negatives ≥ t, joined by trapezoids between (0,0) and (1,1).
fn roc_area(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut thr = positives.to_vec();
    thr.sort_by(|a, b| b.total_cmp(a));
    thr.dedup();
    let mut neg = negatives.to_vec();
    neg.sort_by(|a, b| b.total_cmp(a));
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    let mut pos_sorted = positives.to_vec();
    pos_sorted.sort_by(|a, b| b.total_cmp(a));
    let (mut ip, mut ineg) = (0, 0);
    let (mut px, mut py, mut area) = (0.0, 0.0, 0.0);
    for t in thr {
        while ip < pos_sorted.len() && pos_sorted[ip] >= t {
            ip += 1;
        }
        while ineg < neg.len() && neg[ineg] >= t {
            ineg += 1;
        }
        let (x, y) = (ineg as f64 / nn, ip as f64 / np);
        area += (x - px) * (y + py) / 2.0;
        (px, py) = (x, y);
    }
    area += (1.0 - px) * (1.0 + py) / 2.0;
    area
}

/// AUC with fixated pixels as positives and all other pixels as negatives.
pub fn auc_judd(ps: &Tensor<f64>, fl: &[(usize, usize)]) -> Result<f64> {
    let idx = index(ps, fl)?;
    if idx.len() == ps.len() {
        return Err(Error::InvalidInput("every pixel is fixated; no negatives".into()));
    }
    let mut is_pos = vec![false; ps.len()];
    idx.iter().for_each(|&i| is_pos[i] = true);
    let pos: Vec<f64> = idx.iter().map(|&i| ps.data()[i]).collect();
    let neg: Vec<f64> = ps.data().iter().zip(&is_pos).filter(|(_, &p)| !p).map(|(&v, _)| v).collect();
    Ok(roc_area(&pos, &neg))
}

/// AUC with negatives taken from the fixations of up to 10 other frames
/// (chosen with `rng`), excluding this frame's fixated pixels.
pub fn shuffled_auc<R: Rng>(ps: &Tensor<f64>, fl: &[(usize, usize)], others: &[&[(usize, usize)]], rng: &mut R) -> Result<f64> {
    let idx = index(ps, fl)?;
    let chosen: Vec<&&[(usize, usize)]> = others.choose_multiple(rng, others.len().min(10)).collect();
    let mut pool: Vec<usize> = Vec::new();
    for o in chosen {
        for i in index(ps, o)? {
            if !idx.contains(&i) && !pool.contains(&i) {
                pool.push(i);
            }
        }
    }
    if pool.is_empty() {
        return Err(Error::InvalidInput("empty negative pool for shuffled AUC".into()));
    }
    let pos: Vec<f64> = idx.iter().map(|&i| ps.data()[i]).collect();
    let neg: Vec<f64> = pool.iter().map(|&i| ps.data()[i]).collect();
    Ok(roc_area(&pos, &neg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameScores {
    pub seq: usize,
    pub frame: usize,
    pub auc_j: f64,
    pub s_auc: f64,
    pub nss: f64,
    pub cc: f64,
    pub sim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub frames: Vec<FrameScores>,
}

impl MetricsReport {
    pub fn mean(&self) -> [f64; 5] {
        let n = self.frames.len().max(1) as f64;
        let mut m = [0.0; 5];
        for f in &self.frames {
            for (a, v) in m.iter_mut().zip([f.auc_j, f.s_auc, f.nss, f.cc, f.sim]) {
                *a += v;
            }
        }
        m.map(|v| v / n)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seq,frame,auc_j,s_auc,nss,cc,sim\n");
        for f in &self.frames {
            let _ = writeln!(out, "{},{},{:.6},{:.6},{:.6},{:.6},{:.6}", f.seq, f.frame, f.auc_j, f.s_auc, f.nss, f.cc, f.sim);
        }
        let m = self.mean();
        let _ = writeln!(out, "MEAN,,{:.6},{:.6},{:.6},{:.6},{:.6}", m[0], m[1], m[2], m[3], m[4]);
        out
    }
}
