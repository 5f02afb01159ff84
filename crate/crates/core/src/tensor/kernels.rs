//! Raw loops behind the differentiable ops. Everything here works on flat
//! row-major slices; shape checking happens in the graph layer.

use crate::scalar::Scalar;

/// Geometry of one single-channel 2-D correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlaneGeom {
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PlaneGeom {
    /// Output extent `floor((in + 2·pad − k)/stride) + 1`, or `None` when it
    /// would not be positive.
    pub fn conv(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        Some(PlaneGeom {
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    /// Transposed-conv geometry for an `h×w` input, whose output is
    /// `(h−1)·stride − 2·pad + k`. It is stored as the forward conv it is the
    /// adjoint of, so `oh×ow` is the transposed op's input.
    pub fn deconv(h: usize, w: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        let full_h = (h.checked_sub(1)?) * stride + kh;
        let full_w = (w.checked_sub(1)?) * stride + kw;
        if stride == 0 || full_h <= 2 * pad || full_w <= 2 * pad {
            return None;
        }
        Some(PlaneGeom {
            h: full_h - 2 * pad,
            w: full_w - 2 * pad,
            kh,
            kw,
            stride,
            pad,
            oh: h,
            ow: w,
        })
    }
}

/// Output indices `o` with `0 <= o·stride + d − pad < len`.
#[inline]
fn valid(out_len: usize, in_len: usize, stride: usize, pad: usize, d: usize) -> (usize, usize) {
    let lo = if d >= pad { 0 } else { (pad - d).div_ceil(stride) };
    let hi = if in_len + pad > d {
        ((in_len - 1 + pad - d) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unrolls `n` input planes into a `(n·kh·kw) × (oh·ow)` patch matrix with
/// zeros where the window hangs over the padding.
fn im2col<'a, T: Scalar>(plane: impl Fn(usize) -> &'a [T], n: usize, g: &PlaneGeom) -> Vec<T> {
    let (ohw, kk, s) = (g.oh * g.ow, g.kh * g.kw, g.stride);
    let mut cols = vec![T::zero(); n * kk * ohw];
    for c in 0..n {
        let inp = plane(c);
        for dy in 0..g.kh {
            let (ylo, yhi) = valid(g.oh, g.h, s, g.pad, dy);
            for dx in 0..g.kw {
                let (xlo, xhi) = valid(g.ow, g.w, s, g.pad, dx);
                let row = &mut cols[((c * kk) + dy * g.kw + dx) * ohw..][..ohw];
                for oy in ylo..yhi {
                    let iy = oy * s + dy - g.pad;
                    let irow = &inp[iy * g.w..(iy + 1) * g.w];
                    let orow = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    for ox in xlo..xhi {
                        orow[ox] = irow[ox * s + dx - g.pad];
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-adds patch rows back into `n` planes.
fn col2im<T: Scalar>(cols: &[T], out: &mut [T], n: usize, g: &PlaneGeom, plane_index: impl Fn(usize) -> usize) {
    let (hw, ohw, kk, s) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw, g.stride);
    for c in 0..n {
        let dst = &mut out[plane_index(c) * hw..][..hw];
        for dy in 0..g.kh {
            let (ylo, yhi) = valid(g.oh, g.h, s, g.pad, dy);
            for dx in 0..g.kw {
                let (xlo, xhi) = valid(g.ow, g.w, s, g.pad, dx);
                let row = &cols[((c * kk) + dy * g.kw + dx) * ohw..][..ohw];
                for oy in ylo..yhi {
                    let iy = oy * s + dy - g.pad;
                    let drow = &mut dst[iy * g.w..(iy + 1) * g.w];
                    let srow = &row[oy * g.ow..(oy + 1) * g.ow];
                    for ox in xlo..xhi {
                        drow[ox * s + dx - g.pad] += srow[ox];
                    }
                }
            }
        }
    }
}

/// `c[m×n] += a[m×q] · b[q×n]`, row-major, axpy over rows of `b`.
fn gemm_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, q: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for k in 0..q {
            let av = a[i * q + k];
            if av == T::zero() {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(&b[k * n..(k + 1) * n]) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×q] += a[m×n] · b[q×n]ᵀ`: dot products of contiguous rows.
fn gemm_nt_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, q: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for k in 0..q {
            let brow = &b[k * n..(k + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            c[i * q + k] += acc;
        }
    }
}

/// `c[q×n] += a[m×q]ᵀ · b[m×n]`.
fn gemm_tn_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, q: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for k in 0..q {
            let av = a[i * q + k];
            if av == T::zero() {
                continue;
            }
            for (cv, &bv) in c[k * n..(k + 1) * n].iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// Multi-channel correlation: `x` is `ci×h×w`, `k` is `co×ci×kh×kw`.
pub fn conv2d_forward<T: Scalar>(x: &[T], k: &[T], ci: usize, co: usize, g: &PlaneGeom) -> Vec<T> {
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let cols = im2col(|c| &x[c * hw..(c + 1) * hw], ci, g);
    let mut out = vec![T::zero(); co * ohw];
    gemm_acc(&mut out, k, &cols, co, ci * kk, ohw);
    out
}

pub fn conv2d_backward_input<T: Scalar>(gout: &[T], k: &[T], ci: usize, co: usize, g: &PlaneGeom) -> Vec<T> {
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let mut gcols = vec![T::zero(); ci * kk * ohw];
    gemm_tn_acc(&mut gcols, k, gout, co, ci * kk, ohw);
    let mut gin = vec![T::zero(); ci * hw];
    col2im(&gcols, &mut gin, ci, g, |c| c);
    gin
}

pub fn conv2d_backward_kernel<T: Scalar>(gout: &[T], x: &[T], ci: usize, co: usize, g: &PlaneGeom) -> Vec<T> {
    let (hw, ohw, kk) = (g.h * g.w, g.oh * g.ow, g.kh * g.kw);
    let cols = im2col(|c| &x[c * hw..(c + 1) * hw], ci, g);
    let mut gk = vec![T::zero(); co * ci * kk];
    gemm_nt_acc(&mut gk, gout, &cols, co, ci * kk, ohw);
    gk
}

/// Geometry of a 3-D correlation with spatial stride/pad and a valid
/// (unpadded, unit-stride) temporal axis.
#[derive(Clone, Copy, Debug)]
pub struct VolumeGeom {
    pub plane: PlaneGeom,
    pub t: usize,
    pub kt: usize,
    pub ot: usize,
}

impl VolumeGeom {
    /// Input plane feeding patch channel `(i, dt)` at output time `ot`.
    fn source(&self, c: usize, ot: usize) -> usize {
        let (i, dt) = (c / self.kt, c % self.kt);
        i * self.t + ot + dt
    }
}

/// `x` is `ci×t×h×w`, `k` is `co×ci×kt×kh×kw`; output `co×ot×oh×ow`.
pub fn conv3d_forward<T: Scalar>(x: &[T], k: &[T], ci: usize, co: usize, g: &VolumeGeom) -> Vec<T> {
    let p = &g.plane;
    let (hw, ohw, kk) = (p.h * p.w, p.oh * p.ow, p.kh * p.kw);
    let n = ci * g.kt;
    let mut out = vec![T::zero(); co * g.ot * ohw];
    let mut slab = vec![T::zero(); co * ohw];
    for ot in 0..g.ot {
        let cols = im2col(|c| &x[g.source(c, ot) * hw..][..hw], n, p);
        slab.iter_mut().for_each(|v| *v = T::zero());
        gemm_acc(&mut slab, k, &cols, co, n * kk, ohw);
        for o in 0..co {
            out[(o * g.ot + ot) * ohw..][..ohw].copy_from_slice(&slab[o * ohw..(o + 1) * ohw]);
        }
    }
    out
}

/// Gradients of [`conv3d_forward`] in the input (if `want_x`) and kernel.
pub fn conv3d_backward<T: Scalar>(
    gout: &[T],
    x: &[T],
    k: &[T],
    ci: usize,
    co: usize,
    g: &VolumeGeom,
    want_x: bool,
) -> (Option<Vec<T>>, Vec<T>) {
    let p = &g.plane;
    let (hw, ohw, kk) = (p.h * p.w, p.oh * p.ow, p.kh * p.kw);
    let n = ci * g.kt;
    let mut gx = want_x.then(|| vec![T::zero(); ci * g.t * hw]);
    let mut gk = vec![T::zero(); k.len()];
    let mut slab = vec![T::zero(); co * ohw];
    for ot in 0..g.ot {
        for o in 0..co {
            slab[o * ohw..(o + 1) * ohw].copy_from_slice(&gout[(o * g.ot + ot) * ohw..][..ohw]);
        }
        let cols = im2col(|c| &x[g.source(c, ot) * hw..][..hw], n, p);
        gemm_nt_acc(&mut gk, &slab, &cols, co, n * kk, ohw);
        if let Some(gx) = gx.as_mut() {
            let mut gcols = vec![T::zero(); n * kk * ohw];
            gemm_tn_acc(&mut gcols, k, &slab, co, n * kk, ohw);
            col2im(&gcols, gx, n, p, |c| g.source(c, ot));
        }
    }
    (gx, gk)
}

/// `a` is `p×q`, `b` is `q×r`.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], p: usize, q: usize, r: usize) -> Vec<T> {
    let mut c = vec![T::zero(); p * r];
    for i in 0..p {
        let crow = &mut c[i * r..(i + 1) * r];
        for k in 0..q {
            let av = a[i * q + k];
            if av == T::zero() {
                continue;
            }
            for (cv, &bv) in crow.iter_mut().zip(&b[k * r..(k + 1) * r]) {
                *cv += av * bv;
            }
        }
    }
    c
}

pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut t = vec![T::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// Corner-aligned linear interpolation taps along one axis:
/// `(lower index, upper index, upper weight)` per output position.
pub fn linear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    (0..output)
        .map(|i| {
            if input == 1 || output == 1 {
                return (0, 0, 0.0);
            }
            let src = i as f64 * (input - 1) as f64 / (output - 1) as f64;
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of a stack of `c` planes, corner-aligned.
pub fn upsample_forward<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let mut out = vec![T::zero(); c * oh * ow];
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        let oplane = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::of(fx);
                let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                oplane[oy * ow + ox] = top * (T::one() - fy) + bot * fy;
            }
        }
    }
    out
}

pub fn upsample_backward<T: Scalar>(g: &[T], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let mut gx = vec![T::zero(); c * h * w];
    for ch in 0..c {
        let gplane = &g[ch * oh * ow..(ch + 1) * oh * ow];
        let plane = &mut gx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::of(fx);
                let v = gplane[oy * ow + ox];
                plane[y0 * w + x0] += v * (T::one() - fy) * (T::one() - fx);
                plane[y0 * w + x1] += v * (T::one() - fy) * fx;
                plane[y1 * w + x0] += v * fy * (T::one() - fx);
                plane[y1 * w + x1] += v * fy * fx;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_bruteforce() {
        for out_len in 1..6 {
            for in_len in 1..9 {
                for stride in 1..4 {
                    for pad in 0..3 {
                        for d in 0..5 {
                            let (lo, hi) = valid(out_len, in_len, stride, pad, d);
                            let brute: Vec<usize> = (0..out_len)
                                .filter(|&o| {
                                    let i = (o * stride + d) as isize - pad as isize;
                                    i >= 0 && (i as usize) < in_len
                                })
                                .collect();
                            let got: Vec<usize> = (lo..hi).collect();
                            assert_eq!(got, brute, "{out_len} {in_len} {stride} {pad} {d}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conv_matches_direct_summation() {
        // 2 in, 3 out, 5x6 input, k 3x2, stride 2, pad 1
        let (ci, co, h, w, kh, kw, s, p) = (2, 3, 5, 6, 3, 2, 2, 1);
        let x: Vec<f64> = (0..ci * h * w).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let k: Vec<f64> = (0..co * ci * kh * kw).map(|i| ((i * 5 % 7) as f64) * 0.5 - 1.0).collect();
        let g = PlaneGeom::conv(h, w, kh, kw, s, p).unwrap();
        let out = conv2d_forward(&x, &k, ci, co, &g);
        for o in 0..co {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = 0.0;
                    for i in 0..ci {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (oy * s + dy) as isize - p as isize;
                                let ix = (ox * s + dx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += k[((o * ci + i) * kh + dy) * kw + dx]
                                        * x[(i * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                    }
                    assert!((out[(o * g.oh + oy) * g.ow + ox] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn taps_are_corner_aligned() {
        let t = linear_taps(2, 4);
        assert_eq!(t[0], (0, 1, 0.0));
        assert_eq!(t[3].0, 1);
        assert!((t[1].2 - 1.0 / 3.0).abs() < 1e-15);
    }
}
