//! Netpbm images (P6 colour, P5 gray), raw f64 maps and fixation point lists.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio;
use crate::tensor::Tensor;

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `3×H×W` image in `[0,1]` as binary PPM.
pub fn encode_ppm(img: &Tensor<f64>) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::invalid_shape("ppm", format!("expected 3×H×W, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let hw = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    for p in 0..hw {
        for c in 0..3 {
            out.push(quantize(d[c * hw + p]));
        }
    }
    Ok(out)
}

/// Encodes an `H×W` map in `[0,1]` as binary PGM.
pub fn encode_pgm(map: &Tensor<f64>) -> Result<Vec<u8>> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(Error::invalid_shape("pgm", format!("expected H×W, got {s:?}")));
    }
    let mut out = format!("P5\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(map.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

fn parse_header<'a>(bytes: &'a [u8], magic: &str) -> Result<(usize, usize, &'a [u8])> {
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Format("truncated netpbm header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::Format("netpbm header is not ASCII".into()))?);
    }
    if fields[0] != magic {
        return Err(Error::Format(format!("expected {magic}, found {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Format(format!("netpbm field `{s}`: {e}")));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(Error::Format(format!("only 8-bit netpbm is supported, maxval {max}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    Ok((h, w, &bytes[(i + 1).min(bytes.len())..]))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f64>> {
    let (h, w, raster) = parse_header(bytes, "P6")?;
    let hw = h * w;
    if raster.len() != 3 * hw {
        return Err(Error::Format(format!("P6 raster has {} bytes, expected {}", raster.len(), 3 * hw)));
    }
    let mut data = vec![0.0; 3 * hw];
    for p in 0..hw {
        for c in 0..3 {
            data[c * hw + p] = f64::from(raster[3 * p + c]) / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f64>> {
    let (h, w, raster) = parse_header(bytes, "P5")?;
    if raster.len() != h * w {
        return Err(Error::Format(format!("P5 raster has {} bytes, expected {}", raster.len(), h * w)));
    }
    Tensor::new(&[h, w], raster.iter().map(|&b| f64::from(b) / 255.0).collect())
}

/// Writes `<stem>.pgm` (8-bit preview) and `<stem>.f64` (exact values).
pub fn write_map_pair(stem: &Path, map: &Tensor<f64>) -> Result<()> {
    fsio::atomic_write(&stem.with_extension("pgm"), &encode_pgm(map)?)?;
    fsio::atomic_write(&stem.with_extension("f64"), &fsio::f64_bytes(map.data()))
}

/// Reads the exact `.f64` half of a map pair.
pub fn read_map(stem: &Path, h: usize, w: usize) -> Result<Tensor<f64>> {
    let path = stem.with_extension("f64");
    let vals = fsio::f64_from_bytes(&fsio::read_dependency(&path)?)?;
    Tensor::new(&[h, w], vals).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn encode_points(points: &[(usize, usize)]) -> Vec<u8> {
    points.iter().map(|(r, c)| format!("{r},{c}\n")).collect::<String>().into_bytes()
}

pub fn decode_points(bytes: &[u8]) -> Result<Vec<(usize, usize)>> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::Format("point list is not UTF-8".into()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (r, c) = l.split_once(',').ok_or_else(|| Error::Format(format!("bad point `{l}`")))?;
            let p = |s: &str| s.trim().parse::<usize>().map_err(|e| Error::Format(format!("bad point `{l}`: {e}")));
            Ok((p(r)?, p(c)?))
        })
        .collect()
}
