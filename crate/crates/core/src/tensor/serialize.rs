//! Binary tensor records: name length (u32 LE), name bytes, rank (u32 LE),
//! dims (u32 LE each), payload (f64 LE, row-major).

use std::io::{Read, Write};

use super::array::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, name: &str, t: &Tensor<T>) -> Result<()> {
    let len = u32::try_from(name.len()).map_err(|_| Error::Format("tensor name too long".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dim {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<(String, Tensor<T>)> {
    let len = read_u32(r)? as usize;
    if len > 1 << 16 {
        return Err(Error::Format(format!("implausible tensor name length {len}")));
    }
    let mut name = vec![0u8; len];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|e| Error::Format(format!("tensor name: {e}")))?;
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::Format(format!("implausible rank {rank} for `{name}`")));
    }
    let shape = (0..rank).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * 8];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(8)
        .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("chunk of 8"))))
        .collect();
    let t = Tensor::new(&shape, data).map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
    Ok((name, t))
}
