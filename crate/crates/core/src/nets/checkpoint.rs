//! `STAN` container: magic, u32 version, u32 record count, then tensor
//! records. Metadata travels as `meta.*` records.

use std::io::Cursor;
use std::path::Path;

use crate::cgcn::Frl;
use crate::error::{Error, Result};
use crate::fsio;
use crate::scalar::Scalar;
use crate::tensor::serialize::{read_tensor, write_tensor};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"STAN";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub net_id: String,
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: u64,
    /// Extra named numeric metadata, stored as `meta.<name>`.
    pub meta: Vec<(String, Vec<f64>)>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

fn u64_words(x: u64) -> Vec<f64> {
    (0..4).map(|i| ((x >> (16 * i)) & 0xffff) as f64).collect()
}

fn words_u64(w: &[f64]) -> Result<u64> {
    if w.len() != 4 || w.iter().any(|&v| v.fract() != 0.0 || !(0.0..65536.0).contains(&v)) {
        return Err(Error::Format("malformed 64-bit metadata".into()));
    }
    Ok(w.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | ((v as u64) << (16 * i))))
}

/// `[kind, classes, frame, steps, frl_on, td, tr]`, the `meta.spec` record
/// shared by both net families.
pub fn encode_spec(kind: u8, classes: usize, frame: usize, steps: usize, frl: Option<Frl>) -> Vec<f64> {
    let (on, td, tr) = frl.map_or((0.0, 0.0, 0.0), |f| (1.0, f.td, f.tr));
    vec![kind as f64, classes as f64, frame as f64, steps as f64, on, td, tr]
}

pub fn decode_spec<T: Scalar>(ck: &Checkpoint<T>) -> Result<(u8, usize, usize, usize, Option<Frl>)> {
    let v = ck.meta_value("spec").ok_or_else(|| Error::Format("checkpoint lacks meta.spec".into()))?;
    if v.len() != 7 || v[..5].iter().any(|x| x.fract() != 0.0 || *x < 0.0) || v[0] > 255.0 {
        return Err(Error::Format("malformed meta.spec".into()));
    }
    let frl = (v[4] != 0.0).then_some(Frl { td: v[5], tr: v[6] });
    Ok((v[0] as u8, v[1] as usize, v[2] as usize, v[3] as usize, frl))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn meta_value(&self, name: &str) -> Option<&[f64]> {
        self.meta.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let fixed: Vec<(String, Vec<f64>)> = vec![
            ("id".into(), self.net_id.bytes().map(f64::from).collect()),
            ("epoch".into(), vec![self.epoch as f64]),
            ("seed".into(), u64_words(self.seed)),
            ("config".into(), u64_words(self.config_hash)),
        ];
        let count = fixed.len() + self.meta.len() + self.tensors.len();
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(count as u32).to_le_bytes());
        for (name, vals) in fixed.iter().chain(&self.meta) {
            let t = Tensor::<f64>::from_parts(vec![vals.len()], vals.clone());
            write_tensor(&mut buf, &format!("meta.{name}"), &t)?;
        }
        for (name, t) in &self.tensors {
            write_tensor(&mut buf, name, t)?;
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a STAN checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let mut r = Cursor::new(&bytes[12..]);
        let mut ck = Checkpoint {
            net_id: String::new(),
            epoch: 0,
            seed: 0,
            config_hash: 0,
            meta: Vec::new(),
            tensors: Vec::new(),
        };
        let mut seen_id = false;
        for _ in 0..count {
            let (name, t) = read_tensor::<f64, _>(&mut r)?;
            match name.strip_prefix("meta.") {
                Some("id") => {
                    let b: Vec<u8> = t.data().iter().map(|&v| v as u8).collect();
                    ck.net_id = String::from_utf8(b).map_err(|e| Error::Format(format!("net id: {e}")))?;
                    seen_id = true;
                }
                Some("epoch") => ck.epoch = t.item() as usize,
                Some("seed") => ck.seed = words_u64(t.data())?,
                Some("config") => ck.config_hash = words_u64(t.data())?,
                Some(other) => ck.meta.push((other.to_string(), t.into_data())),
                None => ck.tensors.push((name, t.cast())),
            }
        }
        if (r.position() as usize) != bytes.len() - 12 {
            return Err(Error::Format("trailing bytes after checkpoint records".into()));
        }
        if !seen_id {
            return Err(Error::Format("checkpoint lacks a net id".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::atomic_write(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fsio::read_dependency(path)?)
    }
}
