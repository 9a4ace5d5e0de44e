//! Binary weight container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "SFWEIGHT"
//! version    u32      1
//! arch       str      architecture id ("A1".."A4", "D")
//! seed       u64
//! stage      str
//! options    f64 x3   leaky slope, bn momentum, bn epsilon
//!            u8       discriminator downsample activation (0 linear, 1 leaky)
//! count      u32      number of tensor records
//! record     str name, u32 rank, u32 x rank dims, f32 x prod(dims) values
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes.

use super::arch::{build_spec_with, ArchId, ArchOptions};
use super::weights::{zero_weights, ModelWeights, WeightsMeta};
use crate::numerics::Activation;
use crate::{Error, Result};
use std::collections::BTreeSet;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"SFWEIGHT";
pub const WEIGHTS_VERSION: u32 = 1;

pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    pub fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f32(&mut self) -> std::result::Result<f32, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn str(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| e.to_string())
    }
    pub fn finished(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn weights_to_bytes(w: &ModelWeights<f32>) -> Vec<u8> {
    let mut out = Writer(Vec::new());
    out.0.extend_from_slice(WEIGHTS_MAGIC);
    out.u32(WEIGHTS_VERSION);
    out.str(w.arch().as_str());
    out.u64(w.meta.seed);
    out.str(&w.meta.stage);
    let o = w.spec.options;
    out.f64(o.leaky_slope);
    out.f64(o.bn_momentum);
    out.f64(o.bn_epsilon);
    out.u8(u8::from(!o.downsample_activation.is_linear()));
    let tensors = w.named_tensors();
    out.u32(tensors.len() as u32);
    for (name, dims, values) in tensors {
        out.str(&name);
        out.u32(dims.len() as u32);
        for d in dims {
            out.u32(d as u32);
        }
        for &v in values {
            out.f32(v);
        }
    }
    out.0
}

pub fn weights_from_bytes(bytes: &[u8], origin: &Path) -> Result<ModelWeights<f32>> {
    parse(bytes).map_err(|reason| Error::format(origin, reason))
}

fn parse(bytes: &[u8]) -> std::result::Result<ModelWeights<f32>, String> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != WEIGHTS_MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let arch: ArchId = r.str()?.parse().map_err(|e: Error| e.to_string())?;
    let seed = r.u64()?;
    let stage = r.str()?;
    let leaky_slope = r.f64()?;
    let options = ArchOptions {
        leaky_slope,
        bn_momentum: r.f64()?,
        bn_epsilon: r.f64()?,
        downsample_activation: match r.u8()? {
            0 => Activation::Linear,
            1 => Activation::LeakyRelu(leaky_slope),
            other => return Err(format!("bad activation tag {other}")),
        },
    };
    let mut w = zero_weights::<f32>(&build_spec_with(arch, options));
    w.meta = WeightsMeta { seed, stage };
    let expected: Vec<(String, Vec<usize>)> = w
        .named_tensors()
        .into_iter()
        .map(|(n, d, _)| (n, d))
        .collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(format!(
            "expected {} tensors, found {count}",
            expected.len()
        ));
    }
    let mut seen = BTreeSet::new();
    for _ in 0..count {
        let name = r.str()?;
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let want = expected
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| format!("unexpected tensor {name}"))?;
        if want.1 != dims {
            return Err(format!(
                "tensor {name}: dims {dims:?}, expected {:?}",
                want.1
            ));
        }
        if !seen.insert(name.clone()) {
            return Err(format!("duplicate tensor {name}"));
        }
        let n: usize = dims.iter().product();
        let values = (0..n)
            .map(|_| r.f32())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        *w.tensor_mut(&name).expect("name validated above") = values;
    }
    if !r.finished() {
        return Err("trailing bytes".into());
    }
    Ok(w)
}

pub fn save_weights(w: &ModelWeights<f32>, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&weights_to_bytes(w))
        .map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<ModelWeights<f32>> {
    let mut buf = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    weights_from_bytes(&buf, path)
}
