//! Binary SVM model container, little-endian:
//!
//! ```text
//! magic "SFOCSVM\0", version u32,
//! gamma f64, nu f64, tolerance f64, max_iterations u64, standardize u8,
//! dim u32, n_train u32, iterations u64, converged u8, kkt_violation f64,
//! [mean f64 x dim, inv_std f64 x dim]   when standardize
//! count u32, then per support vector: index u32, alpha f64, values f32 x dim
//! rho f64
//! ```

use super::{Scaling, SvmConfig, SvmModel};
use crate::models::{FeatureVector, Reader, Writer};
use crate::{Error, Result};
use std::fs;
use std::path::Path;

pub const SVM_MAGIC: &[u8; 8] = b"SFOCSVM\0";
pub const SVM_VERSION: u32 = 1;

pub fn svm_to_bytes(m: &SvmModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(SVM_MAGIC);
    w.u32(SVM_VERSION);
    let c = &m.config;
    w.f64(c.gamma);
    w.f64(c.nu);
    w.f64(c.tolerance);
    w.u64(c.max_iterations);
    w.u8(u8::from(c.standardize));
    w.u32(m.dim as u32);
    w.u32(m.n_train as u32);
    w.u64(m.iterations);
    w.u8(u8::from(m.converged));
    w.f64(m.kkt_violation);
    if let Some(s) = &m.scaling {
        s.mean.iter().chain(&s.inv_std).for_each(|&v| w.f64(v));
    }
    w.u32(m.alpha.len() as u32);
    for ((sv, &a), &k) in m
        .support_vectors
        .iter()
        .zip(&m.alpha)
        .zip(&m.support_indices)
    {
        w.u32(k as u32);
        w.f64(a);
        sv.as_slice().iter().for_each(|&v| w.f32(v));
    }
    w.f64(m.rho);
    w.0
}

fn parse(bytes: &[u8]) -> std::result::Result<SvmModel, String> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != SVM_MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != SVM_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let config = SvmConfig {
        gamma: r.f64()?,
        nu: r.f64()?,
        tolerance: r.f64()?,
        max_iterations: r.u64()?,
        standardize: r.u8()? != 0,
    };
    config.validate().map_err(|e| e.to_string())?;
    let dim = r.u32()? as usize;
    let n_train = r.u32()? as usize;
    let iterations = r.u64()?;
    let converged = r.u8()? != 0;
    let kkt_violation = r.f64()?;
    let scaling = if config.standardize {
        let mean = (0..dim)
            .map(|_| r.f64())
            .collect::<std::result::Result<_, _>>()?;
        let inv_std = (0..dim)
            .map(|_| r.f64())
            .collect::<std::result::Result<_, _>>()?;
        Some(Scaling { mean, inv_std })
    } else {
        None
    };
    let count = r.u32()? as usize;
    if count == 0 || count > n_train {
        return Err(format!("bad support vector count {count}"));
    }
    let (mut support_vectors, mut alpha, mut support_indices) =
        (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..count {
        support_indices.push(r.u32()? as usize);
        alpha.push(r.f64()?);
        support_vectors.push(FeatureVector(
            (0..dim)
                .map(|_| r.f32())
                .collect::<std::result::Result<Vec<_>, _>>()?,
        ));
    }
    let rho = r.f64()?;
    if !r.finished() {
        return Err("trailing bytes".into());
    }
    Ok(SvmModel {
        support_vectors,
        support_indices,
        alpha,
        rho,
        config,
        scaling,
        dim,
        n_train,
        iterations,
        converged,
        kkt_violation,
        kernel_svs: Vec::new(),
    }
    .with_kernel_rows())
}

pub fn svm_from_bytes(bytes: &[u8], origin: &Path) -> Result<SvmModel> {
    parse(bytes).map_err(|reason| Error::format(origin, reason))
}

pub fn save_svm(m: &SvmModel, path: &Path) -> Result<()> {
    fs::write(path, svm_to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn load_svm(path: &Path) -> Result<SvmModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    svm_from_bytes(&bytes, path)
}
