//! One-class ν-SVM with an RBF kernel.
//!
//! The dual is solved in the scaling `0 <= alpha_i <= 1/(nu n)`,
//! `sum alpha = 1`, minimizing `1/2 alpha' K alpha`, by SMO over maximal
//! violating pairs. Decision values are `sum_i alpha_i K(sv_i, x) - rho`.

mod io;
pub mod oracle;

pub use io::{load_svm, save_svm, svm_from_bytes, svm_to_bytes, SVM_MAGIC, SVM_VERSION};

use crate::models::FeatureVector;
use crate::numerics::Real;
use crate::{Error, Result};
use std::collections::{HashMap, VecDeque};
use std::rc::Rc;

/// Largest training set whose Gram matrix is cached whole.
pub const FULL_CACHE_LIMIT: usize = 20_000;
const ROW_CACHE_ROWS: usize = 2048;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmConfig {
    pub gamma: f64,
    pub nu: f64,
    /// KKT tolerance on the maximal violation.
    pub tolerance: f64,
    pub max_iterations: u64,
    /// Standardize each feature to zero mean and unit variance before the
    /// kernel.
    pub standardize: bool,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            gamma: 1.0 / 2048.0,
            nu: 1e-5,
            tolerance: 1e-6,
            max_iterations: 10_000_000,
            standardize: false,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "nu must lie in (0, 1], got {}",
                self.nu
            )));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Per-feature affine map applied before the kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaling {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

impl Scaling {
    fn fit(features: &[FeatureVector]) -> Scaling {
        let d = features[0].len();
        let n = features.len() as f64;
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, &v) in mean.iter_mut().zip(f.as_slice()) {
                *m += f64::from(v) / n;
            }
        }
        let mut var = vec![0.0; d];
        for f in features {
            for ((s, &v), m) in var.iter_mut().zip(f.as_slice()).zip(&mean) {
                *s += (f64::from(v) - m).powi(2) / n;
            }
        }
        let inv_std = var
            .iter()
            .map(|v| if *v > 0.0 { 1.0 / v.sqrt() } else { 1.0 })
            .collect();
        Scaling { mean, inv_std }
    }

    fn apply(&self, f: &[f32]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.inv_std)
            .map(|((&v, m), s)| (f64::from(v) - m) * s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// Training features with `alpha > 0`, in training order.
    pub support_vectors: Vec<FeatureVector>,
    /// Training-set index of each support vector.
    pub support_indices: Vec<usize>,
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub config: SvmConfig,
    pub scaling: Option<Scaling>,
    pub dim: usize,
    /// Training-set size.
    pub n_train: usize,
    pub iterations: u64,
    /// False when `max_iterations` was reached first; the model then holds
    /// the last iterate.
    pub converged: bool,
    /// Maximal KKT violation at exit.
    pub kkt_violation: f64,
    /// Support vectors as fed to the kernel (scaled when configured).
    kernel_svs: Vec<Vec<f64>>,
}

pub fn rbf_kernel(x: &FeatureVector, y: &FeatureVector, gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::shape("rbf_kernel", x.len(), y.len()));
    }
    let a: Vec<f64> = x.as_slice().iter().map(|&v| f64::from(v)).collect();
    let b: Vec<f64> = y.as_slice().iter().map(|&v| f64::from(v)).collect();
    Ok(rbf(&a, &b, gamma))
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

/// Kernel rows over the training set, fully cached or LRU by row.
enum KernelCache<'a> {
    Full {
        n: usize,
        gram: Vec<f64>,
    },
    Rows {
        x: &'a [Vec<f64>],
        gamma: f64,
        rows: HashMap<usize, Rc<Vec<f64>>>,
        order: VecDeque<usize>,
    },
}

enum Row<'a> {
    Borrowed(&'a [f64]),
    Owned(Rc<Vec<f64>>),
}

impl std::ops::Deref for Row<'_> {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        match self {
            Row::Borrowed(s) => s,
            Row::Owned(v) => v,
        }
    }
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a [Vec<f64>], gamma: f64) -> Self {
        let n = x.len();
        if n > FULL_CACHE_LIMIT {
            return KernelCache::Rows {
                x,
                gamma,
                rows: HashMap::new(),
                order: VecDeque::new(),
            };
        }
        // |a-b|^2 = |a|^2 + |b|^2 - 2 a.b with the dot products from one GEMM.
        let d = x[0].len();
        let flat: Vec<f64> = x.iter().flatten().copied().collect();
        let mut gram = vec![0.0; n * n];
        f64::gemm(n, d, n, 1.0, &flat, false, &flat, true, 0.0, &mut gram);
        let sq: Vec<f64> = (0..n).map(|i| gram[i * n + i]).collect();
        for i in 0..n {
            for j in 0..n {
                let d2 = if i == j {
                    0.0
                } else {
                    (sq[i] + sq[j] - 2.0 * gram[i * n + j]).max(0.0)
                };
                gram[i * n + j] = (-gamma * d2).exp();
            }
        }
        // Exact symmetry regardless of GEMM rounding.
        for i in 0..n {
            for j in 0..i {
                gram[j * n + i] = gram[i * n + j];
            }
        }
        KernelCache::Full { n, gram }
    }

    fn row(&mut self, i: usize) -> Row<'_> {
        match self {
            KernelCache::Full { n, gram } => Row::Borrowed(&gram[i * *n..(i + 1) * *n]),
            KernelCache::Rows {
                x,
                gamma,
                rows,
                order,
            } => {
                if let Some(r) = rows.get(&i) {
                    return Row::Owned(Rc::clone(r));
                }
                let r = Rc::new(
                    x.iter()
                        .enumerate()
                        .map(|(j, xj)| if j == i { 1.0 } else { rbf(&x[i], xj, *gamma) })
                        .collect(),
                );
                if order.len() == ROW_CACHE_ROWS {
                    if let Some(old) = order.pop_front() {
                        rows.remove(&old);
                    }
                }
                order.push_back(i);
                rows.insert(i, Rc::clone(&r));
                Row::Owned(r)
            }
        }
    }
}

/// Maximal violating pair: `i` minimizes the gradient among coordinates
/// that may grow, `j` maximizes it among those that may shrink; lowest
/// index on ties.
fn select_pair(alpha: &[f64], grad: &[f64], c: f64) -> Option<(usize, usize, f64)> {
    let (mut i, mut gi) = (None, f64::INFINITY);
    let (mut j, mut gj) = (None, f64::NEG_INFINITY);
    for (t, (&a, &g)) in alpha.iter().zip(grad).enumerate() {
        if a < c && g < gi {
            i = Some(t);
            gi = g;
        }
        if a > 0.0 && g > gj {
            j = Some(t);
            gj = g;
        }
    }
    Some((i?, j?, gj - gi))
}

/// Offset from free support vectors, or the midpoint of the feasible
/// interval when every coefficient sits on a bound.
fn compute_rho(alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let (mut sum, mut free) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&a, &g) in alpha.iter().zip(grad) {
        if a <= 0.0 {
            ub = ub.min(g);
        } else if a >= c {
            lb = lb.max(g);
        } else {
            sum += g;
            free += 1;
        }
    }
    if free > 0 {
        sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if lb.is_finite() {
        lb
    } else {
        ub
    }
}

/// Upper box bound `1 / (nu n)`.
pub fn box_bound(nu: f64, n: usize) -> f64 {
    1.0 / (nu * n as f64)
}

pub fn fit(features: &[FeatureVector], config: &SvmConfig) -> Result<SvmModel> {
    config.validate()?;
    let first = features
        .first()
        .ok_or(Error::Empty("svm training features"))?;
    let dim = first.len();
    for (k, f) in features.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::shape("svm training feature length", dim, f.len()));
        }
        if f.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("svm training feature {k}")));
        }
    }
    let n = features.len();
    let scaling = config.standardize.then(|| Scaling::fit(features));
    let x: Vec<Vec<f64>> = features
        .iter()
        .map(|f| match &scaling {
            Some(s) => s.apply(f.as_slice()),
            None => f.as_slice().iter().map(|&v| f64::from(v)).collect(),
        })
        .collect();
    let c = box_bound(config.nu, n);

    // Feasible start: fill coefficients up to the box in index order.
    let mut alpha = vec![0.0; n];
    let mut left = 1.0f64;
    for a in alpha.iter_mut() {
        if left <= 0.0 {
            break;
        }
        *a = left.min(c);
        left -= *a;
    }

    let mut cache = KernelCache::new(&x, config.gamma);
    let mut grad = vec![0.0; n];
    for (k, &a) in alpha.iter().enumerate() {
        if a > 0.0 {
            let row = cache.row(k);
            for (g, r) in grad.iter_mut().zip(row.iter()) {
                *g += a * r;
            }
        }
    }

    let mut iterations = 0u64;
    let mut violation;
    loop {
        let (i, j, gap) = match select_pair(&alpha, &grad, c) {
            Some(p) => p,
            None => {
                violation = 0.0;
                break;
            }
        };
        violation = gap.max(0.0);
        if gap <= config.tolerance || iterations >= config.max_iterations {
            break;
        }
        iterations += 1;
        let qi: Vec<f64> = cache.row(i).to_vec();
        let qj = cache.row(j);
        let eta = (qi[i] + qj[j] - 2.0 * qi[j]).max(TAU);
        let delta = (gap / eta).min(c - alpha[i]).min(alpha[j]);
        alpha[i] += delta;
        alpha[j] -= delta;
        if c - alpha[i] < 1e-15 * c {
            alpha[i] = c;
        }
        if alpha[j] < 1e-15 * c {
            alpha[j] = 0.0;
        }
        for ((g, a), b) in grad.iter_mut().zip(&qi).zip(qj.iter()) {
            *g += delta * (a - b);
        }
    }
    let converged = violation <= config.tolerance;
    if !converged {
        log::warn!("ocsvm event=not_converged iterations={iterations} violation={violation:.3e}");
    }
    let rho = compute_rho(&alpha, &grad, c);
    let support_indices: Vec<usize> = (0..n).filter(|&k| alpha[k] > 0.0).collect();
    let support_vectors: Vec<FeatureVector> = support_indices
        .iter()
        .map(|&k| features[k].clone())
        .collect();
    let alpha: Vec<f64> = support_indices.iter().map(|&k| alpha[k]).collect();
    log::debug!(
        "ocsvm n={n} support_vectors={} rho={rho:.6e} iterations={iterations} converged={converged}",
        support_vectors.len()
    );
    Ok(SvmModel {
        support_vectors,
        support_indices,
        alpha,
        rho,
        config: *config,
        scaling,
        dim,
        n_train: n,
        iterations,
        converged,
        kkt_violation: violation,
        kernel_svs: Vec::new(),
    }
    .with_kernel_rows())
}

impl SvmModel {
    pub(crate) fn with_kernel_rows(mut self) -> Self {
        self.kernel_svs = self
            .support_vectors
            .iter()
            .map(|f| self.kernel_input(f))
            .collect();
        self
    }

    fn kernel_input(&self, h: &FeatureVector) -> Vec<f64> {
        match &self.scaling {
            Some(s) => s.apply(h.as_slice()),
            None => h.as_slice().iter().map(|&v| f64::from(v)).collect(),
        }
    }

    /// Signed margin; larger means more typical of the training data.
    pub fn decision(&self, h: &FeatureVector) -> Result<f64> {
        if h.len() != self.dim {
            return Err(Error::shape(
                "svm decision feature length",
                self.dim,
                h.len(),
            ));
        }
        let x = self.kernel_input(h);
        let s: f64 = self
            .kernel_svs
            .iter()
            .zip(&self.alpha)
            .map(|(sv, a)| a * rbf(sv, &x, self.config.gamma))
            .sum();
        Ok(s - self.rho)
    }

    pub fn decision_batch(&self, hs: &[FeatureVector]) -> Result<Vec<f64>> {
        use rayon::prelude::*;
        hs.par_iter().map(|h| self.decision(h)).collect()
    }

    /// Dual objective `1/2 alpha' K alpha` over the support vectors.
    pub fn objective(&self) -> f64 {
        let mut s = 0.0;
        for (a, x) in self.alpha.iter().zip(&self.kernel_svs) {
            for (b, y) in self.alpha.iter().zip(&self.kernel_svs) {
                s += a * b * rbf(x, y, self.config.gamma);
            }
        }
        0.5 * s
    }

    /// Coefficients over the whole training set, zeros included.
    pub fn full_alpha(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n_train];
        for (&k, &a) in self.support_indices.iter().zip(&self.alpha) {
            v[k] = a;
        }
        v
    }

    pub fn box_bound(&self) -> f64 {
        box_bound(self.config.nu, self.n_train)
    }
}

/// Fraction of `decisions` below `-tol`, for the post-fit check against
/// `nu + 1/n`.
pub fn outlier_fraction(decisions: &[f64], tol: f64) -> f64 {
    decisions.iter().filter(|&&d| d < -tol).count() as f64 / decisions.len().max(1) as f64
}
