//! Central finite-difference verification of analytic gradients.

use crate::{Error, Result};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

/// Something with a scalar loss over a set of named, flat parameter tensors.
pub trait GradCheckTarget {
    /// `(name, element count)` for every tensor to check.
    fn tensors(&self) -> Vec<(String, usize)>;
    fn get(&self, tensor: usize, index: usize) -> f64;
    fn set(&mut self, tensor: usize, index: usize, value: f64);
    fn loss(&mut self) -> Result<f64>;
    /// Analytic gradient of [`loss`](Self::loss), one vector per tensor.
    fn analytic(&mut self) -> Result<Vec<Vec<f64>>>;
    /// Identifier of the piecewise-smooth region the last `loss` or
    /// `analytic` call evaluated in (e.g. a hash of ReLU sign patterns).
    /// Samples whose perturbation leaves the region are redrawn.
    fn region(&self) -> Option<u64> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries redrawn because a perturbation crossed a kink.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorError>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare analytic gradients against central differences (step 1e-5) on up
/// to `samples_per_tensor` randomly chosen entries of every tensor.
///
/// Entries whose +-h perturbation moves the target to a different smooth
/// region (see [`GradCheckTarget::region`]) are replaced by other entries.
pub fn grad_check<G: GradCheckTarget>(
    target: &mut G,
    tolerance: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let analytic = target.analytic()?;
    let layout = target.tensors();
    if analytic.len() != layout.len() {
        return Err(Error::shape(
            "grad_check tensors",
            layout.len(),
            analytic.len(),
        ));
    }
    let base = target.region();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::with_capacity(layout.len());
    for (t, (name, len)) in layout.into_iter().enumerate() {
        if analytic[t].len() != len {
            return Err(Error::shape(
                "grad_check tensor length",
                len,
                analytic[t].len(),
            ));
        }
        let order = sample(&mut rng, len, len);
        let want = samples_per_tensor.min(len);
        let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
        for i in order.iter() {
            if checked == want {
                break;
            }
            let orig = target.get(t, i);
            target.set(t, i, orig + STEP);
            let up = target.loss()?;
            let up_region = target.region();
            target.set(t, i, orig - STEP);
            let down = target.loss()?;
            let down_region = target.region();
            target.set(t, i, orig);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!("grad_check loss at {name}[{i}]")));
            }
            if up_region != base || down_region != base {
                skipped += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic[t][i], numeric));
            checked += 1;
        }
        tensors.push(TensorError {
            name,
            max_rel_error: worst,
            checked,
            skipped,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        tolerance,
        passed: max_rel_error <= tolerance,
    })
}
