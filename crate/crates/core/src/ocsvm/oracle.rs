//! Dense reference solver for tiny one-class problems: accelerated
//! projected gradient on `{0 <= alpha <= C, sum alpha = 1}`.

use super::{box_bound, rbf};
use crate::models::FeatureVector;
use crate::{Error, Result};

const MAX_ITERATIONS: usize = 2_000_000;
const STEP_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub objective: f64,
}

/// Euclidean projection onto the box-constrained simplex: `clip(v - t)` with
/// the shift `t` found by bisection.
pub fn project(v: &[f64], c: f64) -> Vec<f64> {
    let clipped_sum = |t: f64| v.iter().map(|x| (x - t).clamp(0.0, c)).sum::<f64>();
    let (mut lo, mut hi) = (
        v.iter().copied().fold(f64::INFINITY, f64::min) - c - 1.0,
        v.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0,
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if clipped_sum(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = 0.5 * (lo + hi);
    v.iter().map(|x| (x - t).clamp(0.0, c)).collect()
}

pub fn solve(points: &[FeatureVector], gamma: f64, nu: f64) -> Result<OracleSolution> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Empty("oracle points"));
    }
    let x: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.as_slice().iter().map(|&v| f64::from(v)).collect())
        .collect();
    let q: Vec<Vec<f64>> = x
        .iter()
        .map(|a| x.iter().map(|b| rbf(a, b, gamma)).collect())
        .collect();
    let c = box_bound(nu, n);
    if c * (n as f64) < 1.0 {
        return Err(Error::InvalidArgument("infeasible box".into()));
    }
    // Gershgorin bound on the largest eigenvalue.
    let lipschitz = q
        .iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let grad = |a: &[f64]| -> Vec<f64> {
        q.iter()
            .map(|r| r.iter().zip(a).map(|(k, v)| k * v).sum())
            .collect()
    };
    let objective = |a: &[f64]| 0.5 * a.iter().zip(grad(a)).map(|(x, g)| x * g).sum::<f64>();

    let mut alpha = project(&vec![1.0 / n as f64; n], c);
    let mut y = alpha.clone();
    let mut t = 1.0f64;
    for _ in 0..MAX_ITERATIONS {
        let g = grad(&y);
        let step: Vec<f64> = y.iter().zip(&g).map(|(v, d)| v - d / lipschitz).collect();
        let next = project(&step, c);
        // Restart momentum whenever the objective goes up.
        let restart = objective(&next) > objective(&alpha);
        let t_next = if restart {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
        };
        let moved = next
            .iter()
            .zip(&alpha)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        y = next
            .iter()
            .zip(&alpha)
            .map(|(a, b)| a + (t - 1.0) / t_next * (a - b))
            .collect();
        if restart {
            y = next.clone();
        }
        alpha = next;
        t = t_next;
        if moved < STEP_TOLERANCE {
            break;
        }
    }
    let g = grad(&alpha);
    let eps = 1e-7 * c;
    let free: Vec<f64> = alpha
        .iter()
        .zip(&g)
        .filter(|(a, _)| **a > eps && **a < c - eps)
        .map(|(_, g)| *g)
        .collect();
    let rho = if free.is_empty() {
        let ub = alpha
            .iter()
            .zip(&g)
            .filter(|(a, _)| **a <= eps)
            .map(|(_, g)| *g)
            .fold(f64::INFINITY, f64::min);
        let lb = alpha
            .iter()
            .zip(&g)
            .filter(|(a, _)| **a >= c - eps)
            .map(|(_, g)| *g)
            .fold(f64::NEG_INFINITY, f64::max);
        match (ub.is_finite(), lb.is_finite()) {
            (true, true) => 0.5 * (ub + lb),
            (false, _) => lb,
            (_, false) => ub,
        }
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    Ok(OracleSolution {
        objective: objective(&alpha),
        alpha,
        rho,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_is_feasible_and_idempotent() {
        let v = [0.9, -0.3, 0.4, 2.0];
        let p = project(&v, 0.5);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&a| (0.0..=0.5).contains(&a)));
        let pp = project(&p, 0.5);
        for (a, b) in p.iter().zip(&pp) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_points_split_evenly() {
        let pts = [FeatureVector(vec![0.0]), FeatureVector(vec![1.0])];
        let s = solve(&pts, 1.0, 0.5).unwrap();
        assert!((s.alpha[0] - 0.5).abs() < 1e-9 && (s.alpha[1] - 0.5).abs() < 1e-9);
        // Both free: rho = 0.5 (1 + e^-1).
        assert!((s.rho - 0.5 * (1.0 + (-1.0f64).exp())).abs() < 1e-9);
    }
}
