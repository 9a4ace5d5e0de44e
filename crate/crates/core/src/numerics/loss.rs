use super::{Real, Tensor4};
use crate::{Error, Result};

/// Probability clamp applied before taking logs in the cross entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Mean of squared differences over every entry.
pub fn mse_loss<T: Real>(output: &Tensor4<T>, target: &Tensor4<T>) -> Result<f64> {
    if output.dims() != target.dims() {
        return Err(Error::shape("mse_loss", target.dims(), output.dims()));
    }
    let sum: f64 = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(&o, &t)| {
            let d = o.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    Ok(sum / output.len() as f64)
}

/// `2 (output - target) / count`, scaled by `weight`.
pub fn mse_grad<T: Real>(
    output: &Tensor4<T>,
    target: &Tensor4<T>,
    weight: f64,
) -> Result<Tensor4<T>> {
    if output.dims() != target.dims() {
        return Err(Error::shape("mse_grad", target.dims(), output.dims()));
    }
    let k = T::from_f64_lossy(2.0 * weight / output.len() as f64);
    let mut g = output.clone();
    for (g, &t) in g.data_mut().iter_mut().zip(target.data()) {
        *g = (*g - t) * k;
    }
    Ok(g)
}

fn check_bce(predictions: &[f64], labels: &[f64]) -> Result<()> {
    if predictions.is_empty() {
        return Err(Error::Empty("bce_loss batch"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape("bce_loss", predictions.len(), labels.len()));
    }
    Ok(())
}

/// Mean binary cross entropy with predictions clamped to `[eps, 1 - eps]`.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    check_bce(predictions, labels)?;
    let sum: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// Gradient of [`bce_loss`] with respect to each (clamped) prediction.
pub fn bce_grad(predictions: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    check_bce(predictions, labels)?;
    let n = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            (p - y) / (p * (1.0 - p)) / n
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Dims4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_basics() {
        let d = Dims4::new(2, 3, 3, 1);
        let a = Tensor4::filled(d, 0.25f64);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let b = Tensor4::filled(d, 1.25f64);
        assert_eq!(mse_loss(&b, &a).unwrap(), 1.0);
        assert!(mse_loss(&a, &Tensor4::zeros(Dims4::new(1, 3, 3, 1))).is_err());
    }

    #[test]
    fn mse_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Dims4::new(3, 4, 5, 2);
        let a = Tensor4::<f64>::random_uniform(d, -1.0, 1.0, &mut rng);
        let b = Tensor4::<f64>::random_uniform(d, -1.0, 1.0, &mut rng);
        let diffs: Vec<f64> = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        let oracle = diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64;
        assert!((mse_loss(&a, &b).unwrap() - oracle).abs() < 1e-12);
        let g = mse_grad(&a, &b, 1.0).unwrap();
        for (g, d) in g.data().iter().zip(&diffs) {
            assert!((g - 2.0 * d / diffs.len() as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn bce_half_is_ln2() {
        let p = vec![0.5; 6];
        let y = vec![0.0, 1.0, 1.0, 0.0, 1.0, 0.0];
        assert!((bce_loss(&p, &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_exact_labels_hit_clamp_floor() {
        let y = vec![0.0, 1.0, 1.0];
        let loss = bce_loss(&y, &y).unwrap();
        assert!(loss <= -(1.0 - BCE_EPS).ln() + 1e-15);
        assert!(loss > 0.0);
    }

    #[test]
    fn bce_matches_direct_sum_and_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p: Vec<f64> = (0..32).map(|_| rng.gen_range(0.01..0.99)).collect();
        let y: Vec<f64> = (0..32).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
        let mut direct = 0.0;
        for i in 0..32 {
            direct += if y[i] == 1.0 {
                -p[i].ln()
            } else {
                -(1.0 - p[i]).ln()
            };
        }
        assert!((bce_loss(&p, &y).unwrap() - direct / 32.0).abs() < 1e-12);
        let g = bce_grad(&p, &y).unwrap();
        let h = 1e-6;
        for i in 0..32 {
            let mut pp = p.clone();
            pp[i] += h;
            let mut pm = p.clone();
            pm[i] -= h;
            let n = (bce_loss(&pp, &y).unwrap() - bce_loss(&pm, &y).unwrap()) / (2.0 * h);
            assert!((g[i] - n).abs() / n.abs().max(1e-8) < 1e-5);
        }
    }

    #[test]
    fn bce_empty_batch() {
        assert!(bce_loss(&[], &[]).is_err());
    }
}
