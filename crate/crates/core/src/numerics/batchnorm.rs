use super::{Real, Tensor4};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

/// Per-channel batch normalization state. `scale` and `shift` are trainable;
/// the running statistics are not.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub epsilon: f64,
}

/// Values saved by the forward pass for [`batchnorm_grad`].
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    pub mode: BnMode,
    pub x_hat: Vec<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
    pub count: usize,
}

impl<T: Real> BatchNormParams<T> {
    pub const DEFAULT_MOMENTUM: f64 = 0.99;
    pub const DEFAULT_EPSILON: f64 = 1e-3;

    /// Identity transform: scale 1, shift 0, running mean 0, running var 1.
    pub fn identity(channels: usize, momentum: f64, epsilon: f64) -> Self {
        BatchNormParams {
            scale: vec![T::one(); channels],
            shift: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum,
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Fold the batch statistics of a train-mode pass into the running
    /// averages. The running variance uses the unbiased estimate.
    pub fn update_running(&mut self, cache: &BatchNormCache<T>) {
        if cache.mode != BnMode::Train {
            return;
        }
        let m = self.momentum;
        let bessel = cache.count as f64 / (cache.count as f64 - 1.0);
        for c in 0..self.channels() {
            let mean = m * self.running_mean[c].as_f64() + (1.0 - m) * cache.batch_mean[c];
            let var = m * self.running_var[c].as_f64() + (1.0 - m) * cache.batch_var[c] * bessel;
            self.running_mean[c] = T::from_f64_lossy(mean);
            self.running_var[c] = T::from_f64_lossy(var.max(0.0));
        }
    }
}

/// `scale * (x - mean) / sqrt(var + eps) + shift` per channel. Does not touch
/// the running statistics; see [`BatchNormParams::update_running`].
pub fn batchnorm<T: Real>(
    input: &Tensor4<T>,
    params: &BatchNormParams<T>,
    mode: BnMode,
) -> Result<(Tensor4<T>, BatchNormCache<T>)> {
    let d = input.dims();
    let ch = params.channels();
    if d.c != ch {
        return Err(Error::shape("batchnorm channels", ch, d.c));
    }
    let count = d.n * d.h * d.w;
    let (mean, var) = match mode {
        BnMode::Train => {
            if count < 2 {
                return Err(Error::InvalidArgument(
                    "batchnorm: train mode needs at least two values per channel".into(),
                ));
            }
            let mut mean = vec![0.0f64; ch];
            for row in input.data().chunks_exact(ch) {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v.as_f64();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            let mut var = vec![0.0f64; ch];
            for row in input.data().chunks_exact(ch) {
                for c in 0..ch {
                    let dv = row[c].as_f64() - mean[c];
                    var[c] += dv * dv;
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            (mean, var)
        }
        BnMode::Eval => (
            params.running_mean.iter().map(|v| v.as_f64()).collect(),
            params.running_var.iter().map(|v| v.as_f64()).collect(),
        ),
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::from_f64_lossy(1.0 / (v + params.epsilon).sqrt()))
        .collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64_lossy(m)).collect();

    let mut x_hat = vec![T::zero(); input.len()];
    let mut out = Tensor4::zeros(d);
    for ((xh_row, out_row), in_row) in x_hat
        .chunks_exact_mut(ch)
        .zip(out.data_mut().chunks_exact_mut(ch))
        .zip(input.data().chunks_exact(ch))
    {
        for c in 0..ch {
            let xh = (in_row[c] - mean_t[c]) * inv_std[c];
            xh_row[c] = xh;
            out_row[c] = params.scale[c] * xh + params.shift[c];
        }
    }
    Ok((
        out,
        BatchNormCache {
            mode,
            x_hat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            count,
        },
    ))
}

/// Returns `(grad_input, grad_scale, grad_shift)`.
pub fn batchnorm_grad<T: Real>(
    cache: &BatchNormCache<T>,
    params: &BatchNormParams<T>,
    upstream: &Tensor4<T>,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let ch = params.channels();
    if upstream.len() != cache.x_hat.len() || upstream.dims().c != ch {
        return Err(Error::shape(
            "batchnorm_grad upstream",
            cache.x_hat.len(),
            upstream.len(),
        ));
    }
    let mut sum_dy = vec![0.0f64; ch];
    let mut sum_dy_xhat = vec![0.0f64; ch];
    for (dy_row, xh_row) in upstream
        .data()
        .chunks_exact(ch)
        .zip(cache.x_hat.chunks_exact(ch))
    {
        for c in 0..ch {
            let dy = dy_row[c].as_f64();
            sum_dy[c] += dy;
            sum_dy_xhat[c] += dy * xh_row[c].as_f64();
        }
    }
    let mut grad = Tensor4::zeros(upstream.dims());
    match cache.mode {
        BnMode::Train => {
            let m = cache.count as f64;
            let k: Vec<T> = (0..ch)
                .map(|c| {
                    T::from_f64_lossy(params.scale[c].as_f64() * cache.inv_std[c].as_f64() / m)
                })
                .collect();
            let mean_dy: Vec<T> = sum_dy.iter().map(|&s| T::from_f64_lossy(s)).collect();
            let mean_dyx: Vec<T> = sum_dy_xhat.iter().map(|&s| T::from_f64_lossy(s)).collect();
            let m_t = T::from_f64_lossy(m);
            for ((g_row, dy_row), xh_row) in grad
                .data_mut()
                .chunks_exact_mut(ch)
                .zip(upstream.data().chunks_exact(ch))
                .zip(cache.x_hat.chunks_exact(ch))
            {
                for c in 0..ch {
                    g_row[c] = k[c] * (m_t * dy_row[c] - mean_dy[c] - xh_row[c] * mean_dyx[c]);
                }
            }
        }
        BnMode::Eval => {
            let k: Vec<T> = (0..ch)
                .map(|c| params.scale[c] * cache.inv_std[c])
                .collect();
            for (g_row, dy_row) in grad
                .data_mut()
                .chunks_exact_mut(ch)
                .zip(upstream.data().chunks_exact(ch))
            {
                for c in 0..ch {
                    g_row[c] = dy_row[c] * k[c];
                }
            }
        }
    }
    let to_t = |v: Vec<f64>| v.into_iter().map(T::from_f64_lossy).collect::<Vec<T>>();
    Ok((grad, to_t(sum_dy_xhat), to_t(sum_dy)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Dims4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn channel_stats(t: &Tensor4<f64>) -> Vec<(f64, f64)> {
        let c = t.dims().c;
        (0..c)
            .map(|ch| {
                let vals: Vec<f64> = t.data().iter().skip(ch).step_by(c).copied().collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
                (mean, var)
            })
            .collect()
    }

    #[test]
    fn train_mode_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor4::<f64>::random_uniform(Dims4::new(4, 5, 5, 3), 2.0, 7.0, &mut rng);
        let p = BatchNormParams::identity(3, 0.99, 1e-3);
        let (y, _) = batchnorm(&x, &p, BnMode::Train).unwrap();
        for (mean, var) in channel_stats(&y) {
            assert!(mean.abs() <= 1e-6);
            assert!((var - 1.0).abs() <= 1e-3, "var {var}");
        }
    }

    #[test]
    fn constant_channel_gives_shift() {
        let x = Tensor4::filled(Dims4::new(2, 3, 3, 2), 4.0f64);
        let mut p = BatchNormParams::identity(2, 0.99, 1e-3);
        p.shift = vec![0.5, -1.5];
        let (y, _) = batchnorm(&x, &p, BnMode::Train).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[0.5, -1.5]);
        }
    }

    #[test]
    fn single_element_train_rejected() {
        let x = Tensor4::filled(Dims4::new(1, 1, 1, 2), 1.0f32);
        let p = BatchNormParams::identity(2, 0.99, 1e-3);
        assert!(batchnorm(&x, &p, BnMode::Train).is_err());
        assert!(batchnorm(&x, &p, BnMode::Eval).is_ok());
        let bad = BatchNormParams::<f32>::identity(3, 0.99, 1e-3);
        assert!(batchnorm(&x, &bad, BnMode::Eval).is_err());
    }

    #[test]
    fn eval_uses_running_stats_only() {
        let mut p = BatchNormParams::<f64>::identity(1, 0.9, 0.0);
        p.running_mean = vec![2.0];
        p.running_var = vec![4.0];
        let x = Tensor4::from_vec(Dims4::new(1, 1, 2, 1), vec![2.0, 6.0]).unwrap();
        let (y, _) = batchnorm(&x, &p, BnMode::Eval).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn running_stats_follow_ema() {
        let x = Tensor4::from_vec(Dims4::new(1, 1, 2, 1), vec![1.0f64, 3.0]).unwrap();
        let mut p = BatchNormParams::identity(1, 0.9, 1e-3);
        let (_, cache) = batchnorm(&x, &p, BnMode::Train).unwrap();
        p.update_running(&cache);
        assert!((p.running_mean[0] - 0.2).abs() < 1e-12);
        // unbiased batch var = 2
        assert!((p.running_var[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }

    fn fd_check(mode: BnMode) {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dims = Dims4::new(2, 4, 4, 3);
        let x = Tensor4::<f64>::random_uniform(dims, -2.0, 2.0, &mut rng);
        let mut p = BatchNormParams::identity(3, 0.9, 1e-3);
        for c in 0..3 {
            p.scale[c] = rng.gen_range(0.5..2.0);
            p.shift[c] = rng.gen_range(-1.0..1.0);
            p.running_mean[c] = rng.gen_range(-1.0..1.0);
            p.running_var[c] = rng.gen_range(0.5..2.0);
        }
        let r = Tensor4::<f64>::random_uniform(dims, -1.0, 1.0, &mut rng);
        let loss = |x: &Tensor4<f64>, p: &BatchNormParams<f64>| {
            batchnorm(x, p, mode).unwrap().0.dot(&r).unwrap()
        };
        let (_, cache) = batchnorm(&x, &p, mode).unwrap();
        let (gx, gs, gb) = batchnorm_grad(&cache, &p, &r).unwrap();
        let h = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let n = (loss(&xp, &p) - loss(&xm, &p)) / (2.0 * h);
            assert!(rel(gx.data()[i], n) <= 1e-4, "{mode:?} x[{i}]");
        }
        for c in 0..3 {
            let mut pp = p.clone();
            pp.scale[c] += h;
            let mut pm = p.clone();
            pm.scale[c] -= h;
            assert!(rel(gs[c], (loss(&x, &pp) - loss(&x, &pm)) / (2.0 * h)) <= 1e-4);
            let mut pp = p.clone();
            pp.shift[c] += h;
            let mut pm = p.clone();
            pm.shift[c] -= h;
            assert!(rel(gb[c], (loss(&x, &pp) - loss(&x, &pm)) / (2.0 * h)) <= 1e-4);
        }
    }

    #[test]
    fn train_grad_matches_finite_differences() {
        fd_check(BnMode::Train);
    }

    #[test]
    fn eval_grad_matches_finite_differences() {
        fd_check(BnMode::Eval);
    }
}
