use super::{Dims4, Real, Tensor4};
use crate::{Error, Result};

/// Valid (unpadded) max pooling per channel.
pub fn max_pool<T: Real>(
    input: &Tensor4<T>,
    window: (usize, usize),
    stride: usize,
) -> Result<Tensor4<T>> {
    let d = input.dims();
    let (wh, ww) = window;
    if stride == 0 || wh == 0 || ww == 0 {
        return Err(Error::InvalidArgument(
            "max_pool: window and stride must be >= 1".into(),
        ));
    }
    if wh > d.h || ww > d.w {
        return Err(Error::InvalidArgument(format!(
            "max_pool: window {wh}x{ww} larger than input {}x{}",
            d.h, d.w
        )));
    }
    let oh = (d.h - wh) / stride + 1;
    let ow = (d.w - ww) / stride + 1;
    let mut out = Tensor4::zeros(Dims4::new(d.n, oh, ow, d.c));
    for n in 0..d.n {
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..d.c {
                    let mut m = T::neg_infinity();
                    for i in 0..wh {
                        for j in 0..ww {
                            m = m.max(input.at(n, oy * stride + i, ox * stride + j, c));
                        }
                    }
                    let idx = out.index(n, oy, ox, c);
                    out.data_mut()[idx] = m;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two() {
        let x = Tensor4::from_vec(Dims4::new(1, 2, 2, 1), vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(max_pool(&x, (2, 2), 2).unwrap().data(), &[4.0]);
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor4::filled(Dims4::new(2, 6, 6, 3), 0.7f32);
        let y = max_pool(&x, (3, 3), 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn window_too_large() {
        let x = Tensor4::<f32>::zeros(Dims4::new(1, 2, 2, 1));
        assert!(max_pool(&x, (3, 3), 1).is_err());
    }

    #[test]
    fn matches_exhaustive_window_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor4::<f64>::random_uniform(Dims4::new(1, 8, 8, 2), -1.0, 1.0, &mut rng);
        let y = max_pool(&x, (2, 2), 2).unwrap();
        for oy in 0..4 {
            for ox in 0..4 {
                for c in 0..2 {
                    let vals = [
                        x.at(0, 2 * oy, 2 * ox, c),
                        x.at(0, 2 * oy + 1, 2 * ox, c),
                        x.at(0, 2 * oy, 2 * ox + 1, c),
                        x.at(0, 2 * oy + 1, 2 * ox + 1, c),
                    ];
                    let want = vals.iter().cloned().fold(f64::MIN, f64::max);
                    assert_eq!(y.at(0, oy, ox, c), want);
                }
            }
        }
    }
}
