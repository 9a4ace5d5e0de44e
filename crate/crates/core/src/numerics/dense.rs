use super::{Dims4, Real, Tensor4};
use crate::{Error, Result};

/// Fully connected layer over the flattened per-sample input. Weights are
/// laid out `(in_features, out_features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub in_features: usize,
    pub out_features: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads<T> {
    pub input: Tensor4<T>,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> DenseParams<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        DenseParams {
            weights: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
            in_features,
            out_features,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn check_input(&self, op: &'static str, input: &Tensor4<T>) -> Result<()> {
        if input.dims().sample_len() != self.in_features {
            return Err(Error::shape(
                op,
                self.in_features,
                input.dims().sample_len(),
            ));
        }
        Ok(())
    }
}

/// Output is `(n, 1, 1, out_features)`.
pub fn dense<T: Real>(input: &Tensor4<T>, params: &DenseParams<T>) -> Result<Tensor4<T>> {
    params.check_input("dense", input)?;
    let n = input.dims().n;
    let mut out = Tensor4::zeros(Dims4::new(n, 1, 1, params.out_features));
    let (fi, fo) = (params.in_features, params.out_features);
    T::gemm(
        n,
        fi,
        fo,
        T::one(),
        input.data(),
        false,
        &params.weights,
        false,
        T::zero(),
        out.data_mut(),
    );
    for row in out.data_mut().chunks_exact_mut(fo) {
        for (o, &b) in row.iter_mut().zip(&params.bias) {
            *o = *o + b;
        }
    }
    Ok(out)
}

pub fn dense_grad<T: Real>(
    input: &Tensor4<T>,
    params: &DenseParams<T>,
    upstream: &Tensor4<T>,
) -> Result<DenseGrads<T>> {
    params.check_input("dense_grad", input)?;
    let n = input.dims().n;
    let (fi, fo) = (params.in_features, params.out_features);
    upstream.ensure_dims("dense_grad upstream", Dims4::new(n, 1, 1, fo))?;
    let mut grad_input = Tensor4::zeros(input.dims());
    T::gemm(
        n,
        fo,
        fi,
        T::one(),
        upstream.data(),
        false,
        &params.weights,
        true,
        T::zero(),
        grad_input.data_mut(),
    );
    let mut grad_w = vec![T::zero(); fi * fo];
    T::gemm(
        fi,
        n,
        fo,
        T::one(),
        input.data(),
        true,
        upstream.data(),
        false,
        T::zero(),
        &mut grad_w,
    );
    let mut grad_b = vec![T::zero(); fo];
    for row in upstream.data().chunks_exact(fo) {
        for (g, &u) in grad_b.iter_mut().zip(row) {
            *g = *g + u;
        }
    }
    Ok(DenseGrads {
        input: grad_input,
        weights: grad_w,
        bias: grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_product() {
        let x = Tensor4::from_vec(Dims4::new(2, 1, 1, 2), vec![1.0f64, 2.0, -1.0, 0.5]).unwrap();
        let p = DenseParams {
            weights: vec![1.0, 0.0, 3.0, 1.0, -1.0, 2.0],
            bias: vec![0.5, 0.0, -1.0],
            in_features: 2,
            out_features: 3,
        };
        let y = dense(&x, &p).unwrap();
        assert_eq!(y.data(), &[3.5, -2.0, 6.0, 0.0, -0.5, -3.0]);
        let up = Tensor4::filled(y.dims(), 1.0);
        let g = dense_grad(&x, &p, &up).unwrap();
        assert_eq!(g.bias, vec![2.0, 2.0, 2.0]);
        assert_eq!(g.input.data(), &[4.0, 2.0, 4.0, 2.0]);
        assert_eq!(g.weights, vec![0.0, 0.0, 0.0, 2.5, 2.5, 2.5]);
    }

    #[test]
    fn feature_mismatch() {
        let x = Tensor4::<f32>::zeros(Dims4::new(1, 2, 2, 1));
        assert!(dense(&x, &DenseParams::zeros(3, 1)).is_err());
    }
}
