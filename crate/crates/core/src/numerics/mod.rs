//! Differentiable layer primitives over NHWC tensors.
//!
//! Everything here is generic over [`Real`] so the same code trains at 32-bit
//! and is gradient-checked at 64-bit. Each forward op has a matching `*_grad`
//! that takes the upstream gradient and returns gradients for the input and
//! for any parameters.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod gradcheck;
pub mod layercheck;
mod loss;
mod optim;
mod pool;
mod tensor;

pub use activation::{activation, activation_grad, Activation};
pub use batchnorm::{batchnorm, batchnorm_grad, BatchNormCache, BatchNormParams, BnMode};
pub use conv::{conv2d, conv2d_grad, deconv2d, deconv2d_grad, same_padding, ConvGrads, ConvParams};
pub use dense::{dense, dense_grad, DenseGrads, DenseParams};
pub use gradcheck::{grad_check, GradCheckReport, GradCheckTarget, TensorError};
pub use loss::{bce_grad, bce_loss, mse_grad, mse_loss, BCE_EPS};
pub use optim::{OptimizerKind, OptimizerState};
pub use pool::max_pool;
pub use tensor::{Dims4, Tensor4};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use std::fmt::Debug;

/// Floating-point element type for tensors and parameters.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    /// Row-major `c = alpha * op(a) * op(b) + beta * c` where `op(a)` is
    /// `m x k` and `op(b)` is `k x n`. A transposed operand is stored with the
    /// transposed shape (`k x m` for `a`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 converts to every Real")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }
}

fn gemm_strides(m: usize, k: usize, n: usize, a_trans: bool, b_trans: bool) -> [isize; 4] {
    let (rsa, csa) = if a_trans { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_trans { (1, k) } else { (n, 1) };
    [rsa as isize, csa as isize, rsb as isize, csb as isize]
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let [rsa, csa, rsb, csb] = gemm_strides(m, k, n, a_trans, b_trans);
                // SAFETY: the asserts above bound every index the kernel touches.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);
