use super::{Real, Tensor4};

/// Elementwise nonlinearity applied after a conv/deconv/dense layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Linear,
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu(slope) => {
                if x > T::zero() {
                    x
                } else {
                    x * T::from_f64_lossy(slope)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => T::one() / (T::one() + (-x).exp()),
        }
    }

    /// Derivative at pre-activation `x` with output `y = apply(x)`.
    #[inline]
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Linear => T::one(),
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(slope) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::from_f64_lossy(slope)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }

    pub fn is_linear(self) -> bool {
        self == Activation::Linear
    }
}

pub fn activation<T: Real>(input: &Tensor4<T>, kind: Activation) -> Tensor4<T> {
    if kind.is_linear() {
        return input.clone();
    }
    input.map(|v| kind.apply(v))
}

/// Gradient through the activation given its input, output and the upstream
/// gradient (all the same shape).
pub fn activation_grad<T: Real>(
    input: &Tensor4<T>,
    output: &Tensor4<T>,
    upstream: &Tensor4<T>,
    kind: Activation,
) -> Tensor4<T> {
    if kind.is_linear() {
        return upstream.clone();
    }
    let mut g = upstream.clone();
    for ((g, &x), &y) in g.data_mut().iter_mut().zip(input.data()).zip(output.data()) {
        *g = *g * kind.derivative(x, y);
    }
    g
}
