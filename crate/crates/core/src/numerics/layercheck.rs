//! Finite-difference targets for single layers, the deconv adjointness
//! check, and a deliberately broken target used as a negative control.

use super::{
    activation, activation_grad, batchnorm, batchnorm_grad, conv2d, conv2d_grad, deconv2d,
    deconv2d_grad, dense, dense_grad, grad_check, Activation, BatchNormParams, BnMode, ConvParams,
    DenseParams, Dims4, GradCheckReport, GradCheckTarget, Tensor4,
};
use crate::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(ConvParams<f64>),
    Deconv(ConvParams<f64>),
    Dense(DenseParams<f64>),
    BatchNorm(BatchNormParams<f64>, BnMode),
    Activation(Activation),
}

/// Loss `<probe, layer(input)>` with gradients w.r.t. the input and every
/// parameter tensor of the layer.
#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub layer: Layer,
    pub input: Tensor4<f64>,
    pub probe: Tensor4<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

impl LayerCheck {
    pub fn new(layer: Layer, input: Tensor4<f64>, seed: u64) -> Result<Self> {
        let out = forward(&layer, &input)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe = Tensor4::random_uniform(out.dims(), -1.0, 1.0, &mut rng);
        Ok(LayerCheck {
            layer,
            input,
            probe,
        })
    }

    fn params(&self) -> Vec<(&'static str, &Vec<f64>)> {
        match &self.layer {
            Layer::Conv(p) | Layer::Deconv(p) => vec![("filters", &p.filters), ("bias", &p.bias)],
            Layer::Dense(p) => vec![("weights", &p.weights), ("bias", &p.bias)],
            Layer::BatchNorm(p, _) => vec![("scale", &p.scale), ("shift", &p.shift)],
            Layer::Activation(_) => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match &mut self.layer {
            Layer::Conv(p) | Layer::Deconv(p) => vec![&mut p.filters, &mut p.bias],
            Layer::Dense(p) => vec![&mut p.weights, &mut p.bias],
            Layer::BatchNorm(p, _) => vec![&mut p.scale, &mut p.shift],
            Layer::Activation(_) => vec![],
        }
    }
}

fn forward(layer: &Layer, x: &Tensor4<f64>) -> Result<Tensor4<f64>> {
    Ok(match layer {
        Layer::Conv(p) => conv2d(x, p)?,
        Layer::Deconv(p) => deconv2d(x, p)?,
        Layer::Dense(p) => dense(x, p)?,
        Layer::BatchNorm(p, mode) => batchnorm(x, p, *mode)?.0,
        Layer::Activation(a) => activation(x, *a),
    })
}

impl GradCheckTarget for LayerCheck {
    fn tensors(&self) -> Vec<(String, usize)> {
        let mut v = vec![("input".to_string(), self.input.len())];
        v.extend(
            self.params()
                .into_iter()
                .map(|(n, p)| (n.to_string(), p.len())),
        );
        v
    }

    fn get(&self, tensor: usize, index: usize) -> f64 {
        if tensor == 0 {
            self.input.data()[index]
        } else {
            self.params()[tensor - 1].1[index]
        }
    }

    fn set(&mut self, tensor: usize, index: usize, value: f64) {
        if tensor == 0 {
            self.input.data_mut()[index] = value;
        } else {
            self.params_mut()[tensor - 1][index] = value;
        }
    }

    fn loss(&mut self) -> Result<f64> {
        forward(&self.layer, &self.input)?.dot(&self.probe)
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        let x = &self.input;
        let up = &self.probe;
        Ok(match &self.layer {
            Layer::Conv(p) => {
                let g = conv2d_grad(x, p, up)?;
                vec![g.input.into_vec(), g.filters, g.bias]
            }
            Layer::Deconv(p) => {
                let g = deconv2d_grad(x, p, up)?;
                vec![g.input.into_vec(), g.filters, g.bias]
            }
            Layer::Dense(p) => {
                let g = dense_grad(x, p, up)?;
                vec![g.input.into_vec(), g.weights, g.bias]
            }
            Layer::BatchNorm(p, mode) => {
                let (_, cache) = batchnorm(x, p, *mode)?;
                let (gx, gs, gb) = batchnorm_grad(&cache, p, up)?;
                vec![gx.into_vec(), gs, gb]
            }
            Layer::Activation(a) => {
                let y = activation(x, *a);
                vec![activation_grad(x, &y, up, *a).into_vec()]
            }
        })
    }

    fn region(&self) -> Option<u64> {
        match self.layer {
            Layer::Activation(Activation::Relu | Activation::LeakyRelu(_)) => {
                let mut h = DefaultHasher::new();
                for v in self.input.data() {
                    (*v > 0.0).hash(&mut h);
                }
                Some(h.finish())
            }
            _ => None,
        }
    }
}

/// Wraps a target and scales the analytic gradient of one tensor, so a
/// correct checker must reject it.
pub struct CorruptedGradient<G> {
    pub inner: G,
    pub tensor: usize,
    pub factor: f64,
}

impl<G: GradCheckTarget> GradCheckTarget for CorruptedGradient<G> {
    fn tensors(&self) -> Vec<(String, usize)> {
        self.inner.tensors()
    }
    fn get(&self, tensor: usize, index: usize) -> f64 {
        self.inner.get(tensor, index)
    }
    fn set(&mut self, tensor: usize, index: usize, value: f64) {
        self.inner.set(tensor, index, value)
    }
    fn loss(&mut self) -> Result<f64> {
        self.inner.loss()
    }
    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        let mut g = self.inner.analytic()?;
        for v in &mut g[self.tensor] {
            *v *= self.factor;
        }
        Ok(g)
    }
    fn region(&self) -> Option<u64> {
        self.inner.region()
    }
}

fn conv_params(
    rng: &mut ChaCha8Rng,
    k: usize,
    cin: usize,
    cout: usize,
    stride: usize,
) -> ConvParams<f64> {
    let mut p = ConvParams::zeros((k, k), cin, cout, stride);
    let scale = 1.0 / ((k * k * cin) as f64).sqrt();
    p.filters = uniform(rng, p.filters.len(), scale);
    p.bias = uniform(rng, cout, 0.1);
    p
}

/// Every layer type in a few geometries: `(label, target)`.
pub fn layer_targets(seed: u64) -> Result<Vec<(String, LayerCheck)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &(k, s) in &[(3, 1), (3, 2), (4, 2), (5, 2)] {
        let x = Tensor4::random_uniform(Dims4::new(2, 8, 8, 3), -1.0, 1.0, &mut rng);
        let p = conv_params(&mut rng, k, 3, 4, s);
        out.push((
            format!("conv k{k} s{s}"),
            LayerCheck::new(Layer::Conv(p), x, rng.gen())?,
        ));
        let x = Tensor4::random_uniform(Dims4::new(2, 4, 4, 4), -1.0, 1.0, &mut rng);
        // Deconv filters are laid out (kh, kw, out, in).
        let mut p = conv_params(&mut rng, k, 3, 4, s).transposed();
        p.bias = uniform(&mut rng, p.out_channels, 0.1);
        out.push((
            format!("deconv k{k} s{s}"),
            LayerCheck::new(Layer::Deconv(p), x, rng.gen())?,
        ));
    }
    let x = Tensor4::random_uniform(Dims4::new(3, 2, 2, 5), -1.0, 1.0, &mut rng);
    let mut p = DenseParams::zeros(20, 6);
    p.weights = uniform(&mut rng, 120, 0.3);
    p.bias = uniform(&mut rng, 6, 0.1);
    out.push((
        "dense".into(),
        LayerCheck::new(Layer::Dense(p), x, rng.gen())?,
    ));
    for mode in [BnMode::Train, BnMode::Eval] {
        let x = Tensor4::random_uniform(Dims4::new(3, 4, 4, 3), -2.0, 2.0, &mut rng);
        let mut p = BatchNormParams::identity(3, 0.99, 1e-3);
        p.scale = (0..3).map(|_| rng.gen_range(0.5..1.5)).collect();
        p.shift = uniform(&mut rng, 3, 0.5);
        p.running_mean = uniform(&mut rng, 3, 0.5);
        p.running_var = (0..3).map(|_| rng.gen_range(0.2..2.0)).collect();
        let name = format!(
            "batchnorm {}",
            if mode == BnMode::Train {
                "train"
            } else {
                "eval"
            }
        );
        out.push((
            name,
            LayerCheck::new(Layer::BatchNorm(p, mode), x, rng.gen())?,
        ));
    }
    for (name, a) in [
        ("relu", Activation::Relu),
        ("leaky relu", Activation::LeakyRelu(0.2)),
        ("tanh", Activation::Tanh),
        ("sigmoid", Activation::Sigmoid),
    ] {
        let x = Tensor4::random_uniform(Dims4::new(2, 4, 4, 2), -2.0, 2.0, &mut rng);
        out.push((
            name.into(),
            LayerCheck::new(Layer::Activation(a), x, rng.gen())?,
        ));
    }
    Ok(out)
}

/// Gradient-check every layer target.
pub fn layer_suite(
    tolerance: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<(String, GradCheckReport)>> {
    layer_targets(seed)?
        .into_iter()
        .enumerate()
        .map(|(i, (name, mut t))| {
            Ok((
                name,
                grad_check(&mut t, tolerance, samples, seed ^ i as u64)?,
            ))
        })
        .collect()
}

/// Largest `|<conv(x), y> - <x, deconv(y)>| / max(|<conv(x), y>|, 1)` over
/// a range of kernels and strides (sides divisible by the stride).
pub fn adjointness_error(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for &(k, s) in &[
        (2, 2),
        (3, 1),
        (3, 2),
        (4, 2),
        (5, 1),
        (5, 2),
        (3, 3),
        (6, 2),
        (6, 3),
    ] {
        for &side in &[6, 12, 18, 24] {
            let x = Tensor4::random_uniform(Dims4::new(2, side, side, 3), -1.0, 1.0, &mut rng);
            let mut p = conv_params(&mut rng, k, 3, 5, s);
            p.bias.fill(0.0);
            let cx = conv2d(&x, &p)?;
            let y = Tensor4::random_uniform(cx.dims(), -1.0, 1.0, &mut rng);
            let lhs = cx.dot(&y)?;
            let rhs = x.dot(&deconv2d(&y, &p.transposed())?)?;
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));
        }
    }
    Ok(worst)
}
