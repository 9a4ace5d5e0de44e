use super::arch::{ArchId, ArchitectureSpec, LayerKind, LayerSpec};
use crate::numerics::{BatchNormParams, ConvParams, DenseParams, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<T> {
    Conv(ConvParams<T>),
    /// Filters laid out `(kh, kw, out, in)`; see [`crate::numerics::deconv2d`].
    Deconv(ConvParams<T>),
    Dense(DenseParams<T>),
}

impl<T: Real> LayerParams<T> {
    pub fn weights(&self) -> &[T] {
        match self {
            LayerParams::Conv(p) | LayerParams::Deconv(p) => &p.filters,
            LayerParams::Dense(p) => &p.weights,
        }
    }

    pub fn bias(&self) -> &[T] {
        match self {
            LayerParams::Conv(p) | LayerParams::Deconv(p) => &p.bias,
            LayerParams::Dense(p) => &p.bias,
        }
    }

    pub fn weights_and_bias_mut(&mut self) -> (&mut Vec<T>, &mut Vec<T>) {
        match self {
            LayerParams::Conv(p) | LayerParams::Deconv(p) => (&mut p.filters, &mut p.bias),
            LayerParams::Dense(p) => (&mut p.weights, &mut p.bias),
        }
    }

    /// Shape of the weight tensor as stored.
    pub fn weight_dims(&self) -> Vec<usize> {
        match self {
            LayerParams::Conv(p) => vec![p.kernel.0, p.kernel.1, p.in_channels, p.out_channels],
            LayerParams::Deconv(p) => vec![p.kernel.0, p.kernel.1, p.out_channels, p.in_channels],
            LayerParams::Dense(p) => vec![p.in_features, p.out_features],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub spec: LayerSpec,
    pub params: LayerParams<T>,
    pub bn: Option<BatchNormParams<T>>,
}

/// Where a set of weights came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct WeightsMeta {
    pub seed: u64,
    pub stage: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub spec: ArchitectureSpec,
    pub layers: Vec<LayerWeights<T>>,
    pub meta: WeightsMeta,
}

/// Gradients mirroring [`ModelWeights`]; `scale`/`shift` are empty for layers
/// without batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads<T> {
    pub layers: Vec<LayerGrads<T>>,
}

impl<T: Real> ModelGrads<T> {
    /// Flat views in the order of [`ModelWeights::trainable_mut`].
    pub fn slices(&self) -> Vec<&[T]> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.push(l.weights.as_slice());
            v.push(l.bias.as_slice());
            if !l.scale.is_empty() {
                v.push(l.scale.as_slice());
                v.push(l.shift.as_slice());
            }
        }
        v
    }

    pub fn add_assign(&mut self, other: &ModelGrads<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in [
                (&mut a.weights, &b.weights),
                (&mut a.bias, &b.bias),
                (&mut a.scale, &b.scale),
                (&mut a.shift, &b.shift),
            ] {
                for (x, &y) in x.iter_mut().zip(y) {
                    *x = *x + y;
                }
            }
        }
    }
}

/// Glorot-uniform filters, zero biases, identity batch norm; deterministic in
/// `seed`.
pub fn init_weights<T: Real>(spec: &ArchitectureSpec, seed: u64) -> ModelWeights<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = zero_weights(spec);
    for layer in &mut w.layers {
        let (kh, kw) = layer.spec.kernel;
        let (fan_in, fan_out) = match &layer.params {
            LayerParams::Conv(p) | LayerParams::Deconv(p) => {
                (kh * kw * p.in_channels, kh * kw * p.out_channels)
            }
            LayerParams::Dense(p) => (p.in_features, p.out_features),
        };
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let (weights, _) = layer.params.weights_and_bias_mut();
        for v in weights.iter_mut() {
            *v = T::from_f64_lossy(rng.gen_range(-limit..limit));
        }
    }
    w.meta = WeightsMeta {
        seed,
        stage: "init".into(),
    };
    w
}

/// All-zero filters and biases with identity batch norm.
pub fn zero_weights<T: Real>(spec: &ArchitectureSpec) -> ModelWeights<T> {
    let opts = spec.options;
    let layers = spec
        .layers
        .iter()
        .zip(spec.input_shapes())
        .map(|(l, inp)| {
            let params = match l.kind {
                LayerKind::Conv => {
                    LayerParams::Conv(ConvParams::zeros(l.kernel, inp.2, l.filters, l.stride))
                }
                LayerKind::Deconv => {
                    LayerParams::Deconv(ConvParams::zeros(l.kernel, inp.2, l.filters, l.stride))
                }
                LayerKind::Dense => {
                    LayerParams::Dense(DenseParams::zeros(inp.0 * inp.1 * inp.2, l.filters))
                }
            };
            let bn = l
                .batch_norm
                .then(|| BatchNormParams::identity(l.filters, opts.bn_momentum, opts.bn_epsilon));
            LayerWeights {
                spec: l.clone(),
                params,
                bn,
            }
        })
        .collect();
    ModelWeights {
        spec: spec.clone(),
        layers,
        meta: WeightsMeta::default(),
    }
}

impl<T: Real> ModelWeights<T> {
    pub fn arch(&self) -> ArchId {
        self.spec.id
    }

    pub fn trainable_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.params.weights().len()
                    + l.params.bias().len()
                    + l.bn.as_ref().map_or(0, |b| b.scale.len() + b.shift.len())
            })
            .sum()
    }

    /// Mutable views of every trainable tensor: per layer weights, bias and,
    /// with batch norm, scale then shift.
    pub fn trainable_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = Vec::new();
        for l in &mut self.layers {
            let (w, b) = l.params.weights_and_bias_mut();
            v.push(w.as_mut_slice());
            v.push(b.as_mut_slice());
            if let Some(bn) = &mut l.bn {
                v.push(bn.scale.as_mut_slice());
                v.push(bn.shift.as_mut_slice());
            }
        }
        v
    }

    /// Every stored tensor with a stable name and shape, including running
    /// statistics.
    pub fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut v = Vec::new();
        for l in &self.layers {
            let name = &l.spec.name;
            v.push((
                format!("{name}.weights"),
                l.params.weight_dims(),
                l.params.weights(),
            ));
            v.push((
                format!("{name}.bias"),
                vec![l.params.bias().len()],
                l.params.bias(),
            ));
            if let Some(bn) = &l.bn {
                let c = vec![bn.channels()];
                v.push((format!("{name}.bn.scale"), c.clone(), bn.scale.as_slice()));
                v.push((format!("{name}.bn.shift"), c.clone(), bn.shift.as_slice()));
                v.push((
                    format!("{name}.bn.running_mean"),
                    c.clone(),
                    bn.running_mean.as_slice(),
                ));
                v.push((
                    format!("{name}.bn.running_var"),
                    c,
                    bn.running_var.as_slice(),
                ));
            }
        }
        v
    }

    /// Mutable storage for the tensor `name` as listed by
    /// [`named_tensors`](Self::named_tensors).
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Vec<T>> {
        let (layer, field) = name.split_once('.')?;
        let l = self.layers.iter_mut().find(|l| l.spec.name == layer)?;
        match field {
            "weights" => Some(l.params.weights_and_bias_mut().0),
            "bias" => Some(l.params.weights_and_bias_mut().1),
            "bn.scale" => l.bn.as_mut().map(|b| &mut b.scale),
            "bn.shift" => l.bn.as_mut().map(|b| &mut b.shift),
            "bn.running_mean" => l.bn.as_mut().map(|b| &mut b.running_mean),
            "bn.running_var" => l.bn.as_mut().map(|b| &mut b.running_var),
            _ => None,
        }
    }

    pub fn zero_grads(&self) -> ModelGrads<T> {
        ModelGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![T::zero(); l.params.weights().len()],
                    bias: vec![T::zero(); l.params.bias().len()],
                    scale: vec![T::zero(); l.bn.as_ref().map_or(0, |b| b.channels())],
                    shift: vec![T::zero(); l.bn.as_ref().map_or(0, |b| b.channels())],
                })
                .collect(),
        }
    }

    /// Element-type conversion of every tensor.
    pub fn cast<U: Real>(&self) -> ModelWeights<U> {
        let conv = |v: &[T]| {
            v.iter()
                .map(|x| U::from_f64_lossy(x.as_f64()))
                .collect::<Vec<U>>()
        };
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let params = match &l.params {
                    LayerParams::Conv(p) | LayerParams::Deconv(p) => {
                        let q = ConvParams {
                            filters: conv(&p.filters),
                            bias: conv(&p.bias),
                            kernel: p.kernel,
                            in_channels: p.in_channels,
                            out_channels: p.out_channels,
                            stride: p.stride,
                        };
                        if matches!(l.params, LayerParams::Conv(_)) {
                            LayerParams::Conv(q)
                        } else {
                            LayerParams::Deconv(q)
                        }
                    }
                    LayerParams::Dense(p) => LayerParams::Dense(DenseParams {
                        weights: conv(&p.weights),
                        bias: conv(&p.bias),
                        in_features: p.in_features,
                        out_features: p.out_features,
                    }),
                };
                let bn = l.bn.as_ref().map(|b| BatchNormParams {
                    scale: conv(&b.scale),
                    shift: conv(&b.shift),
                    running_mean: conv(&b.running_mean),
                    running_var: conv(&b.running_var),
                    momentum: b.momentum,
                    epsilon: b.epsilon,
                });
                LayerWeights {
                    spec: l.spec.clone(),
                    params,
                    bn,
                }
            })
            .collect();
        ModelWeights {
            spec: self.spec.clone(),
            layers,
            meta: self.meta.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::arch::{build_spec, param_count};

    #[test]
    fn deterministic_in_seed() {
        let spec = build_spec(ArchId::A4);
        let a = init_weights::<f32>(&spec, 42);
        let b = init_weights::<f32>(&spec, 42);
        let c = init_weights::<f32>(&spec, 43);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn counts_match_closed_form() {
        for id in [ArchId::A1, ArchId::A2, ArchId::A3, ArchId::A4, ArchId::D] {
            let spec = build_spec(id);
            let mut w = init_weights::<f32>(&spec, 0);
            assert_eq!(w.trainable_count(), param_count(&spec), "{id}");
            let total: usize = w.trainable_mut().iter().map(|s| s.len()).sum();
            assert_eq!(total, param_count(&spec));
        }
    }

    #[test]
    fn initial_batch_norm_state() {
        let w = init_weights::<f32>(&build_spec(ArchId::A4), 1);
        for bn in w.layers.iter().filter_map(|l| l.bn.as_ref()) {
            assert!(bn.running_var.iter().all(|&v| v == 1.0));
            assert!(bn.running_mean.iter().all(|&v| v == 0.0));
            assert!(bn.scale.iter().all(|&v| v == 1.0));
        }
        assert!(w
            .layers
            .iter()
            .all(|l| l.params.bias().iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn every_layer_has_one_tensor_set() {
        let w = init_weights::<f32>(&build_spec(ArchId::A4), 1);
        let names: Vec<String> = w.named_tensors().into_iter().map(|(n, _, _)| n).collect();
        let unique: std::collections::BTreeSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        // 10 layers x (weights, bias) + 8 batch norms x 4
        assert_eq!(names.len(), 20 + 32);
    }
}
