//! Forward and backward passes over a layer table.

use super::arch::ArchId;
use super::weights::{LayerGrads, LayerParams, LayerWeights, ModelGrads, ModelWeights};
use crate::numerics::{
    activation, activation_grad, batchnorm, batchnorm_grad, conv2d, conv2d_grad, deconv2d,
    deconv2d_grad, dense, dense_grad, Activation, BatchNormCache, BnMode, Dims4, Real, Tensor4,
};
use crate::{Error, Result};
use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::ops::Range;

/// Samples per chunk for eval-mode inference.
pub const INFER_CHUNK: usize = 64;

/// Bottleneck features of one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f32>);

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// What the upstream gradient passed to [`ModelWeights::backward`] is taken
/// with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradAt {
    /// The network output.
    Output,
    /// The last layer's pre-activation (e.g. a sigmoid's logit). Requires
    /// the last layer to have no batch norm.
    Logits,
}

#[derive(Debug, Clone)]
struct LayerTrace<T> {
    input: Tensor4<T>,
    /// Pre- and post-activation values, kept only for nonlinear layers.
    act: Option<(Tensor4<T>, Tensor4<T>)>,
    bn: Option<BatchNormCache<T>>,
}

/// Saved activations of a forward pass over a contiguous range of layers.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    range: Range<usize>,
    layers: Vec<LayerTrace<T>>,
}

impl<T> Trace<T> {
    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }
}

fn layer_forward<T: Real>(
    layer: &LayerWeights<T>,
    x: &Tensor4<T>,
    mode: BnMode,
) -> Result<(
    Tensor4<T>,
    Option<(Tensor4<T>, Tensor4<T>)>,
    Option<BatchNormCache<T>>,
)> {
    let z = match &layer.params {
        LayerParams::Conv(p) => conv2d(x, p)?,
        LayerParams::Deconv(p) => deconv2d(x, p)?,
        LayerParams::Dense(p) => dense(x, p)?,
    };
    let act = layer.spec.activation;
    let (a, saved) = if act.is_linear() {
        (z, None)
    } else {
        let a = activation(&z, act);
        (a.clone(), Some((z, a)))
    };
    match &layer.bn {
        Some(bn) => {
            let (y, cache) = batchnorm(&a, bn, mode)?;
            Ok((y, saved, Some(cache)))
        }
        None => Ok((a, saved, None)),
    }
}

impl<T: Real> ModelWeights<T> {
    fn check_range(&self, range: &Range<usize>) -> Result<()> {
        if range.start >= range.end || range.end > self.layers.len() {
            return Err(Error::InvalidArgument(format!(
                "layer range {range:?} outside 0..{}",
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Hash of the sign pattern of every ReLU/leaky-ReLU pre-activation in
    /// `trace`; equal hashes mean the same linear piece of the network.
    pub fn kink_region(&self, trace: &Trace<T>) -> u64 {
        let mut h = DefaultHasher::new();
        for (layer, t) in self.layers[trace.range()].iter().zip(&trace.layers) {
            if !matches!(
                layer.spec.activation,
                Activation::Relu | Activation::LeakyRelu(_)
            ) {
                continue;
            }
            if let Some((z, _)) = &t.act {
                for chunk in z.data().chunks(64) {
                    let bits = chunk
                        .iter()
                        .enumerate()
                        .fold(0u64, |b, (i, &v)| b | (u64::from(v > T::zero()) << i));
                    h.write_u64(bits);
                }
            }
        }
        h.finish()
    }

    /// Forward pass over every layer, keeping what backward needs. Running
    /// batch-norm statistics are left untouched; see
    /// [`commit_batch_stats`](Self::commit_batch_stats).
    pub fn forward(&self, x: &Tensor4<T>, mode: BnMode) -> Result<(Tensor4<T>, Trace<T>)> {
        self.forward_range(0..self.layers.len(), x, mode)
    }

    pub fn forward_range(
        &self,
        range: Range<usize>,
        x: &Tensor4<T>,
        mode: BnMode,
    ) -> Result<(Tensor4<T>, Trace<T>)> {
        self.check_range(&range)?;
        let mut cur = x.clone();
        let mut layers = Vec::with_capacity(range.len());
        for layer in &self.layers[range.clone()] {
            let (y, act, bn) = layer_forward(layer, &cur, mode)?;
            layers.push(LayerTrace {
                input: cur,
                act,
                bn,
            });
            cur = y;
        }
        Ok((cur, Trace { range, layers }))
    }

    /// Eval-mode pass without saving intermediates.
    pub fn infer_range(&self, range: Range<usize>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_range(&range)?;
        let n = x.dims().n;
        let mut parts = Vec::with_capacity(n.div_ceil(INFER_CHUNK));
        for start in (0..n).step_by(INFER_CHUNK) {
            let idx: Vec<usize> = (start..n.min(start + INFER_CHUNK)).collect();
            let mut cur = if idx.len() == n {
                x.clone()
            } else {
                x.gather(&idx)
            };
            for layer in &self.layers[range.clone()] {
                cur = layer_forward(layer, &cur, BnMode::Eval)?.0;
            }
            parts.push(cur);
        }
        let refs: Vec<&Tensor4<T>> = parts.iter().collect();
        Tensor4::concat(&refs)
    }

    /// Fold the batch statistics recorded in a train-mode trace into the
    /// running averages.
    pub fn commit_batch_stats(&mut self, trace: &Trace<T>) {
        for (layer, t) in self.layers[trace.range.clone()]
            .iter_mut()
            .zip(&trace.layers)
        {
            if let (Some(bn), Some(cache)) = (layer.bn.as_mut(), t.bn.as_ref()) {
                bn.update_running(cache);
            }
        }
    }

    /// Backpropagate `upstream` through a trace. Returns the gradient with
    /// respect to the trace input and parameter gradients for every layer
    /// (zero outside the traced range).
    pub fn backward(
        &self,
        trace: &Trace<T>,
        upstream: &Tensor4<T>,
        at: GradAt,
    ) -> Result<(Tensor4<T>, ModelGrads<T>)> {
        let mut grads = self.zero_grads();
        let mut g = upstream.clone();
        let last = trace.range.end - 1;
        for (i, t) in trace.range.clone().zip(&trace.layers).rev() {
            let layer = &self.layers[i];
            let lg: &mut LayerGrads<T> = &mut grads.layers[i];
            let skip_act = i == last && at == GradAt::Logits;
            if skip_act && layer.bn.is_some() {
                return Err(Error::InvalidArgument(
                    "logit gradients need a final layer without batch norm".into(),
                ));
            }
            if let (Some(bn), Some(cache)) = (&layer.bn, &t.bn) {
                let (gx, gs, gb) = batchnorm_grad(cache, bn, &g)?;
                lg.scale = gs;
                lg.shift = gb;
                g = gx;
            }
            if let (Some((z, a)), false) = (&t.act, skip_act) {
                g = activation_grad(z, a, &g, layer.spec.activation);
            }
            let (gx, gw, gbias) = match &layer.params {
                LayerParams::Conv(p) => {
                    let r = conv2d_grad(&t.input, p, &g)?;
                    (r.input, r.filters, r.bias)
                }
                LayerParams::Deconv(p) => {
                    let r = deconv2d_grad(&t.input, p, &g)?;
                    (r.input, r.filters, r.bias)
                }
                LayerParams::Dense(p) => {
                    let r = dense_grad(&t.input, p, &g)?;
                    (r.input, r.weights, r.bias)
                }
            };
            lg.weights = gw;
            lg.bias = gbias;
            g = gx;
        }
        Ok((g, grads))
    }

    fn check_patches(&self, op: &'static str, x: &Tensor4<T>) -> Result<()> {
        let (h, w, c) = self.spec.input;
        let d = x.dims();
        if (d.h, d.w, d.c) != (h, w, c) {
            return Err(Error::shape(op, format!("Nx{h}x{w}x{c}"), d));
        }
        Ok(())
    }

    fn encoder_range(&self) -> Result<Range<usize>> {
        match self.spec.bottleneck {
            Some(b) => Ok(0..b),
            None => Err(Error::InvalidArgument(format!(
                "{} is not an autoencoder",
                self.arch()
            ))),
        }
    }

    /// Bottleneck tensor `(n, fh, fw, fc)` for a batch of patches, eval mode.
    pub fn encode_batch(&self, patches: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_patches("encode", patches)?;
        let range = self.encoder_range()?;
        self.infer_range(range, patches)
    }

    /// One flattened feature vector per patch.
    pub fn encode(&self, patches: &Tensor4<T>) -> Result<Vec<FeatureVector>> {
        let h = self.encode_batch(patches)?;
        Ok((0..h.dims().n)
            .map(|i| FeatureVector(h.sample(i).iter().map(|v| v.as_f64() as f32).collect()))
            .collect())
    }

    pub fn decode(&self, features: &[FeatureVector]) -> Result<Tensor4<T>> {
        let b = self.encoder_range()?.end;
        let (fh, fw, fc) = self.spec.feature_shape();
        let dim = fh * fw * fc;
        if features.is_empty() {
            return Err(Error::Empty("decode features"));
        }
        let mut data = Vec::with_capacity(features.len() * dim);
        for f in features {
            if f.len() != dim {
                return Err(Error::shape("decode feature length", dim, f.len()));
            }
            data.extend(f.0.iter().map(|&v| T::from_f64_lossy(f64::from(v))));
        }
        let h = Tensor4::from_vec(Dims4::new(features.len(), fh, fw, fc), data)?;
        self.infer_range(b..self.layers.len(), &h)
    }

    /// `decode(encode(patches))` in eval mode, without the f32 round trip.
    pub fn reconstruct(&self, patches: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_patches("reconstruct", patches)?;
        self.encoder_range()?;
        self.infer_range(0..self.layers.len(), patches)
    }

    /// Probability that each patch is real, eval mode.
    pub fn discriminate(&self, patches: &Tensor4<T>) -> Result<Vec<f64>> {
        if self.arch() != ArchId::D {
            return Err(Error::InvalidArgument(format!(
                "{} is not a discriminator",
                self.arch()
            )));
        }
        self.check_patches("discriminate", patches)?;
        let out = self.infer_range(0..self.layers.len(), patches)?;
        Ok(out.data().iter().map(|v| v.as_f64()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::arch::build_spec;
    use crate::models::weights::{init_weights, zero_weights};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn patches(n: usize, seed: u64) -> Tensor4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::random_uniform(Dims4::new(n, 64, 64, 3), -1.0, 1.0, &mut rng)
    }

    #[test]
    fn a4_feature_vector_has_2048_entries() {
        let w = init_weights::<f32>(&build_spec(ArchId::A4), 3);
        let h = w.encode(&patches(2, 0)).unwrap();
        assert_eq!(h.len(), 2);
        assert!(h
            .iter()
            .all(|f| f.len() == 2048 && f.0.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn zero_weights_give_zero_features_and_output() {
        let w = zero_weights::<f32>(&build_spec(ArchId::A4));
        let zero = Tensor4::zeros(Dims4::new(1, 64, 64, 3));
        assert!(w.encode(&zero).unwrap()[0].0.iter().all(|&v| v == 0.0));
        let out = w.decode(&[FeatureVector(vec![0.0; 2048])]).unwrap();
        assert_eq!(out.dims(), Dims4::new(1, 64, 64, 3));
        assert!(out.data().iter().all(|&v| v == 0.0));
        let d = zero_weights::<f32>(&build_spec(ArchId::D));
        assert_eq!(d.discriminate(&patches(3, 1)).unwrap(), vec![0.5; 3]);
    }

    #[test]
    fn reconstruction_shape_and_range_for_all_autoencoders() {
        let x = patches(2, 5);
        for id in ArchId::AUTOENCODERS {
            let w = init_weights::<f32>(&build_spec(id), 9);
            let y = w.reconstruct(&x).unwrap();
            assert_eq!(y.dims(), x.dims());
            assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            let via_features = w.decode(&w.encode(&x).unwrap()).unwrap();
            assert_eq!(via_features.dims(), x.dims());
        }
    }

    #[test]
    fn discriminator_output_in_unit_interval() {
        let d = init_weights::<f32>(&build_spec(ArchId::D), 2);
        let p = d.discriminate(&patches(4, 2)).unwrap();
        assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn inference_is_deterministic() {
        let w = init_weights::<f32>(&build_spec(ArchId::A4), 11);
        let x = patches(3, 4);
        assert_eq!(w.encode(&x).unwrap(), w.encode(&x).unwrap());
        assert_eq!(w.reconstruct(&x).unwrap(), w.reconstruct(&x).unwrap());
    }

    #[test]
    fn wrong_dims_rejected() {
        let w = init_weights::<f32>(&build_spec(ArchId::A4), 0);
        let bad = Tensor4::<f32>::zeros(Dims4::new(1, 32, 32, 3));
        assert!(w.encode(&bad).is_err());
        assert!(w.decode(&[FeatureVector(vec![0.0; 100])]).is_err());
        assert!(w.discriminate(&patches(1, 0)).is_err());
    }

    #[test]
    fn chunked_inference_matches_single_batch() {
        let w = init_weights::<f32>(&build_spec(ArchId::A4), 1);
        let x = patches(INFER_CHUNK + 3, 8);
        let all = w.encode_batch(&x).unwrap();
        let last = w.encode_batch(&x.gather(&[INFER_CHUNK + 2])).unwrap();
        assert_eq!(all.sample(INFER_CHUNK + 2), last.data());
    }
}
