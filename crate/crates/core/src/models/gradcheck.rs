//! Finite-difference target for a whole network.

use super::network::GradAt;
use super::weights::ModelWeights;
use crate::numerics::{BnMode, GradCheckTarget, Tensor4};
use crate::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Loss `<probe, net(input)>` for a fixed random probe, with gradients
/// w.r.t. the input and every trainable tensor.
///
/// Perturbations that flip the sign of any ReLU/leaky-ReLU pre-activation
/// are reported as a region change so the checker redraws them.
///
/// In train mode the bias of a linear layer followed by batch norm cancels
/// out of the loss exactly (its gradient is identically zero), so those
/// tensors are left out of the check.
pub struct NetworkCheck {
    pub weights: ModelWeights<f64>,
    pub input: Tensor4<f64>,
    pub probe: Tensor4<f64>,
    pub mode: BnMode,
    names: Vec<String>,
    region: Option<u64>,
}

impl NetworkCheck {
    pub fn new(
        weights: ModelWeights<f64>,
        input: Tensor4<f64>,
        mode: BnMode,
        seed: u64,
    ) -> Result<Self> {
        let (out, _) = weights.forward(&input, mode)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe = Tensor4::random_uniform(out.dims(), -1.0, 1.0, &mut rng);
        let mut names = Vec::new();
        for l in &weights.layers {
            let n = &l.spec.name;
            names.push(format!("{n}.weights"));
            let gauge = mode == BnMode::Train && l.bn.is_some() && l.spec.activation.is_linear();
            if !gauge {
                names.push(format!("{n}.bias"));
            }
            if l.bn.is_some() {
                names.push(format!("{n}.bn.scale"));
                names.push(format!("{n}.bn.shift"));
            }
        }
        Ok(NetworkCheck {
            weights,
            input,
            probe,
            mode,
            names,
            region: None,
        })
    }

    /// Replace eval-mode running statistics with random but plausible values.
    pub fn randomize_running_stats(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut self.weights.layers {
            if let Some(bn) = &mut l.bn {
                for m in &mut bn.running_mean {
                    *m = rng.gen_range(-0.5..0.5);
                }
                for v in &mut bn.running_var {
                    *v = rng.gen_range(0.2..2.0);
                }
            }
        }
    }
}

impl GradCheckTarget for NetworkCheck {
    fn tensors(&self) -> Vec<(String, usize)> {
        let mut v = vec![("input".to_string(), self.input.len())];
        let all = self.weights.named_tensors();
        for name in &self.names {
            let len = all
                .iter()
                .find(|(n, _, _)| n == name)
                .map_or(0, |t| t.2.len());
            v.push((name.clone(), len));
        }
        v
    }

    fn get(&self, tensor: usize, index: usize) -> f64 {
        if tensor == 0 {
            return self.input.data()[index];
        }
        let name = &self.names[tensor - 1];
        let all = self.weights.named_tensors();
        all.iter()
            .find(|(n, _, _)| n == name)
            .expect("known tensor")
            .2[index]
    }

    fn set(&mut self, tensor: usize, index: usize, value: f64) {
        if tensor == 0 {
            self.input.data_mut()[index] = value;
        } else {
            let name = self.names[tensor - 1].clone();
            self.weights.tensor_mut(&name).expect("known tensor")[index] = value;
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let (out, trace) = self.weights.forward(&self.input, self.mode)?;
        self.region = Some(self.weights.kink_region(&trace));
        out.dot(&self.probe)
    }

    fn analytic(&mut self) -> Result<Vec<Vec<f64>>> {
        let (_, trace) = self.weights.forward(&self.input, self.mode)?;
        self.region = Some(self.weights.kink_region(&trace));
        let (gin, grads) = self.weights.backward(&trace, &self.probe, GradAt::Output)?;
        let mut v = vec![gin.into_vec()];
        for name in &self.names {
            let (layer, field) = name.split_once('.').expect("dotted name");
            let i = self
                .weights
                .layers
                .iter()
                .position(|l| l.spec.name == layer)
                .expect("known layer");
            let g = &grads.layers[i];
            v.push(match field {
                "weights" => g.weights.clone(),
                "bias" => g.bias.clone(),
                "bn.scale" => g.scale.clone(),
                _ => g.shift.clone(),
            });
        }
        Ok(v)
    }

    fn region(&self) -> Option<u64> {
        self.region
    }
}
