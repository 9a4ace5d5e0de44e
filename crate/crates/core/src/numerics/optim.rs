use super::Real;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
    /// Plain gradient descent, no momentum.
    Sgd,
}

impl OptimizerKind {
    pub const fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Adam { .. } => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

/// Optimizer hyperparameters plus per-parameter moment buffers. Parameter
/// slots are positional: every call must pass the tensors in the same order.
#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        Ok(OptimizerState {
            kind,
            learning_rate,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        })
    }

    pub fn adam(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate)
    }

    pub fn sgd(learning_rate: f64) -> Result<Self> {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<T>] {
        &self.second
    }

    /// Apply one update with whichever rule `kind` names.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        match self.kind {
            OptimizerKind::Adam { .. } => self.adam_step(params, grads),
            OptimizerKind::Sgd => self.sgd_step(params, grads),
        }
    }

    fn check_shapes(&self, params: &[&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape("optimizer tensors", params.len(), grads.len()));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.len() != g.len() {
                return Err(Error::shape("optimizer gradient", p.len(), g.len()));
            }
        }
        Ok(())
    }

    pub fn adam_step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        let OptimizerKind::Adam {
            beta1,
            beta2,
            epsilon,
        } = self.kind
        else {
            return Err(Error::InvalidArgument(
                "adam_step on a non-Adam optimizer".into(),
            ));
        };
        self.check_shapes(params, grads)?;
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != params.len()
            || self
                .first
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.len())
        {
            return Err(Error::shape("adam moments", self.first.len(), params.len()));
        }
        self.step += 1;
        let t = self.step as i32;
        let step_size = self.learning_rate / (1.0 - beta1.powi(t));
        let v_corr = 1.0 / (1.0 - beta2.powi(t));
        let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let step_size = T::from_f64_lossy(step_size);
        let v_corr = T::from_f64_lossy(v_corr);
        let eps = T::from_f64_lossy(epsilon);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + one_b1 * gi;
                v[i] = b2 * v[i] + one_b2 * gi * gi;
                p[i] = p[i] - step_size * m[i] / ((v[i] * v_corr).sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn sgd_step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if self.kind != OptimizerKind::Sgd {
            return Err(Error::InvalidArgument(
                "sgd_step on a non-SGD optimizer".into(),
            ));
        }
        self.check_shapes(params, grads)?;
        self.step += 1;
        let lr = T::from_f64_lossy(self.learning_rate);
        for (p, g) in params.iter_mut().zip(grads) {
            for (pi, &gi) in p.iter_mut().zip(g.iter()) {
                *pi = *pi - lr * gi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_params() {
        for mut opt in [
            OptimizerState::<f64>::adam(0.1).unwrap(),
            OptimizerState::sgd(0.1).unwrap(),
        ] {
            let mut p = vec![0.3, -1.2];
            let g = vec![0.0, 0.0];
            opt.step(&mut [&mut p], &[&g]).unwrap();
            assert_eq!(p, vec![0.3, -1.2]);
            assert_eq!(opt.steps(), 1);
        }
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut opt = OptimizerState::<f64>::adam(0.01).unwrap();
        let mut p = vec![1.0, 1.0, 1.0];
        let g = vec![3.0, -0.02, 250.0];
        opt.step(&mut [&mut p], &[&g]).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            let update = pi - 1.0;
            assert!((update + 0.01 * gi.signum()).abs() < 1e-6, "{update}");
        }
    }

    #[test]
    fn adam_descends_on_parabola() {
        let mut opt = OptimizerState::<f64>::adam(0.1).unwrap();
        let mut x = vec![1.0];
        let mut prev = 1.0f64;
        for _ in 0..10 {
            let g = vec![2.0 * x[0]];
            opt.step(&mut [&mut x], &[&g]).unwrap();
            assert!(x[0].abs() < prev);
            prev = x[0].abs();
        }
        assert!(opt.second_moments()[0][0] >= 0.0);
    }

    #[test]
    fn sgd_definition() {
        let mut opt = OptimizerState::<f64>::sgd(0.001).unwrap();
        let mut p = vec![0.5];
        opt.step(&mut [&mut p], &[&[1.0]]).unwrap();
        assert!((p[0] - 0.499).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut a: Vec<f32> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f32> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let manual: Vec<f32> = a.iter().zip(&g).map(|(p, g)| p - 0.01f32 * g).collect();
        let mut opt = OptimizerState::<f32>::sgd(0.01).unwrap();
        opt.step(&mut [&mut a], &[&g]).unwrap();
        assert_eq!(a, manual);
    }

    #[test]
    fn shape_mismatch_and_wrong_kind() {
        let mut opt = OptimizerState::<f64>::adam(0.1).unwrap();
        let mut p = vec![0.0; 3];
        assert!(opt.step(&mut [&mut p], &[&[1.0, 2.0]]).is_err());
        assert!(opt.sgd_step(&mut [&mut p], &[&[1.0, 2.0, 3.0]]).is_err());
        assert!(OptimizerState::<f64>::sgd(0.0).is_err());
    }
}
