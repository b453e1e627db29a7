use crate::autodiff::Tensor;
use crate::networks::NetworkParams;

use super::TrainError;

/// Bias-corrected Adam over the tensors of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &NetworkParams, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    /// Applies one update. Gradients must be finite; on failure nothing is modified.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &[Tensor], iteration: usize) -> Result<(), TrainError> {
        let role = params.role();
        let tensors = params.tensors_mut();
        if grads.len() != tensors.len() || grads.iter().zip(&tensors).any(|(g, p)| g.shape() != p.shape()) {
            return Err(TrainError::GradientShape { network: role });
        }
        if let Some(bad) = grads.iter().flat_map(|g| g.data()).find(|v| !v.is_finite()) {
            return Err(TrainError::NonFinite {
                network: role,
                iteration,
                detail: format!("gradient value {bad}"),
                last_good: None,
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in tensors.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{Activation, MlpSpec, OutputActivation, Role};

    fn scalar_net(w: f64) -> NetworkParams {
        let spec = MlpSpec::new(vec![1, 1], Activation::Relu, OutputActivation::Identity);
        NetworkParams::from_tensors(
            Role::Generator,
            spec,
            vec![Tensor::matrix(1, 1, vec![w]).unwrap(), Tensor::zeros(vec![1]).unwrap()],
        )
        .unwrap()
    }

    fn grads(w: f64, b: f64) -> Vec<Tensor> {
        vec![Tensor::matrix(1, 1, vec![w]).unwrap(), Tensor::new(vec![1], vec![b]).unwrap()]
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_net(0.3);
        let mut adam = AdamState::new(&p, 0.001, 0.5, 0.9, 1e-8);
        adam.step(&mut p, &grads(1.0, 0.0), 0).unwrap();
        let moved = 0.3 - p.weights()[0].data()[0];
        assert!((moved - 0.001 / (1.0 + 1e-8)).abs() < 1e-15, "{moved}");
        assert_eq!(p.biases()[0].data(), &[0.0]);
    }

    #[test]
    fn zero_gradients_decay_moments_only() {
        let mut p = scalar_net(0.3);
        let mut adam = AdamState::new(&p, 0.001, 0.5, 0.9, 1e-8);
        adam.step(&mut p, &grads(2.0, 0.0), 0).unwrap();
        let before = p.clone();
        let m0 = adam.first_moments()[0][0];
        adam.step(&mut p, &grads(0.0, 0.0), 1).unwrap();
        assert_eq!(adam.first_moments()[0][0], 0.5 * m0);
        // The bias-corrected first moment is still non-zero, so the parameter keeps moving.
        assert_ne!(p, before);

        let mut fresh = scalar_net(0.3);
        let mut adam = AdamState::new(&fresh, 0.001, 0.5, 0.9, 1e-8);
        let snapshot = fresh.clone();
        adam.step(&mut fresh, &grads(0.0, 0.0), 0).unwrap();
        assert_eq!(fresh, snapshot);
    }

    #[test]
    fn nan_gradient_names_network_and_iteration() {
        let mut p = scalar_net(0.3);
        let mut adam = AdamState::new(&p, 0.001, 0.5, 0.9, 1e-8);
        let err = adam.step(&mut p, &grads(f64::NAN, 0.0), 17).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("generator") && msg.contains("17"), "{msg}");
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = scalar_net(0.3);
            let mut adam = AdamState::new(&p, 0.01, 0.5, 0.9, 1e-8);
            for i in 0..50 {
                let g = (i as f64 * 0.37).sin();
                adam.step(&mut p, &grads(g, -g), i).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
