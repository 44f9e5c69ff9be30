use serde::{Deserialize, Serialize};

use super::{NumericError, ParamStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer with bias correction.
///
/// Moment buffers are allocated lazily and mirror the parameter shapes.
/// Frozen parameters are skipped.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Option<Tensor>>,
    second: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients stored in `params`. Gradients
    /// are left in place.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<(), NumericError> {
        for id in params.ids() {
            if params.is_trainable(id) && params.grad(id).is_none() {
                return Err(NumericError::MissingGrad {
                    name: params.name(id).to_string(),
                });
            }
        }
        self.first.resize(params.len(), None);
        self.second.resize(params.len(), None);
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, id) in params.ids().enumerate() {
            if !params.is_trainable(id) {
                continue;
            }
            let g = params.grad(id).expect("checked above").clone();
            let m = self.first[k].get_or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let v = self.second[k].get_or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            let value = params.value_mut(id);
            for (((w, &gi), mi), vi) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tape;

    fn store_with(values: &[f64]) -> ParamStore {
        let mut store = ParamStore::new();
        store
            .add("w", Tensor::row_vector(values.to_vec()).unwrap(), true)
            .unwrap();
        store
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = store_with(&[0.3, -1.2]);
        let id = store.id("w").unwrap();
        store.accumulate(&[Some(Tensor::zeros(1, 2))], 1.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store).unwrap();
        assert_eq!(store.value(id).data(), &[0.3, -1.2]);
    }

    #[test]
    fn first_step_moves_by_learning_rate_against_gradient_sign() {
        let mut store = store_with(&[1.0, 1.0, 1.0]);
        let id = store.id("w").unwrap();
        store.accumulate(&[Some(Tensor::row_vector(vec![0.5, -3.0, 1e-3]).unwrap())], 1.0);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut store).unwrap();
        let expected = [1.0 - 1e-3, 1.0 + 1e-3, 1.0 - 1e-3];
        for (got, want) in store.value(id).data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut store = store_with(&[1.0]);
        let mut adam = Adam::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut store), Err(NumericError::MissingGrad { .. })));
    }

    #[test]
    fn gradients_are_left_for_the_caller() {
        let mut store = store_with(&[1.0]);
        let id = store.id("w").unwrap();
        store.accumulate(&[Some(Tensor::scalar(2.0))], 1.0);
        Adam::new(AdamConfig::default()).step(&mut store).unwrap();
        assert_eq!(store.grad(id).unwrap().data(), &[2.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        // f(w) = w², w₀ = 1, lr = 0.1, 200 steps, gradients from the tape.
        let mut store = store_with(&[1.0]);
        let id = store.id("w").unwrap();
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        });
        for _ in 0..200 {
            store.zero_grads();
            let tape = Tape::new();
            let bound = store.bind(&tape);
            let w = bound[id];
            let loss = w.mul(w).unwrap().sum().unwrap();
            let mut grads = tape.backward(loss).unwrap();
            let g = store.collect_grads(&bound, &mut grads);
            store.accumulate(&g, 1.0);
            adam.step(&mut store).unwrap();
        }
        let w = store.value(id).data()[0];
        assert!(w.abs() < 0.1, "w = {w}");
    }
}
