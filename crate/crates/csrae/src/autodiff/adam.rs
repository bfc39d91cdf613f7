use ndarray::Array2;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};

/// Adam with bias correction. Moment buffers are keyed by the store's
/// iteration order, which is stable.
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update over every parameter in the store.
    pub fn step(&mut self, store: &ParamStore) -> Result<()> {
        if store.is_empty() {
            return Err(Error::arg("adam step on empty parameter store"));
        }
        if !store.iter().any(|(_, v)| v.grad_is_set()) {
            return Err(Error::arg(
                "adam step without gradients: call backward first",
            ));
        }
        if self.first.is_empty() {
            for (_, v) in store.iter() {
                let (r, c) = v.shape();
                self.first.push(Array2::zeros((r, c)));
                self.second.push(Array2::zeros((r, c)));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let corr1 = 1.0 - self.beta1.powf(t);
        let corr2 = 1.0 - self.beta2.powf(t);
        for (idx, (_, v)) in store.iter().enumerate() {
            let grad = v.grad().clone();
            let m = &mut self.first[idx];
            let s = &mut self.second[idx];
            *m = &*m * self.beta1 + &grad * (1.0 - self.beta1);
            *s = &*s * self.beta2 + &(&grad * &grad) * (1.0 - self.beta2);
            let m_hat = &*m / corr1;
            let s_hat = &*s / corr2;
            let lr = self.learning_rate;
            let eps = self.epsilon;
            v.update_data(|data| {
                ndarray::Zip::from(data)
                    .and(&m_hat)
                    .and(&s_hat)
                    .for_each(|p, &mh, &sh| *p -= lr * mh / (sh.sqrt() + eps));
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Value;
    use approx::assert_relative_eq;

    #[test]
    fn first_step_magnitude() {
        // at t=1 with constant gradient g, the bias-corrected update is
        // lr * g / (|g| + eps) ~= lr * sign(g)
        let mut store = ParamStore::new();
        let p = store.insert("p", Value::row(&[1.0, -2.0]));
        let loss = p.mul(&Value::row(&[3.0, -0.5])).unwrap().sum();
        loss.backward().unwrap();
        let mut adam = AdamState::new(0.01);
        adam.step(&store).unwrap();
        assert_relative_eq!(p.data()[[0, 0]], 1.0 - 0.01, epsilon = 1e-6);
        assert_relative_eq!(p.data()[[0, 1]], -2.0 + 0.01, epsilon = 1e-6);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = ParamStore::new();
        let p = store.insert("p", Value::row(&[1.5]));
        let q = store.insert("q", Value::row(&[2.5]));
        // loss touches q only; p's gradient is zero
        let loss = q.square().sum();
        loss.backward().unwrap();
        let mut adam = AdamState::new(0.1);
        adam.step(&store).unwrap();
        assert_eq!(p.data()[[0, 0]], 1.5);
        assert!(q.data()[[0, 0]] < 2.5);
    }

    #[test]
    fn step_without_backward_errors() {
        let mut store = ParamStore::new();
        store.insert("p", Value::row(&[1.0]));
        let mut adam = AdamState::new(0.1);
        assert!(adam.step(&store).is_err());
    }

    #[test]
    fn deterministic_trajectories() {
        let run = || {
            let mut store = ParamStore::new();
            let p = store.insert("p", Value::row(&[0.3, -0.7]));
            let mut adam = AdamState::new(0.05);
            for _ in 0..25 {
                store.zero_grads();
                let loss = p.square().sum();
                loss.backward().unwrap();
                adam.step(&store).unwrap();
            }
            let bits = p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            bits
        };
        assert_eq!(run(), run());
    }
}
