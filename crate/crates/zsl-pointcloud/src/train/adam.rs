//! Adam optimizer over named parameter tensors.

use ndarray::{ArrayD, NdFloat};

use crate::encoder::ParameterSet;

use super::TrainError;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First/second moment estimates, one pair per learnable tensor.
#[derive(Debug, Clone)]
pub struct AdamState<F> {
    names: Vec<String>,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
    step: usize,
}

impl<F: NdFloat> AdamState<F> {
    pub fn new(params: &ParameterSet<F>) -> Self {
        let mut names = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, tensor) in params.learnable() {
            names.push(name.to_string());
            m.push(ArrayD::zeros(tensor.raw_dim()));
            v.push(ArrayD::zeros(tensor.raw_dim()));
        }
        AdamState { names, m, v, step: 0 }
    }

    pub fn step_index(&self) -> usize {
        self.step
    }
}

/// One Adam update with bias correction. `grads` must hold exactly the
/// learnable tensors of `params` (the shape `zeros_like_learnable` builds).
pub fn adam_step<F: NdFloat>(
    params: &mut ParameterSet<F>,
    grads: &ParameterSet<F>,
    state: &mut AdamState<F>,
    learning_rate: f64,
) -> Result<(), TrainError> {
    state.step += 1;
    let t = state.step as i32;
    let beta1 = F::from(BETA1).unwrap();
    let beta2 = F::from(BETA2).unwrap();
    let one = F::one();
    let eps = F::from(EPS).unwrap();
    let lr = F::from(learning_rate).unwrap();
    let bias1 = one - beta1.powi(t);
    let bias2 = one - beta2.powi(t);

    for (slot, (name, tensor)) in params.learnable_mut().enumerate() {
        debug_assert_eq!(state.names[slot], name);
        let grad = grads.get(name);
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        ndarray::Zip::from(tensor)
            .and(m)
            .and(v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = beta1 * *m + (one - beta1) * g;
                *v = beta2 * *v + (one - beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    if let Some(name) = params.first_non_finite() {
        return Err(TrainError::NonFiniteUpdate { name: name.to_string() });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn scalar_set(value: f64) -> ParameterSet<f64> {
        let mut p = ParameterSet::empty();
        p.insert("x", ArrayD::from_elem(IxDyn(&[1]), value), true);
        p
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = scalar_set(1.5);
        let grads = params.zeros_like_learnable();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.001).unwrap();
        assert_eq!(params.get("x")[0], 1.5);
    }

    #[test]
    fn first_step_magnitude_equals_learning_rate() {
        // Scalar 1.0, gradient 1.0, lr 1e-3: bias-corrected first step is
        // lr * g / (|g| + eps), so the parameter lands at 0.999.
        let mut params = scalar_set(1.0);
        let mut grads = params.zeros_like_learnable();
        grads.accumulate("x", &ArrayD::from_elem(IxDyn(&[1]), 1.0));
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.001).unwrap();
        assert!((params.get("x")[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn identical_runs_are_bitwise_identical() {
        let run = || {
            let mut params = scalar_set(0.7);
            let mut state = AdamState::new(&params);
            for i in 0..25 {
                let mut grads = params.zeros_like_learnable();
                grads.accumulate("x", &ArrayD::from_elem(IxDyn(&[1]), (i as f64 * 0.37).sin()));
                adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
            }
            params.get("x")[0]
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn non_finite_update_reports_parameter() {
        let mut params = scalar_set(1.0);
        let mut grads = params.zeros_like_learnable();
        grads.accumulate("x", &ArrayD::from_elem(IxDyn(&[1]), f64::INFINITY));
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &grads, &mut state, 0.001).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteUpdate { name } if name == "x"));
    }
}
