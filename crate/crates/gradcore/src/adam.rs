//! Adam with bias correction.

use crate::array::Array;
use crate::error::{dim_err, Error, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    config: AdamConfig,
    m: Vec<Array>,
    v: Vec<Array>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros = || params.iter().map(|(_, p)| Array::zeros(p.shape())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Array {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Array {
        &self.v[i]
    }
}

/// One bias-corrected Adam update applied in place.
///
/// `grads[i]` is the gradient of parameter `i` in `params` order. All
/// gradients are validated before anything is modified.
pub fn adam_step(params: &mut ParamSet, grads: &[Array], state: &mut AdamState) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(dim_err(
            "adam_step",
            format!("{} gradients", params.len()),
            format!("{} gradients", grads.len()),
        ));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(dim_err(
                "adam_step",
                format!("{name}: {:?}", p.shape()),
                format!("{:?}", g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient {
                param: name.to_string(),
            });
        }
    }

    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);

    for (i, g) in grads.iter().enumerate() {
        let p = params.value_mut(i);
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
            v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Array::vector(vec![value]));
        p
    }

    #[test]
    fn first_step_unit_gradient() {
        let mut p = single(0.0);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        adam_step(&mut p, &[Array::vector(vec![1.0])], &mut st).unwrap();
        // m̂ = v̂ = 1, so the step is lr / (1 + ε)
        let delta = -p.value(0).data()[0];
        assert!((delta - 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
        assert!((delta - 9.99999995e-4).abs() < 1e-11);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut p = single(0.25);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            adam_step(&mut p, &[Array::vector(vec![0.0])], &mut st).unwrap();
        }
        assert_eq!(p.value(0).data()[0], 0.25);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn two_constant_steps_move_twice_lr() {
        let mut p = single(0.0);
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(cfg, &p);
        for _ in 0..2 {
            adam_step(&mut p, &[Array::vector(vec![1.0])], &mut st).unwrap();
        }
        let moved = -p.value(0).data()[0];
        assert!((moved - 2.0 * cfg.learning_rate).abs() < 1e-6 * cfg.learning_rate);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = single(1.0);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let err = adam_step(&mut p, &[Array::vector(vec![f64::NAN])], &mut st).unwrap_err();
        assert_eq!(
            err,
            Error::NonFiniteGradient {
                param: "w".to_string()
            }
        );
        assert_eq!(p.value(0).data()[0], 1.0);
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn moment_buffers_match_parameter_shapes() {
        let mut p = ParamSet::new();
        p.insert("a", Array::zeros([3, 2]));
        p.insert("b", Array::zeros([4]));
        let st = AdamState::new(AdamConfig::default(), &p);
        assert_eq!(st.first_moment(0).shape(), &[3, 2]);
        assert_eq!(st.second_moment(1).shape(), &[4]);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = single(1.0);
        let mut st = AdamState::new(AdamConfig::default(), &p);
        assert!(adam_step(&mut p, &[Array::zeros([2])], &mut st).is_err());
    }
}
