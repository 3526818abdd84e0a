use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.shape());
        Self {
            config,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} parameter tensors", params.len()),
            format!("{} grads, {} moments", grads.len(), state.m.len()),
        ));
    }
    for ((p, g), (m, v)) in params.iter().zip(grads).zip(state.m.iter().zip(&state.v)) {
        p.check_same_shape(g, "adam_step")?;
        p.check_same_shape(m, "adam_step")?;
        p.check_same_shape(v, "adam_step")?;
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = beta1 * *mi + (1.0 - beta1) * gi;
            *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()];
        let before = params.clone();
        let mut state = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..5 {
            adam_step(&mut params, &[Tensor::zeros(&[3])], &mut state).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(state.step, 5);
    }

    #[test]
    fn first_step_closed_form() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        adam_step(&mut params, &[Tensor::scalar(0.5)], &mut state).unwrap();
        let expected = 1.0 - 1e-4 * (0.5 / (0.5 + 1e-8));
        assert!((params[0].item() - expected).abs() < 1e-15);
        assert_eq!(state.step, 1);
    }

    /// Plain scalar Adam written out independently.
    fn scalar_adam(mut p: f64, g: f64, steps: usize) -> f64 {
        let (lr, b1, b2, eps) = (1e-4, 0.9, 0.999, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        for k in 1..=steps {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - f64::powi(b1, k as i32));
            let vh = v / (1.0 - f64::powi(b2, k as i32));
            p -= lr * mh / (vh.sqrt() + eps);
        }
        p
    }

    #[test]
    fn ten_step_trajectory_matches_scalar_reference() {
        let mut params = vec![Tensor::scalar(0.3)];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        for _ in 0..10 {
            adam_step(&mut params, &[Tensor::scalar(-0.7)], &mut state).unwrap();
        }
        assert!((params[0].item() - scalar_adam(0.3, -0.7, 10)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut params = vec![Tensor::zeros(&[2])];
        let mut state = AdamState::new(AdamConfig::default(), &params);
        let err = adam_step(&mut params, &[Tensor::zeros(&[3])], &mut state);
        assert!(matches!(err, Err(Error::Shape { .. })));
        assert_eq!(state.step, 0);
    }
}
