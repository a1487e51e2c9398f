//! Adam optimizer with bias correction.

use super::tape::AutodiffError;
use super::tensor::Tensor;

/// Adam state for a fixed list of parameters. Moment buffers persist across
/// steps; the step counter starts at 1 on the first update.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self::with_betas(lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step_count
    }

    /// Apply one update. `grads[i]` must hold the gradient for `params[i]`;
    /// a `None` gradient is an error so silent drift is impossible.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Option<Tensor>],
    ) -> Result<(), AutodiffError> {
        assert_eq!(params.len(), grads.len(), "params/grads length mismatch");
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let grad = grad
                .as_ref()
                .ok_or(AutodiffError::MissingGrad { index: i })?;
            assert_eq!(param.shape, grad.shape, "grad shape mismatch at param {i}");
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for ((pv, &g), (mv, vv)) in param
                .data
                .iter_mut()
                .zip(&grad.data)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * g;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut p = Tensor::new(vec![2], vec![1.0, -2.0]);
        let before = p.clone();
        let mut adam = Adam::new(0.01);
        adam.step(&mut [&mut p], &[Some(Tensor::zeros(&[2]))]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr_in_grad_direction() {
        // bias-corrected first step: m_hat = g, v_hat = g^2, so the update
        // magnitude is lr * |g| / (|g| + eps) ~= lr
        for &g in &[0.3, -1.7, 42.0] {
            let mut p = Tensor::scalar(0.0);
            let mut adam = Adam::new(0.05);
            adam.step(&mut [&mut p], &[Some(Tensor::scalar(g))]).unwrap();
            assert_relative_eq!(p.item(), -0.05 * g.signum(), epsilon = 1e-6);
        }
    }

    #[test]
    fn identical_parameter_sets_stay_identical() {
        let mut a = Tensor::new(vec![3], vec![0.5, -0.5, 2.0]);
        let mut b = a.clone();
        let mut opt_a = Adam::new(0.001);
        let mut opt_b = Adam::new(0.001);
        for step in 0..25 {
            let g = Tensor::new(vec![3], vec![0.1 * step as f64, -0.2, 0.05]);
            opt_a.step(&mut [&mut a], &[Some(g.clone())]).unwrap();
            opt_b.step(&mut [&mut b], &[Some(g)]).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut p = Tensor::scalar(0.0);
        let mut adam = Adam::new(0.01);
        let err = adam.step(&mut [&mut p], &[None]).unwrap_err();
        assert!(matches!(err, AutodiffError::MissingGrad { index: 0 }));
    }
}
