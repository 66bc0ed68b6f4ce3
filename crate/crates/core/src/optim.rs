//! Adam with decoupled weight decay.

use crate::error::{PspError, Result};
use crate::tensor::Tensor;

/// A named trainable value with an optional accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        Param {
            name: name.into(),
            value,
            grad: None,
        }
    }

    pub fn accumulate(&mut self, g: &Tensor) {
        match &mut self.grad {
            Some(acc) => acc.add_assign(g),
            None => self.grad = Some(g.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    /// Defaults: β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One bias-corrected update. Weight decay is applied as `lr·wd·θ`,
    /// separately from the moment estimates. Gradients are cleared afterwards.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
            return Err(PspError::Contract(format!("parameter `{}` has no gradient", p.name)));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(PspError::Contract(format!(
                "optimizer tracks {} parameters, step got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.value.shape() != self.m[i].shape() || p.grad.as_ref().unwrap().shape() != p.value.shape() {
                return Err(PspError::dim("adam_step", p.value.shape(), self.m[i].shape()));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let g = p.grad.take().unwrap();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, (theta, gk)) in p.value.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *theta -= self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * *theta);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`AdamState::step`].
pub fn adam_step(params: &mut [&mut Param], state: &mut AdamState) -> Result<()> {
    state.step(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_grad(v: f64, g: f64) -> Param {
        let mut p = Param::new("p", Tensor::filled(1, 1, v));
        p.grad = Some(Tensor::filled(1, 1, g));
        p
    }

    #[test]
    fn zero_gradient_is_stationary() {
        let mut p = Param::new("w", Tensor::from_rows(&[&[1.0, -2.0], &[0.5, 3.0]]));
        let before = p.value.clone();
        let mut st = AdamState::new(0.1, 0.0);
        for _ in 0..5 {
            p.grad = Some(Tensor::zeros(2, 2));
            st.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.value, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = with_grad(0.0, 1.0);
        let mut st = AdamState::new(0.1, 0.0);
        st.step(&mut [&mut p]).unwrap();
        // m̂ = 1, v̂ = 1 → Δ = 0.1 / (1 + 1e-8)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p.value.get(0, 0) - expected).abs() < 1e-15);
        assert!(p.grad.is_none());
    }

    #[test]
    fn counter_and_missing_grad() {
        let mut p = with_grad(1.0, 0.5);
        let mut st = AdamState::new(0.01, 0.0);
        assert_eq!(st.t, 0);
        st.step(&mut [&mut p]).unwrap();
        p.grad = Some(Tensor::filled(1, 1, 0.5));
        st.step(&mut [&mut p]).unwrap();
        assert_eq!(st.t, 2);
        let err = st.step(&mut [&mut p]).unwrap_err();
        assert!(err.to_string().contains("`p`"));
    }

    #[test]
    fn decoupled_weight_decay() {
        let mut p = with_grad(2.0, 0.0);
        let mut st = AdamState::new(0.1, 0.5);
        st.step(&mut [&mut p]).unwrap();
        assert!((p.value.get(0, 0) - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-15);
    }
}
