//! AdamW with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{s, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamWState<T: Scalar> {
    pub config: AdamWConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    /// Per-parameter switch for weight decay.
    decay: Vec<bool>,
    step: u64,
}

impl<T: Scalar> AdamWState<T> {
    /// Zero moments for parameters of the given shapes; decay applies to all.
    pub fn new(config: AdamWConfig, shapes: &[&[usize]]) -> Self {
        Self {
            config,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            decay: vec![true; shapes.len()],
            step: 0,
        }
    }

    pub fn with_decay_mask(mut self, decay: Vec<bool>) -> Self {
        assert_eq!(decay.len(), self.m.len());
        self.decay = decay;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every parameter. Fails on shape mismatch before
    /// touching anything, and on non-finite results afterwards.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(
                "adamw_step",
                format!(
                    "{} params, {} grads, state for {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::shape(
                    "adamw_step",
                    format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as f64;
        let (b1, b2): (T, T) = (s(c.beta1), s(c.beta2));
        let bc1: T = s(1.0 - c.beta1.powf(t));
        let bc2: T = s(1.0 - c.beta2.powf(t));
        let lr: T = s(c.lr);
        let eps: T = s(c.eps);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let wd: T = if self.decay[i] { s(c.weight_decay) } else { T::zero() };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * wd * *pv + lr * m_hat / (v_hat.sqrt() + eps);
            }
            if !p.is_finite() {
                return Err(Error::NonFinite("adamw_step"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            weight_decay: wd,
            eps: 1e-12,
            ..AdamWConfig::default()
        }
    }

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        let mut p = Tensor::<f64>::from_f64(&[3], &[1., -2., 0.5]).unwrap();
        let before = p.clone();
        let mut st = AdamWState::new(cfg(0.1, 0.0), &[&[3]]);
        st.step(&mut [&mut p], &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::<f64>::from_f64(&[2, 2], &[1., -2., 0.5, 3.]).unwrap();
        let before = p.clone();
        let mut st = AdamWState::new(cfg(0.01, 0.0), &[&[2, 2]]);
        st.step(&mut [&mut p], &[Tensor::ones(&[2, 2])]).unwrap();
        for (a, b) in p.data().iter().zip(before.data()) {
            assert!((a - b + 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn decoupled_decay_shrinks_params() {
        let mut p = Tensor::<f64>::from_f64(&[2], &[2., -4.]).unwrap();
        let mut st = AdamWState::new(cfg(0.1, 0.5), &[&[2]]);
        st.step(&mut [&mut p], &[Tensor::zeros(&[2])]).unwrap();
        assert!((p.data()[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
        assert!((p.data()[1] - (-4.0 + 0.1 * 0.5 * 4.0)).abs() < 1e-12);

        let mut q = Tensor::<f64>::from_f64(&[2], &[2., -4.]).unwrap();
        let mut st = AdamWState::new(cfg(0.1, 0.5), &[&[2]]).with_decay_mask(vec![false]);
        st.step(&mut [&mut q], &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(q.data(), &[2., -4.]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        let mut st = AdamWState::new(cfg(0.1, 0.0), &[&[2]]);
        assert!(matches!(
            st.step(&mut [&mut p], &[Tensor::zeros(&[3])]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn divergence_is_detected() {
        let mut p = Tensor::<f64>::from_f64(&[1], &[f64::MAX]).unwrap();
        let mut st = AdamWState::new(cfg(-1e300, 1e10), &[&[1]]);
        assert!(matches!(
            st.step(&mut [&mut p], &[Tensor::ones(&[1])]),
            Err(Error::NonFinite(_))
        ));
    }
}
