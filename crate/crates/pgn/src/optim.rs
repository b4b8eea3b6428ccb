//! RMSprop and SGD-with-momentum parameter updates.

use serde::{Deserialize, Serialize};

use crate::error::{PgnError, Result};
use crate::scalar::Scalar;
use crate::tensor::TensorData;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OptimizerKind {
    RmsProp { lr: f64, rho: f64, eps: f64 },
    SgdMomentum { lr: f64, momentum: f64 },
}

impl OptimizerKind {
    /// RMSprop with the defaults used for generator training.
    pub fn rmsprop(lr: f64) -> Self {
        OptimizerKind::RmsProp { lr, rho: 0.9, eps: 1e-8 }
    }

    pub fn sgd_momentum(lr: f64, momentum: f64) -> Self {
        OptimizerKind::SgdMomentum { lr, momentum }
    }
}

/// Per-parameter accumulators: RMSprop mean-square or SGD velocity.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Scalar> {
    pub kind: OptimizerKind,
    pub accum: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, params: &[&TensorData<T>]) -> Self {
        OptimizerState {
            kind,
            accum: params.iter().map(|p| vec![T::ZERO; p.len()]).collect(),
        }
    }

    /// Apply one update. `params` and `grads` must mirror the construction
    /// order; shapes are checked.
    pub fn step(&mut self, params: &mut [&mut TensorData<T>], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != self.accum.len() || grads.len() != self.accum.len() {
            return Err(PgnError::Contract(format!(
                "optimizer step arity mismatch: {} params, {} grads, {} accumulators",
                params.len(),
                grads.len(),
                self.accum.len()
            )));
        }
        for ((p, g), a) in params.iter_mut().zip(grads).zip(&mut self.accum) {
            if p.len() != g.len() || p.len() != a.len() {
                return Err(PgnError::Contract("optimizer shape mismatch".into()));
            }
            match self.kind {
                OptimizerKind::RmsProp { lr, rho, eps } => {
                    let rho = T::from_f64(rho);
                    let one_m_rho = T::ONE - rho;
                    let lr = T::from_f64(lr);
                    let eps = T::from_f64(eps);
                    for ((pv, &gv), av) in p.data.iter_mut().zip(g).zip(a.iter_mut()) {
                        *av = rho * *av + one_m_rho * gv * gv;
                        *pv -= lr * gv / (*av + eps).sqrt();
                    }
                }
                OptimizerKind::SgdMomentum { lr, momentum } => {
                    let mu = T::from_f64(momentum);
                    let lr = T::from_f64(lr);
                    for ((pv, &gv), av) in p.data.iter_mut().zip(g).zip(a.iter_mut()) {
                        *av = mu * *av - lr * gv;
                        *pv += *av;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> TensorData<f64> {
        TensorData::scalar(v)
    }

    #[test]
    fn zero_grad_rmsprop_leaves_params() {
        let mut p = one_param(1.5);
        let mut st = OptimizerState::new(OptimizerKind::rmsprop(0.001), &[&p]);
        st.step(&mut [&mut p], &[vec![0.0]]).unwrap();
        assert_eq!(p.data[0], 1.5);
    }

    #[test]
    fn zero_grad_sgd_decays_velocity() {
        let mut p = one_param(1.0);
        let mut st = OptimizerState::new(OptimizerKind::sgd_momentum(0.01, 0.5), &[&p]);
        st.step(&mut [&mut p], &[vec![1.0]]).unwrap();
        let v1 = st.accum[0][0];
        assert!((v1 - (-0.01)).abs() < 1e-15);
        st.step(&mut [&mut p], &[vec![0.0]]).unwrap();
        assert!((st.accum[0][0] - 0.5 * v1).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_first_step_magnitude() {
        // a_0 = 0: θ ← θ − lr·g/sqrt((1−ρ)g² + ε) ≈ θ − lr·sign(g)/sqrt(1−ρ)
        let g = 2.0;
        let mut p = one_param(0.0);
        let mut st = OptimizerState::new(OptimizerKind::rmsprop(0.001), &[&p]);
        st.step(&mut [&mut p], &[vec![g]]).unwrap();
        let want = -0.001 * g / (0.1 * g * g + 1e-8_f64).sqrt();
        assert!((p.data[0] - want).abs() < 1e-15);
        assert!((p.data[0] - (-0.001 / 0.1_f64.sqrt())).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_three_step_scalar_trace() {
        let grads = [1.0, -0.5, 0.25];
        let (lr, rho, eps) = (0.001, 0.9, 1e-8);
        let mut p = one_param(0.3);
        let mut st = OptimizerState::new(OptimizerKind::RmsProp { lr, rho, eps }, &[&p]);
        // hand recurrence
        let mut theta = 0.3;
        let mut a = 0.0;
        for &g in &grads {
            a = rho * a + (1.0 - rho) * g * g;
            theta -= lr * g / (a + eps).sqrt();
            st.step(&mut [&mut p], &[vec![g]]).unwrap();
            assert!((p.data[0] - theta).abs() < 1e-15);
        }
    }

    #[test]
    fn sgd_momentum_three_step_scalar_trace() {
        let grads = [1.0, 1.0, -2.0];
        let (lr, mu) = (0.01, 0.5);
        let mut p = one_param(0.0);
        let mut st = OptimizerState::new(OptimizerKind::sgd_momentum(lr, mu), &[&p]);
        let mut theta = 0.0;
        let mut v = 0.0;
        for &g in &grads {
            v = mu * v - lr * g;
            theta += v;
            st.step(&mut [&mut p], &[vec![g]]).unwrap();
            assert!((p.data[0] - theta).abs() < 1e-15);
        }
    }

    #[test]
    fn step_is_deterministic() {
        let run = || {
            let mut p = TensorData::new(vec![3], vec![0.1, -0.2, 0.3]).unwrap();
            let mut st = OptimizerState::new(OptimizerKind::rmsprop(0.001), &[&p]);
            for i in 0..10 {
                let g = vec![0.1 * i as f64, -0.3, 0.05];
                st.step(&mut [&mut p], &[g]).unwrap();
            }
            p.data
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn arity_mismatch_is_error() {
        let mut p = one_param(0.0);
        let mut st = OptimizerState::new(OptimizerKind::rmsprop(0.001), &[&p]);
        assert!(st.step(&mut [&mut p], &[]).is_err());
    }
}
