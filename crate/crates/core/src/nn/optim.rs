//! Parameter update rules and the learning-rate schedule.
//!
//! AdamW applies decoupled weight decay: the decay term scales the parameter
//! directly by `lr * weight_decay` and never enters the moment estimates.
//! Moment buffers live in [`OptimizerState`] aligned index-for-index with the
//! parameter list, so the whole state can be serialized for exact resume.

use crate::error::{Error, Result};
use crate::nn::scalar::{real, Real};
use crate::nn::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    AdamW,
    Sgd,
}

/// Hyperparameters; unused fields are ignored by the other rule
/// (betas/eps by SGD, momentum by AdamW).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub kind: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub momentum: f64,
}

impl OptimizerHyper {
    pub fn adamw(weight_decay: f64) -> Self {
        OptimizerHyper {
            kind: OptimizerKind::AdamW,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            momentum: 0.0,
        }
    }

    pub fn sgd(momentum: f64, weight_decay: f64) -> Self {
        OptimizerHyper {
            kind: OptimizerKind::Sgd,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
            weight_decay,
            momentum,
        }
    }
}

/// Moment buffers plus the shared step counter.
///
/// Buffers are allocated per parameter only where the rule needs them:
/// AdamW keeps first and second moments, SGD keeps a velocity buffer only
/// when momentum is nonzero.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F: Real> {
    pub hyper: OptimizerHyper,
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Real> OptimizerState<F> {
    /// Fresh state with zeroed buffers matching `shapes`.
    pub fn new(hyper: OptimizerHyper, shapes: &[Vec<usize>]) -> Self {
        let needs_m = matches!(hyper.kind, OptimizerKind::AdamW)
            || (matches!(hyper.kind, OptimizerKind::Sgd) && hyper.momentum != 0.0);
        let needs_v = matches!(hyper.kind, OptimizerKind::AdamW);
        let zero = |on: bool| -> Vec<Tensor<F>> {
            if on {
                shapes.iter().map(|s| Tensor::zeros(s.clone())).collect()
            } else {
                Vec::new()
            }
        };
        OptimizerState {
            hyper,
            step: 0,
            m: zero(needs_m),
            v: zero(needs_v),
        }
    }

    /// Applies one update to every trainable parameter with an available
    /// gradient. `params`, `grads`, and `trainable` are parallel slices.
    pub fn step(
        &mut self,
        params: &mut [Tensor<F>],
        grads: &[Option<Tensor<F>>],
        trainable: &[bool],
        lr: f64,
    ) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        if params.len() != grads.len() || params.len() != trainable.len() {
            return Err(Error::shape(
                "optimizer step arity",
                &[params.len()],
                &[grads.len(), trainable.len()],
            ));
        }
        self.step += 1;
        let lr = real::<F>(lr);
        match self.hyper.kind {
            OptimizerKind::AdamW => {
                let b1 = real::<F>(self.hyper.beta1);
                let b2 = real::<F>(self.hyper.beta2);
                let eps = real::<F>(self.hyper.eps);
                let wd = real::<F>(self.hyper.weight_decay);
                // Bias correction from the shared step counter.
                let c1 = F::ONE / real::<F>(1.0 - self.hyper.beta1.powi(self.step as i32));
                let c2 = F::ONE / real::<F>(1.0 - self.hyper.beta2.powi(self.step as i32));
                for i in 0..params.len() {
                    if !trainable[i] {
                        continue;
                    }
                    let Some(grad) = &grads[i] else { continue };
                    let p = params[i].data_mut();
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    for ((pv, gv), (mv, vv)) in
                        p.iter_mut().zip(grad.data()).zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        *mv = b1 * *mv + (F::ONE - b1) * *gv;
                        *vv = b2 * *vv + (F::ONE - b2) * *gv * *gv;
                        let m_hat = *mv * c1;
                        let v_hat = *vv * c2;
                        *pv -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *pv);
                    }
                }
            }
            OptimizerKind::Sgd => {
                let mu = real::<F>(self.hyper.momentum);
                let wd = real::<F>(self.hyper.weight_decay);
                for i in 0..params.len() {
                    if !trainable[i] {
                        continue;
                    }
                    let Some(grad) = &grads[i] else { continue };
                    let p = params[i].data_mut();
                    if self.hyper.momentum != 0.0 {
                        let m = self.m[i].data_mut();
                        for ((pv, gv), mv) in p.iter_mut().zip(grad.data()).zip(m.iter_mut()) {
                            let g = *gv + wd * *pv;
                            *mv = mu * *mv + g;
                            *pv -= lr * *mv;
                        }
                    } else {
                        for (pv, gv) in p.iter_mut().zip(grad.data()) {
                            let g = *gv + wd * *pv;
                            *pv -= lr * g;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Converts buffers to another precision (used by checkpoint io).
    pub fn convert<G: Real>(&self) -> OptimizerState<G> {
        OptimizerState {
            hyper: self.hyper,
            step: self.step,
            m: self.m.iter().map(|t| t.convert()).collect(),
            v: self.v.iter().map(|t| t.convert()).collect(),
        }
    }
}

/// Learning-rate schedules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    Cosine,
}

/// Half-cosine decay from `base_lr` to `min_lr` over `total_steps`.
/// Steps at or past the end hold at `min_lr`.
pub fn cosine_lr(step: u64, total_steps: u64, base_lr: f64, min_lr: f64) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("cosine_lr: total_steps must be positive".into()));
    }
    if step >= total_steps {
        return Ok(min_lr);
    }
    let phase = std::f64::consts::PI * step as f64 / total_steps as f64;
    Ok(min_lr + 0.5 * (base_lr - min_lr) * (1.0 + phase.cos()))
}

/// Resolves the learning rate for a step under a schedule.
pub fn lr_at(schedule: Schedule, step: u64, total_steps: u64, base_lr: f64, min_lr: f64) -> Result<f64> {
    match schedule {
        Schedule::Constant => Ok(base_lr),
        Schedule::Cosine => cosine_lr(step, total_steps, base_lr, min_lr),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::scalar(v)]
    }

    fn scalar_grad(g: f64) -> Vec<Option<Tensor<f64>>> {
        vec![Some(Tensor::scalar(g))]
    }

    #[test]
    fn sgd_plain_step_matches_hand_arithmetic() {
        // theta = 1.0, grad = 0.5, lr = 0.1 -> 1.0 - 0.1 * 0.5 = 0.95
        let mut params = scalar_param(1.0);
        let mut st = OptimizerState::new(OptimizerHyper::sgd(0.0, 0.0), &[vec![]]);
        st.step(&mut params, &scalar_grad(0.5), &[true], 0.1).unwrap();
        assert!((params[0].item() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_momentum_accumulates_velocity() {
        // v1 = 0.5 -> theta1 = 1 - 0.1*0.5 = 0.95
        // v2 = 0.9*0.5 + 0.5 = 0.95 -> theta2 = 0.95 - 0.1*0.95 = 0.855
        let mut params = scalar_param(1.0);
        let mut st = OptimizerState::new(OptimizerHyper::sgd(0.9, 0.0), &[vec![]]);
        st.step(&mut params, &scalar_grad(0.5), &[true], 0.1).unwrap();
        st.step(&mut params, &scalar_grad(0.5), &[true], 0.1).unwrap();
        assert!((params[0].item() - 0.855).abs() < 1e-12);
    }

    #[test]
    fn adamw_zero_grad_zero_decay_leaves_param_unchanged() {
        let mut params = scalar_param(0.7);
        let mut st = OptimizerState::new(OptimizerHyper::adamw(0.0), &[vec![]]);
        st.step(&mut params, &scalar_grad(0.0), &[true], 0.05).unwrap();
        assert_eq!(params[0].item(), 0.7);
    }

    #[test]
    fn adamw_two_steps_match_scalar_trace() {
        // Independent re-derivation of the update rule with plain scalars.
        let (lr, b1, b2, eps, wd) = (0.1, 0.9, 0.999, 1e-8, 0.01);
        let (g1, g2) = (0.5, 0.25);
        let mut theta = 1.0f64;
        let mut m = 0.0f64;
        let mut v = 0.0f64;
        for (t, g) in [(1, g1), (2, g2)] {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t));
            let v_hat = v / (1.0 - b2.powi(t));
            theta -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta);
        }

        let mut params = scalar_param(1.0);
        let mut st = OptimizerState::new(OptimizerHyper::adamw(wd), &[vec![]]);
        st.step(&mut params, &scalar_grad(g1), &[true], lr).unwrap();
        st.step(&mut params, &scalar_grad(g2), &[true], lr).unwrap();
        assert!(
            (params[0].item() - theta).abs() < 1e-12,
            "{} vs {}",
            params[0].item(),
            theta
        );
    }

    #[test]
    fn frozen_params_are_untouched_even_with_weight_decay() {
        let mut params = vec![Tensor::scalar(1.0), Tensor::scalar(2.0)];
        let grads = vec![Some(Tensor::scalar(0.5)), Some(Tensor::scalar(0.5))];
        let mut st = OptimizerState::new(OptimizerHyper::adamw(0.1), &[vec![], vec![]]);
        st.step(&mut params, &grads, &[true, false], 0.1).unwrap();
        assert_ne!(params[0].item(), 1.0);
        assert_eq!(params[1].item(), 2.0);
    }

    #[test]
    fn nonpositive_lr_is_rejected() {
        let mut params = scalar_param(1.0);
        let mut st = OptimizerState::new(OptimizerHyper::adamw(0.0), &[vec![]]);
        let err = st.step(&mut params, &scalar_grad(0.1), &[true], 0.0).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn sgd_without_momentum_allocates_no_buffers() {
        let st = OptimizerState::<f32>::new(OptimizerHyper::sgd(0.0, 0.0), &[vec![3, 3]]);
        assert!(st.m.is_empty() && st.v.is_empty());
        let st = OptimizerState::<f32>::new(OptimizerHyper::sgd(0.9, 0.0), &[vec![3, 3]]);
        assert_eq!(st.m.len(), 1);
        assert!(st.v.is_empty());
        let st = OptimizerState::<f32>::new(OptimizerHyper::adamw(0.0), &[vec![3, 3]]);
        assert_eq!(st.m.len(), 1);
        assert_eq!(st.v.len(), 1);
        assert_eq!(st.m[0].shape(), &[3, 3]);
    }

    #[test]
    fn cosine_schedule_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 100, 1e-4, 0.0).unwrap(), 1e-4);
        let mid = cosine_lr(50, 100, 1e-4, 0.0).unwrap();
        assert!((mid - 5e-5).abs() < 1e-18, "{mid}");
        let end = cosine_lr(100, 100, 1e-4, 0.0).unwrap();
        assert_eq!(end, 0.0);
        assert_eq!(cosine_lr(250, 100, 1e-4, 1e-6).unwrap(), 1e-6);
    }

    #[test]
    fn cosine_rejects_zero_total() {
        assert!(matches!(cosine_lr(0, 0, 1e-4, 0.0), Err(Error::Config(_))));
    }

    #[test]
    fn cosine_respects_min_lr_floor() {
        let lr = cosine_lr(99, 100, 1e-3, 1e-5).unwrap();
        assert!(lr >= 1e-5);
        assert!(lr < 1e-3);
    }
}
