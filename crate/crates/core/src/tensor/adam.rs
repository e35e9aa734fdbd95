use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::DenseMatrix;

/// Adam hyperparameters with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<DenseMatrix>,
    pub v: Vec<DenseMatrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[&DenseMatrix]) -> Self {
        let zeros: Vec<_> = params.iter().map(|p| DenseMatrix::zeros(p.rows(), p.cols())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One AdamW update.
///
/// Weight decay is applied directly to the parameters (`p -= lr·wd·p`) before
/// the bias-corrected moment step, independent of the gradient.
pub fn adam_step(
    params: &mut [&mut DenseMatrix],
    grads: &[&DenseMatrix],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "{} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Shape(format!(
                "param {i} is {:?}, grad {:?}, moments {:?}",
                p.shape(),
                g.shape(),
                state.m[i].shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        for (k, &gk) in g.data().iter().enumerate() {
            let mk = &mut m.data_mut()[k];
            *mk = cfg.beta1 * *mk + (1.0 - cfg.beta1) * gk;
            let mk = *mk;
            let vk = &mut v.data_mut()[k];
            *vk = cfg.beta2 * *vk + (1.0 - cfg.beta2) * gk * gk;
            let vk = *vk;
            if cfg.weight_decay != 0.0 {
                pd[k] *= decay;
            }
            pd[k] -= cfg.lr * (mk / bc1) / ((vk / bc2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = DenseMatrix::filled(2, 2, 0.7);
        let g = DenseMatrix::zeros(2, 2);
        let mut state = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[&g], &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(p, DenseMatrix::filled(2, 2, 0.7));
    }

    #[test]
    fn first_step_moves_by_lr() {
        // At t = 1: m̂ = g, v̂ = g², so the step is lr·g/(|g| + eps) ≈ lr.
        let mut p = DenseMatrix::filled(1, 1, 1.0);
        let g = DenseMatrix::filled(1, 1, 1.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[&g], &mut state, &cfg).unwrap();
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.get(0, 0) - expected).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut p = DenseMatrix::filled(1, 1, 2.0);
        let g = DenseMatrix::zeros(1, 1);
        let cfg = AdamConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(&[&p]);
        adam_step(&mut [&mut p], &[&g], &mut state, &cfg).unwrap();
        assert!((p.get(0, 0) - 2.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn deterministic_runs() {
        let run = || {
            let mut p = DenseMatrix::from_rows(&[vec![0.3, -0.2], vec![1.0, 0.5]]).unwrap();
            let mut state = AdamState::new(&[&p]);
            for step in 0..5 {
                let g = p.scale(0.5 + step as f64);
                adam_step(&mut [&mut p], &[&g], &mut state, &AdamConfig::default()).unwrap();
            }
            (p, state)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch() {
        let mut p = DenseMatrix::zeros(2, 2);
        let g = DenseMatrix::zeros(2, 3);
        let mut state = AdamState::new(&[&p]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut state, &AdamConfig::default()).is_err());
    }
}
