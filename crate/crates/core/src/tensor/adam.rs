use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 penalty added to the gradient before the moment updates.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Shape {
            op: "adam_step",
            detail: format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), state.m.len()),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Shape {
                op: "adam_step",
                detail: format!("param {k}: {:?} vs grad {:?}", p.shape(), g.shape()),
            });
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            let gi = g.data()[i] + cfg.weight_decay * *x;
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            *x -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![Tensor::vector(vec![0.5, -2.0, 3.0])];
        let before = p.clone();
        let g = vec![Tensor::zeros(&[3])];
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            adam_step(&mut p, &g, &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::vector(vec![1.0, 1.0])];
        let g = vec![Tensor::vector(vec![3.0, -0.2])];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        assert!((p[0].data()[0] - 0.99).abs() < 1e-8);
        assert!((p[0].data()[1] - 1.01).abs() < 1e-7);
    }

    #[test]
    fn minimizes_a_quadratic_bowl() {
        let target = [1.5, -0.5, 2.0];
        let mut p = vec![Tensor::zeros(&[3])];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { lr: 0.05, ..Default::default() };
        for _ in 0..2000 {
            let g: Vec<f64> = p[0].data().iter().zip(target).map(|(x, t)| 2.0 * (x - t)).collect();
            adam_step(&mut p, &[Tensor::vector(g)], &mut st, &cfg).unwrap();
        }
        for (x, t) in p[0].data().iter().zip(target) {
            assert!((x - t).abs() < 1e-3, "{x} vs {t}");
        }
    }

    #[test]
    fn weight_decay_shrinks_toward_zero() {
        let mut p = vec![Tensor::vector(vec![2.0])];
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig { lr: 0.01, weight_decay: 0.1, ..Default::default() };
        adam_step(&mut p, &[Tensor::zeros(&[1])], &mut st, &cfg).unwrap();
        assert!(p[0].data()[0] < 2.0);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &[Tensor::zeros(&[3])], &mut st, &AdamConfig::default());
        assert!(matches!(err, Err(Error::Shape { .. })));
    }
}
