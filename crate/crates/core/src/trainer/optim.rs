//! Adam with bias correction and a constant learning rate.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new<'a>(cfg: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(Tensor::zeros_like).collect();
        Self {
            cfg,
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter from its gradient, in matching order.
    pub fn update<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>, grads: &[&Tensor]) -> Result<()> {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        let mut count = 0;
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if !p.same_shape(g) || !p.same_shape(m) {
                return Err(dim_err("adam", p.shape(), g.shape()));
            }
            for (((x, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
            }
            count += 1;
        }
        if count != self.m.len() || grads.len() != self.m.len() {
            return Err(dim_err("adam", &[count], &[self.m.len()]));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::from_rows(&[vec![1.0, -2.0]]).unwrap()];
        let g = Tensor::from_rows(&[vec![0.5, -3.0]]).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.update(p.iter_mut(), &[&g]).unwrap();
        // bias-corrected first step is lr·sign(g), up to eps
        assert!((p[0].get(0, 0) - (1.0 - 1e-3)).abs() < 1e-10);
        assert!((p[0].get(0, 1) - (-2.0 + 1e-3)).abs() < 1e-10);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![Tensor::from_rows(&[vec![3.0]]).unwrap()];
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            &p,
        );
        for _ in 0..2000 {
            let g = p[0].scale(2.0);
            opt.update(p.iter_mut(), &[&g]).unwrap();
        }
        assert!(p[0].get(0, 0).abs() < 1e-3);
    }

    #[test]
    fn count_mismatch_rejected() {
        let mut p = vec![Tensor::zeros(1, 1), Tensor::zeros(1, 1)];
        let mut opt = Adam::new(AdamConfig::default(), &p);
        let g = Tensor::zeros(1, 1);
        assert!(opt.update(p.iter_mut(), &[&g]).is_err());
    }
}
