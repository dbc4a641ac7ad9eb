//! Adam with bias-corrected moment estimates.

use super::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
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

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    /// Zeroed moments shaped like `params`.
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        let zeros = |p: &Tensor| Tensor::zeros(p.shape());
        Self {
            config,
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.v[i]
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(TensorError::invalid(
                "adam_step",
                format!(
                    "{} parameters, {} gradients, state for {}",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != m.shape() || g.len() != p.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: if g.len() != p.len() {
                        vec![g.len()]
                    } else {
                        m.shape().to_vec()
                    },
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        for g in [1e-3, 0.7, -42.0] {
            let mut p = vec![Tensor::scalar(1.0)];
            let mut opt = Adam::new(
                AdamConfig {
                    lr: 0.01,
                    ..Default::default()
                },
                &p,
            );
            opt.step(&mut p, &[vec![g]]).unwrap();
            let delta = p[0].data()[0] - 1.0;
            assert!((delta + 0.01 * g.signum()).abs() < 1e-6, "g={g} delta={delta}");
        }
    }

    #[test]
    fn zero_gradient_keeps_params() {
        let mut p = vec![Tensor::vector(vec![0.3, -0.2])];
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &[vec![0.5, 0.5]]).unwrap();
        let before = p[0].clone();
        let m_before = opt.first_moment(0).clone();
        opt.step(&mut p, &[vec![0.0, 0.0]]).unwrap();
        // m decays, v decays, but a previously non-zero m still moves p;
        // with a fresh optimizer a zero gradient leaves p exactly unchanged.
        assert_ne!(opt.first_moment(0), &m_before);
        let mut fresh = Adam::new(AdamConfig::default(), std::slice::from_ref(&before));
        let mut q = vec![before.clone()];
        fresh.step(&mut q, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(q[0], before);
        assert_eq!(fresh.steps(), 1);
    }

    #[test]
    fn quadratic_descends() {
        // f(w) = w², grad 2w
        let mut p = vec![Tensor::scalar(1.0)];
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..Default::default()
            },
            &p,
        );
        let mut last = 1.0f64;
        for _ in 0..3 {
            let g = 2.0 * p[0].data()[0];
            opt.step(&mut p, &[vec![g]]).unwrap();
            let w = p[0].data()[0];
            assert!(w.abs() < last.abs());
            last = w;
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::zeros(&[2, 2])];
        let mut opt = Adam::new(AdamConfig::default(), &p);
        assert!(opt.step(&mut p, &[vec![0.0; 3]]).is_err());
        assert!(opt.step(&mut p, &[]).is_err());
    }
}
