use crate::error::{Error, Result};
use crate::tensor::Tensor;

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
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments. Moment buffers are created lazily on
/// the first step and must keep the same parameter layout afterwards.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = &'a mut Tensor>,
        grads: &[Tensor],
    ) -> Result<()> {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != grads.len() {
            return Err(Error::shape("adam", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len()
            || self.m.iter().zip(grads).any(|(m, g)| m.shape() != g.shape())
        {
            return Err(Error::Contract("adam: parameter layout changed".into()));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
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

/// Plain gradient descent.
#[derive(Clone, Copy, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Sgd {
    pub fn step<'a>(
        &self,
        params: impl IntoIterator<Item = &'a mut Tensor>,
        grads: &[Tensor],
    ) -> Result<()> {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != grads.len() {
            return Err(Error::shape("sgd", &[params.len()], &[grads.len()]));
        }
        for (p, g) in params.into_iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::shape("sgd", p.shape(), g.shape()));
            }
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= self.lr * gv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_bias_corrected() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut adam = Adam::new(AdamConfig {
            lr: 0.1,
            ..Default::default()
        });
        adam.step(p.iter_mut(), &[Tensor::scalar(1.0)]).unwrap();
        assert!((p[0].data()[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = vec![Tensor::scalar(0.5)];
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(p.iter_mut(), &[Tensor::scalar(2.0)]).unwrap();
        let after_first = p[0].data()[0];
        let (m1, v1) = (adam.first_moments()[0].data()[0], adam.second_moments()[0].data()[0]);
        // with m > 0 a zero gradient still moves p; isolate the moment decay
        let mut q = vec![Tensor::scalar(0.5)];
        let mut fresh = Adam::new(AdamConfig::default());
        fresh.step(q.iter_mut(), &[Tensor::scalar(0.0)]).unwrap();
        assert_eq!(q[0].data()[0], 0.5);

        adam.step(p.iter_mut(), &[Tensor::scalar(0.0)]).unwrap();
        assert!(p[0].data()[0] < after_first);
        assert!((adam.first_moments()[0].data()[0] - 0.9 * m1).abs() < 1e-15);
        assert!((adam.second_moments()[0].data()[0] - 0.999 * v1).abs() < 1e-15);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![Tensor::from_vec(vec![3], vec![0.1, -0.2, 0.3]).unwrap()];
            let mut adam = Adam::new(AdamConfig::default());
            let g = [Tensor::from_vec(vec![3], vec![0.5, 1.5, -2.0]).unwrap()];
            adam.step(p.iter_mut(), &g).unwrap();
            adam.step(p.iter_mut(), &g).unwrap();
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::zeros(&[2])];
        let mut adam = Adam::new(AdamConfig::default());
        assert!(adam.step(p.iter_mut(), &[Tensor::zeros(&[3])]).is_err());
        assert!(Sgd { lr: 0.1 }.step(p.iter_mut(), &[Tensor::zeros(&[3])]).is_err());
    }

    #[test]
    fn sgd_step() {
        let mut p = vec![Tensor::scalar(1.0)];
        Sgd { lr: 0.5 }.step(p.iter_mut(), &[Tensor::scalar(2.0)]).unwrap();
        assert_eq!(p[0].data()[0], 0.0);
    }
}
