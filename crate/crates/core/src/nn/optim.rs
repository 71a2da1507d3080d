use crate::error::{Error, Result};
use crate::nn::graph::{Gradients, ParamKey};
use crate::nn::network::Network;
use crate::nn::tensor::Tensor;

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(net: &Network, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Tensor> = net.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam {
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Collects the gradients of network `net_id` from `grads`, zero where unused.
    pub fn collect(net: &Network, net_id: usize, grads: &Gradients) -> Vec<Tensor> {
        (0..net.params.len())
            .map(|index| {
                grads
                    .param_grad(ParamKey { net: net_id, index })
                    .unwrap_or_else(|| Tensor::zeros(net.params[index].shape()))
            })
            .collect()
    }

    pub fn update(&mut self, net: &mut Network, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != net.params.len() {
            return Err(Error::Shape("gradient count mismatch".into()));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in net
            .params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                p.data_mut()[i] -= update;
            }
        }
        Ok(())
    }
}
