use rand::Rng;

use crate::error::Result;
use crate::nn::{Gradients, Graph, Init, Network, Tensor, Var};
use crate::translator::config::TranslatorConfig;
use crate::translator::loss::{CycleBatch, DiscOutputs, LossBreakdown};

/// Graph ids of the four networks.
pub const NET_G: usize = 0;
pub const NET_F: usize = 1;
pub const NET_DX: usize = 2;
pub const NET_DY: usize = 3;

/// Generators `G: X -> Y`, `F: Y -> X` and discriminators `D_X`, `D_Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleGan {
    pub g: Network,
    pub f: Network,
    pub d_x: Network,
    pub d_y: Network,
}

/// The recorded generator-side objective of one image pair.
pub struct Objective {
    pub graph: Graph,
    /// Root the generators minimize: the three-term total plus the weighted
    /// identity term when enabled.
    pub root: Var,
    pub breakdown: LossBreakdown,
    pub y_hat: Var,
    pub x_hat: Var,
}

impl CycleGan {
    pub fn new(config: &TranslatorConfig, rng: &mut impl Rng) -> Result<Self> {
        let init = Init::Normal(0.02);
        Ok(CycleGan {
            g: Network::new(config.generator_arch(), init, rng)?,
            f: Network::new(config.generator_arch(), init, rng)?,
            d_x: Network::new(config.discriminator_arch(), init, rng)?,
            d_y: Network::new(config.discriminator_arch(), init, rng)?,
        })
    }

    pub fn nets(&self) -> [&Network; 4] {
        [&self.g, &self.f, &self.d_x, &self.d_y]
    }

    pub fn nets_mut(&mut self) -> [&mut Network; 4] {
        [&mut self.g, &mut self.f, &mut self.d_x, &mut self.d_y]
    }

    /// Records both cycles and the generator-side losses for `x` (domain X)
    /// and `y` (domain Y).
    pub fn objective(&self, x: &Tensor, y: &Tensor, config: &TranslatorConfig) -> Result<Objective> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let yv = g.input(y.clone());
        let y_hat = self.g.forward(&mut g, NET_G, xv)?;
        let x_rec = self.f.forward(&mut g, NET_F, y_hat)?;
        let x_hat = self.f.forward(&mut g, NET_F, yv)?;
        let y_rec = self.g.forward(&mut g, NET_G, x_hat)?;
        let dy_fake = self.d_y.forward(&mut g, NET_DY, y_hat)?;
        let dx_fake = self.d_x.forward(&mut g, NET_DX, x_hat)?;

        let gan_g = g.mean_squared_to(dy_fake, 1.0);
        let gan_f = g.mean_squared_to(dx_fake, 1.0);
        let cyc_x = g.mean_abs_diff(xv, x_rec)?;
        let cyc_y = g.mean_abs_diff(yv, y_rec)?;
        let cyc = g.lin_comb(&[(cyc_x, 1.0), (cyc_y, 1.0)])?;
        let total = g.lin_comb(&[(gan_g, 1.0), (gan_f, 1.0), (cyc, config.lambda_cyc)])?;
        let mut breakdown = LossBreakdown::new(
            g.value(gan_g).item(),
            g.value(gan_f).item(),
            g.value(cyc).item(),
            config.lambda_cyc,
        )?;
        let mut root = total;
        if config.use_identity_loss {
            let id_y = self.g.forward(&mut g, NET_G, yv)?;
            let id_x = self.f.forward(&mut g, NET_F, xv)?;
            let a = g.mean_abs_diff(id_y, yv)?;
            let b = g.mean_abs_diff(id_x, xv)?;
            let identity = g.lin_comb(&[(a, 1.0), (b, 1.0)])?;
            breakdown.identity = Some(g.value(identity).item());
            root = g.lin_comb(&[(total, 1.0), (identity, config.lambda_identity * config.lambda_cyc)])?;
        }
        Ok(Objective {
            graph: g,
            root,
            breakdown,
            y_hat,
            x_hat,
        })
    }

    /// Plain-tensor view of one forward pass, for inspection and tests.
    pub fn cycle(&self, x: &Tensor, y: &Tensor) -> Result<(CycleBatch, DiscOutputs)> {
        let y_hat = self.g.infer(x)?;
        let x_rec = self.f.infer(&y_hat)?;
        let x_hat = self.f.infer(y)?;
        let y_rec = self.g.infer(&x_hat)?;
        let d = DiscOutputs {
            d_y_fake: self.d_y.infer(&y_hat)?,
            d_x_fake: self.d_x.infer(&x_hat)?,
        };
        Ok((
            CycleBatch {
                x: x.clone(),
                y: y.clone(),
                y_hat,
                x_rec,
                x_hat,
                y_rec,
            },
            d,
        ))
    }
}

/// Gradients of every network's parameters from one backward pass, zero
/// where a network took no part.
pub fn all_param_grads(model: &CycleGan, grads: &Gradients) -> [Vec<Tensor>; 4] {
    use crate::nn::Adam;
    [
        Adam::collect(&model.g, NET_G, grads),
        Adam::collect(&model.f, NET_F, grads),
        Adam::collect(&model.d_x, NET_DX, grads),
        Adam::collect(&model.d_y, NET_DY, grads),
    ]
}

/// Discriminator objective `0.5 (mean (D(real) - 1)^2 + mean D(fake)^2)`
/// recorded for network `net_id`.
pub fn discriminator_objective(d: &Network, net_id: usize, real: &Tensor, fake: &Tensor) -> Result<(Graph, Var)> {
    let mut g = Graph::new();
    let r = g.input(real.clone());
    let f = g.input(fake.clone());
    let dr = d.forward(&mut g, net_id, r)?;
    let df = d.forward(&mut g, net_id, f)?;
    let lr = g.mean_squared_to(dr, 1.0);
    let lf = g.mean_squared_to(df, 0.0);
    let root = g.lin_comb(&[(lr, 0.5), (lf, 0.5)])?;
    Ok((g, root))
}


#[cfg(test)]
pub(crate) mod tests_support {
    use crate::nn::Tensor;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Uniform};

    pub(crate) fn random_image(rng: &mut ChaCha8Rng, size: usize) -> Tensor {
        let u = Uniform::new(-1.0, 1.0).unwrap();
        Tensor::from_vec(&[3, size, size], (0..3 * size * size).map(|_| u.sample(rng)).collect()).unwrap()
    }
}
