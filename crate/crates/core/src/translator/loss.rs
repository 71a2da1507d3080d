use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{mean_abs_diff, mean_squared_to};
use crate::nn::Tensor;

/// One forward pass through both cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleBatch {
    pub x: Tensor,
    pub y: Tensor,
    /// `G(x)`
    pub y_hat: Tensor,
    /// `F(G(x))`
    pub x_rec: Tensor,
    /// `F(y)`
    pub x_hat: Tensor,
    /// `G(F(y))`
    pub y_rec: Tensor,
}

impl CycleBatch {
    pub fn check_shapes(&self) -> Result<()> {
        let s = self.x.shape();
        for t in [&self.y, &self.y_hat, &self.x_rec, &self.x_hat, &self.y_rec] {
            if t.shape() != s {
                return Err(Error::Shape(format!("cycle batch shapes {:?} and {:?}", s, t.shape())));
            }
        }
        Ok(())
    }
}

/// Discriminator outputs on the generated images.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscOutputs {
    /// `D_Y(G(x))`
    pub d_y_fake: Tensor,
    /// `D_X(F(y))`
    pub d_x_fake: Tensor,
}

/// Loss terms of one step. `total` is exactly the three-term objective;
/// the optional identity term is reported beside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub gan_g: f64,
    pub gan_f: f64,
    pub cyc: f64,
    pub total: f64,
    #[serde(default)]
    pub identity: Option<f64>,
}

impl LossBreakdown {
    pub fn new(gan_g: f64, gan_f: f64, cyc: f64, lambda_cyc: f64) -> Result<Self> {
        for (name, v) in [("gan_G", gan_g), ("gan_F", gan_f), ("cyc", cyc)] {
            if !v.is_finite() {
                return Err(Error::NonFinite { component: name.into() });
            }
        }
        Ok(LossBreakdown {
            gan_g,
            gan_f,
            cyc,
            total: gan_g + gan_f + lambda_cyc * cyc,
            identity: None,
        })
    }
}

/// Forward plus backward cycle-consistency: mean absolute error of both
/// reconstructions.
pub fn cycle_loss(batch: &CycleBatch) -> f64 {
    mean_abs_diff(batch.x.data(), batch.x_rec.data()) + mean_abs_diff(batch.y.data(), batch.y_rec.data())
}

/// Least-squares adversarial loss against target 1 (real) or 0 (fake).
pub fn adversarial_loss(disc_out: &Tensor, target_is_real: bool) -> f64 {
    mean_squared_to(disc_out.data(), if target_is_real { 1.0 } else { 0.0 })
}

/// Generator-side objective: both generators try to make their discriminator
/// call the fakes real.
pub fn total_loss(batch: &CycleBatch, d: &DiscOutputs, lambda_cyc: f64) -> Result<LossBreakdown> {
    batch.check_shapes()?;
    LossBreakdown::new(
        adversarial_loss(&d.d_y_fake, true),
        adversarial_loss(&d.d_x_fake, true),
        cycle_loss(batch),
        lambda_cyc,
    )
}

/// Discriminator-side objective for one discriminator.
pub fn discriminator_loss(real_out: &Tensor, fake_out: &Tensor) -> f64 {
    0.5 * (adversarial_loss(real_out, true) + adversarial_loss(fake_out, false))
}
