use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Architecture, LayerSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    /// Weight of the cycle-consistency term.
    pub lambda_cyc: f64,
    pub base_lr: f64,
    pub constant_epochs: usize,
    pub decay_epochs: usize,
    /// Square working resolution; must be a multiple of 4.
    pub image_size: u32,
    /// Fake-image history size; 0 hands the discriminators the current fake.
    pub pool_size: usize,
    pub seed: u64,
    pub use_identity_loss: bool,
    /// Identity weight relative to `lambda_cyc`.
    pub lambda_identity: f64,
    pub batch_size: usize,
    /// Steps per epoch; `None` means one per WLI frame in the pair index.
    pub iterations_per_epoch: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    /// Generator base width.
    pub ngf: usize,
    /// Discriminator base width.
    pub ndf: usize,
    pub n_residual: usize,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        TranslatorConfig {
            lambda_cyc: 10.0,
            base_lr: 2e-4,
            constant_epochs: 100,
            decay_epochs: 0,
            image_size: 512,
            pool_size: 50,
            seed: 0,
            use_identity_loss: false,
            lambda_identity: 0.5,
            batch_size: 1,
            iterations_per_epoch: None,
            beta1: 0.5,
            beta2: 0.999,
            ngf: 64,
            ndf: 64,
            n_residual: 9,
        }
    }
}

impl TranslatorConfig {
    /// Desk-scale preset: 1/8 width, two residual blocks.
    pub fn tiny(image_size: u32) -> Self {
        TranslatorConfig {
            image_size,
            ngf: 8,
            ndf: 8,
            n_residual: 2,
            ..TranslatorConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lambda_cyc > 0.0) {
            return bad(format!("lambda_cyc must be > 0, got {}", self.lambda_cyc));
        }
        if !(self.base_lr > 0.0) {
            return bad(format!("base_lr must be > 0, got {}", self.base_lr));
        }
        if self.image_size == 0 || self.image_size % 4 != 0 {
            return bad(format!("image_size must be a positive multiple of 4, got {}", self.image_size));
        }
        if self.constant_epochs + self.decay_epochs == 0 {
            return bad("schedule has no epochs".into());
        }
        if self.batch_size == 0 || self.ngf == 0 || self.ndf == 0 {
            return bad("batch_size, ngf and ndf must be positive".into());
        }
        if self.iterations_per_epoch == Some(0) {
            return bad("iterations_per_epoch must be positive".into());
        }
        if !(self.lambda_identity >= 0.0) {
            return bad(format!("lambda_identity must be >= 0, got {}", self.lambda_identity));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.constant_epochs + self.decay_epochs
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TranslatorConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Residual encoder-decoder: 7x7 stem, two stride-2 downsamplings,
    /// residual blocks, two upsample+conv stages, 7x7 head with tanh.
    pub fn generator_arch(&self) -> Architecture {
        let n = self.ngf;
        let conv = |out_channels, kernel, stride, pad, reflect| LayerSpec::Conv {
            out_channels,
            kernel,
            stride,
            pad,
            reflect,
        };
        let mut layers = vec![
            conv(n, 7, 1, 3, true),
            LayerSpec::InstanceNorm,
            LayerSpec::Relu,
            conv(2 * n, 3, 2, 1, false),
            LayerSpec::InstanceNorm,
            LayerSpec::Relu,
            conv(4 * n, 3, 2, 1, false),
            LayerSpec::InstanceNorm,
            LayerSpec::Relu,
        ];
        layers.extend((0..self.n_residual).map(|_| LayerSpec::Residual { channels: 4 * n }));
        for out in [2 * n, n] {
            layers.extend([
                LayerSpec::Upsample2x,
                conv(out, 3, 1, 1, true),
                LayerSpec::InstanceNorm,
                LayerSpec::Relu,
            ]);
        }
        layers.extend([conv(3, 7, 1, 3, true), LayerSpec::Tanh]);
        Architecture { in_channels: 3, layers }
    }

    /// Patch discriminator producing a spatial realness map.
    pub fn discriminator_arch(&self) -> Architecture {
        let n = self.ndf;
        let conv = |out_channels, stride| LayerSpec::Conv {
            out_channels,
            kernel: 4,
            stride,
            pad: 1,
            reflect: false,
        };
        let leaky = LayerSpec::LeakyRelu { slope: 0.2 };
        Architecture {
            in_channels: 3,
            layers: vec![
                conv(n, 2),
                leaky.clone(),
                conv(2 * n, 2),
                LayerSpec::InstanceNorm,
                leaky.clone(),
                conv(4 * n, 1),
                LayerSpec::InstanceNorm,
                leaky,
                conv(1, 1),
            ],
        }
    }
}

/// Learning rate for a zero-based epoch: constant for `constant_epochs`,
/// then linear decay reaching 0 at the final epoch.
pub fn lr_at_epoch(config: &TranslatorConfig, epoch: usize) -> Result<f64> {
    let total = config.total_epochs();
    if epoch >= total {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside schedule of {total} epochs"
        )));
    }
    if epoch < config.constant_epochs {
        return Ok(config.base_lr);
    }
    let done = (epoch - config.constant_epochs + 1) as f64;
    Ok(config.base_lr * (1.0 - done / config.decay_epochs as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(constant: usize, decay: usize) -> TranslatorConfig {
        TranslatorConfig {
            constant_epochs: constant,
            decay_epochs: decay,
            ..TranslatorConfig::default()
        }
    }

    #[test]
    fn lr_endpoints() {
        let c = schedule(100, 0);
        for e in 0..100 {
            assert_eq!(lr_at_epoch(&c, e).unwrap(), 0.0002);
        }
        assert!(lr_at_epoch(&c, 100).is_err());
        let c = schedule(30, 30);
        assert_eq!(lr_at_epoch(&c, 29).unwrap(), 0.0002);
        assert_eq!(lr_at_epoch(&c, 59).unwrap(), 0.0);
        assert!(lr_at_epoch(&c, 60).is_err());
    }

    #[test]
    fn lr_decays_linearly_and_monotonically() {
        let c = schedule(2, 4);
        let lrs: Vec<f64> = (0..6).map(|e| lr_at_epoch(&c, e).unwrap()).collect();
        for (got, want) in lrs.iter().zip([2e-4, 2e-4, 1.5e-4, 1e-4, 0.5e-4, 0.0]) {
            assert!((got - want).abs() < 1e-18, "{got} vs {want}");
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let c = TranslatorConfig::tiny(32);
        let back: TranslatorConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        let partial: TranslatorConfig = toml::from_str("lambda_cyc = 5.0\nimage_size = 64").unwrap();
        assert_eq!(partial.lambda_cyc, 5.0);
        assert_eq!(partial.pool_size, 50);
        assert!(toml::from_str::<TranslatorConfig>("lambda = 1").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        for c in [
            TranslatorConfig { lambda_cyc: 0.0, ..Default::default() },
            TranslatorConfig { base_lr: -1.0, ..Default::default() },
            TranslatorConfig { image_size: 30, ..Default::default() },
            TranslatorConfig { constant_epochs: 0, ..Default::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
