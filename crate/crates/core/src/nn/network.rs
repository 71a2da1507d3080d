use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::graph::{ConvGeometry, Graph, Padding, ParamKey, Var};
use crate::nn::tensor::Tensor;

/// One layer of a sequential network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        #[serde(default)]
        reflect: bool,
    },
    InstanceNorm,
    Relu,
    LeakyRelu {
        slope: f64,
    },
    Tanh,
    Upsample2x,
    /// `x + IN(conv(relu(IN(conv(x)))))` with reflect-padded 3x3 convolutions.
    Residual {
        channels: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// Zero-mean normal weights with the given standard deviation.
    Normal(f64),
    /// Zero-mean normal weights scaled by `sqrt(2 / fan_in)`.
    He,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub in_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    /// `(weight shape, bias shape)` for every convolution, in parameter order.
    fn conv_shapes(&self) -> Result<Vec<([usize; 4], usize)>> {
        let mut shapes = Vec::new();
        let mut channels = self.in_channels;
        for layer in &self.layers {
            match *layer {
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    ..
                } => {
                    shapes.push(([out_channels, channels, kernel, kernel], out_channels));
                    channels = out_channels;
                }
                LayerSpec::Residual { channels: rc } => {
                    if rc != channels {
                        return Err(Error::Config(format!(
                            "residual block of {rc} channels after {channels}"
                        )));
                    }
                    shapes.push(([rc, rc, 3, 3], rc));
                    shapes.push(([rc, rc, 3, 3], rc));
                }
                _ => {}
            }
        }
        Ok(shapes)
    }

    pub fn out_channels(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match *l {
                LayerSpec::Conv { out_channels, .. } => Some(out_channels),
                LayerSpec::Residual { channels } => Some(channels),
                _ => None,
            })
            .unwrap_or(self.in_channels)
    }
}

/// A sequential network: architecture plus its parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub arch: Architecture,
    pub params: Vec<Tensor>,
}

impl Network {
    pub fn new(arch: Architecture, init: Init, rng: &mut impl Rng) -> Result<Self> {
        let mut params = Vec::new();
        for (wshape, bias) in arch.conv_shapes()? {
            let fan_in = (wshape[1] * wshape[2] * wshape[3]) as f64;
            let std = match init {
                Init::Normal(s) => s,
                Init::He => (2.0 / fan_in).sqrt(),
            };
            let n: usize = wshape.iter().product();
            let data = (0..n).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
            params.push(Tensor::from_vec(&wshape, data)?);
            params.push(Tensor::zeros(&[bias]));
        }
        Ok(Network { arch, params })
    }

    /// Rebuilds a network from stored parameters, checking shapes.
    pub fn from_params(arch: Architecture, params: Vec<Tensor>) -> Result<Self> {
        let expected: Vec<Vec<usize>> = arch
            .conv_shapes()?
            .into_iter()
            .flat_map(|(w, b)| [w.to_vec(), vec![b]])
            .collect();
        let got: Vec<Vec<usize>> = params.iter().map(|t| t.shape().to_vec()).collect();
        if expected != got {
            return Err(Error::Shape(format!(
                "parameter shapes {got:?} do not match architecture {expected:?}"
            )));
        }
        Ok(Network { arch, params })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records the forward pass into `g`, tagging parameters with `net`.
    pub fn forward(&self, g: &mut Graph, net: usize, x: Var) -> Result<Var> {
        let mut slot = 0;
        let param = |g: &mut Graph, slot: &mut usize| {
            let v = g.param(ParamKey { net, index: *slot }, &self.params[*slot]);
            *slot += 1;
            v
        };
        let mut h = x;
        for layer in &self.arch.layers {
            h = match *layer {
                LayerSpec::Conv {
                    stride,
                    pad,
                    reflect,
                    ..
                } => {
                    let w = param(g, &mut slot);
                    let b = param(g, &mut slot);
                    let padding = if reflect { Padding::Reflect } else { Padding::Zero };
                    g.conv2d(h, w, b, ConvGeometry { stride, pad, padding })?
                }
                LayerSpec::InstanceNorm => g.instance_norm(h)?,
                LayerSpec::Relu => g.relu(h),
                LayerSpec::LeakyRelu { slope } => g.leaky_relu(h, slope),
                LayerSpec::Tanh => g.tanh(h),
                LayerSpec::Upsample2x => g.upsample2x(h)?,
                LayerSpec::Residual { .. } => {
                    let geom = ConvGeometry {
                        stride: 1,
                        pad: 1,
                        padding: Padding::Reflect,
                    };
                    let (w1, b1) = (param(g, &mut slot), param(g, &mut slot));
                    let c1 = g.conv2d(h, w1, b1, geom)?;
                    let n1 = g.instance_norm(c1)?;
                    let a1 = g.relu(n1);
                    let (w2, b2) = (param(g, &mut slot), param(g, &mut slot));
                    let c2 = g.conv2d(a1, w2, b2, geom)?;
                    let n2 = g.instance_norm(c2)?;
                    g.add(h, n2)?
                }
            };
        }
        Ok(h)
    }

    /// Forward pass without keeping the graph around.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let input = g.input(x.clone());
        let out = self.forward(&mut g, 0, input)?;
        Ok(g.value(out).clone())
    }
}
