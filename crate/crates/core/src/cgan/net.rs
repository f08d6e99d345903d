use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, ConvSpec, Graph, Init, Network, ParamSet, Signature, Var};
use crate::rng::Rng;

const INIT: Init = Init::Normal(0.02);
const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Instance,
    None,
}

fn maybe_norm(g: &mut Graph, x: Var, norm: Norm) -> Var {
    let (_, _, h, w) = g.value(x).dims4();
    match norm {
        Norm::Instance if h * w > 1 => g.instance_norm(x, NORM_EPS),
        _ => x,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub image_size: usize,
    pub depth: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub norm: Norm,
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config("u-net depth and channel counts must be >= 1".into()));
        }
        let step = 1usize
            .checked_shl(self.depth as u32)
            .ok_or_else(|| Error::Config(format!("u-net depth {} too large", self.depth)))?;
        if self.image_size == 0 || !self.image_size.is_multiple_of(step) {
            return Err(Error::Config(format!(
                "image size {} is not a multiple of 2^depth = {step}",
                self.image_size
            )));
        }
        Ok(())
    }

    fn channels(&self, level: usize) -> usize {
        (self.base_channels << level.min(20)).min(self.max_channels.max(self.base_channels))
    }
}

/// Encoder-decoder generator with skip connections. Downsampling uses strided
/// 4x4 convolutions; every upsampling stage is a bilinear 2x resize followed
/// by a 3x3 convolution. Output passes through `(tanh + 1) / 2`.
#[derive(Clone, Debug)]
pub struct UNetGenerator {
    cfg: UNetConfig,
    params: ParamSet,
    down: Vec<Conv2d>,
    up: Vec<Conv2d>,
}

impl UNetGenerator {
    pub fn new(cfg: UNetConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let d = cfg.depth;
        let down = (0..d)
            .map(|i| {
                let cin = if i == 0 { cfg.in_channels } else { cfg.channels(i - 1) };
                Conv2d::new(
                    &mut params,
                    &format!("down{i}"),
                    ConvSpec::square(cin, cfg.channels(i), 4, 2, 1),
                    INIT,
                    rng,
                )
            })
            .collect();
        // up[j] handles level i = d - 1 - j
        let up = (0..d)
            .rev()
            .map(|i| {
                let cin = if i == d - 1 {
                    cfg.channels(d - 1)
                } else {
                    2 * cfg.channels(i)
                };
                let cout = if i == 0 { cfg.out_channels } else { cfg.channels(i - 1) };
                Conv2d::new(
                    &mut params,
                    &format!("up{i}"),
                    ConvSpec::square(cin, cout, 3, 1, 1),
                    INIT,
                    rng,
                )
            })
            .collect();
        Ok(Self { cfg, params, down, up })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }
}

impl Network for UNetGenerator {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn signature(&self) -> Signature {
        let s = self.cfg.image_size;
        Signature {
            input: vec![self.cfg.in_channels, s, s],
            output: vec![self.cfg.out_channels, s, s],
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let d = self.cfg.depth;
        let mut skips = Vec::with_capacity(d);
        let mut h = x;
        for (i, conv) in self.down.iter().enumerate() {
            h = conv.forward(g, p, h);
            if i > 0 && i + 1 < d {
                h = maybe_norm(g, h, self.cfg.norm);
            }
            h = g.leaky_relu(h, 0.2);
            skips.push(h);
        }
        for (j, conv) in self.up.iter().enumerate() {
            let level = d - 1 - j;
            let u = g.upsample2x(h);
            let y = conv.forward(g, p, u);
            if level == 0 {
                let t = g.tanh(y);
                return g.affine(t, 0.5, 0.5);
            }
            let y = maybe_norm(g, y, self.cfg.norm);
            let y = g.relu(y);
            h = g.concat(&[y, skips[level - 1]]);
        }
        unreachable!("depth >= 1 always reaches level 0")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub in_channels: usize,
    pub image_size: usize,
    pub base_channels: usize,
    /// Number of stride-2 layers; 3 gives the 70x70 patch.
    pub layers: usize,
    pub norm: Norm,
}

/// Patch discriminator: a fully convolutional stack of 4x4 convolutions whose
/// output is a grid of per-patch realness scores.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    cfg: PatchConfig,
    params: ParamSet,
    convs: Vec<Conv2d>,
    grid: (usize, usize),
}

impl PatchDiscriminator {
    pub fn new(cfg: PatchConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.layers == 0 || cfg.base_channels == 0 || cfg.in_channels == 0 {
            return Err(Error::Config("patch discriminator needs >= 1 layer and channel".into()));
        }
        let mut params = ParamSet::new();
        let nf = |i: usize| cfg.base_channels * (1usize << i.min(3));
        let mut specs = vec![ConvSpec::square(cfg.in_channels, nf(0), 4, 2, 1)];
        for i in 1..cfg.layers {
            specs.push(ConvSpec::square(nf(i - 1), nf(i), 4, 2, 1));
        }
        specs.push(ConvSpec::square(nf(cfg.layers - 1), nf(cfg.layers), 4, 1, 1));
        specs.push(ConvSpec::square(nf(cfg.layers), 1, 4, 1, 1));

        let mut side = cfg.image_size;
        for s in &specs {
            if side + 2 * s.pad.0 < s.kernel.0 {
                return Err(Error::Config(format!(
                    "image size {} too small for a {}-layer patch discriminator",
                    cfg.image_size, cfg.layers
                )));
            }
            side = (side + 2 * s.pad.0 - s.kernel.0) / s.stride.0 + 1;
        }
        if side == 0 || side >= cfg.image_size {
            return Err(Error::Config(format!("degenerate score grid of side {side}")));
        }
        let convs = specs
            .iter()
            .enumerate()
            .map(|(i, s)| Conv2d::new(&mut params, &format!("conv{i}"), *s, INIT, rng))
            .collect();
        Ok(Self {
            cfg,
            params,
            convs,
            grid: (side, side),
        })
    }

    pub fn config(&self) -> &PatchConfig {
        &self.cfg
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    /// Side of the input patch that one output cell sees, from kernel/stride arithmetic.
    pub fn receptive_field(&self) -> usize {
        let kernel_stride: Vec<(usize, usize)> = self
            .convs
            .iter()
            .map(|c| (self.params.get(c.weight).shape()[2], c.stride.0))
            .collect();
        kernel_stride.iter().rev().fold(1, |rf, (k, s)| (rf - 1) * s + k)
    }

    /// Pre-sigmoid score grid `[n, 1, gh, gw]`.
    pub fn logits(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let last = self.convs.len() - 1;
        let mut h = x;
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(g, p, h);
            if i == last {
                break;
            }
            if i > 0 {
                h = maybe_norm(g, h, self.cfg.norm);
            }
            h = g.leaky_relu(h, 0.2);
        }
        h
    }
}

impl Network for PatchDiscriminator {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn signature(&self) -> Signature {
        let s = self.cfg.image_size;
        Signature {
            input: vec![self.cfg.in_channels, s, s],
            output: vec![1, self.grid.0, self.grid.1],
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let l = self.logits(g, p, x);
        g.sigmoid(l)
    }
}
