use serde::{Deserialize, Serialize};

use crate::cgan::Norm;
use crate::error::{Error, Result};
use crate::nn::{Bound, Conv2d, ConvSpec, Graph, Init, Linear, Network, ParamSet, Signature, Var};
use crate::rng::Rng;

const MIN_GEN_CHANNELS: usize = 16;

/// Number of 2x stages from `base` to `size`, if `size = base * 2^k`.
fn doublings(base: usize, size: usize) -> Option<usize> {
    if base == 0 || !size.is_multiple_of(base) {
        return None;
    }
    let r = size / base;
    r.is_power_of_two().then(|| r.trailing_zeros() as usize)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseGenConfig {
    pub latent_dim: usize,
    pub image_size: usize,
    /// Side of the grid the latent vector is projected onto.
    pub base_grid: usize,
    /// Channels on the base grid; halved after each upsampling stage.
    pub channels: usize,
    pub out_channels: usize,
    pub norm: Norm,
}

/// Latent vector -> dense projection onto a small grid -> repeated
/// (bilinear 2x, 3x3 conv) stages -> 3x3 conv -> sigmoid.
#[derive(Clone, Debug)]
pub struct NoiseGenerator {
    cfg: NoiseGenConfig,
    params: ParamSet,
    project: Linear,
    stages: Vec<Conv2d>,
    head: Conv2d,
}

impl NoiseGenerator {
    pub fn new(cfg: NoiseGenConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.latent_dim == 0 || cfg.channels == 0 || cfg.out_channels == 0 {
            return Err(Error::Config("latent_dim and channel counts must be >= 1".into()));
        }
        let k = doublings(cfg.base_grid, cfg.image_size).ok_or_else(|| {
            Error::Config(format!(
                "image size {} is not base grid {} times a power of two",
                cfg.image_size, cfg.base_grid
            ))
        })?;
        let mut params = ParamSet::new();
        let g2 = cfg.base_grid * cfg.base_grid;
        let project = Linear::new(
            &mut params,
            "project",
            cfg.latent_dim,
            cfg.channels * g2,
            Init::FanInUniform(cfg.latent_dim),
            rng,
        );
        let ch = |i: usize| (cfg.channels >> i.min(30)).max(MIN_GEN_CHANNELS.min(cfg.channels));
        let stages = (0..k)
            .map(|i| {
                let spec = ConvSpec::square(ch(i), ch(i + 1), 3, 1, 1);
                Conv2d::new(
                    &mut params,
                    &format!("up{i}"),
                    spec,
                    Init::FanInUniform(spec.fan_in()),
                    rng,
                )
            })
            .collect();
        let spec = ConvSpec::square(ch(k), cfg.out_channels, 3, 1, 1);
        let head = Conv2d::new(&mut params, "head", spec, Init::FanInUniform(spec.fan_in()), rng);
        Ok(Self {
            cfg,
            params,
            project,
            stages,
            head,
        })
    }

    pub fn config(&self) -> &NoiseGenConfig {
        &self.cfg
    }

    fn norm(&self, g: &mut Graph, x: Var) -> Var {
        match self.cfg.norm {
            Norm::Instance => g.instance_norm(x, 1e-5),
            Norm::None => x,
        }
    }
}

impl Network for NoiseGenerator {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn signature(&self) -> Signature {
        let s = self.cfg.image_size;
        Signature {
            input: vec![self.cfg.latent_dim],
            output: vec![self.cfg.out_channels, s, s],
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, z: Var) -> Var {
        let n = g.value(z).shape()[0];
        let b = self.cfg.base_grid;
        let h = self.project.forward(g, p, z);
        let h = g.reshape(h, &[n, self.cfg.channels, b, b]);
        let h = self.norm(g, h);
        let mut h = g.leaky_relu(h, 0.2);
        for conv in &self.stages {
            let u = g.upsample2x(h);
            let y = conv.forward(g, p, u);
            let y = self.norm(g, y);
            h = g.leaky_relu(y, 0.2);
        }
        let y = self.head.forward(g, p, h);
        g.sigmoid(y)
    }
}
