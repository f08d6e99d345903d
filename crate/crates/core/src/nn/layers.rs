//! Parameterised building blocks that register their weights in a `ParamSet`.

use super::graph::{Bound, Graph, Var};
use super::params::{Init, ParamId, ParamSet};
use super::Tensor;
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

/// Options for `Conv2d::new`.
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub bias: bool,
}

impl ConvSpec {
    pub fn square(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel: (kernel, kernel),
            stride: (stride, stride),
            pad: (pad, pad),
            bias: true,
        }
    }

    pub fn no_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel.0 * self.kernel.1
    }
}

impl Conv2d {
    pub fn new(ps: &mut ParamSet, name: &str, spec: ConvSpec, init: Init, rng: &mut Rng) -> Self {
        let weight = ps.add(
            format!("{name}.weight"),
            &[spec.out_ch, spec.in_ch, spec.kernel.0, spec.kernel.1],
            init,
            rng,
        );
        let bias = spec.bias.then(|| {
            let binit = match init {
                Init::FanInUniform(f) => Init::FanInUniform(f),
                _ => Init::Zeros,
            };
            ps.add(format!("{name}.bias"), &[spec.out_ch], binit, rng)
        });
        Self {
            weight,
            bias,
            stride: spec.stride,
            pad: spec.pad,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.conv2d(
            x,
            p.var(self.weight),
            self.bias.map(|b| p.var(b)),
            self.stride,
            self.pad,
        )
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(ps: &mut ParamSet, name: &str, fin: usize, fout: usize, init: Init, rng: &mut Rng) -> Self {
        let weight = ps.add(format!("{name}.weight"), &[fout, fin], init, rng);
        let binit = match init {
            Init::FanInUniform(f) => Init::FanInUniform(f),
            _ => Init::Zeros,
        };
        let bias = ps.add(format!("{name}.bias"), &[fout], binit, rng);
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.linear(x, p.var(self.weight), Some(p.var(self.bias)))
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm2d {
    pub fn new(ps: &mut ParamSet, name: &str, ch: usize, eps: f64, rng: &mut Rng) -> Self {
        Self {
            gamma: ps.add(format!("{name}.weight"), &[ch], Init::Constant(1.0), rng),
            beta: ps.add(format!("{name}.bias"), &[ch], Init::Zeros, rng),
            running_mean: ps.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[ch])),
            running_var: ps.add_buffer(format!("{name}.running_var"), Tensor::full(&[ch], 1.0)),
            momentum: 0.1,
            eps,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        g.batch_norm(
            x,
            p.var(self.gamma),
            p.var(self.beta),
            (
                self.running_mean,
                p.var(self.running_mean),
                self.running_var,
                p.var(self.running_var),
            ),
            self.momentum,
            self.eps,
        )
    }
}

/// Applies queued running-statistic updates after a training forward pass.
pub fn apply_buffer_updates(ps: &mut ParamSet, updates: Vec<(ParamId, Tensor)>) {
    for (id, t) in updates {
        *ps.get_mut(id) = t;
    }
}
