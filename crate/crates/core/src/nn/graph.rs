//! Define-by-run tape. Every op appends a node holding its forward value plus
//! whatever it needs for the backward pass; `backward` walks the tape in
//! reverse and accumulates gradients for every node that requires one.

use rand::Rng as _;

use super::gemm::gemm;
use super::params::{ParamId, ParamSet};
use super::Tensor;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pool {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

enum Value<'p> {
    Owned(Tensor),
    Borrowed(&'p Tensor),
}

impl Value<'_> {
    fn get(&self) -> &Tensor {
        match self {
            Value::Owned(t) => t,
            Value::Borrowed(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: (usize, usize),
        pad: (usize, usize),
        /// im2col buffers per batch item; empty when the weight needs no gradient
        /// or the convolution is a plain 1x1.
        cols: Vec<f64>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Upsample2x {
        x: Var,
    },
    Relu {
        x: Var,
    },
    LeakyRelu {
        x: Var,
        slope: f64,
    },
    Tanh {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    Affine {
        x: Var,
        scale: f64,
    },
    Concat {
        parts: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Reshape {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    AvgPool {
        x: Var,
        pool: Pool,
        include_pad: bool,
    },
    GlobalAvgPool {
        x: Var,
    },
    InstanceNorm {
        x: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
}

struct Node<'p> {
    value: Value<'p>,
    op: Op,
    needs_grad: bool,
}

/// One recorded op, for structural audits of a network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpInfo {
    pub var: Var,
    pub name: &'static str,
    pub inputs: Vec<Var>,
    /// Kernel size for convolutions.
    pub kernel: Option<(usize, usize)>,
}

/// Parameter-to-node binding for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    training: bool,
    grad_enabled: bool,
    rng: Option<Rng>,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients for every parameter of a bound set, indexed by `ParamId`.
    pub fn take_params(&mut self, bound: &Bound) -> Vec<Option<Tensor>> {
        bound.vars.iter().map(|v| self.grads[v.0].take()).collect()
    }
}

impl<'p> Graph<'p> {
    /// Training mode with gradient tracking.
    pub fn train() -> Self {
        Self::with_modes(true, true)
    }

    /// Inference mode, no gradient bookkeeping.
    pub fn eval() -> Self {
        Self::with_modes(false, false)
    }

    pub fn with_modes(training: bool, grad_enabled: bool) -> Self {
        Self {
            nodes: Vec::new(),
            training,
            grad_enabled,
            rng: None,
            buffer_updates: Vec::new(),
        }
    }

    /// Supplies the stream used by dropout.
    pub fn with_rng(mut self, rng: Rng) -> Self {
        self.rng = Some(rng);
        self
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = self.grad_enabled && parents.iter().any(|p| self.needs(*p));
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.leaf(Value::Owned(t), false)
    }

    /// An input whose gradient is wanted after `backward`.
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        let g = self.grad_enabled;
        self.leaf(Value::Owned(t), g)
    }

    fn leaf(&mut self, value: Value<'p>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds every entry of `params` as a leaf; trainable entries track gradients.
    pub fn bind(&mut self, params: &'p ParamSet) -> Bound {
        self.bind_impl(params, true)
    }

    /// Binds `params` without gradient tracking (a frozen network).
    pub fn bind_frozen(&mut self, params: &'p ParamSet) -> Bound {
        self.bind_impl(params, false)
    }

    fn bind_impl(&mut self, params: &'p ParamSet, track: bool) -> Bound {
        let vars = params
            .ids()
            .map(|id| {
                let g = track && self.grad_enabled && params.is_trainable(id);
                self.leaf(Value::Borrowed(params.get(id)), g)
            })
            .collect();
        Bound { vars }
    }

    pub fn trace(&self) -> Vec<OpInfo> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| {
                let (name, inputs, kernel): (&'static str, Vec<Var>, Option<(usize, usize)>) = match &n.op {
                    Op::Leaf => return None,
                    Op::Conv2d { x, w, .. } => {
                        let s = self.value(*w).shape();
                        ("conv2d", vec![*x], Some((s[2], s[3])))
                    }
                    Op::Linear { x, .. } => ("linear", vec![*x], None),
                    Op::Upsample2x { x } => ("upsample_bilinear2x", vec![*x], None),
                    Op::Relu { x } => ("relu", vec![*x], None),
                    Op::LeakyRelu { x, .. } => ("leaky_relu", vec![*x], None),
                    Op::Tanh { x } => ("tanh", vec![*x], None),
                    Op::Sigmoid { x } => ("sigmoid", vec![*x], None),
                    Op::Affine { x, .. } => ("affine", vec![*x], None),
                    Op::Concat { parts } => ("concat", parts.clone(), None),
                    Op::Add { a, b } => ("add", vec![*a, *b], None),
                    Op::Reshape { x } => ("reshape", vec![*x], None),
                    Op::MaxPool { x, .. } => ("max_pool", vec![*x], None),
                    Op::AvgPool { x, .. } => ("avg_pool", vec![*x], None),
                    Op::GlobalAvgPool { x } => ("global_avg_pool", vec![*x], None),
                    Op::InstanceNorm { x, .. } => ("instance_norm", vec![*x], None),
                    Op::BatchNorm { x, .. } => ("batch_norm", vec![*x], None),
                    Op::Dropout { x, .. } => ("dropout", vec![*x], None),
                };
                Some(OpInfo {
                    var: Var(i),
                    name,
                    inputs,
                    kernel,
                })
            })
            .collect()
    }

    // ---------------------------------------------------------------- ops

    /// 2-D cross-correlation; `w` is `[out, in, kh, kw]`, `b` is `[out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: (usize, usize), pad: (usize, usize)) -> Var {
        let (n, ci, h, wd) = self.value(x).dims4();
        let (co, wci, kh, kw) = self.value(w).dims4();
        assert_eq!(ci, wci, "conv2d input channels {ci} vs weight {wci}");
        assert!(
            h + 2 * pad.0 >= kh && wd + 2 * pad.1 >= kw,
            "conv2d kernel larger than padded input"
        );
        let ho = (h + 2 * pad.0 - kh) / stride.0 + 1;
        let wo = (wd + 2 * pad.1 - kw) / stride.1 + 1;
        let kk = ci * kh * kw;
        let hw = ho * wo;
        let pointwise = kh == 1 && kw == 1 && stride == (1, 1) && pad == (0, 0);
        let keep = self.grad_enabled && self.needs(w) && !pointwise;
        let mut out = vec![0.0; n * co * hw];
        let mut cols = vec![
            0.0;
            if pointwise {
                0
            } else if keep {
                n * kk * hw
            } else {
                kk * hw
            }
        ];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            for s in 0..n {
                let xs = &xv[s * ci * h * wd..(s + 1) * ci * h * wd];
                let src: &[f64] = if pointwise {
                    xs
                } else {
                    let off = if keep { s * kk * hw } else { 0 };
                    let buf = &mut cols[off..off + kk * hw];
                    im2col(xs, ci, h, wd, kh, kw, stride, pad, ho, wo, buf);
                    buf
                };
                gemm(
                    co,
                    kk,
                    hw,
                    wv,
                    false,
                    src,
                    false,
                    0.0,
                    &mut out[s * co * hw..(s + 1) * co * hw],
                );
            }
        }
        if let Some(b) = b {
            let bv = self.value(b).data().to_vec();
            for s in 0..n {
                for (c, bias) in bv.iter().enumerate() {
                    for v in &mut out[(s * co + c) * hw..(s * co + c + 1) * hw] {
                        *v += bias;
                    }
                }
            }
        }
        if !keep {
            cols = Vec::new();
        }
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(
            Tensor::from_vec(&[n, co, ho, wo], out).expect("conv shape"),
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            },
            &parents,
        )
    }

    /// `x` is `[n, in]`, `w` is `[out, in]`, `b` is `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (n, fin) = self.value(x).dims2();
        let (fout, win) = self.value(w).dims2();
        assert_eq!(fin, win, "linear input features {fin} vs weight {win}");
        let mut out = vec![0.0; n * fout];
        gemm(
            n,
            fin,
            fout,
            self.value(x).data(),
            false,
            self.value(w).data(),
            true,
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.chunks_mut(fout) {
                for (o, bb) in row.iter_mut().zip(bv) {
                    *o += bb;
                }
            }
        }
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(
            Tensor::from_vec(&[n, fout], out).expect("linear shape"),
            Op::Linear { x, w, b },
            &parents,
        )
    }

    /// Bilinear 2x upsampling with half-pixel centres (no corner alignment).
    pub fn upsample2x(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (ty, tx) = (upsample_taps(h), upsample_taps(w));
        let (oh, ow) = (2 * h, 2 * w);
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                    let bot = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                    dst[oy * ow + ox] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        self.push(
            Tensor::from_vec(&[n, c, oh, ow], out).expect("upsample shape"),
            Op::Upsample2x { x },
            &[x],
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu { x }, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let v = self.value(x).map(|a| if a > 0.0 { a } else { slope * a });
        self.push(v, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        self.push(v, Op::Tanh { x }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid { x }, &[x])
    }

    /// `scale * x + shift` with scalar constants.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let v = self.value(x).map(|a| scale * a + shift);
        self.push(v, Op::Affine { x, scale }, &[x])
    }

    /// Concatenation along the channel axis of 4-D tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let (n, _, h, w) = self.value(parts[0]).dims4();
        let chans: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (pn, pc, ph, pw) = self.value(*p).dims4();
                assert_eq!((pn, ph, pw), (n, h, w), "concat shape mismatch");
                pc
            })
            .collect();
        let total: usize = chans.iter().sum();
        let mut out = Vec::with_capacity(n * total * h * w);
        for s in 0..n {
            for (p, c) in parts.iter().zip(&chans) {
                let d = self.value(*p).data();
                out.extend_from_slice(&d[s * c * h * w..(s + 1) * c * h * w]);
            }
        }
        self.push(
            Tensor::from_vec(&[n, total, h, w], out).expect("concat shape"),
            Op::Concat { parts: parts.to_vec() },
            parts,
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shape mismatch");
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add { a, b }, &[a, b])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).clone().reshape(shape);
        self.push(v, Op::Reshape { x }, &[x])
    }

    /// `[n, ...] -> [n, prod(...)]`
    pub fn flatten(&mut self, x: Var) -> Var {
        let s = self.value(x).shape();
        let n = s[0];
        let rest = s[1..].iter().product::<usize>();
        self.reshape(x, &[n, rest])
    }

    pub fn max_pool(&mut self, x: Var, pool: Pool) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (ho, wo) = pool_out(h, w, pool);
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * ho * wo];
        let mut argmax = vec![0usize; out.len()];
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = usize::MAX;
                    for ky in 0..pool.kernel {
                        let iy = (oy * pool.stride + ky) as isize - pool.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..pool.kernel {
                            let ix = (ox * pool.stride + kx) as isize - pool.pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = base + iy as usize * w + ix as usize;
                            if xv[idx] > best || at == usize::MAX {
                                best = xv[idx];
                                at = idx;
                            }
                        }
                    }
                    let o = (p * ho + oy) * wo + ox;
                    out[o] = best;
                    argmax[o] = at;
                }
            }
        }
        self.push(
            Tensor::from_vec(&[n, c, ho, wo], out).expect("pool shape"),
            Op::MaxPool { x, argmax },
            &[x],
        )
    }

    pub fn avg_pool(&mut self, x: Var, pool: Pool, include_pad: bool) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let (ho, wo) = pool_out(h, w, pool);
        let xv = self.value(x).data();
        let mut out = vec![0.0; n * c * ho * wo];
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let (taps, count) = pool_window(oy, ox, h, w, pool, include_pad);
                    let s: f64 = taps.map(|(iy, ix)| xv[base + iy * w + ix]).sum();
                    out[(p * ho + oy) * wo + ox] = s / count as f64;
                }
            }
        }
        self.push(
            Tensor::from_vec(&[n, c, ho, wo], out).expect("pool shape"),
            Op::AvgPool { x, pool, include_pad },
            &[x],
        )
    }

    /// `[n, c, h, w] -> [n, c]`
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = (h * w) as f64;
        let out = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / hw)
            .collect();
        self.push(
            Tensor::from_vec(&[n, c], out).expect("gap shape"),
            Op::GlobalAvgPool { x },
            &[x],
        )
    }

    /// Per-sample, per-channel normalisation without affine parameters.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let xv = self.value(x).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; n * c];
        for p in 0..n * c {
            let src = &xv[p * hw..(p + 1) * hw];
            let mean = src.iter().sum::<f64>() / hw as f64;
            let var = src.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / hw as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[p] = is;
            for (o, v) in xhat[p * hw..(p + 1) * hw].iter_mut().zip(src) {
                *o = (v - mean) * is;
            }
        }
        let out = Tensor::from_vec(&[n, c, h, w], xhat.clone()).expect("norm shape");
        self.push(out, Op::InstanceNorm { x, xhat, inv_std }, &[x])
    }

    /// Batch normalisation over `(n, h, w)` per channel. In training mode batch
    /// statistics are used and running-stat updates are queued; otherwise the
    /// running statistics are used.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: (ParamId, Var, ParamId, Var),
        momentum: f64,
        eps: f64,
    ) -> Var {
        let (n, c, h, w) = self.value(x).dims4();
        let hw = h * w;
        let m = (n * hw) as f64;
        let (rm_id, rm, rv_id, rv) = running;
        let xv = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        let batch_stats = self.training;
        if batch_stats {
            for ch in 0..c {
                let mut s = 0.0;
                for sidx in 0..n {
                    s += xv[(sidx * c + ch) * hw..(sidx * c + ch + 1) * hw].iter().sum::<f64>();
                }
                mean[ch] = s / m;
                let mut q = 0.0;
                for sidx in 0..n {
                    q += xv[(sidx * c + ch) * hw..(sidx * c + ch + 1) * hw]
                        .iter()
                        .map(|v| (v - mean[ch]).powi(2))
                        .sum::<f64>();
                }
                var[ch] = q / m;
            }
            let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
            let rmv = self.value(rm).data();
            let rvv = self.value(rv).data();
            let new_rm: Vec<f64> = (0..c).map(|i| (1.0 - momentum) * rmv[i] + momentum * mean[i]).collect();
            let new_rv: Vec<f64> = (0..c)
                .map(|i| (1.0 - momentum) * rvv[i] + momentum * var[i] * unbias)
                .collect();
            self.buffer_updates
                .push((rm_id, Tensor::from_vec(&[c], new_rm).expect("c")));
            self.buffer_updates
                .push((rv_id, Tensor::from_vec(&[c], new_rv).expect("c")));
        } else {
            mean.copy_from_slice(self.value(rm).data());
            var.copy_from_slice(self.value(rv).data());
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let xv = self.value(x).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        for sidx in 0..n {
            for ch in 0..c {
                let r = (sidx * c + ch) * hw..(sidx * c + ch + 1) * hw;
                for i in r {
                    let xh = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = g[ch] * xh + b[ch];
                }
            }
        }
        self.push(
            Tensor::from_vec(&[n, c, h, w], out).expect("bn shape"),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            &[x, gamma, beta],
        )
    }

    /// Inverted dropout; identity outside training mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Var {
        if !self.training || p <= 0.0 {
            return x;
        }
        let len = self.value(x).len();
        let rng = self
            .rng
            .as_mut()
            .expect("dropout in training mode needs Graph::with_rng");
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..len)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut v = self.value(x).clone();
        for (a, m) in v.data_mut().iter_mut().zip(&mask) {
            *a *= m;
        }
        self.push(v, Op::Dropout { x, mask }, &[x])
    }

    // ------------------------------------------------------------ backward

    /// Reverse-mode sweep seeded with `d(objective)/d(var)` for each seed.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Grads {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            assert_eq!(self.value(*v).shape(), g.shape(), "seed gradient shape");
            accumulate(&mut grads, *v, g.clone());
            last = last.max(v.0);
        }
        for i in (0..=last).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Grads { grads }
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = self.nodes[i].value.get();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            } => {
                let (n, ci, h, wd) = self.value(*x).dims4();
                let (co, _, kh, kw) = self.value(*w).dims4();
                let (_, _, ho, wo) = out.dims4();
                let (kk, hw) = (ci * kh * kw, ho * wo);
                let gd = g.data();
                let pointwise = kh == 1 && kw == 1 && *stride == (1, 1) && *pad == (0, 0);
                if self.needs(*w) {
                    let mut dw = Tensor::zeros(self.value(*w).shape());
                    let xv = self.value(*x).data();
                    let mut scratch = Vec::new();
                    for s in 0..n {
                        let src: &[f64] = if pointwise {
                            &xv[s * ci * h * wd..(s + 1) * ci * h * wd]
                        } else if !cols.is_empty() {
                            &cols[s * kk * hw..(s + 1) * kk * hw]
                        } else {
                            scratch.resize(kk * hw, 0.0);
                            let xs = &xv[s * ci * h * wd..(s + 1) * ci * h * wd];
                            im2col(xs, ci, h, wd, kh, kw, *stride, *pad, ho, wo, &mut scratch);
                            &scratch
                        };
                        gemm(
                            co,
                            hw,
                            kk,
                            &gd[s * co * hw..(s + 1) * co * hw],
                            false,
                            src,
                            true,
                            1.0,
                            dw.data_mut(),
                        );
                    }
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    let mut db = vec![0.0; co];
                    for s in 0..n {
                        for (c, d) in db.iter_mut().enumerate() {
                            *d += gd[(s * co + c) * hw..(s * co + c + 1) * hw].iter().sum::<f64>();
                        }
                    }
                    accumulate(grads, b, Tensor::from_vec(&[co], db).expect("bias"));
                }
                if self.needs(*x) {
                    let wv = self.value(*w).data();
                    let mut dx = vec![0.0; n * ci * h * wd];
                    let mut dcols = vec![0.0; if pointwise { 0 } else { kk * hw }];
                    for s in 0..n {
                        let gs = &gd[s * co * hw..(s + 1) * co * hw];
                        let dxs = &mut dx[s * ci * h * wd..(s + 1) * ci * h * wd];
                        if pointwise {
                            gemm(kk, co, hw, wv, true, gs, false, 0.0, dxs);
                        } else {
                            gemm(kk, co, hw, wv, true, gs, false, 0.0, &mut dcols);
                            col2im(&dcols, ci, h, wd, kh, kw, *stride, *pad, ho, wo, dxs);
                        }
                    }
                    accumulate(grads, *x, Tensor::from_vec(&[n, ci, h, wd], dx).expect("dx"));
                }
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = self.value(*x).dims2();
                let (fout, _) = self.value(*w).dims2();
                if self.needs(*x) {
                    let mut dx = vec![0.0; n * fin];
                    gemm(
                        n,
                        fout,
                        fin,
                        g.data(),
                        false,
                        self.value(*w).data(),
                        false,
                        0.0,
                        &mut dx,
                    );
                    accumulate(grads, *x, Tensor::from_vec(&[n, fin], dx).expect("dx"));
                }
                if self.needs(*w) {
                    let mut dw = vec![0.0; fout * fin];
                    gemm(fout, n, fin, g.data(), true, self.value(*x).data(), false, 0.0, &mut dw);
                    accumulate(grads, *w, Tensor::from_vec(&[fout, fin], dw).expect("dw"));
                }
                if let Some(b) = b.filter(|b| self.needs(*b)) {
                    let mut db = vec![0.0; fout];
                    for row in g.data().chunks(fout) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    accumulate(grads, b, Tensor::from_vec(&[fout], db).expect("db"));
                }
            }
            Op::Upsample2x { x } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let (ty, tx) = (upsample_taps(h), upsample_taps(w));
                let (oh, ow) = (2 * h, 2 * w);
                let gd = g.data();
                let mut dx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let src = &gd[p * oh * ow..(p + 1) * oh * ow];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
                        for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                            let go = src[oy * ow + ox];
                            dst[y0 * w + x0] += go * (1.0 - ly) * (1.0 - lx);
                            dst[y0 * w + x1] += go * (1.0 - ly) * lx;
                            dst[y1 * w + x0] += go * ly * (1.0 - lx);
                            dst[y1 * w + x1] += go * ly * lx;
                        }
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(&[n, c, h, w], dx).expect("dx"));
            }
            Op::Relu { x } => {
                let d = zip_map(g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 });
                accumulate(grads, *x, d);
            }
            Op::LeakyRelu { x, slope } => {
                let d = zip_map(g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { slope * gv });
                accumulate(grads, *x, d);
            }
            Op::Tanh { x } => {
                let d = zip_map(g, out, |gv, y| gv * (1.0 - y * y));
                accumulate(grads, *x, d);
            }
            Op::Sigmoid { x } => {
                let d = zip_map(g, out, |gv, y| gv * y * (1.0 - y));
                accumulate(grads, *x, d);
            }
            Op::Affine { x, scale } => {
                accumulate(grads, *x, g.map(|v| v * scale));
            }
            Op::Concat { parts } => {
                let (n, total, h, w) = out.dims4();
                let hw = h * w;
                let mut offset = 0;
                for p in parts {
                    let (_, c, _, _) = self.value(*p).dims4();
                    if self.needs(*p) {
                        let mut d = Vec::with_capacity(n * c * hw);
                        for s in 0..n {
                            let start = (s * total + offset) * hw;
                            d.extend_from_slice(&g.data()[start..start + c * hw]);
                        }
                        accumulate(grads, *p, Tensor::from_vec(&[n, c, h, w], d).expect("concat grad"));
                    }
                    offset += c;
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Reshape { x } => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, g.clone().reshape(&shape));
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = Tensor::zeros(self.value(*x).shape());
                let d = dx.data_mut();
                for (gv, at) in g.data().iter().zip(argmax) {
                    d[*at] += gv;
                }
                accumulate(grads, *x, dx);
            }
            Op::AvgPool { x, pool, include_pad } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let (_, _, ho, wo) = out.dims4();
                let mut dx = vec![0.0; n * c * h * w];
                for p in 0..n * c {
                    let base = p * h * w;
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let (taps, count) = pool_window(oy, ox, h, w, *pool, *include_pad);
                            let share = g.data()[(p * ho + oy) * wo + ox] / count as f64;
                            for (iy, ix) in taps {
                                dx[base + iy * w + ix] += share;
                            }
                        }
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(&[n, c, h, w], dx).expect("dx"));
            }
            Op::GlobalAvgPool { x } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let hw = h * w;
                let mut dx = Vec::with_capacity(n * c * hw);
                for gv in g.data() {
                    dx.extend(std::iter::repeat_n(gv / hw as f64, hw));
                }
                accumulate(grads, *x, Tensor::from_vec(&[n, c, h, w], dx).expect("dx"));
            }
            Op::InstanceNorm { x, xhat, inv_std } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let hw = h * w;
                let mut dx = vec![0.0; n * c * hw];
                for p in 0..n * c {
                    let r = p * hw..(p + 1) * hw;
                    norm_backward(&g.data()[r.clone()], &xhat[r.clone()], inv_std[p], &mut dx[r]);
                }
                accumulate(grads, *x, Tensor::from_vec(&[n, c, h, w], dx).expect("dx"));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, h, w) = self.value(*x).dims4();
                let hw = h * w;
                let gd = g.data();
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n {
                    for ch in 0..c {
                        for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                            dgamma[ch] += gd[i] * xhat[i];
                            dbeta[ch] += gd[i];
                        }
                    }
                }
                if self.needs(*x) {
                    let mut dx = vec![0.0; n * c * hw];
                    let m = (n * hw) as f64;
                    for ch in 0..c {
                        if *batch_stats {
                            // mean over the channel of dxhat and dxhat * xhat
                            let (mut s1, mut s2) = (0.0, 0.0);
                            for s in 0..n {
                                for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                                    let dxh = gd[i] * gam[ch];
                                    s1 += dxh;
                                    s2 += dxh * xhat[i];
                                }
                            }
                            let (m1, m2) = (s1 / m, s2 / m);
                            for s in 0..n {
                                for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                                    dx[i] = inv_std[ch] * (gd[i] * gam[ch] - m1 - xhat[i] * m2);
                                }
                            }
                        } else {
                            for s in 0..n {
                                for i in (s * c + ch) * hw..(s * c + ch + 1) * hw {
                                    dx[i] = gd[i] * gam[ch] * inv_std[ch];
                                }
                            }
                        }
                    }
                    accumulate(grads, *x, Tensor::from_vec(&[n, c, h, w], dx).expect("dx"));
                }
                if self.needs(*gamma) {
                    accumulate(grads, *gamma, Tensor::from_vec(&[c], dgamma).expect("dg"));
                }
                if self.needs(*beta) {
                    accumulate(grads, *beta, Tensor::from_vec(&[c], dbeta).expect("db"));
                }
            }
            Op::Dropout { x, mask } => {
                let mut d = g.clone();
                for (a, m) in d.data_mut().iter_mut().zip(mask) {
                    *a *= m;
                }
                accumulate(grads, *x, d);
            }
        }
    }
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn zip_map(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(other.data()).map(|(a, b)| f(*a, *b)).collect();
    Tensor::from_vec(g.shape(), data).expect("same shape")
}

/// dx = inv_std * (dy - mean(dy) - xhat * mean(dy * xhat))
fn norm_backward(dy: &[f64], xhat: &[f64], inv_std: f64, dx: &mut [f64]) {
    let m = dy.len() as f64;
    let m1 = dy.iter().sum::<f64>() / m;
    let m2 = dy.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / m;
    for ((d, g), xh) in dx.iter_mut().zip(dy).zip(xhat) {
        *d = inv_std * (g - m1 - xh * m2);
    }
}

/// Source taps `(i0, i1, frac)` for each output index of a 2x bilinear resize.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let real = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = (real.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, real - i0 as f64)
        })
        .collect()
}

fn pool_out(h: usize, w: usize, p: Pool) -> (usize, usize) {
    assert!(
        h + 2 * p.pad >= p.kernel && w + 2 * p.pad >= p.kernel,
        "pool kernel larger than input"
    );
    (
        (h + 2 * p.pad - p.kernel) / p.stride + 1,
        (w + 2 * p.pad - p.kernel) / p.stride + 1,
    )
}

fn pool_window(
    oy: usize,
    ox: usize,
    h: usize,
    w: usize,
    p: Pool,
    include_pad: bool,
) -> (impl Iterator<Item = (usize, usize)>, usize) {
    let y0 = (oy * p.stride) as isize - p.pad as isize;
    let x0 = (ox * p.stride) as isize - p.pad as isize;
    let ys = y0.max(0) as usize..((y0 + p.kernel as isize).min(h as isize)) as usize;
    let xs = x0.max(0) as usize..((x0 + p.kernel as isize).min(w as isize)) as usize;
    let count = if include_pad {
        // padded cells count, cells beyond the padding do not
        let yl = (y0 + p.kernel as isize).min((h + p.pad) as isize) - y0;
        let xl = (x0 + p.kernel as isize).min((w + p.pad) as isize) - x0;
        (yl * xl) as usize
    } else {
        ys.len() * xs.len()
    };
    let xs2 = xs.clone();
    (ys.flat_map(move |y| xs2.clone().map(move |x| (y, x))), count.max(1))
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    ho: usize,
    wo: usize,
    cols: &mut [f64],
) {
    let hw = ho * wo;
    for c in 0..ci {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((c * kh + ky) * kw + kx) * hw..((c * kh + ky) * kw + kx + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * stride.0 + ky) as isize - pad.0 as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride.1 + kx) as isize - pad.1 as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &[f64],
    ci: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: (usize, usize),
    pad: (usize, usize),
    ho: usize,
    wo: usize,
    x: &mut [f64],
) {
    let hw = ho * wo;
    for c in 0..ci {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((c * kh + ky) * kw + kx) * hw..((c * kh + ky) * kw + kx + 1) * hw];
                for oy in 0..ho {
                    let iy = (oy * stride.0 + ky) as isize - pad.0 as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in row[oy * wo..(oy + 1) * wo].iter().enumerate() {
                        let ix = (ox * stride.1 + kx) as isize - pad.1 as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}
