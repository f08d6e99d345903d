//! Classifier architectures. `SmallCnn` is the desk-scale default; the
//! others follow the standard ImageNet layouts so parameter blobs with the
//! same names can be loaded into them.

use crate::nn::{BatchNorm2d, Bound, Conv2d, ConvSpec, Graph, Init, Linear, Network, ParamSet, Pool, Signature, Var};
use crate::rng::Rng;

fn conv(ps: &mut ParamSet, name: &str, spec: ConvSpec, rng: &mut Rng) -> Conv2d {
    Conv2d::new(ps, name, spec, Init::He(spec.fan_in()), rng)
}

fn linear(ps: &mut ParamSet, name: &str, fin: usize, fout: usize, rng: &mut Rng) -> Linear {
    Linear::new(ps, name, fin, fout, Init::FanInUniform(fin), rng)
}

fn maxpool(k: usize, s: usize, p: usize) -> Pool {
    Pool {
        kernel: k,
        stride: s,
        pad: p,
    }
}

/// Bias-free convolution followed by batch norm and optional ReLU.
#[derive(Clone, Debug)]
struct ConvBn {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new(
        ps: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        k: (usize, usize),
        s: usize,
        p: (usize, usize),
        eps: f64,
        rng: &mut Rng,
    ) -> Self {
        let spec = ConvSpec {
            in_ch: cin,
            out_ch: cout,
            kernel: k,
            stride: (s, s),
            pad: p,
            bias: false,
        };
        Self {
            conv: conv(ps, &format!("{name}.conv"), spec, rng),
            bn: BatchNorm2d::new(ps, &format!("{name}.bn"), cout, eps, rng),
        }
    }

    fn square(
        ps: &mut ParamSet,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        s: usize,
        p: usize,
        rng: &mut Rng,
    ) -> Self {
        Self::new(ps, name, cin, cout, (k, k), s, (p, p), 1e-5, rng)
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var, relu: bool) -> Var {
        let y = self.conv.forward(g, p, x);
        let y = self.bn.forward(g, p, y);
        if relu {
            g.relu(y)
        } else {
            y
        }
    }
}

// ---------------------------------------------------------------- small cnn

/// Three (3x3 conv, ReLU, 2x2 max-pool) blocks, global average pooling and a
/// dense head.
#[derive(Clone, Debug)]
pub struct SmallCnn {
    params: ParamSet,
    convs: Vec<Conv2d>,
    head: Linear,
    input: usize,
    n_classes: usize,
}

impl SmallCnn {
    pub fn new(n_classes: usize, input: usize, width: usize, rng: &mut Rng) -> Self {
        let mut params = ParamSet::new();
        let chans = [3, width, 2 * width, 4 * width];
        let convs = (0..3)
            .map(|i| {
                let spec = ConvSpec::square(chans[i], chans[i + 1], 3, 1, 1);
                conv(&mut params, &format!("block{i}.conv"), spec, rng)
            })
            .collect();
        let head = linear(&mut params, "fc", 4 * width, n_classes, rng);
        Self {
            params,
            convs,
            head,
            input,
            n_classes,
        }
    }
}

impl Network for SmallCnn {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn signature(&self) -> Signature {
        Signature {
            input: vec![3, self.input, self.input],
            output: vec![self.n_classes],
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let mut h = x;
        for c in &self.convs {
            let y = c.forward(g, p, h);
            let y = g.relu(y);
            h = g.max_pool(y, maxpool(2, 2, 0));
        }
        let f = g.global_avg_pool(h);
        self.head.forward(g, p, f)
    }
}

// ---------------------------------------------------------------- resnet

#[derive(Clone, Debug)]
struct Bottleneck {
    c1: ConvBn,
    c2: ConvBn,
    c3: ConvBn,
    down: Option<ConvBn>,
}

impl Bottleneck {
    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let y = self.c1.forward(g, p, x, true);
        let y = self.c2.forward(g, p, y, true);
        let y = self.c3.forward(g, p, y, false);
        let skip = match &self.down {
            Some(d) => d.forward(g, p, x, false),
            None => x,
        };
        let s = g.add(y, skip);
        g.relu(s)
    }
}

/// Bottleneck ResNet; `[3, 8, 36, 3]` blocks gives ResNet-152.
#[derive(Clone, Debug)]
pub struct ResNet {
    params: ParamSet,
    stem: ConvBn,
    blocks: Vec<Bottleneck>,
    fc: Linear,
    input: usize,
    n_classes: usize,
}

impl ResNet {
    pub fn new(layers: [usize; 4], n_classes: usize, input: usize, rng: &mut Rng) -> Self {
        let mut ps = ParamSet::new();
        let stem = ConvBn::square(&mut ps, "stem", 3, 64, 7, 2, 3, rng);
        let mut blocks = Vec::new();
        let mut inplanes = 64;
        for (li, (&n, planes)) in layers.iter().zip([64, 128, 256, 512]).enumerate() {
            for bi in 0..n {
                let stride = if bi == 0 && li > 0 { 2 } else { 1 };
                let name = format!("layer{}.{bi}", li + 1);
                let out = planes * 4;
                let down = (bi == 0)
                    .then(|| ConvBn::square(&mut ps, &format!("{name}.down"), inplanes, out, 1, stride, 0, rng));
                blocks.push(Bottleneck {
                    c1: ConvBn::square(&mut ps, &format!("{name}.c1"), inplanes, planes, 1, 1, 0, rng),
                    c2: ConvBn::square(&mut ps, &format!("{name}.c2"), planes, planes, 3, stride, 1, rng),
                    c3: ConvBn::square(&mut ps, &format!("{name}.c3"), planes, out, 1, 1, 0, rng),
                    down,
                });
                inplanes = out;
            }
        }
        let fc = linear(&mut ps, "fc", 2048, n_classes, rng);
        Self {
            params: ps,
            stem,
            blocks,
            fc,
            input,
            n_classes,
        }
    }
}

impl Network for ResNet {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn signature(&self) -> Signature {
        Signature {
            input: vec![3, self.input, self.input],
            output: vec![self.n_classes],
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.stem.forward(g, p, x, true);
        let mut h = g.max_pool(h, maxpool(3, 2, 1));
        for b in &self.blocks {
            h = b.forward(g, p, h);
        }
        let f = g.global_avg_pool(h);
        self.fc.forward(g, p, f)
    }
}

// ---------------------------------------------------------------- densenet

#[derive(Clone, Debug)]
struct BnReluConv {
    bn: BatchNorm2d,
    conv: Conv2d,
}

impl BnReluConv {
    fn new(ps: &mut ParamSet, name: &str, cin: usize, cout: usize, k: usize, pad: usize, rng: &mut Rng) -> Self {
        Self {
            bn: BatchNorm2d::new(ps, &format!("{name}.bn"), cin, 1e-5, rng),
            conv: conv(
                ps,
                &format!("{name}.conv"),
                ConvSpec::square(cin, cout, k, 1, pad).no_bias(),
                rng,
            ),
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let y = self.bn.forward(g, p, x);
        let y = g.relu(y);
        self.conv.forward(g, p, y)
    }
}

#[derive(Clone, Debug)]
enum DenseUnit {
    Layer(BnReluConv, BnReluConv),
    Transition(BnReluConv),
}

/// DenseNet-BC; growth 48, blocks `(6, 12, 36, 24)`, 96 stem features gives DenseNet-161.
#[derive(Clone, Debug)]
pub struct DenseNet {
    params: ParamSet,
    stem: ConvBn,
    units: Vec<DenseUnit>,
    final_bn: BatchNorm2d,
    fc: Linear,
    input: usize,
    n_classes: usize,
}

impl DenseNet {
    pub fn new(
        growth: usize,
        blocks: [usize; 4],
        init_features: usize,
        n_classes: usize,
        input: usize,
        rng: &mut Rng,
    ) -> Self {
        const BN_SIZE: usize = 4;
        let mut ps = ParamSet::new();
        let stem = ConvBn::square(&mut ps, "stem", 3, init_features, 7, 2, 3, rng);
        let mut units = Vec::new();
        let mut ch = init_features;
        for (bi, &n) in blocks.iter().enumerate() {
            for li in 0..n {
                let name = format!("block{}.layer{li}", bi + 1);
                let a = BnReluConv::new(&mut ps, &format!("{name}.a"), ch, BN_SIZE * growth, 1, 0, rng);
                let b = BnReluConv::new(&mut ps, &format!("{name}.b"), BN_SIZE * growth, growth, 3, 1, rng);
                units.push(DenseUnit::Layer(a, b));
                ch += growth;
            }
            if bi + 1 < blocks.len() {
                let t = BnReluConv::new(&mut ps, &format!("transition{}", bi + 1), ch, ch / 2, 1, 0, rng);
                units.push(DenseUnit::Transition(t));
                ch /= 2;
            }
        }
        let final_bn = BatchNorm2d::new(&mut ps, "final_bn", ch, 1e-5, rng);
        let fc = linear(&mut ps, "fc", ch, n_classes, rng);
        Self {
            params: ps,
            stem,
            units,
            final_bn,
            fc,
            input,
            n_classes,
        }
    }
}

impl Network for DenseNet {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn signature(&self) -> Signature {
        Signature {
            input: vec![3, self.input, self.input],
            output: vec![self.n_classes],
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let h = self.stem.forward(g, p, x, true);
        let mut h = g.max_pool(h, maxpool(3, 2, 1));
        for u in &self.units {
            h = match u {
                DenseUnit::Layer(a, b) => {
                    let y = a.forward(g, p, h);
                    let y = b.forward(g, p, y);
                    g.concat(&[h, y])
                }
                DenseUnit::Transition(t) => {
                    let y = t.forward(g, p, h);
                    g.avg_pool(y, maxpool(2, 2, 0), true)
                }
            };
        }
        let h = self.final_bn.forward(g, p, h);
        let h = g.relu(h);
        let f = g.global_avg_pool(h);
        self.fc.forward(g, p, f)
    }
}

// ---------------------------------------------------------------- inception v3

const INCEPTION_EPS: f64 = 1e-3;

/// A parallel branch: a chain of conv-bn-relu units, optionally preceded by a pool.
#[derive(Clone, Debug)]
struct Branch {
    pool: Option<(Pool, bool)>,
    convs: Vec<ConvBn>,
}

impl Branch {
    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let mut h = match self.pool {
            Some((pool, true)) => g.max_pool(x, pool),
            Some((pool, false)) => g.avg_pool(x, pool, true),
            None => x,
        };
        for c in &self.convs {
            h = c.forward(g, p, h, true);
        }
        h
    }
}

/// Branches whose outputs are concatenated; a branch listed in `split`
/// forks into two convolutions applied to the same input (the 1x3 / 3x1 pairs).
#[derive(Clone, Debug)]
struct Mixed {
    branches: Vec<(Branch, Option<(ConvBn, ConvBn)>)>,
}

impl Mixed {
    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let mut outs = Vec::new();
        for (b, fork) in &self.branches {
            let h = b.forward(g, p, x);
            match fork {
                Some((a, c)) => {
                    outs.push(a.forward(g, p, h, true));
                    outs.push(c.forward(g, p, h, true));
                }
                None => outs.push(h),
            }
        }
        g.concat(&outs)
    }
}

struct Builder<'a> {
    ps: &'a mut ParamSet,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn cb(&mut self, name: &str, cin: usize, cout: usize, k: (usize, usize), s: usize) -> ConvBn {
        let pad = if s == 1 { (k.0 / 2, k.1 / 2) } else { (0, 0) };
        ConvBn::new(self.ps, name, cin, cout, k, s, pad, INCEPTION_EPS, self.rng)
    }

    /// A branch from `(out, kernel, stride)` steps starting at `cin`.
    fn branch(
        &mut self,
        name: &str,
        pool: Option<(Pool, bool)>,
        cin: usize,
        steps: &[(usize, (usize, usize), usize)],
    ) -> Branch {
        let mut c = cin;
        let convs = steps
            .iter()
            .enumerate()
            .map(|(i, &(out, k, s))| {
                let u = self.cb(&format!("{name}.{i}"), c, out, k, s);
                c = out;
                u
            })
            .collect();
        Branch { pool, convs }
    }

    fn fork(&mut self, name: &str, cin: usize, cout: usize) -> (ConvBn, ConvBn) {
        (
            self.cb(&format!("{name}.a"), cin, cout, (1, 3), 1),
            self.cb(&format!("{name}.b"), cin, cout, (3, 1), 1),
        )
    }
}

const AVG3: Option<(Pool, bool)> = Some((
    Pool {
        kernel: 3,
        stride: 1,
        pad: 1,
    },
    false,
));
const MAX3S2: Option<(Pool, bool)> = Some((
    Pool {
        kernel: 3,
        stride: 2,
        pad: 0,
    },
    true,
));

fn inception_a(b: &mut Builder, n: &str, cin: usize, pool_features: usize) -> Mixed {
    Mixed {
        branches: vec![
            (b.branch(&format!("{n}.b1"), None, cin, &[(64, (1, 1), 1)]), None),
            (
                b.branch(&format!("{n}.b5"), None, cin, &[(48, (1, 1), 1), (64, (5, 5), 1)]),
                None,
            ),
            (
                b.branch(
                    &format!("{n}.b3"),
                    None,
                    cin,
                    &[(64, (1, 1), 1), (96, (3, 3), 1), (96, (3, 3), 1)],
                ),
                None,
            ),
            (
                b.branch(&format!("{n}.pool"), AVG3, cin, &[(pool_features, (1, 1), 1)]),
                None,
            ),
        ],
    }
}

fn inception_b(b: &mut Builder, n: &str, cin: usize) -> Mixed {
    Mixed {
        branches: vec![
            (b.branch(&format!("{n}.b3"), None, cin, &[(384, (3, 3), 2)]), None),
            (
                b.branch(
                    &format!("{n}.b3dbl"),
                    None,
                    cin,
                    &[(64, (1, 1), 1), (96, (3, 3), 1), (96, (3, 3), 2)],
                ),
                None,
            ),
            (
                Branch {
                    pool: MAX3S2,
                    convs: vec![],
                },
                None,
            ),
        ],
    }
}

fn inception_c(b: &mut Builder, n: &str, cin: usize, c7: usize) -> Mixed {
    Mixed {
        branches: vec![
            (b.branch(&format!("{n}.b1"), None, cin, &[(192, (1, 1), 1)]), None),
            (
                b.branch(
                    &format!("{n}.b7"),
                    None,
                    cin,
                    &[(c7, (1, 1), 1), (c7, (1, 7), 1), (192, (7, 1), 1)],
                ),
                None,
            ),
            (
                b.branch(
                    &format!("{n}.b7dbl"),
                    None,
                    cin,
                    &[
                        (c7, (1, 1), 1),
                        (c7, (7, 1), 1),
                        (c7, (1, 7), 1),
                        (c7, (7, 1), 1),
                        (192, (1, 7), 1),
                    ],
                ),
                None,
            ),
            (b.branch(&format!("{n}.pool"), AVG3, cin, &[(192, (1, 1), 1)]), None),
        ],
    }
}

fn inception_d(b: &mut Builder, n: &str, cin: usize) -> Mixed {
    Mixed {
        branches: vec![
            (
                b.branch(&format!("{n}.b3"), None, cin, &[(192, (1, 1), 1), (320, (3, 3), 2)]),
                None,
            ),
            (
                b.branch(
                    &format!("{n}.b7"),
                    None,
                    cin,
                    &[(192, (1, 1), 1), (192, (1, 7), 1), (192, (7, 1), 1), (192, (3, 3), 2)],
                ),
                None,
            ),
            (
                Branch {
                    pool: MAX3S2,
                    convs: vec![],
                },
                None,
            ),
        ],
    }
}

fn inception_e(b: &mut Builder, n: &str, cin: usize) -> Mixed {
    let b3 = b.branch(&format!("{n}.b3"), None, cin, &[(384, (1, 1), 1)]);
    let f3 = b.fork(&format!("{n}.b3.fork"), 384, 384);
    let bd = b.branch(&format!("{n}.b3dbl"), None, cin, &[(448, (1, 1), 1), (384, (3, 3), 1)]);
    let fd = b.fork(&format!("{n}.b3dbl.fork"), 384, 384);
    Mixed {
        branches: vec![
            (b.branch(&format!("{n}.b1"), None, cin, &[(320, (1, 1), 1)]), None),
            (b3, Some(f3)),
            (bd, Some(fd)),
            (b.branch(&format!("{n}.pool"), AVG3, cin, &[(192, (1, 1), 1)]), None),
        ],
    }
}

/// Inception-v3. The auxiliary head, when built, only carries parameters
/// (for blob compatibility); the forward pass returns the main logits.
#[derive(Clone, Debug)]
pub struct InceptionV3 {
    params: ParamSet,
    stem: Vec<ConvBn>,
    mixed_5_6: Vec<Mixed>,
    aux: bool,
    mixed_7: Vec<Mixed>,
    fc: Linear,
    dropout: f64,
    input: usize,
    n_classes: usize,
}

/// Smallest input side the stem and reductions accept.
pub const INCEPTION_MIN_INPUT: usize = 75;

impl InceptionV3 {
    pub fn new(n_classes: usize, input: usize, aux_logits: bool, rng: &mut Rng) -> Self {
        let mut ps = ParamSet::new();
        let mut b = Builder { ps: &mut ps, rng };
        let stem = vec![
            b.cb("stem.1a", 3, 32, (3, 3), 2),
            ConvBn::new(b.ps, "stem.2a", 32, 32, (3, 3), 1, (0, 0), INCEPTION_EPS, b.rng),
            b.cb("stem.2b", 32, 64, (3, 3), 1),
            b.cb("stem.3b", 64, 80, (1, 1), 1),
            ConvBn::new(b.ps, "stem.4a", 80, 192, (3, 3), 1, (0, 0), INCEPTION_EPS, b.rng),
        ];
        let mixed_5_6 = vec![
            inception_a(&mut b, "mixed5b", 192, 32),
            inception_a(&mut b, "mixed5c", 256, 64),
            inception_a(&mut b, "mixed5d", 288, 64),
            inception_b(&mut b, "mixed6a", 288),
            inception_c(&mut b, "mixed6b", 768, 128),
            inception_c(&mut b, "mixed6c", 768, 160),
            inception_c(&mut b, "mixed6d", 768, 160),
            inception_c(&mut b, "mixed6e", 768, 192),
        ];
        if aux_logits {
            b.cb("aux.0", 768, 128, (1, 1), 1);
            ConvBn::new(b.ps, "aux.1", 128, 768, (5, 5), 1, (0, 0), INCEPTION_EPS, b.rng);
            linear(b.ps, "aux.fc", 768, n_classes, b.rng);
        }
        let mixed_7 = vec![
            inception_d(&mut b, "mixed7a", 768),
            inception_e(&mut b, "mixed7b", 1280),
            inception_e(&mut b, "mixed7c", 2048),
        ];
        let fc = linear(b.ps, "fc", 2048, n_classes, b.rng);
        Self {
            params: ps,
            stem,
            mixed_5_6,
            aux: aux_logits,
            mixed_7,
            fc,
            dropout: 0.5,
            input,
            n_classes,
        }
    }

    pub fn has_aux(&self) -> bool {
        self.aux
    }
}

impl Network for InceptionV3 {
    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn signature(&self) -> Signature {
        Signature {
            input: vec![3, self.input, self.input],
            output: vec![self.n_classes],
        }
    }

    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var {
        let mut h = x;
        for (i, c) in self.stem.iter().enumerate() {
            h = c.forward(g, p, h, true);
            if i == 2 || i == 4 {
                h = g.max_pool(h, maxpool(3, 2, 0));
            }
        }
        for m in self.mixed_5_6.iter().chain(&self.mixed_7) {
            h = m.forward(g, p, h);
        }
        let f = g.global_avg_pool(h);
        let f = g.dropout(f, self.dropout);
        self.fc.forward(g, p, f)
    }
}
