//! Central finite-difference checks for every op's backward rule.

use rand::Rng as _;

use super::*;
use crate::rng::{derive, Rng};

/// Objective = sum(out * probe) for a fixed random probe. Checks the gradient
/// of every trainable scalar against central differences.
fn check(ps: &mut ParamSet, training: bool, build: impl Fn(&mut Graph, &Bound) -> Var) {
    let eps = 1e-6;
    let probe_rng = |len: usize| -> Tensor {
        let mut r: Rng = derive(99, "probe", len as u64);
        Tensor::from_vec(&[len], (0..len).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let objective = |ps: &ParamSet| -> f64 {
        let mut g = Graph::with_modes(training, false).with_rng(derive(5, "drop", 0));
        let b = g.bind(ps);
        let y = build(&mut g, &b);
        let v = g.value(y);
        let pr = probe_rng(v.len());
        v.data().iter().zip(pr.data()).map(|(a, b)| a * b).sum()
    };
    let analytic = {
        let mut g = Graph::with_modes(training, true).with_rng(derive(5, "drop", 0));
        let b = g.bind(ps);
        let y = build(&mut g, &b);
        let shape = g.value(y).shape().to_vec();
        let seed = probe_rng(g.value(y).len()).reshape(&shape);
        let mut grads = g.backward(&[(y, seed)]);
        grads.take_params(&b)
    };
    let ids: Vec<ParamId> = ps.ids().collect();
    for (i, id) in ids.into_iter().enumerate() {
        if !ps.is_trainable(id) {
            continue;
        }
        let a = analytic[i].clone().unwrap_or_else(|| Tensor::zeros(ps.get(id).shape()));
        for j in 0..ps.get(id).len() {
            let orig = ps.get(id).data()[j];
            ps.get_mut(id).data_mut()[j] = orig + eps;
            let up = objective(ps);
            ps.get_mut(id).data_mut()[j] = orig - eps;
            let down = objective(ps);
            ps.get_mut(id).data_mut()[j] = orig;
            let num = (up - down) / (2.0 * eps);
            let an = a.data()[j];
            let rel = (an - num).abs() / an.abs().max(num.abs()).max(1e-6);
            assert!(rel < 1e-4, "{}[{j}]: analytic {an} vs numeric {num}", ps.name(id));
        }
    }
}

fn rng() -> Rng {
    derive(1, "gradcheck", 0)
}

fn input_param(ps: &mut ParamSet, shape: &[usize]) -> ParamId {
    ps.add("input", shape, Init::Normal(1.0), &mut rng())
}

#[test]
fn conv_strided_padded() {
    let mut ps = ParamSet::new();
    let x = input_param(&mut ps, &[2, 2, 5, 6]);
    let conv = Conv2d::new(
        &mut ps,
        "c",
        ConvSpec::square(2, 3, 3, 2, 1),
        Init::Normal(0.5),
        &mut rng(),
    );
    check(&mut ps, true, |g, b| conv.forward(g, b, b.var(x)));
}

#[test]
fn conv_rectangular_and_pointwise() {
    let mut ps = ParamSet::new();
    let x = input_param(&mut ps, &[1, 2, 4, 5]);
    let spec = ConvSpec {
        in_ch: 2,
        out_ch: 2,
        kernel: (1, 3),
        stride: (1, 1),
        pad: (0, 1),
        bias: false,
    };
    let a = Conv2d::new(&mut ps, "a", spec, Init::Normal(0.5), &mut rng());
    let p = Conv2d::new(
        &mut ps,
        "p",
        ConvSpec::square(2, 3, 1, 1, 0),
        Init::Normal(0.5),
        &mut rng(),
    );
    check(&mut ps, true, |g, b| {
        let y = a.forward(g, b, b.var(x));
        p.forward(g, b, y)
    });
}

#[test]
fn upsample_concat_activations() {
    let mut ps = ParamSet::new();
    let x = input_param(&mut ps, &[1, 2, 3, 4]);
    let y = input_param_named(&mut ps, "skip", &[1, 1, 6, 8]);
    check(&mut ps, true, |g, b| {
        let u = g.upsample2x(b.var(x));
        let c = g.concat(&[u, b.var(y)]);
        let t = g.tanh(c);
        let s = g.sigmoid(t);
        let l = g.leaky_relu(c, 0.2);
        let r = g.relu(l);
        let a = g.affine(r, 0.5, 0.25);
        let sum = g.add(a, s);
        g.instance_norm(sum, 1e-5)
    });
}

fn input_param_named(ps: &mut ParamSet, name: &str, shape: &[usize]) -> ParamId {
    ps.add(name, shape, Init::Normal(1.0), &mut rng())
}

#[test]
fn linear_reshape_pools() {
    let mut ps = ParamSet::new();
    let x = input_param(&mut ps, &[2, 2, 6, 6]);
    let lin = Linear::new(&mut ps, "fc", 8, 3, Init::Normal(0.3), &mut rng());
    check(&mut ps, true, |g, b| {
        let m = g.max_pool(
            b.var(x),
            Pool {
                kernel: 3,
                stride: 2,
                pad: 1,
            },
        );
        let a = g.avg_pool(
            m,
            Pool {
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            true,
        );
        let a2 = g.avg_pool(
            a,
            Pool {
                kernel: 2,
                stride: 2,
                pad: 1,
            },
            false,
        );
        let gp = g.global_avg_pool(a2);
        let sq = g.reshape(gp, &[2, 2, 1, 1]);
        let dup = g.concat(&[sq, sq, sq, sq]);
        let flat = g.flatten(dup);
        lin.forward(g, b, flat)
    });
}

#[test]
fn batch_norm_train_and_eval() {
    for training in [true, false] {
        let mut ps = ParamSet::new();
        let x = input_param(&mut ps, &[3, 2, 3, 3]);
        let bn = BatchNorm2d::new(&mut ps, "bn", 2, 1e-5, &mut rng());
        *ps.get_mut(bn.gamma) = Tensor::from_vec(&[2], vec![1.3, 0.7]).unwrap();
        *ps.get_mut(bn.running_var) = Tensor::from_vec(&[2], vec![0.5, 2.0]).unwrap();
        check(&mut ps, training, |g, b| bn.forward(g, b, b.var(x)));
    }
}

#[test]
fn dropout_uses_fixed_mask() {
    let mut ps = ParamSet::new();
    let x = input_param(&mut ps, &[2, 3, 2, 2]);
    check(&mut ps, true, |g, b| {
        let d = g.dropout(b.var(x), 0.3);
        g.tanh(d)
    });
}

#[test]
fn batch_norm_queues_running_updates_only_in_training() {
    let mut ps = ParamSet::new();
    let x = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
    let bn = BatchNorm2d::new(&mut ps, "bn", 1, 1e-5, &mut rng());
    let mut g = Graph::train();
    let b = g.bind(&ps);
    let xi = g.input(x.clone());
    bn.forward(&mut g, &b, xi);
    let ups = g.take_buffer_updates();
    drop(g);
    assert_eq!(ups.len(), 2);
    // mean 4, unbiased var 20/3
    assert!((ups[0].1.data()[0] - 0.4).abs() < 1e-12);
    assert!((ups[1].1.data()[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-12);
    let mut g = Graph::eval();
    let b = g.bind(&ps);
    let xi = g.input(x);
    bn.forward(&mut g, &b, xi);
    assert!(g.take_buffer_updates().is_empty());
}

#[test]
fn upsample_matches_reference_values() {
    // 1-D row [0, 1] upsampled with half-pixel centres: [0, .25, .75, 1]
    let mut g = Graph::eval();
    let x = g.input(Tensor::from_vec(&[1, 1, 1, 2], vec![0.0, 1.0]).unwrap());
    let y = g.upsample2x(x);
    assert_eq!(g.value(y).shape(), &[1, 1, 2, 4]);
    assert_eq!(&g.value(y).data()[..4], &[0.0, 0.25, 0.75, 1.0]);
}
