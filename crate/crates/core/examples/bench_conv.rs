use cytosynth::nn::{Graph, Tensor};
use std::time::Instant;

fn main() {
    let x = Tensor::full(&[1, 32, 64, 64], 0.1);
    let w = Tensor::full(&[64, 32, 3, 3], 0.01);
    let t = Instant::now();
    let reps = 20;
    for _ in 0..reps {
        let mut g = Graph::train();
        let xi = g.input_with_grad(x.clone());
        let wi = g.input_with_grad(w.clone());
        let y = g.conv2d(xi, wi, None, (1, 1), (1, 1));
        let seed = Tensor::full(g.value(y).shape(), 1.0);
        let _ = g.backward(&[(y, seed)]);
    }
    let el = t.elapsed().as_secs_f64() / reps as f64;
    let flops = 2.0 * 64.0 * 64.0 * 64.0 * 32.0 * 9.0 * 3.0;
    println!("{el:.4}s per fwd+bwd, {:.2} GFLOPS", flops / el / 1e9);
}
