//! Minimal reverse-mode autodiff over f64 tensors, sized for desk-scale GAN
//! and classifier training on CPU.

mod gemm;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
mod tensor;

#[cfg(test)]
mod gradcheck;

pub use graph::{sigmoid, Bound, Grads, Graph, OpInfo, Pool, Var};
pub use layers::{apply_buffer_updates, BatchNorm2d, Conv2d, ConvSpec, Linear};
pub use optim::{Adam, AdamConfig};
pub use params::{Init, ParamId, ParamSet};
pub use tensor::Tensor;

/// Description of a network's forward contract.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Signature {
    pub input: Vec<usize>,
    pub output: Vec<usize>,
}

/// A parameterised network with a fixed forward contract.
pub trait Network {
    fn params(&self) -> &ParamSet;
    fn params_mut(&mut self) -> &mut ParamSet;
    /// Per-sample input and output shapes (batch axis omitted).
    fn signature(&self) -> Signature;
    fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Var;

    fn param_count(&self) -> usize {
        self.params().count()
    }

    /// Inference-mode forward on a batched input.
    fn infer(&self, input: Tensor) -> Tensor {
        let mut g = Graph::eval();
        let p = g.bind_frozen(self.params());
        let x = g.input(input);
        let y = self.forward(&mut g, &p, x);
        g.value(y).clone()
    }

    /// Ops recorded by one inference pass on a zero input.
    fn op_trace(&self) -> Vec<OpInfo> {
        let mut shape = vec![1];
        shape.extend(self.signature().input);
        let mut g = Graph::eval();
        let p = g.bind_frozen(self.params());
        let x = g.input(Tensor::zeros(&shape));
        self.forward(&mut g, &p, x);
        g.trace()
    }
}
