//! Parameterized convolution layer shared by the model components.

use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, SeededRng, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// uniform(±sqrt(6 / fan_in)), for layers followed by ReLU.
    Relu,
    /// uniform(±1 / sqrt(fan_in)).
    Linear,
    Zero,
}

/// A same-padded `k x k` convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub kernel: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        init: Init,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let shape = [cout, cin, kernel, kernel];
        let fan_in = (cin * kernel * kernel) as f64;
        let bound = match init {
            Init::Relu => (6.0 / fan_in).sqrt(),
            Init::Linear => 1.0 / fan_in.sqrt(),
            Init::Zero => 0.0,
        };
        let weight = if init == Init::Zero {
            store.add(format!("{name}.w"), Tensor::zeros(&shape))?
        } else {
            store.add(
                format!("{name}.w"),
                Tensor::uniform(&shape, bound as Scalar, rng),
            )?
        };
        let bias = store.add_zeros(format!("{name}.b"), &[cout])?;
        Ok(Self {
            weight,
            bias,
            kernel,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d_same(x, w, Some(b))
    }

    pub fn forward_relu(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let y = self.forward(g, store, x)?;
        g.relu(y)
    }
}
