//! Fully connected layers with cached activations and exact backward passes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use super::tensor::{axpy, dot, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Xavier-uniform weights, zero bias. Weight layout is `[out][in]`.
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f32).sqrt();
        let w: Vec<f32> = (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect();
        Self::from_values(store, name, in_dim, out_dim, w, vec![0.0; out_dim])
    }

    pub fn from_values(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, w: Vec<f32>, b: Vec<f32>) -> Self {
        let weight = store.add(format!("{name}.weight"), vec![out_dim, in_dim], w);
        let bias = store.add(format!("{name}.bias"), vec![out_dim], b);
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Forward activations: `acts[0]` is the input, `acts[k]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub acts: Vec<Matrix>,
}

impl MlpCache {
    pub fn output(&self) -> &Matrix {
        self.acts.last().unwrap()
    }
}

impl Mlp {
    /// `dims = [in, hidden.., out]`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| Linear::new(store, &format!("{name}.{k}"), w[0], w[1], rng))
            .collect();
        Self {
            layers,
            hidden_activation,
            output_activation,
        }
    }

    pub fn from_layers(layers: Vec<Linear>, hidden_activation: Activation, output_activation: Activation) -> Self {
        Self {
            layers,
            hidden_activation,
            output_activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn forward(&self, store: &ParamStore, x: Matrix) -> Result<MlpCache> {
        if x.cols != self.in_dim() {
            return Err(Error::Shape(format!("mlp input width {} != {}", x.cols, self.in_dim())));
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x);
        for (k, layer) in self.layers.iter().enumerate() {
            let w = store.value(layer.weight);
            let b = store.value(layer.bias);
            let act = self.activation(k);
            let input = acts.last().unwrap();
            let mut out = Matrix::zeros(input.rows, layer.out_dim);
            for r in 0..input.rows {
                let xr = input.row(r);
                let yr = out.row_mut(r);
                for o in 0..layer.out_dim {
                    let wrow = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
                    yr[o] = act.apply(b[o] + dot(wrow, xr));
                }
            }
            acts.push(out);
        }
        Ok(MlpCache { acts })
    }

    /// Accumulates parameter gradients for upstream `dy` and returns the input
    /// gradient when `need_input_grad`.
    pub fn backward(&self, store: &mut ParamStore, cache: &MlpCache, dy: &Matrix, need_input_grad: bool) -> Result<Option<Matrix>> {
        let out = cache.output();
        if dy.rows != out.rows || dy.cols != out.cols {
            return Err(Error::Shape(format!(
                "mlp upstream gradient {}x{} != output {}x{}",
                dy.rows, dy.cols, out.rows, out.cols
            )));
        }
        let mut delta = dy.clone();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let post = &cache.acts[k + 1];
            if self.activation(k) == Activation::Relu {
                for (d, p) in delta.data.iter_mut().zip(&post.data) {
                    if *p <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &cache.acts[k];
            {
                let gb = store.grad_mut(layer.bias);
                for r in 0..delta.rows {
                    for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                        *g += d;
                    }
                }
            }
            {
                let gw = store.grad_mut(layer.weight);
                for r in 0..delta.rows {
                    let dr = delta.row(r);
                    let xr = input.row(r);
                    for (o, &d) in dr.iter().enumerate() {
                        if d != 0.0 {
                            axpy(d, xr, &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim]);
                        }
                    }
                }
            }
            if k == 0 && !need_input_grad {
                return Ok(None);
            }
            let w = store.value(layer.weight);
            let mut dx = Matrix::zeros(delta.rows, layer.in_dim);
            for r in 0..delta.rows {
                let dr = delta.row(r);
                let dxr = dx.row_mut(r);
                for (o, &d) in dr.iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, &w[o * layer.in_dim..(o + 1) * layer.in_dim], dxr);
                    }
                }
            }
            delta = dx;
        }
        Ok(Some(delta))
    }
}
