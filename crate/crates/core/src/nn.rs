//! Parameterised layers: handles into a [`ParamStore`] plus forward helpers.

use rand::Rng;

use crate::tensor::{Graph, ParamId, ParamStore, Result, Var};

/// Square-kernel, stride-1, size-preserving convolution.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
}

impl Conv {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
    ) -> Self {
        let weight = store.add_gaussian(format!("{name}.weight"), &[c_out, c_in, k, k], c_in * k * k, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[c_out]);
        Self {
            weight,
            bias,
            c_in,
            c_out,
            k,
        }
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, x: Var) -> Result<Var> {
        let w = g.param(p, self.weight);
        let b = g.param(p, self.bias);
        g.conv2d(x, w, Some(b))
    }

    pub fn forward_relu<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, x: Var) -> Result<Var> {
        let y = self.forward(g, p, x)?;
        Ok(g.relu(y))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        n_in: usize,
        n_out: usize,
    ) -> Self {
        let weight = store.add_gaussian(format!("{name}.weight"), &[n_out, n_in], n_in, rng);
        let bias = store.add_zeros(format!("{name}.bias"), &[n_out]);
        Self {
            weight,
            bias,
            n_in,
            n_out,
        }
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, x: Var) -> Result<Var> {
        let w = g.param(p, self.weight);
        let b = g.param(p, self.bias);
        g.linear(x, w, Some(b))
    }
}

/// Runs `convs` in sequence with ReLU after every layer.
pub fn conv_stack_relu<'p>(g: &mut Graph<'p>, p: &'p ParamStore, convs: &[Conv], x: Var) -> Result<Var> {
    convs.iter().try_fold(x, |h, c| c.forward_relu(g, p, h))
}
