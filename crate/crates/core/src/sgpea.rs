//! Saliency-guided position and edge attention, plus the per-level saliency
//! and edge prediction heads.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Conv;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Three 3×3 convs `C → C/2 → C/4 → 1` with ReLU, ReLU, sigmoid.
#[derive(Debug, Clone)]
pub struct Predictor {
    pub convs: [Conv; 3],
    pub in_channels: usize,
}

impl Predictor {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, in_channels: usize) -> Self {
        let c1 = (in_channels / 2).max(1);
        let c2 = (in_channels / 4).max(1);
        Self {
            convs: [
                Conv::new(store, rng, &format!("{name}.conv1"), in_channels, c1, 3),
                Conv::new(store, rng, &format!("{name}.conv2"), c1, c2, 3),
                Conv::new(store, rng, &format!("{name}.conv3"), c2, 1, 3),
            ],
            in_channels,
        }
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, x: Var) -> Result<Var> {
        let c = g.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            return Err(Error::Config(format!(
                "predictor expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let h = self.convs[0].forward_relu(g, p, x)?;
        let h = self.convs[1].forward_relu(g, p, h)?;
        let logits = self.convs[2].forward(g, p, h)?;
        Ok(g.sigmoid(logits))
    }
}

/// Saliency map of one level from its refined features.
pub fn predict_saliency<'p>(g: &mut Graph<'p>, p: &'p ParamStore, head: &Predictor, features: Var) -> Result<Var> {
    head.forward(g, p, features)
}

/// Saliency edge map from the concatenated level streams.
pub fn predict_edge<'p>(g: &mut Graph<'p>, p: &'p ParamStore, head: &Predictor, cat_features: Var) -> Result<Var> {
    head.forward(g, p, cat_features)
}

/// `x ⊕ x ⊗ map`, the map broadcast over channels.
fn identity_attention(g: &mut Graph, x: Var, map: Var) -> Result<Var> {
    let t = g.mul_map(x, map)?;
    Ok(g.add(x, t)?)
}

/// Position attention with the upsampled saliency map of the level below;
/// identity when there is none.
pub fn position_attention(g: &mut Graph, f_afs: Var, smap_up: Option<Var>) -> Result<Var> {
    match smap_up {
        Some(m) => identity_attention(g, f_afs, m),
        None => Ok(f_afs),
    }
}

pub fn edge_attention(g: &mut Graph, f_poa: Var, sedge: Var) -> Result<Var> {
    identity_attention(g, f_poa, sedge)
}

/// The five saliency maps and five edge maps, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct SideOutputs {
    pub smap: Vec<Tensor>,
    pub sedge: Vec<Tensor>,
}

impl SideOutputs {
    /// The final prediction `Smap_1`.
    pub fn saliency(&self) -> &Tensor {
        &self.smap[0]
    }

    /// Square extent of each level, finest first.
    pub fn resolutions(&self) -> Vec<usize> {
        self.smap.iter().map(|t| t.shape()[3]).collect()
    }
}
