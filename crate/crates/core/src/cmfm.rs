//! Cross-modality feature modulation: depth features predict a pixel-wise
//! scale and shift that are applied to the RGB features.

use rand::Rng;

use crate::nn::Conv;
use crate::tensor::{Graph, ParamStore, Result, Var};

/// Kernel sizes of each branch of the modulation mapping.
pub const BRANCH_KERNELS: [usize; 4] = [7, 5, 3, 3];

/// Two parallel four-layer conv stacks estimating `gamma` and `beta`.
#[derive(Debug, Clone)]
pub struct ModulatorParams {
    pub gamma: Vec<Conv>,
    pub beta: Vec<Conv>,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AffineParams {
    pub gamma: Var,
    pub beta: Var,
}

impl ModulatorParams {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, channels: usize) -> Self {
        let mut branch = |which: &str, rng: &mut R| {
            BRANCH_KERNELS
                .iter()
                .enumerate()
                .map(|(i, &k)| {
                    Conv::new(store, rng, &format!("{name}.{which}{}", i + 1), channels, channels, k)
                })
                .collect::<Vec<_>>()
        };
        let gamma = branch("gamma", rng);
        let beta = branch("beta", rng);
        Self {
            gamma,
            beta,
            channels,
        }
    }
}

/// ReLU between layers, linear output so gamma and beta can take any sign.
fn branch<'p>(g: &mut Graph<'p>, p: &'p ParamStore, convs: &[Conv], x: Var) -> Result<Var> {
    let (last, hidden) = convs.split_last().expect("non-empty branch");
    let mut h = x;
    for c in hidden {
        h = c.forward_relu(g, p, h)?;
    }
    last.forward(g, p, h)
}

pub fn estimate_affine<'p>(
    g: &mut Graph<'p>,
    p: &'p ParamStore,
    params: &ModulatorParams,
    depth_features: Var,
) -> Result<AffineParams> {
    Ok(AffineParams {
        gamma: branch(g, p, &params.gamma, depth_features)?,
        beta: branch(g, p, &params.beta, depth_features)?,
    })
}

/// `rgb ⊗ gamma ⊕ beta`, pixel-wise.
pub fn modulate(g: &mut Graph, rgb_features: Var, affine: AffineParams) -> Result<Var> {
    let scaled = g.mul(rgb_features, affine.gamma)?;
    g.add(scaled, affine.beta)
}

pub fn cmfm_forward<'p>(
    g: &mut Graph<'p>,
    p: &'p ParamStore,
    params: &ModulatorParams,
    rgb_features: Var,
    depth_features: Var,
) -> Result<Var> {
    let affine = estimate_affine(g, p, params, depth_features)?;
    modulate(g, rgb_features, affine)
}
