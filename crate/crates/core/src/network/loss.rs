use super::model::SideVars;
use crate::backbone::LEVELS;
use crate::data::{gt_pyramid, Sample};
use crate::error::{Error, Result};
use crate::sgpea::SideOutputs;
use crate::tensor::{Graph, Tensor, Var};

/// Per-level weights of the saliency and edge terms, finest level first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda: [f64; LEVELS],
    pub eta: [f64; LEVELS],
}

impl Default for LossWeights {
    fn default() -> Self {
        let mut lambda = [1.0; LEVELS];
        lambda[0] = 1.2;
        Self {
            lambda,
            eta: [1.0; LEVELS],
        }
    }
}

/// Supervision pyramids for one sample, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub gt: Vec<Tensor>,
    pub edge: Vec<Tensor>,
}

impl Targets {
    pub fn from_sample(sample: &Sample) -> Result<Self> {
        Ok(Self {
            gt: gt_pyramid(&sample.mask)?,
            edge: gt_pyramid(&sample.edge)?,
        })
    }
}

/// `Σ_i λ_i·BCE(Smap_i, gt_i) + η_i·BCE(Sedge_i, edge_i)` on the graph.
pub fn loss_graph(g: &mut Graph, side: &SideVars, targets: &Targets, weights: &LossWeights) -> Result<Var> {
    if targets.gt.len() != LEVELS || targets.edge.len() != LEVELS {
        return Err(Error::Config(format!(
            "expected {LEVELS} target levels, got {} saliency and {} edge",
            targets.gt.len(),
            targets.edge.len()
        )));
    }
    let mut total: Option<Var> = None;
    let terms = side
        .smap
        .iter()
        .zip(&targets.gt)
        .zip(weights.lambda)
        .chain(side.sedge.iter().zip(&targets.edge).zip(weights.eta));
    for (i, ((&pred, target), w)) in terms.enumerate() {
        if g.shape(pred)[2..] != target.shape()[2..] {
            return Err(Error::Config(format!(
                "{} level {}: prediction is {:?} but target is {:?}",
                if i < LEVELS { "saliency" } else { "edge" },
                i % LEVELS + 1,
                &g.shape(pred)[2..],
                &target.shape()[2..]
            )));
        }
        let bce = g.bce(pred, target.values())?;
        let term = g.scale(bce, w);
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    Ok(total.expect("ten terms"))
}

/// Value of [`loss_graph`] for already computed outputs.
pub fn loss(outputs: &SideOutputs, targets: &Targets, weights: &LossWeights) -> Result<f64> {
    let mut g = Graph::new();
    let side = SideVars {
        smap: outputs.smap.iter().map(|t| g.constant(t)).collect(),
        sedge: outputs.sedge.iter().map(|t| g.constant(t)).collect(),
    };
    let l = loss_graph(&mut g, &side, targets, weights)?;
    Ok(g.value(l)[0])
}
