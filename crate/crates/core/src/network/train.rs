use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{loss_graph, LossWeights, Targets};
use super::model::Model;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::tensor::{adam_step, AdamState, Graph, Tensor};

/// One training pair with precomputed supervision pyramids.
#[derive(Debug, Clone)]
pub struct Example {
    pub rgb: Tensor,
    pub depth: Tensor,
    pub targets: Targets,
}

impl Example {
    pub fn from_sample(sample: &Sample) -> Result<Self> {
        Ok(Self {
            rgb: sample.rgb.clone(),
            depth: sample.depth.clone(),
            targets: Targets::from_sample(sample)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds the per-epoch shuffles of the data order.
    pub data_seed: u64,
    pub weights: LossWeights,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            steps: 0,
            batch_size: 4,
            lr: 1e-4,
            data_seed: 0,
            weights: LossWeights::default(),
        }
    }
}

/// Index of the example consumed at global position `pos` of the data stream:
/// each epoch visits every example once in a seeded random order.
pub struct DataOrder {
    n: usize,
    seed: u64,
    epoch: Option<(u64, Vec<usize>)>,
}

impl DataOrder {
    pub fn new(n: usize, seed: u64) -> Self {
        Self { n, seed, epoch: None }
    }

    pub fn index(&mut self, pos: u64) -> usize {
        let epoch = pos / self.n as u64;
        if self.epoch.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(epoch);
            let mut perm: Vec<usize> = (0..self.n).collect();
            perm.shuffle(&mut rng);
            self.epoch = Some((epoch, perm));
        }
        let (_, perm) = self.epoch.as_ref().expect("just set");
        perm[(pos % self.n as u64) as usize]
    }
}

/// Loss on one example and its parameter gradient added into the store,
/// scaled by `scale`.
pub fn accumulate_example(model: &mut Model, ex: &Example, weights: &LossWeights, scale: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (r, d) = (g.constant(&ex.rgb), g.constant(&ex.depth));
    let side = model.forward_graph(&mut g, &model.params, r, d)?;
    let l = loss_graph(&mut g, &side, &ex.targets, weights)?;
    let value = g.value(l)[0];
    let grads = g.backward(l)?;
    drop(g);
    grads.accumulate(&mut model.params, scale);
    Ok(value)
}

/// Runs `opts.steps` optimizer steps from the model's current step. Each
/// step averages gradients over `batch_size` examples and applies one Adam
/// update. `on_step` receives the step number (1-based) and the mean loss of
/// its batch, which is also returned in order.
pub fn train(
    model: &mut Model,
    data: &[Example],
    opts: &TrainOptions,
    mut on_step: impl FnMut(u64, f64),
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order = DataOrder::new(data.len(), opts.data_seed);
    let mut log = Vec::with_capacity(opts.steps as usize);
    for _ in 0..opts.steps {
        model.params.zero_grads();
        let mut total = 0.0;
        let scale = 1.0 / opts.batch_size as f64;
        for j in 0..opts.batch_size {
            let pos = model.step * opts.batch_size as u64 + j as u64;
            let ex = &data[order.index(pos)];
            total += accumulate_example(model, ex, &opts.weights, scale)?;
        }
        let n = model.params.scalar_count();
        let adam = model.adam.get_or_insert_with(|| AdamState::new(n, opts.lr));
        adam.lr = opts.lr;
        let (values, grads) = model.params.values_and_grads_mut();
        adam_step(values, grads, adam)?;
        model.step += 1;
        let mean = total * scale;
        on_step(model.step, mean);
        log.push(mean);
    }
    Ok(log)
}
