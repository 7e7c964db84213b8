//! Two-stream five-level feature pyramid and the per-level channel-halving
//! convolutions.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{conv_stack_relu, Conv};
use crate::tensor::{Graph, ParamStore, Var};

pub const LEVELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackboneConfig {
    pub channels_per_level: [usize; LEVELS],
    /// Square input extent; divisible by 16.
    pub input_size: usize,
    pub convs_per_level: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl BackboneConfig {
    /// CPU-friendly default: 64×64 inputs, widths 8..32.
    pub fn desk() -> Self {
        Self {
            channels_per_level: [8, 16, 32, 32, 32],
            input_size: 64,
            convs_per_level: 2,
        }
    }

    /// VGG-16 widths at 224×224.
    pub fn vgg16() -> Self {
        Self {
            channels_per_level: [64, 128, 256, 512, 512],
            input_size: 224,
            convs_per_level: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.input_size;
        if s == 0 || s % 16 != 0 {
            return Err(Error::Config(format!(
                "input size {s} must be a positive multiple of 16"
            )));
        }
        if self.convs_per_level == 0 {
            return Err(Error::Config("convs_per_level must be positive".into()));
        }
        let ch = &self.channels_per_level;
        if let Some((l, c)) = ch.iter().enumerate().find(|(_, &c)| c == 0 || c % 2 != 0) {
            return Err(Error::Config(format!(
                "channels_per_level[{}] = {c} must be positive and even",
                l + 1
            )));
        }
        if ch.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!(
                "channels_per_level {ch:?} must be non-decreasing"
            )));
        }
        Ok(())
    }

    /// Spatial extent of level `l` (1-based).
    pub fn extent(&self, l: usize) -> usize {
        self.input_size >> (l - 1)
    }

    /// Stream width after channel halving at level `l` (1-based).
    pub fn stream_width(&self, l: usize) -> usize {
        self.channels_per_level[l - 1] / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Rgb,
    Depth,
}

impl Stream {
    pub fn in_channels(self) -> usize {
        match self {
            Stream::Rgb => 3,
            Stream::Depth => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Stream::Rgb => "rgb",
            Stream::Depth => "depth",
        }
    }
}

/// One stream's feature extractor: `convs_per_level` 3×3 conv+ReLU layers
/// per level with 2×2 max pooling between levels.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub stream: Stream,
    pub levels: Vec<Vec<Conv>>,
    input_size: usize,
}

impl Backbone {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        config: &BackboneConfig,
        stream: Stream,
    ) -> Result<Self> {
        config.validate()?;
        let mut c_in = stream.in_channels();
        let levels = (0..LEVELS)
            .map(|l| {
                let c_out = config.channels_per_level[l];
                (0..config.convs_per_level)
                    .map(|i| {
                        let name = format!("backbone.{}.l{}.conv{}", stream.name(), l + 1, i + 1);
                        let conv = Conv::new(store, rng, &name, c_in, c_out, 3);
                        c_in = c_out;
                        conv
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            stream,
            levels,
            input_size: config.input_size,
        })
    }

    /// Five feature maps, finest first.
    pub fn extract_pyramid<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, image: Var) -> Result<Vec<Var>> {
        let shape = g.shape(image).to_vec();
        let expected = [1, self.stream.in_channels(), self.input_size, self.input_size];
        if shape != expected {
            return Err(Error::Config(format!(
                "{} input has shape {shape:?}, expected {expected:?}",
                self.stream.name()
            )));
        }
        let mut out = Vec::with_capacity(LEVELS);
        let mut x = image;
        for (l, convs) in self.levels.iter().enumerate() {
            if l > 0 {
                x = g.max_pool2(x)?;
            }
            x = conv_stack_relu(g, p, convs, x)?;
            out.push(x);
        }
        Ok(out)
    }
}

/// 3×3 conv + ReLU producing half as many channels as it consumes.
pub fn halving_conv<R: Rng>(
    store: &mut ParamStore,
    rng: &mut R,
    name: &str,
    c_in: usize,
) -> Result<Conv> {
    if c_in == 0 || c_in % 2 != 0 {
        return Err(Error::Config(format!(
            "{name}: channel halving needs an even channel count, got {c_in}"
        )));
    }
    Ok(Conv::new(store, rng, name, c_in, c_in / 2, 3))
}

pub fn halve_channels<'p>(g: &mut Graph<'p>, p: &'p ParamStore, conv: &Conv, x: Var) -> Result<Var> {
    Ok(conv.forward_relu(g, p, x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::testutil::{random_tensor, rng};
    use proptest::prelude::*;

    fn extents(cfg: &BackboneConfig) -> Vec<usize> {
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut store, &mut rng(0), cfg, Stream::Depth).unwrap();
        let mut g = Graph::new();
        let s = cfg.input_size;
        let x = g.constant(&Tensor::zeros(&[1, 1, s, s]));
        let levels = bb.extract_pyramid(&mut g, &store, x).unwrap();
        levels
            .iter()
            .zip(cfg.channels_per_level)
            .map(|(&v, c)| {
                let sh = g.shape(v);
                assert_eq!(sh[1], c);
                assert_eq!(sh[2], sh[3]);
                sh[2]
            })
            .collect()
    }

    #[test]
    fn desk_extents() {
        let cfg = BackboneConfig {
            channels_per_level: [8, 16, 32, 64, 64],
            ..BackboneConfig::desk()
        };
        assert_eq!(extents(&cfg), vec![64, 32, 16, 8, 4]);
    }

    #[test]
    fn vgg_extents() {
        let cfg = BackboneConfig {
            convs_per_level: 1,
            ..BackboneConfig::vgg16()
        };
        assert_eq!(extents(&cfg), vec![224, 112, 56, 28, 14]);
    }

    #[test]
    fn zero_weights_give_relu_bias() {
        let cfg = BackboneConfig {
            channels_per_level: [2, 2, 4, 4, 4],
            input_size: 16,
            convs_per_level: 2,
        };
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut store, &mut rng(1), &cfg, Stream::Rgb).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            let fill = if store.name(id).ends_with("bias") { 0.25 } else { 0.0 };
            store.value_mut(id).fill(fill);
        }
        let mut g = Graph::new();
        let x = g.constant(&random_tensor(&[1, 3, 16, 16], &mut rng(2)));
        for v in bb.extract_pyramid(&mut g, &store, x).unwrap() {
            assert!(g.value(v).iter().all(|&y| y == 0.25));
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = BackboneConfig::desk();
        c.input_size = 50;
        assert!(c.validate().unwrap_err().to_string().contains("16"));
        let mut c = BackboneConfig::desk();
        c.channels_per_level[2] = 7;
        assert!(c.validate().is_err());
        let mut c = BackboneConfig::desk();
        c.channels_per_level = [8, 4, 8, 8, 8];
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_wrong_stream_input() {
        let cfg = BackboneConfig::desk();
        let mut store = ParamStore::new();
        let bb = Backbone::new(&mut store, &mut rng(0), &cfg, Stream::Rgb).unwrap();
        let mut g = Graph::new();
        let x = g.constant(&Tensor::zeros(&[1, 1, 64, 64]));
        assert!(bb.extract_pyramid(&mut g, &store, x).is_err());
    }

    #[test]
    fn halving_shapes_and_oracle() {
        let mut store = ParamStore::new();
        let mut r = rng(5);
        let conv = halving_conv(&mut store, &mut r, "h", 4).unwrap();
        assert!(halving_conv(&mut store, &mut r, "odd", 3).is_err());
        let x = random_tensor(&[1, 4, 2, 2], &mut r);
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let y = halve_channels(&mut g, &store, &conv, xv).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 2, 2]);

        // direct 3×3 convolution on the 2×2 grid with zero padding
        let w = store.value(conv.weight);
        let b = store.value(conv.bias);
        for o in 0..2 {
            for yy in 0..2i32 {
                for xx in 0..2i32 {
                    let mut acc = b[o];
                    for c in 0..4 {
                        for ky in 0..3i32 {
                            for kx in 0..3i32 {
                                let (sy, sx) = (yy + ky - 1, xx + kx - 1);
                                if (0..2).contains(&sy) && (0..2).contains(&sx) {
                                    acc += w[((o * 4 + c) * 3 + ky as usize) * 3 + kx as usize]
                                        * x.values()[(c * 2 + sy as usize) * 2 + sx as usize];
                                }
                            }
                        }
                    }
                    let got = g.value(y)[(o * 2 + yy as usize) * 2 + xx as usize];
                    assert!((got - acc.max(0.0)).abs() < 1e-12);
                }
            }
        }

        let mut zero = store.clone();
        zero.value_mut(conv.weight).fill(0.0);
        zero.value_mut(conv.bias).copy_from_slice(&[-1.0, 0.5]);
        let mut g = Graph::new();
        let xv = g.constant(&x);
        let y = halve_channels(&mut g, &zero, &conv, xv).unwrap();
        assert_eq!(g.value(y), &[0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn pyramid_shapes_follow_config(s16 in 1usize..4, base in 1usize..3, steps in prop::collection::vec(0usize..2, 4)) {
            let mut ch = [2 * base; LEVELS];
            for l in 1..LEVELS {
                ch[l] = ch[l - 1] + 2 * steps[l - 1];
            }
            let cfg = BackboneConfig { channels_per_level: ch, input_size: 16 * s16, convs_per_level: 1 };
            let got = extents(&cfg);
            let want: Vec<usize> = (1..=LEVELS).map(|l| cfg.extent(l)).collect();
            prop_assert_eq!(got, want);
        }
    }
}
