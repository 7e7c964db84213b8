use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ablation::{AblationSpec, CmfmMode};
use crate::afs::{AfsBlock, LevelFeatures};
use crate::backbone::{halve_channels, halving_conv, Backbone, BackboneConfig, Stream, LEVELS};
use crate::cmfm::{cmfm_forward, ModulatorParams};
use crate::error::{Error, Result};
use crate::nn::Conv;
use crate::sgpea::{edge_attention, position_attention, predict_edge, predict_saliency, Predictor, SideOutputs};
use crate::tensor::{AdamState, Graph, ParamId, ParamStore, Tensor, Var};

#[derive(Debug, Clone)]
enum Fusion {
    Modulate(ModulatorParams),
    Off,
    Add,
    Concat(Conv),
}

/// Parameters of one pyramid level.
#[derive(Debug, Clone)]
struct Level {
    level: usize,
    halve_rgb: Conv,
    halve_depth: Conv,
    fusion: Fusion,
    /// Upsampled-path convs carrying the refined features of level + 1.
    up: Option<[Conv; 2]>,
    afs: AfsBlock,
    s_pre: Predictor,
    e_pre: Predictor,
}

/// The ten side predictions of one forward pass, as graph nodes.
#[derive(Debug, Clone)]
pub struct SideVars {
    /// `Smap_1 … Smap_5`, finest first.
    pub smap: Vec<Var>,
    pub sedge: Vec<Var>,
}

/// The two-stream network with its parameters, optimizer state and
/// training position.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: BackboneConfig,
    pub spec: AblationSpec,
    pub seed: u64,
    pub params: ParamStore,
    /// Created on the first optimizer step.
    pub adam: Option<AdamState>,
    /// Number of optimizer steps taken.
    pub step: u64,
    rgb: Backbone,
    depth: Backbone,
    /// Level 1 first.
    levels: Vec<Level>,
}

impl Model {
    /// Deterministic initialization from `seed`.
    pub fn build(config: &BackboneConfig, spec: AblationSpec, seed: u64) -> Result<Self> {
        config.validate()?;
        let widths: Vec<usize> = (1..=LEVELS).map(|l| config.stream_width(l)).collect();
        spec.validate(&widths)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rgb = Backbone::new(&mut store, &mut rng, config, Stream::Rgb)?;
        let depth = Backbone::new(&mut store, &mut rng, config, Stream::Depth)?;

        // built deepest first so each level knows the width arriving from below
        let mut levels = Vec::with_capacity(LEVELS);
        let mut below_width = None;
        for l in (1..=LEVELS).rev() {
            let c = config.stream_width(l);
            let full = config.channels_per_level[l - 1];
            let name = |part: &str| format!("l{l}.{part}");
            let halve_rgb = halving_conv(&mut store, &mut rng, &name("halve_rgb"), full)?;
            let halve_depth = halving_conv(&mut store, &mut rng, &name("halve_depth"), full)?;
            let fusion = match spec.cmfm {
                CmfmMode::Full => Fusion::Modulate(ModulatorParams::new(&mut store, &mut rng, &name("cmfm"), c)),
                CmfmMode::Off => Fusion::Off,
                CmfmMode::Add => Fusion::Add,
                CmfmMode::Concat => Fusion::Concat(Conv::new(&mut store, &mut rng, &name("cmfc"), 2 * c, c, 3)),
            };
            let up = below_width.map(|w| {
                [
                    Conv::new(&mut store, &mut rng, &name("up1"), w, c, 3),
                    Conv::new(&mut store, &mut rng, &name("up2"), c, c, 3),
                ]
            });
            let streams = 2 + usize::from(spec.cmfm != CmfmMode::Off) + usize::from(up.is_some());
            let afs = AfsBlock::new(&mut store, &mut rng, &name("afs"), spec.afs, c, streams)?;
            let s_pre = Predictor::new(&mut store, &mut rng, &name("s_pre"), afs.out_channels());
            let e_pre = Predictor::new(&mut store, &mut rng, &name("e_pre"), streams * c);
            below_width = Some(afs.out_channels());
            levels.push(Level {
                level: l,
                halve_rgb,
                halve_depth,
                fusion,
                up,
                afs,
                s_pre,
                e_pre,
            });
        }
        levels.reverse();
        Ok(Self {
            config: config.clone(),
            spec,
            seed,
            params: store,
            adam: None,
            step: 0,
            rgb,
            depth,
            levels,
        })
    }

    pub fn input_size(&self) -> usize {
        self.config.input_size
    }

    /// Parameters of the edge predictors.
    pub fn edge_head_params(&self) -> Vec<ParamId> {
        self.levels
            .iter()
            .flat_map(|lv| lv.e_pre.convs.iter().flat_map(|c| [c.weight, c.bias]))
            .collect()
    }

    /// Parameters of the modulation branches (empty unless cmFM is on).
    pub fn modulator_params(&self) -> Vec<ParamId> {
        self.levels
            .iter()
            .flat_map(|lv| match &lv.fusion {
                Fusion::Modulate(m) => m.gamma.iter().chain(&m.beta).flat_map(|c| [c.weight, c.bias]).collect(),
                _ => Vec::new(),
            })
            .collect()
    }

    fn check_inputs(&self, rgb: &[usize], depth: &[usize]) -> Result<()> {
        let s = self.input_size();
        for (name, shape, c) in [("rgb", rgb, 3), ("depth", depth, 1)] {
            if shape != [1, c, s, s] {
                return Err(Error::Config(format!(
                    "{name} input has shape {shape:?}, but the model expects [1, {c}, {s}, {s}]"
                )));
            }
        }
        Ok(())
    }

    /// Records the forward pass on `g` using the parameter values in `p`,
    /// which must share this model's layout.
    pub fn forward_graph<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, rgb: Var, depth: Var) -> Result<SideVars> {
        self.check_inputs(g.shape(rgb), g.shape(depth))?;
        let rgb_pyr = self.rgb.extract_pyramid(g, p, rgb)?;
        let depth_pyr = self.depth.extract_pyramid(g, p, depth)?;
        let mut smap = vec![None; LEVELS];
        let mut sedge = vec![None; LEVELS];
        let mut fs_below: Option<Var> = None;
        let mut smap_below: Option<Var> = None;
        for lv in self.levels.iter().rev() {
            let i = lv.level - 1;
            let f_rgb = halve_channels(g, p, &lv.halve_rgb, rgb_pyr[i])?;
            let f_depth = halve_channels(g, p, &lv.halve_depth, depth_pyr[i])?;
            let f_mod = match &lv.fusion {
                Fusion::Modulate(m) => Some(cmfm_forward(g, p, m, f_rgb, f_depth)?),
                Fusion::Off => None,
                Fusion::Add => Some(g.add(f_rgb, f_depth)?),
                Fusion::Concat(conv) => {
                    let cat = g.concat_channels(&[f_rgb, f_depth])?;
                    Some(conv.forward_relu(g, p, cat)?)
                }
            };
            let fs_up = match (&lv.up, fs_below) {
                (Some([c1, c2]), Some(fs)) => {
                    let u = g.upsample_bilinear2x(fs)?;
                    let u = c1.forward_relu(g, p, u)?;
                    Some(c2.forward_relu(g, p, u)?)
                }
                _ => None,
            };
            let features = LevelFeatures {
                f_rgb,
                f_depth,
                f_mod,
                fs_up,
                level: lv.level,
            };
            let cat = g.concat_channels(&features.streams())?;
            let e = predict_edge(g, p, &lv.e_pre, cat)?;
            let mut f = lv.afs.forward(g, p, &features)?;
            if self.spec.pea.position() {
                let up = smap_below.map(|s| g.upsample_bilinear2x(s)).transpose()?;
                f = position_attention(g, f, up)?;
            }
            if self.spec.pea.edge() {
                f = edge_attention(g, f, e)?;
            }
            let s = predict_saliency(g, p, &lv.s_pre, f)?;
            smap[i] = Some(s);
            sedge[i] = Some(e);
            fs_below = Some(f);
            smap_below = Some(s);
        }
        Ok(SideVars {
            smap: smap.into_iter().map(|v| v.expect("every level visited")).collect(),
            sedge: sedge.into_iter().map(|v| v.expect("every level visited")).collect(),
        })
    }

    /// Inference on one `[1, 3, S, S]` image and `[1, 1, S, S]` depth map.
    pub fn forward(&self, rgb: &Tensor, depth: &Tensor) -> Result<SideOutputs> {
        self.check_inputs(rgb.shape(), depth.shape())?;
        let mut g = Graph::new();
        let (r, d) = (g.constant(rgb), g.constant(depth));
        let side = self.forward_graph(&mut g, &self.params, r, d)?;
        Ok(SideOutputs {
            smap: side.smap.iter().map(|&v| g.tensor(v)).collect(),
            sedge: side.sedge.iter().map(|&v| g.tensor(v)).collect(),
        })
    }
}
