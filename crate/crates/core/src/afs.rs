//! Adaptive feature selection: per-stream squeeze-and-excitation, channel
//! attention over the concatenated attention results, and pixel-wise gated
//! fusion of the level's streams.

use rand::Rng;

use crate::backbone::LEVELS;
use crate::error::{Error, Result};
use crate::nn::{Conv, Linear};
use crate::tensor::{Graph, ParamStore, TensorError, Var};

pub const SE_REDUCTION: usize = 16;
pub const GATE_LAYERS: usize = 6;

/// The streams entering one level's selection block, in fusion order.
#[derive(Debug, Clone, Copy)]
pub struct LevelFeatures {
    pub f_rgb: Var,
    pub f_depth: Var,
    /// Absent when the modulation stage is ablated away.
    pub f_mod: Option<Var>,
    /// Refined features of the level below, upsampled; absent at the deepest level.
    pub fs_up: Option<Var>,
    /// 1-based pyramid level.
    pub level: usize,
}

impl LevelFeatures {
    pub fn streams(&self) -> Vec<Var> {
        let mut s = vec![self.f_rgb, self.f_depth];
        s.extend(self.f_mod);
        s.extend(self.fs_up);
        s
    }

    /// Checks the shared-shape and `fs_up`-presence invariants; returns the
    /// stream width.
    pub fn validate(&self, g: &Graph) -> Result<usize> {
        if !(1..=LEVELS).contains(&self.level) {
            return Err(Error::Config(format!("level {} outside 1..={LEVELS}", self.level)));
        }
        if self.fs_up.is_some() != (self.level < LEVELS) {
            return Err(Error::Config(format!(
                "level {}: upsampled features must be present exactly below the deepest level",
                self.level
            )));
        }
        let shape = g.shape(self.f_rgb).to_vec();
        if shape.len() != 4 {
            return Err(TensorError::Rank {
                op: "level_features",
                expected: 4,
                got: shape,
            }
            .into());
        }
        for v in self.streams() {
            if g.shape(v) != shape.as_slice() {
                return Err(Error::Config(format!(
                    "level {}: stream shape {:?} differs from {shape:?}",
                    self.level,
                    g.shape(v)
                )));
            }
        }
        Ok(shape[1])
    }
}

/// Squeeze-and-excitation gate `σ(W2·δ(W1·gap(x)))`.
#[derive(Debug, Clone)]
pub struct SeLayer {
    pub fc1: Linear,
    pub fc2: Linear,
    pub channels: usize,
}

impl SeLayer {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, channels: usize) -> Self {
        let hidden = channels.div_ceil(SE_REDUCTION).max(1);
        Self {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), channels, hidden),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, channels),
            channels,
        }
    }

    pub fn hidden(&self) -> usize {
        self.fc1.n_out
    }

    /// The channel scale vector `s`.
    pub fn scale<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, x: Var) -> Result<Var> {
        let z = g.global_avg_pool(x)?;
        let h = self.fc1.forward(g, p, z)?;
        let h = g.relu(h);
        let s = self.fc2.forward(g, p, h)?;
        Ok(g.sigmoid(s))
    }
}

pub fn se_rescale<'p>(g: &mut Graph<'p>, p: &'p ParamStore, se: &SeLayer, x: Var) -> Result<Var> {
    let s = se.scale(g, p, x)?;
    Ok(g.scale_channels(x, s)?)
}

/// Channel attention on channel attention.
#[derive(Debug, Clone)]
pub struct Caca {
    pub se_self: Vec<SeLayer>,
    pub halve: Vec<Conv>,
    pub se_cross: SeLayer,
    pub squeeze: Conv,
    pub channels: usize,
}

/// Intermediate results of [`Caca::forward_parts`].
#[derive(Debug, Clone, Copy)]
pub struct CacaParts {
    /// Concatenated halved attention results.
    pub v: Var,
    /// Channel attention over `v`.
    pub y: Var,
    /// `y` squeezed back to the stream width.
    pub y_caca: Var,
}

impl Caca {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        channels: usize,
        streams: usize,
    ) -> Result<Self> {
        if channels == 0 || channels % 2 != 0 {
            return Err(Error::Config(format!(
                "{name}: stream width {channels} must be even to halve"
            )));
        }
        let half = channels / 2;
        let se_self = (0..streams)
            .map(|m| SeLayer::new(store, rng, &format!("{name}.se{m}"), channels))
            .collect();
        let halve = (0..streams)
            .map(|m| Conv::new(store, rng, &format!("{name}.halve{m}"), channels, half, 3))
            .collect();
        let se_cross = SeLayer::new(store, rng, &format!("{name}.se_cross"), streams * half);
        let squeeze = Conv::new(store, rng, &format!("{name}.squeeze"), streams * half, channels, 3);
        Ok(Self {
            se_self,
            halve,
            se_cross,
            squeeze,
            channels,
        })
    }

    pub fn forward_parts<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, streams: &[Var]) -> Result<CacaParts> {
        if streams.len() != self.se_self.len() {
            return Err(Error::Config(format!(
                "caca built for {} streams, got {}",
                self.se_self.len(),
                streams.len()
            )));
        }
        let mut halves = Vec::with_capacity(streams.len());
        for ((&f, se), conv) in streams.iter().zip(&self.se_self).zip(&self.halve) {
            let a = se_rescale(g, p, se, f)?;
            halves.push(conv.forward_relu(g, p, a)?);
        }
        let v = g.concat_channels(&halves)?;
        let y = se_rescale(g, p, &self.se_cross, v)?;
        let y_caca = self.squeeze.forward_relu(g, p, y)?;
        Ok(CacaParts { v, y, y_caca })
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, streams: &[Var]) -> Result<Var> {
        Ok(self.forward_parts(g, p, streams)?.y_caca)
    }
}

/// Gate network emitting one sigmoid confidence map per stream, followed by
/// the gated sum and a 3×3 conv + ReLU.
#[derive(Debug, Clone)]
pub struct GatedFusion {
    pub gate: Vec<Conv>,
    pub post: Conv,
    pub channels: usize,
    pub streams: usize,
}

impl GatedFusion {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        channels: usize,
        streams: usize,
    ) -> Self {
        let width = streams * channels;
        let gate = (0..GATE_LAYERS)
            .map(|i| Conv::new(store, rng, &format!("{name}.gate{}", i + 1), width, width, 3))
            .collect();
        let post = Conv::new(store, rng, &format!("{name}.post"), channels, channels, 3);
        Self {
            gate,
            post,
            channels,
            streams,
        }
    }

    /// One `[1, C, H, W]` confidence map per stream, in stream order.
    pub fn confidence_maps<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, f_cat: Var) -> Result<Vec<Var>> {
        let (last, hidden) = self.gate.split_last().expect("gate has layers");
        let mut h = f_cat;
        for c in hidden {
            h = c.forward_relu(g, p, h)?;
        }
        let logits = last.forward(g, p, h)?;
        let conf = g.sigmoid(logits);
        (0..self.streams)
            .map(|m| Ok(g.slice_channels(conf, m * self.channels, self.channels)?))
            .collect()
    }

    /// `F_gated` before the output convolution.
    pub fn gated<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, streams: &[Var]) -> Result<Var> {
        if streams.len() != self.streams {
            return Err(Error::Config(format!(
                "gated fusion built for {} streams, got {}",
                self.streams,
                streams.len()
            )));
        }
        let f_cat = g.concat_channels(streams)?;
        let conf = self.confidence_maps(g, p, f_cat)?;
        gated_sum(g, streams, &conf)
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, streams: &[Var]) -> Result<Var> {
        let f = self.gated(g, p, streams)?;
        Ok(self.post.forward_relu(g, p, f)?)
    }
}

/// `Σ_m F_m ⊗ C_m`, accumulated in stream order.
pub fn gated_sum(g: &mut Graph, streams: &[Var], confidences: &[Var]) -> Result<Var> {
    if streams.is_empty() || streams.len() != confidences.len() {
        return Err(Error::Config(format!(
            "gated sum needs one confidence map per stream, got {} streams and {} maps",
            streams.len(),
            confidences.len()
        )));
    }
    let mut acc = g.mul(streams[0], confidences[0])?;
    for (&f, &c) in streams.iter().zip(confidences).skip(1) {
        let t = g.mul(f, c)?;
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// `Cat{F_gated', Y_caca}`.
pub fn afs_forward<'p>(
    g: &mut Graph<'p>,
    p: &'p ParamStore,
    gated: &GatedFusion,
    caca: &Caca,
    streams: &[Var],
) -> Result<Var> {
    let a = gated.forward(g, p, streams)?;
    let b = caca.forward(g, p, streams)?;
    Ok(g.concat_channels(&[a, b])?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AfsMode {
    Full,
    /// Streams are concatenated without selection.
    Off,
    /// Cross-modality channel attention only.
    NoGff,
    /// Gated fusion only.
    NoCaca,
    /// A single SE block over the concatenated streams, squeezed to `2C`.
    PlainCa,
}

#[derive(Debug, Clone)]
enum AfsParams {
    Full(GatedFusion, Caca),
    Off,
    NoGff(Caca),
    NoCaca(GatedFusion),
    PlainCa(SeLayer, Conv),
}

/// One level's selection stage under a given [`AfsMode`].
#[derive(Debug, Clone)]
pub struct AfsBlock {
    params: AfsParams,
    pub channels: usize,
    pub streams: usize,
}

impl AfsBlock {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        mode: AfsMode,
        channels: usize,
        streams: usize,
    ) -> Result<Self> {
        let params = match mode {
            AfsMode::Full => AfsParams::Full(
                GatedFusion::new(store, rng, &format!("{name}.gff"), channels, streams),
                Caca::new(store, rng, &format!("{name}.caca"), channels, streams)?,
            ),
            AfsMode::Off => AfsParams::Off,
            AfsMode::NoGff => AfsParams::NoGff(Caca::new(store, rng, &format!("{name}.caca"), channels, streams)?),
            AfsMode::NoCaca => {
                AfsParams::NoCaca(GatedFusion::new(store, rng, &format!("{name}.gff"), channels, streams))
            }
            AfsMode::PlainCa => AfsParams::PlainCa(
                SeLayer::new(store, rng, &format!("{name}.se"), streams * channels),
                Conv::new(store, rng, &format!("{name}.squeeze"), streams * channels, 2 * channels, 3),
            ),
        };
        Ok(Self {
            params,
            channels,
            streams,
        })
    }

    pub fn mode(&self) -> AfsMode {
        match self.params {
            AfsParams::Full(..) => AfsMode::Full,
            AfsParams::Off => AfsMode::Off,
            AfsParams::NoGff(_) => AfsMode::NoGff,
            AfsParams::NoCaca(_) => AfsMode::NoCaca,
            AfsParams::PlainCa(..) => AfsMode::PlainCa,
        }
    }

    pub fn out_channels(&self) -> usize {
        match self.mode() {
            AfsMode::Full | AfsMode::PlainCa => 2 * self.channels,
            AfsMode::Off => self.streams * self.channels,
            AfsMode::NoGff | AfsMode::NoCaca => self.channels,
        }
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, p: &'p ParamStore, features: &LevelFeatures) -> Result<Var> {
        let width = features.validate(g)?;
        let streams = features.streams();
        if width != self.channels || streams.len() != self.streams {
            return Err(Error::Config(format!(
                "level {}: block expects {} streams of width {}, got {} of width {width}",
                features.level,
                self.streams,
                self.channels,
                streams.len()
            )));
        }
        match &self.params {
            AfsParams::Full(gf, caca) => afs_forward(g, p, gf, caca, &streams),
            AfsParams::Off => Ok(g.concat_channels(&streams)?),
            AfsParams::NoGff(caca) => caca.forward(g, p, &streams),
            AfsParams::NoCaca(gf) => gf.forward(g, p, &streams),
            AfsParams::PlainCa(se, squeeze) => {
                let cat = g.concat_channels(&streams)?;
                let a = se_rescale(g, p, se, cat)?;
                Ok(squeeze.forward_relu(g, p, a)?)
            }
        }
    }
}
