//! Procedural RGB-D scenes: near salient objects over a far, cluttered
//! background, with noisy and optionally misaligned depth.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::canny::mask_edges;
use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Blob,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Blob];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Rectangle => "rectangle",
            ShapeKind::Blob => "blob",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    /// Number of salient objects, 1..=3.
    pub objects: usize,
    /// Shape kinds objects and clutter are drawn from.
    pub kinds: Vec<ShapeKind>,
    /// Background distractor density in `[0, 1]`.
    pub clutter: f64,
    /// Standard deviation of additive Gaussian depth noise.
    pub noise: f64,
    /// Depth shift relative to RGB, in pixels along both axes.
    pub misalign: i32,
}

impl SceneSpec {
    /// A scene with seed-derived object count and default difficulty.
    pub fn from_seed(seed: u64, noise: f64, misalign: i32) -> Self {
        let objects = 1 + (ChaCha8Rng::seed_from_u64(seed ^ 0x5eed).gen_range(0..3));
        Self {
            seed,
            objects,
            kinds: ShapeKind::ALL.to_vec(),
            clutter: 0.5,
            noise,
            misalign,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Data(format!("invalid scene spec: {msg}")));
        if !(1..=3).contains(&self.objects) {
            return bad(format!("object count {} outside 1..=3", self.objects));
        }
        if self.kinds.is_empty() {
            return bad("no shape kinds".into());
        }
        if !(0.0..=1.0).contains(&self.clutter) {
            return bad(format!("clutter {} outside [0, 1]", self.clutter));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and non-negative", self.noise));
        }
        Ok(())
    }

    /// One-line `key=value` description, as written to dataset manifests.
    pub fn describe(&self) -> String {
        let kinds: Vec<&str> = self.kinds.iter().map(|k| k.name()).collect();
        format!(
            "seed={} objects={} kinds={} clutter={} noise={} misalign={}",
            self.seed,
            self.objects,
            kinds.join(","),
            self.clutter,
            self.noise,
            self.misalign
        )
    }
}

/// A filled shape in pixel coordinates.
#[derive(Debug, Clone)]
struct Shape {
    kind: ShapeKind,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    /// Blob radial harmonics `(amplitude, frequency, phase)`.
    harmonics: [(f64, f64, f64); 2],
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, kind: ShapeKind, s: f64, scale: (f64, f64)) -> Self {
        let ry = rng.gen_range(scale.0..scale.1) * s;
        let rx = rng.gen_range(scale.0..scale.1) * s;
        let margin = ry.max(rx).min(0.45 * s);
        let cy = rng.gen_range(margin..(s - margin).max(margin + 1.0));
        let cx = rng.gen_range(margin..(s - margin).max(margin + 1.0));
        let mut harmonics = [(0.0, 0.0, 0.0); 2];
        for h in &mut harmonics {
            *h = (
                rng.gen_range(0.05..0.2),
                rng.gen_range(2..6) as f64,
                rng.gen_range(0.0..TAU),
            );
        }
        Self {
            kind,
            cy,
            cx,
            ry,
            rx,
            harmonics,
        }
    }

    /// Membership of the pixel centred at `(y + 0.5, x + 0.5)`.
    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = (y as f64 + 0.5 - self.cy) / self.ry;
        let dx = (x as f64 + 0.5 - self.cx) / self.rx;
        match self.kind {
            ShapeKind::Rectangle => dy.abs() <= 1.0 && dx.abs() <= 1.0,
            ShapeKind::Ellipse => dy * dy + dx * dx <= 1.0,
            ShapeKind::Blob => {
                let theta = dy.atan2(dx);
                let r = 1.0 + self.harmonics.iter().map(|&(a, f, p)| a * (f * theta + p).sin()).sum::<f64>();
                (dy * dy + dx * dx).sqrt() <= r
            }
        }
    }
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

/// Renders one sample. Scene layout and noise use independent random
/// streams, so changing `noise` leaves the clean scene unchanged.
pub fn synth_sample(spec: &SceneSpec, size: usize) -> Result<Sample> {
    spec.validate()?;
    if size == 0 || size % 16 != 0 {
        return Err(Error::Data(format!("sample size {size} must be a positive multiple of 16")));
    }
    let s = size;
    let sf = s as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let far = rng.gen_range(0.1..0.35);
    let near = rng.gen_range(0.65..0.9);

    // background: linear colour ramp between two random colours
    let (c0, c1) = (random_color(&mut rng), random_color(&mut rng));
    let angle = rng.gen_range(0.0..TAU);
    let (sa, ca) = angle.sin_cos();
    let mut rgb = vec![0.0; 3 * s * s];
    for y in 0..s {
        for x in 0..s {
            let t = ((y as f64 / sf - 0.5) * sa + (x as f64 / sf - 0.5) * ca + 0.75) / 1.5;
            for c in 0..3 {
                rgb[c * s * s + y * s + x] = c0[c] + (c1[c] - c0[c]) * t.clamp(0.0, 1.0);
            }
        }
    }

    let pick = |rng: &mut ChaCha8Rng| spec.kinds[rng.gen_range(0..spec.kinds.len())];
    let objects: Vec<(Shape, [f64; 3])> = (0..spec.objects)
        .map(|_| {
            let k = pick(&mut rng);
            (Shape::random(&mut rng, k, sf, (0.12, 0.3)), random_color(&mut rng))
        })
        .collect();

    let clutter_count = (spec.clutter * 8.0).round() as usize;
    let clutter: Vec<(Shape, [f64; 3])> = (0..clutter_count)
        .map(|_| {
            let k = pick(&mut rng);
            (Shape::random(&mut rng, k, sf, (0.05, 0.15)), random_color(&mut rng))
        })
        .collect();
    let mut mask = vec![0.0; s * s];
    for y in 0..s {
        for x in 0..s {
            let i = y * s + x;
            let mut color = None;
            for (shape, c) in &clutter {
                if shape.contains(y, x) {
                    color = Some(*c);
                }
            }
            for (shape, c) in &objects {
                if shape.contains(y, x) {
                    color = Some(*c);
                    mask[i] = 1.0;
                }
            }
            if let Some(c) = color {
                for (k, v) in c.iter().enumerate() {
                    rgb[k * s * s + i] = *v;
                }
            }
        }
    }

    let clean: Vec<f64> = mask.iter().map(|&m| if m == 1.0 { near } else { far }).collect();
    let shifted = shift_clamped(&clean, s, spec.misalign);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(1);
    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("valid normal");
    let depth: Vec<f64> = shifted
        .iter()
        .map(|&d| {
            if spec.noise == 0.0 {
                d
            } else {
                (d + normal.sample(&mut noise_rng)).clamp(0.0, 1.0)
            }
        })
        .collect();

    let edge = mask_edges(&mask, s, s);
    Ok(Sample {
        rgb: Tensor::map(3, s, s, rgb)?,
        depth: Tensor::map(1, s, s, depth)?,
        mask: Tensor::map(1, s, s, mask)?,
        edge: Tensor::map(1, s, s, edge)?,
    })
}

/// Translates a square map by `(d, d)` pixels, clamping at the borders.
fn shift_clamped(map: &[f64], s: usize, d: i32) -> Vec<f64> {
    if d == 0 {
        return map.to_vec();
    }
    let src = |i: usize| (i as i64 - d as i64).clamp(0, s as i64 - 1) as usize;
    (0..s * s).map(|i| map[src(i / s) * s + src(i % s)]).collect()
}
