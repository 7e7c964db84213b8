//! Samples, synthetic scenes, image files, edge ground truth and the
//! on-disk dataset layout.

mod canny;
mod image;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use canny::{canny, mask_edges, HIGH_FRAC, LOW_FRAC};
pub use image::{read_image, write_image, Image, ImageError};
pub use synth::{synth_sample, SceneSpec, ShapeKind};

use crate::backbone::LEVELS;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An aligned RGB-D pair with its binary saliency mask and edge mask, all
/// `[1, C, S, S]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub rgb: Tensor,
    pub depth: Tensor,
    pub mask: Tensor,
    pub edge: Tensor,
}

impl Sample {
    pub fn size(&self) -> usize {
        self.mask.shape()[3]
    }

    /// Builds a sample from images, deriving the edge mask from `gt`.
    /// The mask is binarized at 0.5.
    pub fn from_images(rgb: &Image, depth: &Image, gt: &Image) -> Result<Self> {
        let s = gt.width;
        for (name, img, ch) in [("rgb", rgb, 3), ("depth", depth, 1), ("gt", gt, 1)] {
            if img.width != s || img.height != s || img.channels != ch {
                return Err(Error::Data(format!(
                    "{name} image is {}x{}x{}, expected {s}x{s}x{ch}",
                    img.width, img.height, img.channels
                )));
            }
        }
        let mask: Vec<f64> = gt
            .to_planar()
            .into_iter()
            .map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
            .collect();
        let edge = mask_edges(&mask, s, s);
        Ok(Self {
            rgb: Tensor::map(3, s, s, rgb.to_planar())?,
            depth: Tensor::map(1, s, s, depth.to_planar())?,
            mask: Tensor::map(1, s, s, mask)?,
            edge: Tensor::map(1, s, s, edge)?,
        })
    }
}

/// Halves a single-channel `s × s` map with bilinear half-pixel sampling,
/// which for an exact factor of two is the mean of each 2×2 block.
fn downsample2(map: &[f64], s: usize) -> Vec<f64> {
    let h = s / 2;
    let mut out = vec![0.0; h * h];
    for y in 0..h {
        for x in 0..h {
            let i = 2 * y * s + 2 * x;
            out[y * h + x] = (map[i] + map[i + 1] + map[i + s] + map[i + s + 1]) / 4.0;
        }
    }
    out
}

/// Five soft targets, finest first; level 1 is the input itself.
pub fn gt_pyramid(mask: &Tensor) -> Result<Vec<Tensor>> {
    let (c, h, w) = mask.chw()?;
    if c != 1 || h != w || h % (1 << (LEVELS - 1)) != 0 {
        return Err(Error::Data(format!(
            "pyramid needs a square single-channel map with extent divisible by 16, got {:?}",
            mask.shape()
        )));
    }
    let mut out = vec![mask.clone()];
    let mut s = h;
    for _ in 1..LEVELS {
        let next = downsample2(out.last().expect("non-empty").values(), s);
        s /= 2;
        out.push(Tensor::map(1, s, s, next)?);
    }
    Ok(out)
}

pub fn index_name(i: usize) -> String {
    format!("{i:04}")
}

pub const MANIFEST: &str = "manifest.txt";

/// Writes `samples` in the layout `<root>/{rgb,depth,gt}/NNNN.(ppm|pgm)`
/// plus a manifest with one line per sample.
pub fn save_dataset(root: &Path, samples: &[(Sample, String)]) -> Result<()> {
    for sub in ["rgb", "depth", "gt"] {
        let d = root.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut manifest = String::new();
    for (i, (smp, desc)) in samples.iter().enumerate() {
        let s = smp.size();
        let name = index_name(i);
        write_image(&Image::from_planar(3, s, s, smp.rgb.values()), &root.join("rgb").join(format!("{name}.ppm")))?;
        write_image(&Image::from_planar(1, s, s, smp.depth.values()), &root.join("depth").join(format!("{name}.pgm")))?;
        write_image(&Image::from_planar(1, s, s, smp.mask.values()), &root.join("gt").join(format!("{name}.pgm")))?;
        manifest.push_str(&format!("{name} {desc}\n"));
    }
    let path = root.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Sorted numeric indices of the `.ppm`/`.pgm` files in `dir`.
pub fn list_indices(dir: &Path) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str());
        if !matches!(ext, Some("pgm" | "ppm")) {
            continue;
        }
        if let Some(i) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
            out.push(i);
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Data(format!("missing file {}", path.display())))
    }
}

/// Loads every sample indexed under `<root>/gt`, in index order.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    let indices = list_indices(&root.join("gt"))?;
    if indices.is_empty() {
        return Err(Error::Data(format!("no samples under {}", root.join("gt").display())));
    }
    indices
        .into_iter()
        .map(|i| {
            let name = index_name(i);
            let rgb = read_image(&require(root.join("rgb").join(format!("{name}.ppm")))?)?;
            let depth = read_image(&require(root.join("depth").join(format!("{name}.pgm")))?)?;
            let gt = read_image(&root.join("gt").join(format!("{name}.pgm")))?;
            Sample::from_images(&rgb, &depth, &gt)
        })
        .collect()
}

/// Seeded 80/20 partition of `0..n` into (train, test) index lists.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n - n / 5);
    let mut train = idx;
    train.sort_unstable();
    let mut test = test;
    test.sort_unstable();
    (train, test)
}
