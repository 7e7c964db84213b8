use std::fmt::Write as _;
use std::path::Path;

use super::{f_measure, mae, pr_curve, s_measure, BETA2, PR_POINTS, S_ALPHA};
use crate::data::{index_name, list_indices, read_image, Image};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub index: usize,
    pub mae: f64,
    pub f_beta: f64,
    pub s_measure: f64,
}

/// Per-image scores, their means, and the mean precision-recall curve.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub images: Vec<ImageMetrics>,
    pub mae: f64,
    pub f_beta: f64,
    pub s_measure: f64,
    pub pr: Vec<(f64, f64)>,
}

impl MetricsReport {
    /// Aggregates per-image records and their precision-recall curves.
    pub fn from_parts(images: Vec<ImageMetrics>, curves: &[Vec<(f64, f64)>]) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Metrics("no images to evaluate".into()));
        }
        let n = images.len() as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| images.iter().map(f).sum::<f64>() / n;
        let mut pr = vec![(0.0, 0.0); PR_POINTS];
        for curve in curves {
            for (acc, (p, r)) in pr.iter_mut().zip(curve) {
                acc.0 += p;
                acc.1 += r;
            }
        }
        let k = curves.len().max(1) as f64;
        pr.iter_mut().for_each(|(p, r)| (*p, *r) = (*p / k, *r / k));
        Ok(Self {
            mae: mean(|m| m.mae),
            f_beta: mean(|m| m.f_beta),
            s_measure: mean(|m| m.s_measure),
            images,
            pr,
        })
    }

    pub fn count(&self) -> usize {
        self.images.len()
    }

    /// CSV with a protocol comment line, one row per image and a final
    /// `mean` row.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# f_beta: adaptive threshold min(1, 2*mean(pred)), beta^2={BETA2}; s_measure alpha={S_ALPHA}\n\
             index,mae,f_beta,s_measure\n"
        );
        for m in &self.images {
            writeln!(s, "{},{},{},{}", index_name(m.index), m.mae, m.f_beta, m.s_measure).unwrap();
        }
        writeln!(s, "mean,{},{},{}", self.mae, self.f_beta, self.s_measure).unwrap();
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Writes a curve as `threshold,precision,recall` rows.
pub fn write_pr_csv(pr: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut s = String::from("threshold,precision,recall\n");
    for (k, (p, r)) in pr.iter().enumerate() {
        writeln!(s, "{},{p},{r}", k as f64 / 255.0).unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_map(path: &Path) -> Result<Image> {
    let img = read_image(path)?;
    if img.channels != 1 {
        return Err(Error::Metrics(format!("{}: expected a grayscale map", path.display())));
    }
    Ok(img)
}

/// Scores every `NNNN.pgm` in `pred_dir` against the same index in `gt_dir`.
/// The two directories must hold exactly the same indices.
pub fn evaluate_dir(pred_dir: &Path, gt_dir: &Path) -> Result<MetricsReport> {
    let preds = list_indices(pred_dir)?;
    let gts = list_indices(gt_dir)?;
    let missing = |dir: &Path, i: usize| {
        Error::Metrics(format!("missing file {}", dir.join(format!("{}.pgm", index_name(i))).display()))
    };
    if let Some(&i) = gts.iter().find(|i| preds.binary_search(i).is_err()) {
        return Err(missing(pred_dir, i));
    }
    if let Some(&i) = preds.iter().find(|i| gts.binary_search(i).is_err()) {
        return Err(missing(gt_dir, i));
    }
    let mut images = Vec::with_capacity(gts.len());
    let mut curves = Vec::with_capacity(gts.len());
    for i in gts {
        let name = format!("{}.pgm", index_name(i));
        let (pp, gp) = (pred_dir.join(&name), gt_dir.join(&name));
        let (p, g) = (read_map(&pp)?, read_map(&gp)?);
        if (p.width, p.height) != (g.width, g.height) {
            return Err(Error::Metrics(format!(
                "{} is {}x{} but {} is {}x{}",
                pp.display(),
                p.width,
                p.height,
                gp.display(),
                g.width,
                g.height
            )));
        }
        let (pv, gv) = (p.to_planar(), g.to_planar());
        let gv: Vec<f64> = gv.into_iter().map(|v| if v >= 0.5 { 1.0 } else { 0.0 }).collect();
        let named = |e: Error| Error::Metrics(format!("{}: {e}", gp.display()));
        images.push(ImageMetrics {
            index: i,
            mae: mae(&pv, &gv)?,
            f_beta: f_measure(&pv, &gv).map_err(named)?,
            s_measure: s_measure(&pv, &gv, g.height, g.width)?,
        });
        curves.push(pr_curve(&pv, &gv).map_err(named)?);
    }
    MetricsReport::from_parts(images, &curves)
}
