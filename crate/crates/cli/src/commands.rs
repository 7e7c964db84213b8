use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use cmms::backbone::{BackboneConfig, LEVELS};
use cmms::data::{index_name, load_dataset, read_image, save_dataset, split_indices, synth_sample, write_image, Image, Sample, SceneSpec};
use cmms::metrics::{f_measure, mae, s_measure};
use cmms::network::{train as run_steps, AblationSpec, Example, Model, TrainOptions, VARIANTS};
use cmms::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::Settings;
use crate::{AblateArgs, EvalArgs, InferArgs, SynthArgs, TrainArgs, TrainingArgs};

const TRAINING_KEYS: [&str; 8] = ["data", "steps", "seed", "lr", "batch", "channels", "convs", "save-every"];

fn keys(extra: &[&'static str]) -> Vec<&'static str> {
    TRAINING_KEYS.iter().chain(extra).copied().collect()
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let s = Settings::load(a.config.as_deref(), &["out", "count", "size", "seed", "noise", "misalign"])?;
    let out: PathBuf = s.require("out", a.out)?;
    let count = s.get("count", a.count, 200)?;
    let size = s.get("size", a.size, 64)?;
    let seed = s.get("seed", a.seed, 0)?;
    let noise = s.get("noise", a.noise, 0.05)?;
    let misalign = s.get("misalign", a.misalign, 0)?;
    ensure!(size > 0 && size % 16 == 0, "size {size} must be a positive multiple of 16");
    ensure!(count > 0, "count must be positive");
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..count)
        .map(|_| {
            let spec = SceneSpec::from_seed(seeds.gen(), noise, misalign);
            Ok((synth_sample(&spec, size)?, spec.describe()))
        })
        .collect::<Result<Vec<_>>>()?;
    save_dataset(&out, &samples)?;
    eprintln!("wrote {count} samples of {size}x{size} to {}", out.display());
    Ok(())
}

/// Training setup resolved from flags, config file and defaults.
struct Training {
    data: PathBuf,
    steps: u64,
    seed: u64,
    lr: f64,
    batch: usize,
    channels: Option<[usize; LEVELS]>,
    convs: usize,
    save_every: u64,
}

fn parse_channels(s: &str) -> Result<[usize; LEVELS]> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse().with_context(|| format!("bad channel width {x:?}")))
        .collect::<Result<_>>()?;
    v.try_into()
        .map_err(|v: Vec<usize>| anyhow::anyhow!("--channels needs {LEVELS} widths, got {}", v.len()))
}

fn training(s: &Settings, a: TrainingArgs) -> Result<Training> {
    let channels: Option<String> = s.opt("channels", a.channels)?;
    Ok(Training {
        data: s.require("data", a.data)?,
        steps: s.get("steps", a.steps, 500)?,
        seed: s.get("seed", a.seed, 0)?,
        lr: s.get("lr", a.lr, 1e-4)?,
        batch: s.get("batch", a.batch, 4)?,
        channels: channels.as_deref().map(parse_channels).transpose()?,
        convs: s.get("convs", a.convs, 2)?,
        save_every: s.get("save-every", a.save_every, 50)?,
    })
}

/// The dataset split into training examples and held-out samples.
struct Split {
    train: Vec<Example>,
    test: Vec<Sample>,
    size: usize,
}

fn load_split(t: &Training) -> Result<Split> {
    let samples = load_dataset(&t.data).with_context(|| format!("loading dataset {}", t.data.display()))?;
    let size = samples[0].size();
    let (train_idx, test_idx) = split_indices(samples.len(), t.seed);
    let train = train_idx
        .iter()
        .map(|&i| Example::from_sample(&samples[i]))
        .collect::<cmms::Result<Vec<_>>>()?;
    let test = test_idx.iter().map(|&i| samples[i].clone()).collect();
    Ok(Split { train, test, size })
}

fn model_config(t: &Training, size: usize) -> BackboneConfig {
    let desk = BackboneConfig::desk();
    BackboneConfig {
        channels_per_level: t.channels.unwrap_or(desk.channels_per_level),
        input_size: size,
        convs_per_level: t.convs,
    }
}

/// Rows `(step, loss)` of an existing log, kept up to `upto`.
fn read_log(path: &Path, upto: u64) -> Vec<(u64, String)> {
    let Ok(text) = fs::read_to_string(path) else {
        return Vec::new();
    };
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let (s, v) = l.split_once(',')?;
            Some((s.parse().ok()?, v.to_string()))
        })
        .filter(|(s, _)| *s <= upto)
        .collect()
}

fn write_log(path: &Path, rows: &[(u64, String)]) -> Result<()> {
    let mut s = String::from("step,loss\n");
    for (step, loss) in rows {
        writeln!(s, "{step},{loss}").unwrap();
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

/// Loads `ckpt` when resuming and it exists, otherwise builds a fresh model.
fn open_model(ckpt: &Path, resume: bool, config: &BackboneConfig, spec: AblationSpec, seed: u64) -> Result<Model> {
    if resume && ckpt.exists() {
        let m = Model::load_checkpoint(ckpt).with_context(|| format!("resuming from {}", ckpt.display()))?;
        ensure!(m.spec == spec, "{} holds variant {}, not {}", ckpt.display(), m.spec, spec);
        ensure!(
            m.config == *config && m.seed == seed,
            "{} was trained with a different configuration or seed",
            ckpt.display()
        );
        return Ok(m);
    }
    Ok(Model::build(config, spec, seed)?)
}

/// Trains up to `t.steps` total steps, checkpointing along the way.
fn fit(model: &mut Model, t: &Training, data: &[Example], ckpt: &Path, log: &Path, label: &str) -> Result<()> {
    let mut rows = read_log(log, model.step);
    let remaining = t.steps.saturating_sub(model.step);
    let chunk = if t.save_every == 0 { remaining.max(1) } else { t.save_every };
    let mut left = remaining;
    loop {
        let n = left.min(chunk);
        let opts = TrainOptions {
            steps: n,
            batch_size: t.batch,
            lr: t.lr,
            data_seed: t.seed,
            ..TrainOptions::default()
        };
        run_steps(model, data, &opts, |s, l| {
            eprintln!("{label} step {s} loss {l:.6}");
            rows.push((s, l.to_string()));
        })?;
        model.save_checkpoint(ckpt)?;
        write_log(log, &rows)?;
        left -= n;
        if left == 0 {
            return Ok(());
        }
    }
}

fn default_log(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".loss.csv");
    PathBuf::from(s)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let s = Settings::load(a.config.as_deref(), &keys(&["ablation", "ckpt", "log"]))?;
    let ablation: String = s.get("ablation", a.ablation, "full".to_string())?;
    let spec = AblationSpec::parse(&ablation)?;
    let ckpt: PathBuf = s.require("ckpt", a.ckpt)?;
    let log = s.opt("log", a.log)?.unwrap_or_else(|| default_log(&ckpt));
    let t = training(&s, a.common)?;
    let split = load_split(&t)?;
    let config = model_config(&t, split.size);
    let mut model = open_model(&ckpt, a.resume, &config, spec, t.seed)?;
    fit(&mut model, &t, &split.train, &ckpt, &log, spec.token().unwrap_or("custom"))?;
    eprintln!("saved {} at step {}", ckpt.display(), model.step);
    Ok(())
}

fn load_pair(model: &Model, rgb: &Path, depth: &Path) -> Result<(Tensor, Tensor)> {
    let s = model.input_size();
    let mut out = Vec::new();
    for (name, path, ch) in [("rgb", rgb, 3), ("depth", depth, 1)] {
        let img = read_image(path)?;
        if (img.width, img.height, img.channels) != (s, s, ch) {
            bail!(
                "{name} image {} is {}x{} with {} channels, but the checkpoint expects {s}x{s} with {ch}",
                path.display(),
                img.width,
                img.height,
                img.channels
            );
        }
        out.push(Tensor::map(ch, s, s, img.to_planar())?);
    }
    let depth = out.pop().expect("two images");
    Ok((out.pop().expect("two images"), depth))
}

fn write_map(t: &Tensor, path: &Path) -> Result<()> {
    let n = t.shape()[3];
    write_image(&Image::from_planar(1, n, n, t.values()), path)?;
    Ok(())
}

fn predict_one(model: &Model, rgb: &Path, depth: &Path, out: &Path, stem: &str, side: bool) -> Result<()> {
    let (r, d) = load_pair(model, rgb, depth)?;
    let pred = model.forward(&r, &d)?;
    if side {
        for l in 0..LEVELS {
            write_map(&pred.smap[l], &out.join(format!("{stem}_smap_{}.pgm", l + 1)))?;
            write_map(&pred.sedge[l], &out.join(format!("{stem}_sedge_{}.pgm", l + 1)))?;
        }
    } else {
        write_map(pred.saliency(), &out.join(format!("{stem}.pgm")))?;
    }
    Ok(())
}

pub fn infer(a: InferArgs) -> Result<()> {
    let s = Settings::load(a.config.as_deref(), &["ckpt", "rgb", "depth", "data", "out", "side-outputs"])?;
    let ckpt: PathBuf = s.require("ckpt", a.ckpt)?;
    let out: PathBuf = s.require("out", a.out)?;
    let side = a.side_outputs || s.get("side-outputs", None, false)?;
    let model = Model::load_checkpoint(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    if let Some(root) = s.opt::<PathBuf>("data", a.data)? {
        let indices = cmms::data::list_indices(&root.join("rgb"))?;
        ensure!(!indices.is_empty(), "no images under {}", root.join("rgb").display());
        for i in indices {
            let name = index_name(i);
            let rgb = root.join("rgb").join(format!("{name}.ppm"));
            let depth = root.join("depth").join(format!("{name}.pgm"));
            predict_one(&model, &rgb, &depth, &out, &name, side)?;
        }
        return Ok(());
    }
    let rgb: PathBuf = s.require("rgb", a.rgb)?;
    let depth: PathBuf = s.require("depth", a.depth)?;
    let stem = rgb.file_stem().and_then(|s| s.to_str()).unwrap_or("pred").to_string();
    predict_one(&model, &rgb, &depth, &out, &stem, side)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let s = Settings::load(a.config.as_deref(), &["pred", "gt", "out", "pr"])?;
    let pred: PathBuf = s.require("pred", a.pred)?;
    let gt: PathBuf = s.require("gt", a.gt)?;
    let out: PathBuf = s.require("out", a.out)?;
    let report = cmms::metrics::evaluate_dir(&pred, &gt)?;
    report.write_csv(&out)?;
    if let Some(pr) = s.opt::<PathBuf>("pr", a.pr)? {
        cmms::metrics::write_pr_csv(&report.pr, &pr)?;
    }
    eprintln!(
        "{} images: mae {:.4} f_beta {:.4} s_measure {:.4}",
        report.count(),
        report.mae,
        report.f_beta,
        report.s_measure
    );
    Ok(())
}

/// Mean `(F_beta, MAE, S_m)` of `Smap_1` over held-out samples.
fn held_out_scores(model: &Model, test: &[Sample]) -> Result<(f64, f64, f64)> {
    ensure!(!test.is_empty(), "the held-out split is empty; use at least 5 samples");
    let (mut f, mut m, mut sm) = (0.0, 0.0, 0.0);
    for smp in test {
        let pred = model.forward(&smp.rgb, &smp.depth)?;
        let (p, g) = (pred.saliency().values(), smp.mask.values());
        let n = smp.size();
        f += f_measure(p, g)?;
        m += mae(p, g)?;
        sm += s_measure(p, g, n, n)?;
    }
    let k = test.len() as f64;
    Ok((f / k, m / k, sm / k))
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let s = Settings::load(a.config.as_deref(), &keys(&["out", "variants"]))?;
    let out: PathBuf = s.require("out", a.out)?;
    let chosen: Option<String> = s.opt("variants", a.variants)?;
    let variants: Vec<_> = match chosen {
        None => VARIANTS.to_vec(),
        Some(list) => list
            .split(',')
            .map(|tok| {
                VARIANTS
                    .iter()
                    .find(|(t, _, _)| *t == tok.trim())
                    .copied()
                    .ok_or_else(|| anyhow::anyhow!("unknown variant token {tok:?}"))
            })
            .collect::<Result<_>>()?,
    };
    let t = training(&s, a.common)?;
    let split = load_split(&t)?;
    let config = model_config(&t, split.size);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let mut csv = String::from("variant,F_beta,MAE,S_m\n");
    for (token, label, spec) in variants {
        let ckpt = out.join(format!("{token}.ckpt"));
        let log = out.join(format!("{token}.loss.csv"));
        let mut model = open_model(&ckpt, true, &config, spec, t.seed)?;
        fit(&mut model, &t, &split.train, &ckpt, &log, token)?;
        let (f, m, sm) = held_out_scores(&model, &split.test)?;
        eprintln!("{label}: F_beta {f:.4} MAE {m:.4} S_m {sm:.4}");
        writeln!(csv, "{label},{f},{m},{sm}").unwrap();
    }
    let path = out.join("ablation.csv");
    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
