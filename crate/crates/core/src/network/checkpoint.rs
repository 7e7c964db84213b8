//! Binary checkpoint format.
//!
//! ```text
//! "CMMS" u32:version
//! u32:count  { u32:len name  u32:rank u32:dims..  f64:values.. }   parameters
//! u32:count  { same framing }                                      adam.m adam.v adam.step adam.hyper
//! u32:len    key=value lines                                       config, ablation, seed, step
//! ```
//! All integers and floats are little-endian.

use std::path::Path;

use thiserror::Error;

use super::ablation::AblationSpec;
use super::model::Model;
use crate::backbone::{BackboneConfig, LEVELS};
use crate::error::{Error, Result};
use crate::tensor::AdamState;

pub const MAGIC: &[u8; 4] = b"CMMS";
pub const VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("unsupported checkpoint version: {0}")]
    Version(String),
    #[error("checkpoint truncated at byte {offset} while reading {what}")]
    Truncated { offset: usize, what: &'static str },
    #[error("checkpoint tensor {name} has shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint lacks tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor {0}")]
    UnexpectedTensor(String),
    #[error("bad checkpoint metadata: {0}")]
    Metadata(String),
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

/// Decoded file contents before they are matched against a model.
#[derive(Debug, Clone, PartialEq)]
struct Contents {
    params: Vec<Entry>,
    adam: Vec<Entry>,
    meta: Vec<(String, String)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

fn put_entries<'a>(out: &mut Vec<u8>, entries: impl ExactSizeIterator<Item = (&'a str, &'a [usize], &'a [f64])>) {
    put_u32(out, entries.len());
    for (name, shape, values) in entries {
        put_u32(out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(out, shape.len());
        for &d in shape {
            put_u32(out, d);
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated { offset: self.buf.len(), what })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> std::result::Result<usize, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn entries(&mut self) -> std::result::Result<Vec<Entry>, CheckpointError> {
        let count = self.u32("tensor count")?;
        let mut out = Vec::new();
        for _ in 0..count {
            let len = self.u32("name length")?;
            let name = String::from_utf8(self.take(len, "tensor name")?.to_vec())
                .map_err(|_| CheckpointError::Metadata("tensor name is not UTF-8".into()))?;
            let rank = self.u32("rank")?;
            let shape = (0..rank).map(|_| self.u32("dims")).collect::<std::result::Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let bytes = self.take(n.checked_mul(8).unwrap_or(usize::MAX), "tensor values")?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            out.push(Entry { name, shape, values });
        }
        Ok(out)
    }
}

fn decode(buf: &[u8]) -> std::result::Result<Contents, CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::Version(format!(
            "bad magic {:?}, not a model checkpoint",
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(CheckpointError::Version(format!("{version} (this build reads {VERSION})")));
    }
    let params = r.entries()?;
    let adam = r.entries()?;
    let len = r.u32("metadata length")?;
    let text = std::str::from_utf8(r.take(len, "metadata")?)
        .map_err(|_| CheckpointError::Metadata("not UTF-8".into()))?;
    let meta = text
        .lines()
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| CheckpointError::Metadata(format!("line {l:?} is not key=value")))
        })
        .collect::<std::result::Result<_, _>>()?;
    if r.pos != buf.len() {
        return Err(CheckpointError::Metadata(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(Contents { params, adam, meta })
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

/// Serializes parameters, Adam state and the metadata needed to rebuild the
/// architecture.
pub fn encode(model: &Model) -> Vec<u8> {
    let p = &model.params;
    let mut out = Vec::with_capacity(16 + 8 * p.scalar_count() * 3);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION as usize);
    let ids: Vec<_> = p.ids().collect();
    put_entries(&mut out, ids.iter().map(|&id| (p.name(id), p.shape(id), p.value(id))));

    let n = p.scalar_count();
    let fresh = AdamState::new(n, 1e-4);
    let adam = model.adam.as_ref().unwrap_or(&fresh);
    let step = [adam.step_count as f64];
    let hyper = [adam.lr, adam.beta1, adam.beta2, adam.eps];
    let entries: [(&str, &[usize], &[f64]); 4] = [
        ("adam.m", &[n], &adam.m),
        ("adam.v", &[n], &adam.v),
        ("adam.step", &[1], &step),
        ("adam.hyper", &[4], &hyper),
    ];
    put_entries(&mut out, entries.into_iter());

    let c = &model.config;
    let meta = format!(
        "channels={}\ninput_size={}\nconvs_per_level={}\nablation={}\nseed={}\nstep={}",
        join(&c.channels_per_level),
        c.input_size,
        c.convs_per_level,
        model.spec.explicit(),
        model.seed,
        model.step
    );
    put_u32(&mut out, meta.len());
    out.extend_from_slice(meta.as_bytes());
    out
}

fn meta_value<'a>(meta: &'a [(String, String)], key: &str) -> std::result::Result<&'a str, CheckpointError> {
    meta.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| CheckpointError::Metadata(format!("missing key {key}")))
}

fn meta_num<T: std::str::FromStr>(meta: &[(String, String)], key: &str) -> std::result::Result<T, CheckpointError> {
    let v = meta_value(meta, key)?;
    v.parse().map_err(|_| CheckpointError::Metadata(format!("{key}={v} is not a number")))
}

fn apply(model: &mut Model, c: Contents) -> std::result::Result<(), CheckpointError> {
    let ids: Vec<_> = model.params.ids().collect();
    if let Some(extra) = c.params.iter().find(|e| model.params.find(&e.name).is_none()) {
        return Err(CheckpointError::UnexpectedTensor(extra.name.clone()));
    }
    // Validate everything before touching the model.
    let mut ordered = Vec::with_capacity(ids.len());
    for &id in &ids {
        let name = model.params.name(id);
        let e = c
            .params
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        if e.shape != model.params.shape(id) {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: model.params.shape(id).to_vec(),
                found: e.shape.clone(),
            });
        }
        ordered.push(e);
    }
    let n = model.params.scalar_count();
    let get = |name: &str, len: usize| {
        let e = c
            .adam
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
        if e.shape != [len] {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: vec![len],
                found: e.shape.clone(),
            });
        }
        Ok(&e.values)
    };
    let (m, v, step, hyper) = (get("adam.m", n)?, get("adam.v", n)?, get("adam.step", 1)?, get("adam.hyper", 4)?);
    let model_step: u64 = meta_num(&c.meta, "step")?;

    for (&id, e) in ids.iter().zip(ordered) {
        model.params.value_mut(id).copy_from_slice(&e.values);
    }
    model.adam = (step[0] > 0.0).then(|| AdamState {
        step_count: step[0] as u64,
        m: m.clone(),
        v: v.clone(),
        lr: hyper[0],
        beta1: hyper[1],
        beta2: hyper[2],
        eps: hyper[3],
    });
    model.step = model_step;
    Ok(())
}

fn read(path: &Path) -> Result<Contents> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(&buf)?)
}

impl Model {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, encode(self)).map_err(|e| Error::io(path, e))
    }

    /// Rebuilds the architecture recorded in the file and loads its state.
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let c = read(path)?;
        let channels: Vec<usize> = meta_value(&c.meta, "channels")?
            .split(',')
            .map(|s| s.parse().map_err(|_| CheckpointError::Metadata(format!("bad channel width {s:?}"))))
            .collect::<std::result::Result<_, _>>()?;
        let channels_per_level: [usize; LEVELS] = channels
            .try_into()
            .map_err(|_| CheckpointError::Metadata(format!("expected {LEVELS} channel widths")))?;
        let config = BackboneConfig {
            channels_per_level,
            input_size: meta_num(&c.meta, "input_size")?,
            convs_per_level: meta_num(&c.meta, "convs_per_level")?,
        };
        let spec = AblationSpec::parse(meta_value(&c.meta, "ablation")?)?;
        let seed = meta_num(&c.meta, "seed")?;
        let mut model = Model::build(&config, spec, seed)?;
        apply(&mut model, c)?;
        Ok(model)
    }

    /// Loads parameters and optimizer state into this architecture; fails
    /// without modifying the model when the layouts differ.
    pub fn restore(&mut self, path: &Path) -> Result<()> {
        let c = read(path)?;
        Ok(apply(self, c)?)
    }
}
