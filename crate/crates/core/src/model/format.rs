//! `LMW1` tensor container, used for weight files and golden files.
//!
//! ```text
//! magic "LMW1" | version u32 | config 13 x u32 | tensor count u32
//! per tensor: name len u16 | name | rank u8 | dims u32 x rank | f32 x prod(dims)
//! ```
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::observation::{ObservationTensor, CHANNELS, SIDE};

use super::{ModelConfig, ModelWeights, Tensor};

pub const WEIGHTS_MAGIC: [u8; 4] = *b"LMW1";
pub const FORMAT_VERSION: u32 = 1;
const GOLDEN_PREFIX: &str = "golden/";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::WeightFormat(format!(
                "truncated file while reading {what}"
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn write_container(config: &ModelConfig, tensors: &BTreeMap<String, Tensor>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHTS_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for w in config.to_words() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a container. `expected` gives the shape a tensor must have, if
/// known; it is checked before the payload is read.
fn read_container(
    bytes: &[u8],
    expected: impl Fn(&ModelConfig, &str) -> Option<Vec<usize>>,
) -> Result<(ModelConfig, BTreeMap<String, Tensor>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(Error::WeightFormat("bad magic, expected LMW1".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::WeightFormat(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let mut words = [0u32; 13];
    for w in &mut words {
        *w = r.u32("config block")?;
    }
    let config = ModelConfig::from_words(words);
    let count = r.u32("tensor count")?;
    let mut tensors = BTreeMap::new();
    for i in 0..count {
        let len = u16::from_le_bytes(
            r.take(2, &format!("name of tensor {i}"))?
                .try_into()
                .unwrap(),
        );
        let name = std::str::from_utf8(r.take(len as usize, &format!("name of tensor {i}"))?)
            .map_err(|_| Error::WeightFormat(format!("tensor {i}: name is not UTF-8")))?
            .to_owned();
        let trunc = |e: Error| match e {
            Error::WeightFormat(_) => Error::Tensor {
                name: name.clone(),
                msg: "truncated file".into(),
            },
            e => e,
        };
        let rank = r.take(1, "rank").map_err(trunc)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims").map_err(trunc)? as usize);
        }
        if let Some(want) = expected(&config, &name) {
            if want != shape {
                return Err(Error::Tensor {
                    name,
                    msg: format!("shape mismatch: file has {shape:?}, config implies {want:?}"),
                });
            }
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Tensor {
                name: name.clone(),
                msg: "size overflow".into(),
            })?;
        let payload = r.take(n, "payload").map_err(trunc)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors
            .insert(name.clone(), Tensor { shape, data })
            .is_some()
        {
            return Err(Error::Tensor {
                name,
                msg: "duplicate tensor".into(),
            });
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::WeightFormat(format!(
            "{} trailing bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    Ok((config, tensors))
}

/// Expected shape of a model tensor. Query/key projections may have any
/// width, so only their input dimension is constrained (the width is
/// checked for consistency after loading).
fn model_shape(config: &ModelConfig, name: &str) -> Option<Vec<usize>> {
    if name.ends_with(".attn.k") || name.ends_with(".attn.q") {
        return None;
    }
    config
        .tensor_shapes(config.default_qk_dim())
        .into_iter()
        .find(|(n, _)| n == name)
        .map(|(_, s)| s)
}

pub fn write_weights(weights: &ModelWeights) -> Vec<u8> {
    write_container(&weights.config, &weights.tensors)
}

/// Parses and fully validates a weight file.
pub fn read_weights(bytes: &[u8]) -> Result<ModelWeights> {
    let (config, tensors) = read_container(bytes, model_shape)?;
    let weights = ModelWeights { config, tensors };
    weights.validate()?;
    Ok(weights)
}

pub fn save_weights(weights: &ModelWeights, path: &Path) -> Result<()> {
    std::fs::write(path, write_weights(weights))?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(ModelWeights, ModelConfig)> {
    let weights = read_weights(&std::fs::read(path)?)?;
    let config = weights.config;
    Ok((weights, config))
}

/// One stored input with its reference outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GoldenCase {
    pub input: ObservationTensor,
    pub logits: Vec<f32>,
    /// Backbone output `[C, 8, 8]`, when exported.
    pub features: Option<Vec<f32>>,
}

pub fn write_golden(config: &ModelConfig, cases: &[GoldenCase]) -> Vec<u8> {
    let mut tensors = BTreeMap::new();
    for (k, case) in cases.iter().enumerate() {
        tensors.insert(
            format!("{GOLDEN_PREFIX}input_{k}"),
            Tensor::new(vec![CHANNELS, SIDE, SIDE], case.input.data.clone()),
        );
        tensors.insert(
            format!("{GOLDEN_PREFIX}logits_{k}"),
            Tensor::new(vec![case.logits.len()], case.logits.clone()),
        );
        if let Some(f) = &case.features {
            let side = config.feature_h as usize;
            let c = f.len() / (side * config.feature_w as usize);
            tensors.insert(
                format!("{GOLDEN_PREFIX}features_{k}"),
                Tensor::new(vec![c, side, config.feature_w as usize], f.clone()),
            );
        }
    }
    write_container(config, &tensors)
}

/// Reads golden cases in index order. Tensors outside the `golden/`
/// namespace are ignored.
pub fn read_golden(bytes: &[u8]) -> Result<(ModelConfig, Vec<GoldenCase>)> {
    let (config, mut tensors) = read_container(bytes, |cfg, name| {
        let rest = name.strip_prefix(GOLDEN_PREFIX)?;
        if rest.starts_with("input_") {
            Some(vec![CHANNELS, SIDE, SIDE])
        } else if rest.starts_with("logits_") {
            Some(vec![cfg.action_count as usize])
        } else if rest.starts_with("features_") {
            Some(vec![
                cfg.block_channels[2] as usize,
                cfg.feature_h as usize,
                cfg.feature_w as usize,
            ])
        } else {
            None
        }
    })?;
    let mut cases = Vec::new();
    for k in 0.. {
        let Some(input) = tensors.remove(&format!("{GOLDEN_PREFIX}input_{k}")) else {
            break;
        };
        let logits = tensors
            .remove(&format!("{GOLDEN_PREFIX}logits_{k}"))
            .ok_or_else(|| Error::Tensor {
                name: format!("{GOLDEN_PREFIX}logits_{k}"),
                msg: "missing".into(),
            })?;
        let features = tensors
            .remove(&format!("{GOLDEN_PREFIX}features_{k}"))
            .map(|t| t.data);
        cases.push(GoldenCase {
            input: ObservationTensor {
                data: input.data,
                agent: 0,
                time: 0,
            },
            logits: logits.data,
            features,
        });
    }
    if let Some(stray) = tensors.keys().find(|k| k.starts_with(GOLDEN_PREFIX)) {
        return Err(Error::Tensor {
            name: stray.clone(),
            msg: "golden tensor without a matching input index".into(),
        });
    }
    Ok((config, cases))
}

pub fn save_golden(config: &ModelConfig, cases: &[GoldenCase], path: &Path) -> Result<()> {
    std::fs::write(path, write_golden(config, cases))?;
    Ok(())
}

pub fn load_golden(path: &Path) -> Result<(ModelConfig, Vec<GoldenCase>)> {
    read_golden(&std::fs::read(path)?)
}
