//! Binary checkpoint container: magic, version, a JSON header describing the
//! networks and every stored tensor, then the raw little-endian `f32` data
//! in header order. Round-trips bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DiscriminatorSpec, GeneratorSpec, LossConfig, ModelBundle};
use crate::nn::{Adam, AdamConfig};

const MAGIC: &[u8; 8] = b"GFNDCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Optimizer progress needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Epoch the next batch belongs to.
    pub epoch: usize,
    /// Index of the next batch within that epoch.
    pub batch_in_epoch: usize,
    pub opt_g: Adam,
    pub opt_d: Adam,
    /// Free-form echo of the training configuration.
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub bundle: ModelBundle,
    pub train: Option<TrainState>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamConfig,
    t: u64,
    buffers: usize,
}

#[derive(Serialize, Deserialize)]
struct TrainHeader {
    step: u64,
    epoch: usize,
    batch_in_epoch: usize,
    opt_g: OptimizerHeader,
    opt_d: OptimizerHeader,
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    generator: GeneratorSpec,
    discriminator: DiscriminatorSpec,
    loss: LossConfig,
    train: Option<TrainHeader>,
    tensors: Vec<TensorEntry>,
}

fn bad(path: &FsPath, msg: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {msg}", path.display()))
}

fn optimizer_tensors<'a>(prefix: &str, opt: &'a Adam, out: &mut Vec<(String, &'a [f32])>) {
    for (i, m) in opt.m.iter().enumerate() {
        out.push((format!("{prefix}.m.{i}"), m));
    }
    for (i, v) in opt.v.iter().enumerate() {
        out.push((format!("{prefix}.v.{i}"), v));
    }
}

impl Checkpoint {
    pub fn save(&self, path: &FsPath) -> Result<()> {
        let mut bundle = self.bundle.clone();
        let mut owned: Vec<(String, Vec<f32>)> = Vec::new();
        for (name, v) in bundle.generator.slots_mut() {
            owned.push((format!("g.{name}"), v.clone()));
        }
        for (name, v) in bundle.discriminator.slots_mut() {
            owned.push((format!("d.{name}"), v.clone()));
        }
        let mut tensors: Vec<(String, &[f32])> = owned.iter().map(|(n, v)| (n.clone(), v.as_slice())).collect();
        let train = self.train.as_ref().map(|t| {
            optimizer_tensors("opt_g", &t.opt_g, &mut tensors);
            optimizer_tensors("opt_d", &t.opt_d, &mut tensors);
            let opt = |a: &Adam| OptimizerHeader { config: a.config, t: a.t, buffers: a.m.len() };
            TrainHeader {
                step: t.step,
                epoch: t.epoch,
                batch_in_epoch: t.batch_in_epoch,
                opt_g: opt(&t.opt_g),
                opt_d: opt(&t.opt_d),
                meta: t.meta.clone(),
            }
        });
        let header = Header {
            generator: self.bundle.generator.spec.clone(),
            discriminator: self.bundle.discriminator.spec.clone(),
            loss: self.bundle.loss,
            train,
            tensors: tensors.iter().map(|(n, v)| TensorEntry { name: n.clone(), len: v.len() }).collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::json(path, e))?;
        let total: usize = tensors.iter().map(|(_, v)| v.len()).sum();
        let mut buf = Vec::with_capacity(20 + json.len() + 4 * total);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
        buf.extend_from_slice(&json);
        for (_, v) in &tensors {
            for x in v.iter() {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // Write-then-rename so an interrupted save never leaves a torn file.
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad(path, "not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(path, format!("unsupported format version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20 + hlen).ok_or_else(|| bad(path, "truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::json(path, e))?;

        let mut data = &bytes[20 + hlen..];
        let mut tensors = std::collections::HashMap::new();
        for t in &header.tensors {
            let n = 4 * t.len;
            if data.len() < n {
                return Err(bad(path, format!("truncated tensor {}", t.name)));
            }
            let v: Vec<f32> = data[..n].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
            data = &data[n..];
            tensors.insert(t.name.clone(), v);
        }
        if !data.is_empty() {
            return Err(bad(path, "trailing bytes after tensor data"));
        }
        let mut take = |name: String, len: Option<usize>| -> Result<Vec<f32>> {
            let v = tensors.remove(&name).ok_or_else(|| bad(path, format!("missing tensor {name}")))?;
            if let Some(len) = len {
                if v.len() != len {
                    return Err(bad(path, format!("tensor {name} has {} values, expected {len}", v.len())));
                }
            }
            Ok(v)
        };

        let mut bundle = ModelBundle::new(header.generator, header.discriminator, header.loss, 0)
            .map_err(|e| bad(path, format!("invalid stored spec: {e}")))?;
        for (name, slot) in bundle.generator.slots_mut() {
            *slot = take(format!("g.{name}"), Some(slot.len()))?;
        }
        for (name, slot) in bundle.discriminator.slots_mut() {
            *slot = take(format!("d.{name}"), Some(slot.len()))?;
        }
        let train = match header.train {
            None => None,
            Some(h) => {
                let mut opt = |prefix: &str, oh: &OptimizerHeader| -> Result<Adam> {
                    let mut a = Adam::new(oh.config);
                    a.t = oh.t;
                    for i in 0..oh.buffers {
                        a.m.push(take(format!("{prefix}.m.{i}"), None)?);
                    }
                    for i in 0..oh.buffers {
                        a.v.push(take(format!("{prefix}.v.{i}"), None)?);
                    }
                    Ok(a)
                };
                let opt_g = opt("opt_g", &h.opt_g)?;
                let opt_d = opt("opt_d", &h.opt_d)?;
                Some(TrainState {
                    step: h.step,
                    epoch: h.epoch,
                    batch_in_epoch: h.batch_in_epoch,
                    opt_g,
                    opt_d,
                    meta: h.meta,
                })
            }
        };
        if let Some(name) = tensors.keys().next() {
            return Err(bad(path, format!("unexpected tensor {name}")));
        }
        Ok(Self { bundle, train })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ablation, GeneratorSpec};
    use crate::nn::Param;

    fn small_bundle(ablation: Ablation) -> ModelBundle {
        let mut g = GeneratorSpec::new(16, 16);
        g.base_features = 4;
        let mut d = crate::model::DiscriminatorSpec::new(16, 16, ablation.conditional_critic());
        d.base_features = 4;
        ModelBundle::new(g, d, ablation.loss_config(), 9).unwrap()
    }

    #[test]
    fn round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.ckpt");
        for ablation in [Ablation::Ganfinder, Ablation::Pix2pixBaseline] {
            let mut bundle = small_bundle(ablation);
            // Values that only survive a bit-exact encoding.
            for (_, v) in bundle.generator.slots_mut() {
                v[0] = f32::from_bits(0x3f80_0001);
            }
            let mut opt_g = Adam::new(AdamConfig::default());
            let mut p = Param::new(vec![1.0, 2.0]);
            p.grad = vec![0.1, -0.3];
            opt_g.step(&mut [&mut p]);
            let ckpt = Checkpoint {
                bundle,
                train: Some(TrainState {
                    step: 7,
                    epoch: 1,
                    batch_in_epoch: 3,
                    opt_g,
                    opt_d: Adam::new(AdamConfig::default()),
                    meta: serde_json::json!({"batch_size": 16}),
                }),
            };
            ckpt.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back, ckpt);
            let plain = Checkpoint { bundle: ckpt.bundle.clone(), train: None };
            plain.save(&path).unwrap();
            assert_eq!(Checkpoint::load(&path).unwrap(), plain);
        }
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        fs::write(&path, b"hello world, not a checkpoint").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
        Checkpoint { bundle: small_bundle(Ablation::Ganfinder), train: None }.save(&path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
