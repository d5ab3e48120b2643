//! Single-file checkpoints.
//!
//! Layout: the 8-byte magic `EXEDCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then the raw
//! little-endian `f32` data of every tensor listed in the header. The header
//! carries the architecture fingerprint, the step, the run configuration and
//! the optimizer step counters.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use exedit_core::model::{architecture_fingerprint, fingerprint_diff};
use exedit_core::nn::{Adam, Moments, ParamKey, ParamStore};
use exedit_core::{ModelBundle, Real, Tensor, Trainer, Variant};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EXEDCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the data section, in elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub fingerprint: BTreeMap<String, String>,
    pub variant: Variant,
    pub step: u64,
    pub seed: u64,
    pub config: RunConfig,
    /// Update counters of each optimizer.
    pub optimizers: BTreeMap<String, u64>,
    pub tensors: Vec<TensorEntry>,
}

/// A restored training state together with the configuration it ran under.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub trainer: Trainer<f32>,
}

impl Checkpoint {
    pub fn config(&self) -> &RunConfig {
        &self.header.config
    }

    pub fn bundle(&self) -> &ModelBundle<f32> {
        &self.trainer.bundle
    }
}

fn param_name(store: &ParamStore<f32>, index: usize) -> String {
    format!("{}/{index:03}/{}", store.group().name(), store.params()[index].name)
}

fn optimizers(trainer: &Trainer<f32>) -> Vec<(&'static str, &Adam<f32>)> {
    let mut v = vec![("d", &trainer.opt_d), ("g", &trainer.opt_g)];
    if let Some(c) = &trainer.opt_c {
        v.push(("c", c));
    }
    v
}

fn moment_names(trainer: &Trainer<f32>) -> BTreeMap<ParamKey, String> {
    let mut names = BTreeMap::new();
    for store in trainer.bundle.stores() {
        for i in 0..store.params().len() {
            names.insert(store.key(i as u32), param_name(store, i));
        }
    }
    names
}

/// Writes `trainer` atomically: a temporary file in the same directory is
/// renamed over `path` once complete.
pub fn save_checkpoint(path: &Path, trainer: &Trainer<f32>, config: &RunConfig) -> Result<()> {
    let mut named: Vec<(String, &Tensor<f32>)> = Vec::new();
    for store in trainer.bundle.stores() {
        for (i, p) in store.params().iter().enumerate() {
            named.push((format!("param/{}", param_name(store, i)), &p.value));
        }
    }
    let names = moment_names(trainer);
    for (opt, adam) in optimizers(trainer) {
        for (key, Moments { m, v }) in &adam.state {
            let base = names.get(key).ok_or_else(|| Error::Checkpoint(format!("optimizer state for unknown {key:?}")))?;
            named.push((format!("adam/{opt}/{base}/m"), m));
            named.push((format!("adam/{opt}/{base}/v"), v));
        }
    }
    let mut offset = 0;
    let tensors = named
        .iter()
        .map(|(name, t)| {
            let entry = TensorEntry { name: name.clone(), shape: t.shape().to_vec(), offset };
            offset += t.len();
            entry
        })
        .collect();
    let header = CheckpointHeader {
        fingerprint: trainer.bundle.fingerprint(),
        variant: trainer.bundle.variant,
        step: trainer.step,
        seed: config.seed,
        config: config.clone(),
        optimizers: optimizers(trainer).into_iter().map(|(n, a)| (n.to_string(), a.steps)).collect(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut bytes = Vec::with_capacity(20 + json.len() + offset * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, t) in &named {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path.file_name().ok_or_else(|| Error::Usage(format!("{} is not a file path", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.{}.tmp", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn corrupt(path: &Path, what: &str) -> Error {
    Error::Checkpoint(format!("{}: {what}", path.display()))
}

/// Reads the header and data section without building any model.
pub fn read_raw(path: &Path) -> Result<(CheckpointHeader, Vec<f32>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(corrupt(path, "not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(path, &format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..).expect("length checked");
    if body.len() < header_len {
        return Err(corrupt(path, "truncated header"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&body[..header_len]).map_err(|e| corrupt(path, &format!("bad header: {e}")))?;
    let raw = &body[header_len..];
    if raw.len() % 4 != 0 {
        return Err(corrupt(path, "data section is not a whole number of f32 values"));
    }
    let data: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    let expected: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if expected != data.len() {
        return Err(corrupt(path, &format!("data holds {} values, header lists {expected}", data.len())));
    }
    Ok((header, data))
}

/// Restores the checkpoint under its own stored configuration.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (header, data) = read_raw(path)?;
    let config = header.config.clone();
    restore(path, header, data, &config)
}

/// Restores the checkpoint for `config`, refusing with a per-key diff when
/// the stored architecture differs from what `config` describes.
pub fn load_checkpoint(path: &Path, config: &RunConfig) -> Result<Checkpoint> {
    let (header, data) = read_raw(path)?;
    restore(path, header, data, config)
}

fn restore(path: &Path, header: CheckpointHeader, data: Vec<f32>, config: &RunConfig) -> Result<Checkpoint> {
    let expected = architecture_fingerprint(config.variant, &config.arch(), f32::DTYPE);
    let diff = fingerprint_diff(&expected, &header.fingerprint);
    if !diff.is_empty() {
        return Err(Error::Checkpoint(format!(
            "{}: architecture fingerprint mismatch:\n  {}",
            path.display(),
            diff.join("\n  ")
        )));
    }
    let bundle = ModelBundle::new(config.variant, config.arch(), config.weights(), config.seed)?;
    let mut trainer = Trainer::new(bundle, config.adam());
    trainer.literal_adv_g = config.loss.literal_adv_g;
    trainer.step = header.step;
    let index: BTreeMap<&str, &TensorEntry> = header.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    let fetch = |name: &str, shape: &[usize]| -> Result<Tensor<f32>> {
        let entry = index.get(name).ok_or_else(|| corrupt(path, &format!("missing tensor `{name}`")))?;
        if entry.shape != shape {
            return Err(corrupt(path, &format!("tensor `{name}` has shape {:?}, expected {shape:?}", entry.shape)));
        }
        let len: usize = shape.iter().product();
        Ok(Tensor::from_vec(shape, data[entry.offset..entry.offset + len].to_vec())?)
    };
    let mut used = 0;
    for store in trainer.bundle.stores_mut() {
        for i in 0..store.params().len() {
            let name = format!("param/{}", param_name(store, i));
            let shape = store.params()[i].value.shape().to_vec();
            store.params_mut()[i].value = fetch(&name, &shape)?;
            used += 1;
        }
    }
    let names = moment_names(&trainer);
    let shapes: BTreeMap<ParamKey, Vec<usize>> = trainer
        .bundle
        .stores()
        .into_iter()
        .flat_map(|s| (0..s.params().len()).map(move |i| (s.key(i as u32), s.params()[i].value.shape().to_vec())))
        .collect();
    let mut restore_adam = |opt: &str, adam: &mut Adam<f32>| -> Result<()> {
        adam.steps = *header.optimizers.get(opt).ok_or_else(|| corrupt(path, &format!("missing optimizer `{opt}`")))?;
        for (key, base) in &names {
            let m_name = format!("adam/{opt}/{base}/m");
            if index.contains_key(m_name.as_str()) {
                let shape = &shapes[key];
                let m = fetch(&m_name, shape)?;
                let v = fetch(&format!("adam/{opt}/{base}/v"), shape)?;
                adam.state.insert(*key, Moments { m, v });
                used += 2;
            }
        }
        Ok(())
    };
    restore_adam("d", &mut trainer.opt_d)?;
    restore_adam("g", &mut trainer.opt_g)?;
    if let Some(c) = trainer.opt_c.as_mut() {
        restore_adam("c", c)?;
    }
    if used != header.tensors.len() {
        return Err(corrupt(path, &format!("{} stored tensors do not belong to this model", header.tensors.len() - used)));
    }
    Ok(Checkpoint { header, trainer })
}
