//! Training data: CelebA on disk or the procedural synthetic faces, with
//! splits and deterministic per-step batches.

use std::path::PathBuf;

use exedit_core::data::{assemble_batch, flip_horizontal, make_split, Batch, RegionSpec, Sample, SplitSpec};
use exedit_core::synth::SyntheticFaces;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attributes::{parse_attribute_file, parse_partition_file, AttributeTable};
use crate::config::{RunConfig, SourceConfig, SplitMode};
use crate::error::{Error, Result};
use crate::imageio::load_image;

/// Where samples come from; addressed by position in [`Source::ids`].
#[derive(Clone, Debug)]
pub enum Source {
    Synthetic(SyntheticFaces),
    Celeba { image_dir: PathBuf, table: AttributeTable, resolution: usize },
}

impl Source {
    pub fn ids(&self) -> Vec<String> {
        match self {
            Source::Synthetic(f) => f.ids(),
            Source::Celeba { table, .. } => table.ids.clone(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Source::Synthetic(f) => f.count,
            Source::Celeba { table, .. } => table.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample(&self, index: usize) -> Result<Sample<f32>> {
        match self {
            Source::Synthetic(f) => Ok(f.sample(index)?),
            Source::Celeba { image_dir, table, resolution } => {
                let id = &table.ids[index];
                let image = load_image(&image_dir.join(id), *resolution)?;
                Ok(Sample::new(id.clone(), image, table.labels[index].clone())?)
            }
        }
    }
}

/// A source with its split, as positions into the source.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub source: Source,
    pub split: SplitSpec,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Positions batches are drawn from: train, plus val unless held out.
    pub pool: Vec<usize>,
}

impl Dataset {
    pub fn open(config: &RunConfig) -> Result<Self> {
        let d = &config.dataset;
        let source = match &d.source {
            SourceConfig::Synthetic { seed, count } => {
                Source::Synthetic(SyntheticFaces::new(*seed, d.resolution, d.attributes.len(), *count)?)
            }
            SourceConfig::Celeba { image_dir, attribute_file, .. } => Source::Celeba {
                image_dir: image_dir.clone(),
                table: parse_attribute_file(attribute_file, Some(&d.attributes))?,
                resolution: d.resolution,
            },
        };
        let ids = source.ids();
        let split = match (d.split.mode, &d.source) {
            (SplitMode::Official, SourceConfig::Celeba { partition_file: Some(p), .. }) => parse_partition_file(p)?,
            (SplitMode::Official, _) => return Err(Error::Config("official split needs a partition file".into())),
            (SplitMode::Contiguous, _) => {
                make_split(&ids, d.split.counts(ids.len())).map_err(|e| Error::Config(e.to_string()))?
            }
        };
        let position: std::collections::HashMap<&str, usize> =
            ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let locate = |set: &[String]| -> Result<Vec<usize>> {
            set.iter()
                .map(|id| {
                    position.get(id.as_str()).copied().ok_or_else(|| {
                        Error::Config(format!("split id `{id}` has no attribute annotation"))
                    })
                })
                .collect()
        };
        let (train, val, test) = (locate(&split.train)?, locate(&split.val)?, locate(&split.test)?);
        let mut pool = train.clone();
        if !d.hold_out_validation {
            pool.extend(&val);
        }
        if pool.len() < config.optim.batch_size {
            return Err(Error::Config(format!(
                "training pool has {} samples, fewer than the batch size {}",
                pool.len(),
                config.optim.batch_size
            )));
        }
        Ok(Dataset { source, split, train, val, test, pool })
    }

    pub fn samples(&self, positions: &[usize]) -> Result<Vec<Sample<f32>>> {
        positions.iter().map(|&i| self.source.sample(i)).collect()
    }
}

/// Deterministic batch schedule: the batch of step `s` depends only on the
/// seed and `s`, so runs, resumed runs and prefetching all see the same
/// sequence.
#[derive(Clone, Debug)]
pub struct BatchPlan<'a> {
    pub dataset: &'a Dataset,
    pub regions: Vec<RegionSpec>,
    pub batch_size: usize,
    pub seed: u64,
    pub hflip: bool,
}

impl BatchPlan<'_> {
    pub fn rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        rng
    }

    /// Region used at 1-based step `step`.
    pub fn region(&self, step: u64) -> &RegionSpec {
        &self.regions[((step - 1) % self.regions.len() as u64) as usize]
    }

    pub fn batch(&self, step: u64) -> Result<Batch<f32>> {
        let mut rng = self.rng(step);
        let pool = &self.dataset.pool;
        let picks = rand::seq::index::sample(&mut rng, pool.len(), self.batch_size);
        let mut samples = Vec::with_capacity(self.batch_size);
        for k in picks.iter() {
            let mut s = self.dataset.source.sample(pool[k])?;
            if self.hflip && rng.gen_bool(0.5) {
                s.image = flip_horizontal(&s.image);
            }
            samples.push(s);
        }
        Ok(assemble_batch(&samples, self.region(step), &mut rng)?)
    }
}
