//! Run configuration, read from TOML.

use std::path::{Path, PathBuf};

use exedit_core::data::{parse_region, RegionSpec};
use exedit_core::nn::AdamConfig;
use exedit_core::synth::{ATTRIBUTE_NAMES, MAX_ATTRIBUTES};
use exedit_core::{ArchConfig, LossWeights, Variant};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optim: OptimConfig,
    #[serde(default)]
    pub loss: LossConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: SourceConfig,
    /// Attribute names, in label order.
    #[serde(default = "default_attributes")]
    pub attributes: Vec<String>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Editing regions cycled over training batches: preset names
    /// (`mouth`, `eyes`, `components`, `full`, `all`) or `r0,r1,c0,c1;...`.
    #[serde(default = "default_regions")]
    pub regions: Vec<String>,
    #[serde(default)]
    pub split: SplitConfig,
    /// Keep the validation ids out of training.
    #[serde(default)]
    pub hold_out_validation: bool,
    /// Mirror each training sample with probability one half.
    #[serde(default)]
    pub hflip: bool,
}

fn default_attributes() -> Vec<String> {
    ATTRIBUTE_NAMES[..2].iter().map(|s| s.to_string()).collect()
}

fn default_resolution() -> usize {
    128
}

fn default_regions() -> Vec<String> {
    ["mouth", "eyes", "components", "full"].iter().map(|s| s.to_string()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceConfig {
    Synthetic {
        #[serde(default)]
        seed: u64,
        count: usize,
    },
    Celeba {
        image_dir: PathBuf,
        attribute_file: PathBuf,
        /// The official partition file; required by `split.mode = "official"`.
        #[serde(default)]
        partition_file: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// First `train` ids, next `val`, next `test`, in file order.
    Contiguous,
    /// Partition file assignment.
    Official,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub mode: SplitMode,
    /// Counts for contiguous splits; absent means 80/10/10 of the data.
    #[serde(default)]
    pub train: Option<usize>,
    #[serde(default)]
    pub val: Option<usize>,
    #[serde(default)]
    pub test: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { mode: SplitMode::Contiguous, train: None, val: None, test: None }
    }
}

impl SplitConfig {
    pub fn counts(&self, total: usize) -> (usize, usize, usize) {
        let val = self.val.unwrap_or(total / 10);
        let test = self.test.unwrap_or(total / 10);
        let train = self.train.unwrap_or(total.saturating_sub(val + test));
        (train, val, test)
    }
}

/// Architecture hyperparameters; resolution and attribute count come from
/// the dataset section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub block_channels: usize,
    pub depth: usize,
    pub encoder_width: usize,
    pub generator_width: usize,
    pub generator_latent_channels: usize,
    pub critic_width: usize,
    pub critic_max_width: usize,
    pub generator_mask_channel: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let a = ArchConfig::default();
        ModelConfig {
            block_channels: a.block_channels,
            depth: a.depth,
            encoder_width: a.encoder_width,
            generator_width: a.generator_width,
            generator_latent_channels: a.generator_latent_channels,
            critic_width: a.critic_width,
            critic_max_width: a.critic_max_width,
            generator_mask_channel: a.generator_mask_channel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Save a checkpoint every this many steps; 0 disables periodic saves.
    pub checkpoint_every: u64,
    /// Evaluate on held-out data every this many steps; 0 disables it.
    pub eval_every: u64,
    /// Assemble the next batches on a background thread.
    pub prefetch: bool,
}

impl Default for OptimConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        OptimConfig {
            learning_rate: adam.learning_rate,
            batch_size: 32,
            steps: 2000,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            checkpoint_every: 500,
            eval_every: 0,
            prefetch: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_rec: f64,
    pub lambda_cyc: f64,
    pub lambda_g: f64,
    /// Minimize `E[ln D(y)]` as literally written instead of `−E[ln D(y)]`.
    pub literal_adv_g: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        LossConfig { lambda_rec: w.lambda_rec, lambda_cyc: w.lambda_cyc, lambda_g: w.lambda_g, literal_adv_g: false }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn arch(&self) -> ArchConfig {
        let m = &self.model;
        ArchConfig {
            resolution: self.dataset.resolution,
            n_attributes: self.dataset.attributes.len(),
            block_channels: m.block_channels,
            depth: m.depth,
            encoder_width: m.encoder_width,
            generator_width: m.generator_width,
            generator_latent_channels: m.generator_latent_channels,
            critic_width: m.critic_width,
            critic_max_width: m.critic_max_width,
            generator_mask_channel: m.generator_mask_channel,
        }
    }

    /// Loss weights as used by the variant; EBGAN ignores `lambda_g`.
    pub fn weights(&self) -> LossWeights {
        let l = &self.loss;
        let lambda_g = if self.variant == Variant::Ebgan { 0.0 } else { l.lambda_g };
        LossWeights { lambda_rec: l.lambda_rec, lambda_cyc: l.lambda_cyc, lambda_g }
    }

    pub fn adam(&self) -> AdamConfig {
        let o = &self.optim;
        AdamConfig { learning_rate: o.learning_rate, beta1: o.beta1, beta2: o.beta2, eps: o.eps }
    }

    pub fn regions(&self) -> Result<Vec<RegionSpec>> {
        self.dataset
            .regions
            .iter()
            .map(|r| parse_region(r, self.dataset.resolution).map_err(|e| Error::Config(format!("region `{r}`: {e}"))))
            .collect()
    }

    /// Checks everything that can be checked without touching the dataset.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = &self.dataset;
        if d.attributes.is_empty() {
            return bad("dataset.attributes must name at least one attribute".into());
        }
        if let SourceConfig::Synthetic { count, .. } = &d.source {
            let n = d.attributes.len();
            if n > MAX_ATTRIBUTES || d.attributes.iter().zip(ATTRIBUTE_NAMES).any(|(a, b)| a != b) {
                return bad(format!(
                    "synthetic data provides the attributes {:?} in this order; got {:?}",
                    ATTRIBUTE_NAMES, d.attributes
                ));
            }
            if *count == 0 {
                return bad("dataset.source.count must be positive".into());
            }
        }
        if d.split.mode == SplitMode::Official
            && !matches!(&d.source, SourceConfig::Celeba { partition_file: Some(_), .. }) {
                return bad("split.mode = \"official\" needs a CelebA source with partition_file".into());
            }
        if d.regions.is_empty() {
            return bad("dataset.regions must list at least one region".into());
        }
        self.regions()?;
        self.arch().validate().map_err(|e| Error::Config(e.to_string()))?;
        let o = &self.optim;
        if o.batch_size < 2 {
            return bad(format!("optim.batch_size must be at least 2 so exemplars differ from sources, got {}", o.batch_size));
        }
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            return bad(format!("optim.learning_rate must be positive, got {}", o.learning_rate));
        }
        for (name, b) in [("beta1", o.beta1), ("beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("optim.{name} must lie in [0, 1), got {b}"));
            }
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(o.eps > 0.0) {
            return bad(format!("optim.eps must be positive, got {}", o.eps));
        }
        self.weights().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}
