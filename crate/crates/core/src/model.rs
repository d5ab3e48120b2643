//! Architecture configuration and the bundle of networks for one variant.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::Critic;
use crate::error::{bail, Result};
use crate::generator::Generator;
use crate::latent::{BlockLayout, Encoder};
use crate::losses::{LossWeights, Variant};
use crate::nn::{Group, ParamStore};
use crate::tensor::Real;

/// Number of stride-2 stages in the discriminator and classifier trunks.
pub const CRITIC_STAGES: usize = 6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    /// Square image side.
    pub resolution: usize,
    pub n_attributes: usize,
    /// Channels per attribute block of the exemplar code.
    pub block_channels: usize,
    /// Stride-2 stages in the exemplar encoder and in each generator half.
    pub depth: usize,
    pub encoder_width: usize,
    pub generator_width: usize,
    /// Channels of the source code produced by the generator encoder.
    pub generator_latent_channels: usize,
    pub critic_width: usize,
    pub critic_max_width: usize,
    /// Feed the mask as a fourth channel to the generator encoder as well.
    pub generator_mask_channel: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            resolution: 128,
            n_attributes: 2,
            block_channels: 32,
            depth: 4,
            encoder_width: 64,
            generator_width: 64,
            generator_latent_channels: 64,
            critic_width: 64,
            critic_max_width: 512,
            generator_mask_channel: false,
        }
    }
}

impl ArchConfig {
    pub fn code_channels(&self) -> usize {
        self.n_attributes * self.block_channels
    }

    pub fn latent_size(&self) -> usize {
        self.resolution >> self.depth
    }

    pub fn block_layout(&self) -> Result<BlockLayout> {
        BlockLayout::new(self.n_attributes, self.code_channels())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_attributes == 0 || self.block_channels == 0 {
            bail!(Config, "n_attributes and block_channels must be positive");
        }
        if self.depth == 0 || !self.resolution.is_multiple_of(1 << self.depth) || self.latent_size() < 4 {
            bail!(
                Config,
                "resolution {} with depth {} must give an integral latent grid of at least 4x4",
                self.resolution,
                self.depth
            );
        }
        if !self.resolution.is_multiple_of(1 << CRITIC_STAGES) {
            bail!(Config, "resolution {} is not divisible by 2^{CRITIC_STAGES}", self.resolution);
        }
        if self.encoder_width == 0 || self.generator_width == 0 || self.critic_width == 0 {
            bail!(Config, "network widths must be positive");
        }
        if self.generator_latent_channels == 0 || self.critic_max_width < self.critic_width {
            bail!(Config, "invalid channel configuration");
        }
        Ok(())
    }
}

/// Every network of one model plus its variant and loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle<T> {
    pub variant: Variant,
    pub arch: ArchConfig,
    pub weights: LossWeights,
    pub encoder: Encoder<T>,
    pub generator: Generator<T>,
    pub discriminator: Critic<T>,
    /// Present only for the conditional variant.
    pub classifier: Option<Critic<T>>,
}

impl<T: Real> ModelBundle<T> {
    /// Freshly initialized networks; every draw comes from `seed`.
    pub fn new(variant: Variant, arch: ArchConfig, weights: LossWeights, seed: u64) -> Result<Self> {
        arch.validate()?;
        weights.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(&arch, &mut rng)?;
        let generator = Generator::new(&arch, &mut rng);
        let discriminator = Critic::new(Group::Discriminator, &arch, 1, &mut rng);
        let classifier =
            variant.has_classifier().then(|| Critic::new(Group::Classifier, &arch, arch.n_attributes, &mut rng));
        Ok(ModelBundle { variant, arch, weights, encoder, generator, discriminator, classifier })
    }

    pub fn stores(&self) -> Vec<&ParamStore<T>> {
        let mut v =
            alloc::vec![&self.encoder.store, &self.generator.enc_store, &self.generator.dec_store, &self.discriminator.store];
        if let Some(c) = &self.classifier {
            v.push(&c.store);
        }
        v
    }

    pub fn stores_mut(&mut self) -> Vec<&mut ParamStore<T>> {
        let mut v = alloc::vec![
            &mut self.encoder.store,
            &mut self.generator.enc_store,
            &mut self.generator.dec_store,
            &mut self.discriminator.store
        ];
        if let Some(c) = &mut self.classifier {
            v.push(&mut c.store);
        }
        v
    }

    pub fn store_mut(&mut self, group: Group) -> Option<&mut ParamStore<T>> {
        match group {
            Group::Encoder => Some(&mut self.encoder.store),
            Group::GenEncoder => Some(&mut self.generator.enc_store),
            Group::GenDecoder => Some(&mut self.generator.dec_store),
            Group::Discriminator => Some(&mut self.discriminator.store),
            Group::Classifier => self.classifier.as_mut().map(|c| &mut c.store),
        }
    }

    /// Parameter count per network that exists in this bundle.
    pub fn inventory(&self) -> BTreeMap<Group, usize> {
        self.stores().into_iter().map(|s| (s.group(), s.num_scalars())).collect()
    }

    /// Human-readable description of everything that determines the
    /// parameter layout. Two bundles can exchange parameters iff their
    /// fingerprints are equal.
    pub fn fingerprint(&self) -> BTreeMap<String, String> {
        architecture_fingerprint(self.variant, &self.arch, T::DTYPE)
    }
}

pub fn architecture_fingerprint(variant: Variant, arch: &ArchConfig, dtype: &str) -> BTreeMap<String, String> {
    let mut f = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        f.insert(k.to_string(), v);
    };
    put("variant", variant.name().to_string());
    put("dtype", dtype.to_string());
    put("resolution", format!("{}", arch.resolution));
    put("n_attributes", format!("{}", arch.n_attributes));
    put("block_channels", format!("{}", arch.block_channels));
    put("depth", format!("{}", arch.depth));
    put("encoder_width", format!("{}", arch.encoder_width));
    put("generator_width", format!("{}", arch.generator_width));
    put("generator_latent_channels", format!("{}", arch.generator_latent_channels));
    put("critic_width", format!("{}", arch.critic_width));
    put("critic_max_width", format!("{}", arch.critic_max_width));
    put("generator_mask_channel", format!("{}", arch.generator_mask_channel));
    f
}

/// Lines describing keys whose values differ between two fingerprints.
pub fn fingerprint_diff(expected: &BTreeMap<String, String>, found: &BTreeMap<String, String>) -> Vec<String> {
    let mut keys: Vec<&String> = expected.keys().chain(found.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| expected.get(*k) != found.get(*k))
        .map(|k| {
            format!(
                "{k}: expected {}, found {}",
                expected.get(k).map_or("<absent>", |s| s.as_str()),
                found.get(k).map_or("<absent>", |s| s.as_str())
            )
        })
        .collect()
}
