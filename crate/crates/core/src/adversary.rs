//! Discriminator and attribute classifier.
//!
//! Both share one topology: six stride-2 4×4 convolutions with leaky ReLU,
//! widths starting at `critic_width` and doubling up to `critic_max_width`,
//! then a fully connected head and a sigmoid. The head starts at zero, so an
//! untrained network outputs exactly 0.5.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::graph::{Graph, Var};
use crate::latent::LEAK;
use crate::model::{ArchConfig, CRITIC_STAGES};
use crate::nn::{Conv, Group, Linear, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Critic<T> {
    pub store: ParamStore<T>,
    trunk: Vec<Conv>,
    head: Linear,
    outputs: usize,
    resolution: usize,
}

impl<T: Real> Critic<T> {
    pub fn new(group: Group, arch: &ArchConfig, outputs: usize, rng: &mut impl Rng) -> Self {
        let mut store = ParamStore::new(group);
        let prefix = match group {
            Group::Classifier => "cls",
            _ => "disc",
        };
        let mut trunk = Vec::with_capacity(CRITIC_STAGES);
        let mut c = 3;
        for i in 0..CRITIC_STAGES {
            let next = (arch.critic_width << i).min(arch.critic_max_width);
            trunk.push(Conv::new(&mut store, &format!("{prefix}.{i}"), c, next, 4, 2, 1, false, rng));
            c = next;
        }
        let grid = arch.resolution >> CRITIC_STAGES;
        let head = Linear::zeros(&mut store, &format!("{prefix}.head"), c * grid * grid, outputs);
        Critic { store, trunk, head, outputs, resolution: arch.resolution }
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    /// Feature grid before the head, `(N, C, R/64, R/64)`.
    pub fn features(&self, g: &mut Graph<T>, image: Var, trainable: bool) -> Result<Var> {
        let s = g.value(image).shape();
        if s.len() != 4 || s[1] != 3 || s[2] != self.resolution || s[3] != self.resolution {
            bail!(Validation, "critic expects (N, 3, {r}, {r}) images, got {:?}", s, r = self.resolution);
        }
        let mut x = image;
        for conv in &self.trunk {
            x = conv.forward(g, &self.store, x, trainable)?;
            x = g.leaky_relu(x, LEAK);
        }
        Ok(x)
    }

    /// Probabilities `(N, outputs)`.
    pub fn forward(&self, g: &mut Graph<T>, image: Var, trainable: bool) -> Result<Var> {
        let f = self.features(g, image, trainable)?;
        let flat = g.flatten(f)?;
        let logits = self.head.forward(g, &self.store, flat, trainable)?;
        Ok(g.sigmoid(logits))
    }

    /// Evaluates on `(N, 3, H, W)` or `(3, H, W)` images.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let (batched, _) = crate::generator::batch_image(image)?;
        let mut g = Graph::new();
        let x = g.constant(batched);
        let p = self.forward(&mut g, x, false)?;
        Ok(g.value(p).clone())
    }
}

/// `D(image)`: one probability of being real per batch element, shape `(N,)`.
pub fn discriminate<T: Real>(d: &Critic<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let p = d.predict(image)?;
    let n = p.dim(0);
    p.reshape(&[n])
}

/// `C(image)`: per-attribute probabilities, shape `(N, n)`.
pub fn classify<T: Real>(c: &Critic<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    c.predict(image)
}
