//! Parameter storage, layers and the Adam optimizer.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Tensor};

/// Which network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    Encoder,
    GenEncoder,
    GenDecoder,
    Discriminator,
    Classifier,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::Encoder => "encoder",
            Group::GenEncoder => "gen_encoder",
            Group::GenDecoder => "gen_decoder",
            Group::Discriminator => "discriminator",
            Group::Classifier => "classifier",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamKey {
    pub group: Group,
    pub index: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

/// The parameters of one network, in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    group: Group,
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new(group: Group) -> Self {
        ParamStore { group, params: Vec::new() }
    }

    pub fn group(&self) -> Group {
        self.group
    }

    pub fn add(&mut self, name: String, value: Tensor<T>) -> u32 {
        self.params.push(Param { name, value });
        (self.params.len() - 1) as u32
    }

    pub fn key(&self, index: u32) -> ParamKey {
        ParamKey { group: self.group, index }
    }

    pub fn get(&self, index: u32) -> &Tensor<T> {
        &self.params[index as usize].value
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// FNV-1a over the bit patterns of every parameter, for change detection.
    pub fn fingerprint_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for p in &self.params {
            for v in p.value.data() {
                for b in v.to_f64().to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    fn leaf(&self, g: &mut Graph<T>, index: u32, trainable: bool) -> Var {
        g.param(self.key(index), self.get(index), trainable)
    }
}

fn uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-bound..=bound)))
}

/// Square-kernel convolution, plain or transposed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv {
    weight: u32,
    bias: u32,
    stride: usize,
    pad: usize,
    transposed: bool,
}

impl Conv {
    /// Registers a `kernel × kernel` convolution; weights are uniform with
    /// variance `1 / fan_in`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        transposed: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = if transposed { c_in * kernel * kernel / (stride * stride) } else { c_in * kernel * kernel };
        let bound = libm::sqrt(3.0 / fan_in.max(1) as f64);
        let shape = if transposed { [c_in, c_out, kernel, kernel] } else { [c_out, c_in, kernel, kernel] };
        let weight = store.add(alloc::format!("{name}.weight"), uniform(rng, &shape, bound));
        let bias = store.add(alloc::format!("{name}.bias"), Tensor::zeros(&[c_out]));
        Conv { weight, bias, stride, pad, transposed }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, trainable: bool) -> Result<Var> {
        let w = store.leaf(g, self.weight, trainable);
        let b = store.leaf(g, self.bias, trainable);
        if self.transposed {
            g.conv_transpose2d(x, w, b, self.stride, self.pad)
        } else {
            g.conv2d(x, w, b, self.stride, self.pad)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Linear {
    weight: u32,
    bias: u32,
}

impl Linear {
    /// A fully connected layer with zero-initialized weights and bias.
    pub fn zeros<T: Real>(store: &mut ParamStore<T>, name: &str, inputs: usize, outputs: usize) -> Self {
        let weight = store.add(alloc::format!("{name}.weight"), Tensor::zeros(&[outputs, inputs]));
        let bias = store.add(alloc::format!("{name}.bias"), Tensor::zeros(&[outputs]));
        Linear { weight, bias }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, trainable: bool) -> Result<Var> {
        let w = store.leaf(g, self.weight, trainable);
        let b = store.leaf(g, self.bias, trainable);
        g.linear(x, w, b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// Adam over the parameters of one or more networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub steps: u64,
    pub state: BTreeMap<ParamKey, Moments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, steps: 0, state: BTreeMap::new() }
    }

    /// Applies one update to every store using the gradients that belong to
    /// it. Parameters with no gradient entry are treated as having gradient 0.
    pub fn step(&mut self, stores: &mut [&mut ParamStore<T>], grads: &BTreeMap<ParamKey, Tensor<T>>) {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        let step_size = T::from_f64(c.learning_rate / bc1);
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (ob1, ob2) = (T::ONE - b1, T::ONE - b2);
        let inv_sqrt_bc2 = T::from_f64(1.0 / libm::sqrt(bc2));
        let eps = T::from_f64(c.eps);
        for store in stores.iter_mut() {
            let group = store.group();
            for (i, p) in store.params_mut().iter_mut().enumerate() {
                let key = ParamKey { group, index: i as u32 };
                let st = self.state.entry(key).or_insert_with(|| Moments {
                    m: Tensor::zeros(p.value.shape()),
                    v: Tensor::zeros(p.value.shape()),
                });
                let g = grads.get(&key);
                for j in 0..p.value.len() {
                    let gj = g.map_or(T::ZERO, |g| g.data()[j]);
                    let m = b1 * st.m.data()[j] + ob1 * gj;
                    let v = b2 * st.v.data()[j] + ob2 * gj * gj;
                    st.m.data_mut()[j] = m;
                    st.v.data_mut()[j] = v;
                    p.value.data_mut()[j] -= step_size * m / (v.sqrt() * inv_sqrt_bc2 + eps);
                }
            }
        }
    }
}
