//! The exemplar encoder and the attribute-block structure of its code.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::graph::{Graph, Var};
use crate::model::ArchConfig;
use crate::nn::{Conv, Group, ParamStore};
use crate::data::AttributeVector;
use crate::tensor::{Real, Tensor};

pub(crate) const LEAK: f64 = 0.2;

/// Channel layout of a code split into `n_attributes` equal blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockLayout {
    pub n_attributes: usize,
    pub block_channels: usize,
}

impl BlockLayout {
    pub fn new(n_attributes: usize, channels: usize) -> Result<Self> {
        if n_attributes == 0 || !channels.is_multiple_of(n_attributes) {
            bail!(Config, "{channels} code channels cannot be split into {n_attributes} equal attribute blocks");
        }
        Ok(BlockLayout { n_attributes, block_channels: channels / n_attributes })
    }

    pub fn channels(&self) -> usize {
        self.n_attributes * self.block_channels
    }

    /// Channel range of block `i`.
    pub fn block(&self, i: usize) -> core::ops::Range<usize> {
        i * self.block_channels..(i + 1) * self.block_channels
    }

    /// Per-channel scale `(N, C)` that repeats each label over its block.
    pub fn label_scale<T: Real>(&self, labels: &Tensor<T>) -> Result<Tensor<T>> {
        let n = labels.dim(0);
        if labels.shape().len() != 2 || labels.dim(1) != self.n_attributes {
            bail!(Validation, "labels {:?} do not match {} attributes", labels.shape(), self.n_attributes);
        }
        if let Some(v) = labels.data().iter().find(|&&v| v != T::ZERO && v != T::ONE) {
            bail!(Validation, "filter labels must be 0 or 1, got {:?}", v);
        }
        let c = self.channels();
        Ok(Tensor::from_fn(&[n, c], |j| labels.data()[(j / c) * self.n_attributes + (j % c) / self.block_channels]))
    }
}

fn as_batched<T: Real>(code: &Tensor<T>) -> Result<Tensor<T>> {
    match code.shape().len() {
        4 => Ok(code.clone()),
        3 => {
            let s = code.shape();
            code.clone().reshape(&[1, s[0], s[1], s[2]])
        }
        _ => bail!(Validation, "latent codes are (C, h, w) or (N, C, h, w), got {:?}", code.shape()),
    }
}

/// Splits a code into its attribute blocks: block `i` holds channels
/// `[i·c_b, (i+1)·c_b)`. Works on `(C, h, w)` and `(N, C, h, w)` codes.
pub fn partition_blocks<T: Real>(code: &Tensor<T>, n_attributes: usize) -> Result<Vec<Tensor<T>>> {
    let batched = as_batched(code)?;
    let layout = BlockLayout::new(n_attributes, batched.dim(1))?;
    let (n, c) = (batched.dim(0), batched.dim(1));
    let plane = batched.dim(2) * batched.dim(3);
    let mut blocks = Vec::with_capacity(n_attributes);
    for i in 0..n_attributes {
        let r = layout.block(i);
        let mut data = Vec::with_capacity(n * r.len() * plane);
        for b in 0..n {
            data.extend_from_slice(&batched.data()[(b * c + r.start) * plane..(b * c + r.end) * plane]);
        }
        let mut shape = code.shape().to_vec();
        let cdim = shape.len() - 3;
        shape[cdim] = layout.block_channels;
        blocks.push(Tensor::from_vec(&shape, data)?);
    }
    Ok(blocks)
}

/// Inverse of [`partition_blocks`].
pub fn concat_blocks<T: Real>(blocks: &[Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = blocks.first() else {
        bail!(Validation, "no blocks to concatenate");
    };
    let rank = first.shape().len();
    let mut acc = as_batched(first)?;
    for b in &blocks[1..] {
        acc = crate::graph::concat_channels(&acc, &as_batched(b)?);
    }
    if rank == 3 {
        let s = acc.shape().to_vec();
        acc = acc.reshape(&s[1..])?;
    }
    Ok(acc)
}

/// Multiplies block `i` by label `y_i`: zeroed when 0, unchanged when 1.
/// `labels` is one vector applied to every batch element.
pub fn filter_by_labels<T: Real>(code: &Tensor<T>, labels: &AttributeVector) -> Result<Tensor<T>> {
    let batched = as_batched(code)?;
    let n = batched.dim(0);
    let row = labels.to_tensor::<T>();
    let mut rows = Vec::with_capacity(n * labels.len());
    for _ in 0..n {
        rows.extend_from_slice(row.data());
    }
    let labels = Tensor::from_vec(&[n, labels.len()], rows)?;
    filter_by_label_matrix(code, &labels)
}

/// Per-sample filtering with an `(N, n)` label matrix.
pub fn filter_by_label_matrix<T: Real>(code: &Tensor<T>, labels: &Tensor<T>) -> Result<Tensor<T>> {
    let batched = as_batched(code)?;
    let layout = BlockLayout::new(labels.dim(1), batched.dim(1))?;
    if labels.dim(0) != batched.dim(0) {
        bail!(Validation, "{} label rows for {} codes", labels.dim(0), batched.dim(0));
    }
    let scale = layout.label_scale(labels)?;
    let out = crate::graph::channel_scale(&batched, &scale)?;
    out.reshape(code.shape())
}

/// Graph version of [`filter_by_label_matrix`].
pub fn filter_var<T: Real>(g: &mut Graph<T>, code: Var, labels: &Tensor<T>) -> Result<Var> {
    let layout = BlockLayout::new(labels.dim(1), g.value(code).dim(1))?;
    let scale = layout.label_scale(labels)?;
    g.channel_scale(code, scale)
}

/// Concatenates an image batch `(N, 3, H, W)` with its mask as a fourth
/// channel.
pub fn with_mask_channel<T: Real>(images: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, h, w) = (images.dim(0), images.dim(2), images.dim(3));
    let m = crate::generator::broadcast_mask(mask, &[n, 1, h, w])?;
    Ok(crate::graph::concat_channels(images, &m))
}

/// Down-sampling encoder `E(B, M)`: `depth` stride-2 4×4 convolutions with
/// doubling widths, pixel normalization and leaky ReLU between stages, and
/// a linear last stage producing the code.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    pub store: ParamStore<T>,
    stages: Vec<Conv>,
    resolution: usize,
}

impl<T: Real> Encoder<T> {
    pub fn new(arch: &ArchConfig, rng: &mut impl Rng) -> Result<Self> {
        arch.block_layout()?;
        let mut store = ParamStore::new(Group::Encoder);
        let stages = down_stages(&mut store, "enc", 4, arch.encoder_width, arch.code_channels(), arch.depth, rng);
        Ok(Encoder { store, stages, resolution: arch.resolution })
    }

    /// Encodes a `(N, 4, H, W)` image-plus-mask variable.
    pub fn forward(&self, g: &mut Graph<T>, input: Var, trainable: bool) -> Result<Var> {
        let s = g.value(input).shape();
        if s.len() != 4 || s[1] != 4 || s[2] != self.resolution || s[3] != self.resolution {
            bail!(Validation, "encoder expects (N, 4, {r}, {r}) input, got {:?}", s, r = self.resolution);
        }
        run_down_stages(g, &self.store, &self.stages, input, trainable)
    }

    /// `E(image, mask)` for `(N, 3, H, W)` or `(3, H, W)` images.
    pub fn encode(&self, image: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
        let (batched, single) = crate::generator::batch_image(image)?;
        let (h, w) = (batched.dim(2), batched.dim(3));
        let m = crate::generator::broadcast_mask(mask, &[batched.dim(0), 1, h, w])?;
        crate::generator::check_binary(&m)?;
        let mut g = Graph::new();
        let x = g.constant(with_mask_channel(&batched, &m)?);
        let z = self.forward(&mut g, x, false)?;
        let out = g.value(z).clone();
        if single {
            let s = out.shape().to_vec();
            return out.reshape(&s[1..]);
        }
        Ok(out)
    }

    /// Stride-2 stage geometry as `(kernel, stride, pad)`, input first.
    pub fn stage_geometry(&self) -> Vec<(usize, usize, usize)> {
        self.stages.iter().map(|_| (4, 2, 1)).collect()
    }
}

pub(crate) fn down_stages<T: Real>(
    store: &mut ParamStore<T>,
    prefix: &str,
    c_in: usize,
    base: usize,
    c_out: usize,
    depth: usize,
    rng: &mut impl Rng,
) -> Vec<Conv> {
    let mut stages = Vec::with_capacity(depth);
    let mut c = c_in;
    for i in 0..depth {
        let next = if i + 1 == depth { c_out } else { base << i };
        stages.push(Conv::new(store, &format!("{prefix}.{i}"), c, next, 4, 2, 1, false, rng));
        c = next;
    }
    stages
}

pub(crate) fn run_down_stages<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    stages: &[Conv],
    mut x: Var,
    trainable: bool,
) -> Result<Var> {
    for (i, conv) in stages.iter().enumerate() {
        x = conv.forward(g, store, x, trainable)?;
        if i + 1 < stages.len() {
            x = g.pixel_norm(x)?;
            x = g.leaky_relu(x, LEAK);
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn partition_even_split_and_round_trip() {
        let code = Tensor::<f32>::from_fn(&[64, 2, 2], |i| i as f32 * 0.5 - 3.0);
        let blocks = partition_blocks(&code, 2).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].shape(), &[32, 2, 2]);
        assert_eq!(concat_blocks(&blocks).unwrap(), code);
        assert!(matches!(partition_blocks(&code, 3), Err(crate::Error::Config(_))));
    }

    #[test]
    fn filter_single_attribute_support() {
        let code = Tensor::<f32>::ones(&[1, 8, 2, 2]);
        let out = filter_by_labels(&code, &AttributeVector::new(vec![1, 0]).unwrap()).unwrap();
        for c in 0..8 {
            let expected = if c < 4 { 1.0 } else { 0.0 };
            assert!(out.data()[c * 4..(c + 1) * 4].iter().all(|&v| v == expected));
        }
        let bad = Tensor::<f32>::from_vec(&[1, 2], vec![1.0, 0.5]).unwrap();
        assert!(filter_by_label_matrix(&code, &bad).is_err());
    }
}
