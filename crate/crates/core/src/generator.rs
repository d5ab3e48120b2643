//! The inpainting generator and the mask algebra around it.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};
use crate::graph::{Graph, Var};
use crate::latent::{down_stages, run_down_stages, with_mask_channel};
use crate::model::ArchConfig;
use crate::nn::{Conv, Group, ParamStore};
use crate::tensor::{Real, Tensor};

/// Returns the image as `(N, C, H, W)` and whether it was a single `(C, H, W)`.
pub(crate) fn batch_image<T: Real>(image: &Tensor<T>) -> Result<(Tensor<T>, bool)> {
    match image.shape().len() {
        4 => Ok((image.clone(), false)),
        3 => {
            let s = image.shape();
            Ok((image.clone().reshape(&[1, s[0], s[1], s[2]])?, true))
        }
        _ => bail!(Validation, "images are (C, H, W) or (N, C, H, W), got {:?}", image.shape()),
    }
}

pub(crate) fn check_binary<T: Real>(mask: &Tensor<T>) -> Result<()> {
    if let Some(v) = mask.data().iter().find(|&&v| v != T::ZERO && v != T::ONE) {
        bail!(Validation, "mask entries must be 0 or 1, got {:?}", v);
    }
    Ok(())
}

/// Expands a mask of shape `(H, W)`, `(1, H, W)`, `(1, 1, H, W)` or
/// `(N, 1, H, W)` to `shape`, which is `(N, C, H, W)` or `(C, H, W)`.
pub fn broadcast_mask<T: Real>(mask: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let r = shape.len();
    if r < 3 {
        bail!(Validation, "cannot broadcast a mask to {:?}", shape);
    }
    let (h, w) = (shape[r - 2], shape[r - 1]);
    let n = if r == 4 { shape[0] } else { 1 };
    let c = shape[r - 3];
    let ms = mask.shape();
    let per_item = match ms {
        [mh, mw] | [1, mh, mw] | [1, 1, mh, mw] if (*mh, *mw) == (h, w) => false,
        [mn, 1, mh, mw] if (*mn, *mh, *mw) == (n, h, w) => true,
        _ => bail!(Validation, "mask shape {:?} does not match image shape {:?}", ms, shape),
    };
    let plane = h * w;
    let mut data = Vec::with_capacity(n * c * plane);
    for i in 0..n {
        let src = if per_item { &mask.data()[i * plane..(i + 1) * plane] } else { mask.data() };
        for _ in 0..c {
            data.extend_from_slice(src);
        }
    }
    Tensor::from_vec(shape, data)
}

/// `Ã = A ⊙ (1 − M)`: hole pixels become 0, the rest are copied exactly.
pub fn corrupt<T: Real>(a: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    check_binary(mask)?;
    let m = broadcast_mask(mask, a.shape())?;
    a.zip_map(&m, |v, mv| if mv == T::ONE { T::ZERO } else { v })
}

/// `y = A_b ⊙ M + Ã`: hole pixels from `a_b`, the rest copied from `a_tilde`.
/// Implemented as a per-pixel select so kept pixels are bit-exact copies.
pub fn compose<T: Real>(a_b: &Tensor<T>, a_tilde: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    a_b.expect_shape(a_tilde.shape())?;
    check_binary(mask)?;
    let m = broadcast_mask(mask, a_b.shape())?;
    Ok(Tensor::from_fn(a_b.shape(), |i| if m.data()[i] == T::ONE { a_b.data()[i] } else { a_tilde.data()[i] }))
}

/// Generator `G = (G_enc, G_dec)`. The encoder maps the corrupted source to
/// `Z^A`; the decoder maps `concat(Z^A, Z_cond)` back to an image through
/// transposed convolutions with halving widths and a tanh head. There are no
/// skip connections.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T> {
    pub enc_store: ParamStore<T>,
    pub dec_store: ParamStore<T>,
    enc: Vec<Conv>,
    dec: Vec<Conv>,
    mask_channel: bool,
    resolution: usize,
    cond_channels: usize,
}

impl<T: Real> Generator<T> {
    pub fn new(arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        let mut enc_store = ParamStore::new(Group::GenEncoder);
        let c_in = if arch.generator_mask_channel { 4 } else { 3 };
        let enc = down_stages(
            &mut enc_store,
            "genc",
            c_in,
            arch.generator_width,
            arch.generator_latent_channels,
            arch.depth,
            rng,
        );
        let mut dec_store = ParamStore::new(Group::GenDecoder);
        let mut dec = Vec::with_capacity(arch.depth);
        let mut c = arch.generator_latent_channels + arch.code_channels();
        for i in 0..arch.depth {
            let next = if i + 1 == arch.depth { 3 } else { arch.generator_width << (arch.depth - 2 - i) };
            dec.push(Conv::new(&mut dec_store, &format!("gdec.{i}"), c, next, 4, 2, 1, true, rng));
            c = next;
        }
        Generator {
            enc_store,
            dec_store,
            enc,
            dec,
            mask_channel: arch.generator_mask_channel,
            resolution: arch.resolution,
            cond_channels: arch.code_channels(),
        }
    }

    /// `Z^A = G_enc(Ã)`; `input` is `(N, 3, H, W)`, or `(N, 4, H, W)` when the
    /// mask channel is enabled.
    pub fn encode_var(&self, g: &mut Graph<T>, input: Var, trainable: bool) -> Result<Var> {
        let s = g.value(input).shape();
        let c = if self.mask_channel { 4 } else { 3 };
        if s.len() != 4 || s[1] != c || s[2] != self.resolution || s[3] != self.resolution {
            bail!(Validation, "generator encoder expects (N, {c}, {r}, {r}), got {:?}", s, r = self.resolution);
        }
        run_down_stages(g, &self.enc_store, &self.enc, input, trainable)
    }

    /// `A_b = G_dec(concat(Z^A, Z_cond))`.
    pub fn decode_var(&self, g: &mut Graph<T>, z_a: Var, z_cond: Var, trainable: bool) -> Result<Var> {
        if g.value(z_cond).dim(1) != self.cond_channels {
            bail!(Validation, "conditioning code has {} channels, expected {}", g.value(z_cond).dim(1), self.cond_channels);
        }
        let mut x = g.concat_channels(z_a, z_cond)?;
        for (i, conv) in self.dec.iter().enumerate() {
            x = conv.forward(g, &self.dec_store, x, trainable)?;
            x = if i + 1 < self.dec.len() {
                let y = g.pixel_norm(x)?;
                g.relu(y)
            } else {
                g.tanh(x)
            };
        }
        Ok(x)
    }

    /// Builds the generator-encoder input from a corrupted image.
    pub fn encoder_input(&self, a_tilde: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
        if self.mask_channel {
            with_mask_channel(a_tilde, mask)
        } else {
            Ok(a_tilde.clone())
        }
    }

    /// `G_enc(Ã)` for a batch. `mask` is only read when the mask channel is
    /// enabled.
    pub fn g_encode(&self, a_tilde: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
        let (batched, _) = batch_image(a_tilde)?;
        let mut g = Graph::new();
        let x = g.constant(self.encoder_input(&batched, mask)?);
        let z = self.encode_var(&mut g, x, false)?;
        Ok(g.value(z).clone())
    }

    pub fn g_decode(&self, z_a: &Tensor<T>, z_cond: &Tensor<T>) -> Result<Tensor<T>> {
        if z_a.shape().len() != 4 || z_cond.shape().len() != 4 || z_a.shape()[2..] != z_cond.shape()[2..] {
            bail!(Validation, "codes {:?} and {:?} do not share a spatial grid", z_a.shape(), z_cond.shape());
        }
        let mut g = Graph::new();
        let a = g.constant(z_a.clone());
        let c = g.constant(z_cond.clone());
        let y = self.decode_var(&mut g, a, c, false)?;
        Ok(g.value(y).clone())
    }
}
