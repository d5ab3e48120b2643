//! Inference: exemplar-guided editing of a source image.

use crate::data::{generate_mask, AttributeVector, RegionSpec};
use crate::error::{bail, Result};
use crate::generator::{compose, corrupt};
use crate::latent::{filter_by_label_matrix, with_mask_channel};
use crate::losses::Variant;
use crate::model::ModelBundle;
use crate::tensor::{Real, Tensor};

/// Thresholds probabilities at 0.5; exactly 0.5 maps to 1.
pub fn infer_labels<T: Real>(probs: &[T]) -> AttributeVector {
    let half = T::from_f64(0.5);
    AttributeVector::new(probs.iter().map(|&p| (p >= half) as u8).collect()).expect("binary by construction")
}

/// Labels predicted by the bundle's classifier for one `(3, H, W)` image.
pub fn infer_image_labels<T: Real>(bundle: &ModelBundle<T>, image: &Tensor<T>) -> Result<AttributeVector> {
    let Some(classifier) = &bundle.classifier else {
        bail!(Variant, "label inference needs an att-ebgan model with a classifier");
    };
    let p = classifier.predict(image)?;
    Ok(infer_labels(p.batch_item(0)))
}

/// Edits a batch of sources `(N, 3, H, W)` with exemplars of the same shape.
///
/// For the conditional variant `labels` is the `(N, n)` matrix of effective
/// exemplar labels applied to the code blocks; it must be `None` for the
/// unconditional variant.
pub fn edit_batch<T: Real>(
    bundle: &ModelBundle<T>,
    sources: &Tensor<T>,
    exemplars: &Tensor<T>,
    mask: &Tensor<T>,
    labels: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    sources.expect_shape(exemplars.shape())?;
    let a_tilde = corrupt(sources, mask)?;
    let z_a = bundle.generator.g_encode(&a_tilde, mask)?;
    let z = bundle.encoder.encode(exemplars, mask)?;
    let z_cond = match (bundle.variant, labels) {
        (Variant::AttEbgan, Some(l)) => filter_by_label_matrix(&z, l)?,
        (Variant::AttEbgan, None) => bail!(Validation, "att-ebgan edits need exemplar labels"),
        (Variant::Ebgan, None) => z,
        (Variant::Ebgan, Some(_)) => bail!(Variant, "ebgan models do not accept attribute labels or filters"),
    };
    let a_b = bundle.generator.g_decode(&z_a, &z_cond)?;
    compose(&a_b, &a_tilde, mask)
}

/// Edits one `(3, H, W)` source with one exemplar inside `region`.
///
/// Conditional models use `exemplar_labels` when given, otherwise the
/// classifier's labels for the exemplar; `filter` is ANDed entrywise on top,
/// so it can only remove exemplar attributes.
pub fn edit<T: Real>(
    bundle: &ModelBundle<T>,
    source: &Tensor<T>,
    exemplar: &Tensor<T>,
    region: &RegionSpec,
    exemplar_labels: Option<&AttributeVector>,
    filter: Option<&AttributeVector>,
) -> Result<Tensor<T>> {
    if source.shape().len() != 3 {
        bail!(Validation, "edit expects (3, H, W) images, got {:?}", source.shape());
    }
    let (h, w) = (source.dim(1), source.dim(2));
    let mask = generate_mask::<T>(region, h, w)?;
    let labels = match bundle.variant {
        Variant::Ebgan => {
            if filter.is_some() {
                bail!(Variant, "attribute filters need an att-ebgan checkpoint");
            }
            None
        }
        Variant::AttEbgan => {
            let base = match exemplar_labels {
                Some(l) => l.clone(),
                None => infer_image_labels(bundle, exemplar)?,
            };
            if base.len() != bundle.arch.n_attributes {
                bail!(Validation, "exemplar labels have length {}, model has {}", base.len(), bundle.arch.n_attributes);
            }
            let effective = match filter {
                Some(f) => base.and(f)?,
                None => base,
            };
            let n = effective.len();
            Some(effective.to_tensor::<T>().reshape(&[1, n])?)
        }
    };
    let one = |t: &Tensor<T>| t.clone().reshape(&[1, 3, h, w]);
    let out = edit_batch(bundle, &one(source)?, &one(exemplar)?, &mask, labels.as_ref())?;
    out.reshape(&[3, h, w])
}

/// `E(B, M)` input check shared with callers that build inputs themselves.
pub fn exemplar_input<T: Real>(exemplars: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    with_mask_channel(exemplars, mask)
}
