//! Evaluation of a trained bundle against synthetic ground truth.

use alloc::vec::Vec;

use crate::data::{generate_mask, labels_matrix, AttributeVector, RegionSpec, Sample};
use crate::edit::{edit_batch, infer_labels};
use crate::error::{bail, Result};
use crate::model::ModelBundle;
use crate::synth::SyntheticFaces;
use crate::tensor::{Real, Tensor};

const CHUNK: usize = 25;

fn stack_images<T: Real>(samples: &[Sample<T>]) -> Result<Tensor<T>> {
    let images: Vec<&Tensor<T>> = samples.iter().map(|s| &s.image).collect();
    Tensor::stack(&images)
}

/// Fraction of individual labels the classifier recovers at threshold 0.5
/// on synthetic samples `indices`.
pub fn classifier_accuracy<T: Real>(
    bundle: &ModelBundle<T>,
    faces: &SyntheticFaces,
    indices: core::ops::Range<usize>,
) -> Result<f64> {
    let Some(classifier) = &bundle.classifier else {
        bail!(Variant, "ebgan models have no classifier");
    };
    let (mut hits, mut total) = (0usize, 0usize);
    let all: Vec<usize> = indices.collect();
    for chunk in all.chunks(CHUNK) {
        let samples = chunk.iter().map(|&i| faces.sample::<T>(i)).collect::<Result<Vec<_>>>()?;
        let probs = classifier.predict(&stack_images(&samples)?)?;
        for (k, s) in samples.iter().enumerate() {
            let predicted = infer_labels(probs.batch_item(k));
            hits += predicted.values().iter().zip(s.attributes.values()).filter(|(a, b)| a == b).count();
            total += s.attributes.len();
        }
    }
    Ok(hits as f64 / total.max(1) as f64)
}

/// One source/exemplar pair of a transfer evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferCase {
    pub source_value: bool,
    pub exemplar_value: bool,
    /// Classifier probability of the attribute on the edited image.
    pub edited_probability: f64,
    /// Same, with the attribute removed from the exemplar labels.
    pub filtered_probability: f64,
}

impl TransferCase {
    /// The edit carries the exemplar's value of the attribute.
    pub fn transferred(&self) -> bool {
        (self.edited_probability >= 0.5) == self.exemplar_value
    }

    /// Filtering the attribute out leaves it absent.
    pub fn filter_removed(&self) -> bool {
        self.filtered_probability < 0.5
    }
}

/// Summary of [`transfer_test`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TransferReport {
    pub cases: Vec<TransferCase>,
    /// Pixels outside the region that differ from the source, over every
    /// emitted edit.
    pub purity_violations: usize,
    pub edited_pixels: usize,
}

impl TransferReport {
    pub fn transfer_rate(&self) -> f64 {
        let n = self.cases.iter().filter(|c| c.transferred()).count();
        n as f64 / self.cases.len().max(1) as f64
    }

    /// Among transferred pairs whose exemplar has the attribute, the share
    /// for which filtering removed it, with the number of such pairs.
    pub fn filter_rate(&self) -> (f64, usize) {
        let eligible: Vec<&TransferCase> = self.cases.iter().filter(|c| c.exemplar_value && c.transferred()).collect();
        let n = eligible.iter().filter(|c| c.filter_removed()).count();
        (n as f64 / eligible.len().max(1) as f64, eligible.len())
    }
}

/// Edits `pairs` held-out synthetic pairs inside `region`, where source and
/// exemplar disagree on `attribute` (half with the exemplar carrying it, half
/// without), and records what the classifier sees on each edit, unfiltered
/// and with the attribute filtered out. Exemplar labels are the generator's
/// ground truth. Indices are drawn from `first_index` upward.
pub fn transfer_test<T: Real>(
    bundle: &ModelBundle<T>,
    faces: &SyntheticFaces,
    first_index: usize,
    pairs: usize,
    attribute: usize,
    region: &RegionSpec,
) -> Result<TransferReport> {
    let Some(classifier) = &bundle.classifier else {
        bail!(Variant, "transfer evaluation needs an att-ebgan model");
    };
    let n = bundle.arch.n_attributes;
    if attribute >= n {
        bail!(Validation, "attribute {attribute} out of range for {n} attributes");
    }
    let res = faces.resolution;
    let mask = generate_mask::<T>(region, res, res)?;
    let mut report = TransferReport::default();
    let with_value = |index: usize, value: bool| -> Result<Sample<T>> {
        let mut values = faces.attributes(index).values().to_vec();
        values[attribute] = value as u8;
        faces.sample_with(index, &AttributeVector::new(values)?)
    };
    let all: Vec<usize> = (0..pairs).collect();
    for chunk in all.chunks(CHUNK) {
        let mut sources = Vec::new();
        let mut exemplars = Vec::new();
        for &k in chunk {
            let exemplar_value = k % 2 == 0;
            sources.push(with_value(first_index + 2 * k, !exemplar_value)?);
            exemplars.push(with_value(first_index + 2 * k + 1, exemplar_value)?);
        }
        let a = stack_images(&sources)?;
        let b = stack_images(&exemplars)?;
        let labels: Vec<&AttributeVector> = exemplars.iter().map(|s| &s.attributes).collect();
        let yb = labels_matrix::<T>(&labels)?;
        let mut yb_filtered = yb.clone();
        for row in 0..chunk.len() {
            yb_filtered.data_mut()[row * n + attribute] = T::ZERO;
        }
        let edited = edit_batch(bundle, &a, &b, &mask, Some(&yb))?;
        let filtered = edit_batch(bundle, &a, &b, &mask, Some(&yb_filtered))?;
        for out in [&edited, &filtered] {
            let (v, t) = purity(&a, out, &mask);
            report.purity_violations += v;
            report.edited_pixels += t;
        }
        let p = classifier.predict(&edited)?;
        let pf = classifier.predict(&filtered)?;
        for (row, s) in sources.iter().enumerate() {
            report.cases.push(TransferCase {
                source_value: s.attributes.get(attribute),
                exemplar_value: exemplars[row].attributes.get(attribute),
                edited_probability: p.batch_item(row)[attribute].to_f64(),
                filtered_probability: pf.batch_item(row)[attribute].to_f64(),
            });
        }
    }
    Ok(report)
}

/// Counts out-of-region values of `edited` that are not bit-identical to
/// `source`; returns `(violations, out-of-region values checked)`.
pub fn purity<T: Real>(source: &Tensor<T>, edited: &Tensor<T>, mask: &Tensor<T>) -> (usize, usize) {
    let plane = mask.len();
    let mut violations = 0;
    let mut checked = 0;
    for (i, (s, e)) in source.data().iter().zip(edited.data()).enumerate() {
        if mask.data()[i % plane] == T::ZERO {
            checked += 1;
            if s.to_f64().to_bits() != e.to_f64().to_bits() {
                violations += 1;
            }
        }
    }
    (violations, checked)
}
