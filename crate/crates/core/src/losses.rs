//! Training objectives for both model variants.
//!
//! Every loss is a plain function of tensors plus an analytic gradient; the
//! autograd graph calls the same functions, so the values checked here are
//! the values trained on.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::tensor::{Real, Tensor};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before every logarithm.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Exemplar code passed to the decoder unfiltered; no classifier.
    Ebgan,
    /// Exemplar code filtered by attribute labels; classifier-constrained.
    AttEbgan,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Ebgan => "ebgan",
            Variant::AttEbgan => "att-ebgan",
        }
    }

    pub fn has_classifier(self) -> bool {
        matches!(self, Variant::AttEbgan)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_cyc: f64,
    pub lambda_g: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_rec: 100.0, lambda_cyc: 10.0, lambda_g: 10.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_rec", self.lambda_rec), ("lambda_cyc", self.lambda_cyc), ("lambda_g", self.lambda_g)] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!(Config, "{name} must be a finite nonnegative number, got {v}");
            }
        }
        Ok(())
    }
}

/// Scalar terms of one training step. Terms that do not exist for the
/// variant (or were not evaluated) are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec: Option<f64>,
    pub cls_g: Option<f64>,
    pub cls_c: Option<f64>,
    pub cyc: Option<f64>,
    pub adv_g: Option<f64>,
    pub adv_d: Option<f64>,
    pub total_g: Option<f64>,
    pub total_d: Option<f64>,
    pub total_c: Option<f64>,
}

impl LossReport {
    /// Named view of every present term, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, f64)> {
        [
            ("rec", self.rec),
            ("cls_g", self.cls_g),
            ("cls_c", self.cls_c),
            ("cyc", self.cyc),
            ("adv_g", self.adv_g),
            ("adv_d", self.adv_d),
            ("total_G", self.total_g),
            ("total_D", self.total_d),
            ("total_C", self.total_c),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }

    /// First non-finite term, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.entries().into_iter().find(|(_, v)| !v.is_finite()).map(|(k, _)| k)
    }
}

#[inline]
fn clamp_prob<T: Real>(p: T) -> T {
    let eps = T::from_f64(PROB_EPS);
    p.max(eps).min(T::ONE - eps)
}

/// Mean of `|a - b|` over all elements.
pub fn mean_abs_diff<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_shape(b.shape())?;
    let mut s = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data()) {
        s += (x - y).abs().to_f64();
    }
    Ok(s / a.len() as f64)
}

/// Gradient of `scale * mean|a - b|` with respect to `a` (negate for `b`).
/// The subgradient at `a == b` is 0.
pub fn mean_abs_diff_grad<T: Real>(a: &Tensor<T>, b: &Tensor<T>, scale: T) -> Tensor<T> {
    let k = scale / T::from_f64(a.len() as f64);
    Tensor::from_fn(a.shape(), |i| {
        let d = a.data()[i] - b.data()[i];
        if d > T::ZERO {
            k
        } else if d < T::ZERO {
            -k
        } else {
            T::ZERO
        }
    })
}

/// `Σ −t·ln p − (1−t)·ln(1−p)` over all elements, with clamped `p`.
pub fn bce_sum<T: Real>(p: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if p.len() != target.len() {
        bail!(Validation, "prediction arity {} does not match label arity {}", p.len(), target.len());
    }
    let mut s = 0.0f64;
    for (&pi, &ti) in p.data().iter().zip(target.data()) {
        let q = clamp_prob(pi);
        s += (-(ti * q.ln()) - (T::ONE - ti) * (T::ONE - q).ln()).to_f64();
    }
    Ok(s)
}

/// Gradient of `scale * bce_sum(p, t)` with respect to `p`; zero where the
/// clamp is active.
pub fn bce_sum_grad<T: Real>(p: &Tensor<T>, target: &Tensor<T>, scale: T) -> Tensor<T> {
    let eps = T::from_f64(PROB_EPS);
    Tensor::from_fn(p.shape(), |i| {
        let (pi, ti) = (p.data()[i], target.data()[i]);
        if pi < eps || pi > T::ONE - eps {
            T::ZERO
        } else {
            scale * (-(ti / pi) + (T::ONE - ti) / (T::ONE - pi))
        }
    })
}

fn rows(p: &Tensor<impl Real>) -> usize {
    if p.shape().len() <= 1 {
        1
    } else {
        p.dim(0)
    }
}

/// Reconstruction loss: mean absolute error between the source and its
/// self-reconstruction.
pub fn rec_loss<T: Real>(a: &Tensor<T>, a_rec: &Tensor<T>) -> Result<f64> {
    mean_abs_diff(a, a_rec)
}

/// Classification loss driving the generator: summed binary cross-entropy of
/// the classifier's predictions on the generated image against the exemplar
/// labels, averaged over batch rows when `preds` is `(N, n)`.
pub fn cls_gen_loss<T: Real>(preds: &Tensor<T>, labels_b: &Tensor<T>) -> Result<f64> {
    preds.expect_shape(labels_b.shape()).map_err(|_| {
        Error::Validation(format!("prediction shape {:?} does not match labels {:?}", preds.shape(), labels_b.shape()))
    })?;
    Ok(bce_sum(preds, labels_b)? / rows(preds) as f64)
}

/// Classifier training loss on real images with their own labels. Same
/// formula as [`cls_gen_loss`].
pub fn cls_real_loss<T: Real>(preds: &Tensor<T>, labels_a: &Tensor<T>) -> Result<f64> {
    cls_gen_loss(preds, labels_a)
}

/// Cycle loss: mean absolute difference between the exemplar code and the
/// re-encoded code of the generated image.
pub fn cyc_loss<T: Real>(z_b: &Tensor<T>, z_b_hat: &Tensor<T>) -> Result<f64> {
    mean_abs_diff(z_b, z_b_hat)
}

/// Discriminator loss: batch mean of `−(ln D(real) + ln(1 − D(fake)))`.
pub fn adv_d_loss<T: Real>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<f64> {
    let ones = Tensor::ones(d_real.shape());
    let zeros = Tensor::zeros(d_fake.shape());
    Ok(bce_sum(d_real, &ones)? / d_real.len() as f64 + bce_sum(d_fake, &zeros)? / d_fake.len() as f64)
}

/// Non-saturating generator loss: batch mean of `−ln D(fake)`. Minimizing it
/// maximizes `E[ln D(y)]`.
pub fn adv_g_loss<T: Real>(d_fake: &Tensor<T>) -> Result<f64> {
    Ok(bce_sum(d_fake, &Tensor::ones(d_fake.shape()))? / d_fake.len() as f64)
}

/// The generator adversarial term exactly as `E[ln D(y)]` (kept for fidelity
/// experiments; minimizing it helps the discriminator).
pub fn adv_g_loss_literal<T: Real>(d_fake: &Tensor<T>) -> Result<f64> {
    Ok(-adv_g_loss(d_fake)?)
}

/// Weighted generator objective. The conditional variant requires all four
/// parts; the unconditional one requires three and rejects a nonzero
/// classification part.
pub fn total_g_loss(parts: &LossReport, w: &LossWeights, variant: Variant) -> Result<f64> {
    let need = |name: &str, v: Option<f64>| -> Result<f64> {
        match v {
            Some(v) if v.is_finite() => Ok(v),
            Some(v) => bail!(Validation, "loss part `{name}` is not finite ({v})"),
            None => bail!(Validation, "missing loss part `{name}`"),
        }
    };
    let adv = need("adv_g", parts.adv_g)?;
    let rec = need("rec", parts.rec)?;
    let cyc = need("cyc", parts.cyc)?;
    let base = adv + w.lambda_rec * rec + w.lambda_cyc * cyc;
    match variant {
        Variant::AttEbgan => Ok(base + w.lambda_g * need("cls_g", parts.cls_g)?),
        Variant::Ebgan => match parts.cls_g {
            Some(v) if v != 0.0 => bail!(Variant, "ebgan objective has no classification term (got cls_g = {v})"),
            _ => Ok(base),
        },
    }
}

pub fn total_d_loss(parts: &LossReport) -> Result<f64> {
    parts.adv_d.ok_or_else(|| Error::Validation("missing loss part `adv_d`".into()))
}

pub fn total_c_loss(parts: &LossReport, variant: Variant) -> Result<f64> {
    if !variant.has_classifier() {
        bail!(Variant, "the classifier objective does not exist for ebgan");
    }
    parts.cls_c.ok_or_else(|| Error::Validation("missing loss part `cls_c`".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn closed_form_points() {
        let ln2 = core::f64::consts::LN_2;
        let cls = cls_gen_loss(&t(&[2], vec![0.5, 0.5]), &t(&[2], vec![1.0, 0.0])).unwrap();
        assert!((cls - 2.0 * ln2).abs() < 1e-12);
        let real = cls_real_loss(&t(&[1], vec![0.25]), &t(&[1], vec![1.0])).unwrap();
        assert!((real - 4f64.ln()).abs() < 1e-12);
        let d = adv_d_loss(&t(&[3], vec![0.5; 3]), &t(&[3], vec![0.5; 3])).unwrap();
        assert!((d - 2.0 * ln2).abs() < 1e-12);
        let g = adv_g_loss(&t(&[3], vec![0.5; 3])).unwrap();
        assert!((g - ln2).abs() < 1e-12);
    }

    #[test]
    fn constant_differences() {
        let a = Tensor::<f64>::full(&[1, 3, 4, 4], 0.5);
        let z = Tensor::<f64>::zeros(&[1, 3, 4, 4]);
        assert_eq!(rec_loss(&a, &z).unwrap(), 0.5);
        assert_eq!(rec_loss(&a, &a).unwrap(), 0.0);
        let c = Tensor::<f64>::full(&[2, 8, 2, 2], 2.0);
        assert_eq!(cyc_loss(&c, &Tensor::zeros(&[2, 8, 2, 2])).unwrap(), 2.0);
        assert!(rec_loss(&a, &Tensor::zeros(&[1, 3, 4, 5])).is_err());
    }

    #[test]
    fn saturated_probabilities_are_near_zero() {
        let eps = PROB_EPS;
        let d = adv_d_loss(&t(&[1], vec![1.0 - eps]), &t(&[1], vec![eps])).unwrap();
        assert!(d < 1e-6);
        assert!(adv_g_loss(&t(&[1], vec![1.0 - eps])).unwrap() < 1e-6);
        let perfect = cls_gen_loss(&t(&[3], vec![1.0, 0.0, 1.0]), &t(&[3], vec![1.0, 0.0, 1.0])).unwrap();
        assert!(perfect <= 3.0 * -(1.0 - eps).ln() + 1e-15);
        assert!(cls_gen_loss(&t(&[2], vec![0.5, 0.5]), &t(&[3], vec![1.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn weighted_objectives() {
        let parts = LossReport { adv_g: Some(1.0), rec: Some(0.1), cyc: Some(0.2), cls_g: Some(0.05), ..Default::default() };
        let w = LossWeights::default();
        assert!((total_g_loss(&parts, &w, Variant::AttEbgan).unwrap() - 13.5).abs() < 1e-12);
        assert!(matches!(total_g_loss(&parts, &w, Variant::Ebgan), Err(Error::Variant(_))));
        let eb = LossReport { cls_g: None, ..parts.clone() };
        assert!((total_g_loss(&eb, &w, Variant::Ebgan).unwrap() - 13.0).abs() < 1e-12);
        assert!(total_g_loss(&LossReport { rec: None, ..parts }, &w, Variant::AttEbgan).is_err());

        let zero = LossReport { adv_g: Some(0.0), rec: Some(0.0), cyc: Some(0.0), cls_g: Some(0.0), ..Default::default() };
        assert_eq!(total_g_loss(&zero, &w, Variant::AttEbgan).unwrap(), 0.0);

        let d = LossReport { adv_d: Some(1.3863), cls_c: Some(0.7), ..Default::default() };
        assert_eq!(total_d_loss(&d).unwrap(), 1.3863);
        assert_eq!(total_c_loss(&d, Variant::AttEbgan).unwrap(), 0.7);
        assert!(matches!(total_c_loss(&d, Variant::Ebgan), Err(Error::Variant(_))));
    }
}
