//! One optimization step: discriminator, then classifier, then
//! generator together with the exemplar encoder.

use alloc::collections::BTreeMap;
use alloc::string::ToString;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::generator::corrupt;
use crate::graph::{Graph, Var};
use crate::latent::{filter_var, with_mask_channel};
use crate::losses::{self, LossReport, Variant};
use crate::model::ModelBundle;
use crate::nn::{Adam, AdamConfig, Group, ParamKey};
use crate::tensor::{Real, Tensor};

/// Which sub-steps of [`Trainer::train_step_with`] apply their updates.
/// Losses are evaluated and reported either way.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepOptions {
    pub update_d: bool,
    pub update_c: bool,
    pub update_g: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions { update_d: true, update_c: true, update_g: true }
    }
}

/// A model bundle with its optimizers and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer<T> {
    pub bundle: ModelBundle<T>,
    pub opt_d: Adam<T>,
    pub opt_c: Option<Adam<T>>,
    pub opt_g: Adam<T>,
    /// Completed steps.
    pub step: u64,
    /// Use `E[ln D(y)]` verbatim for the generator adversarial term instead
    /// of the non-saturating `−E[ln D(y)]`.
    pub literal_adv_g: bool,
    classification_evaluations: u64,
}

/// Variables of the transfer branch `A, M, B → y`.
struct TransferPass {
    z_a: Var,
    z_b: Var,
    a_b: Var,
    y: Var,
}

const G_GROUPS: [Group; 3] = [Group::Encoder, Group::GenEncoder, Group::GenDecoder];

impl<T: Real> Trainer<T> {
    pub fn new(bundle: ModelBundle<T>, adam: AdamConfig) -> Self {
        let opt_c = bundle.classifier.as_ref().map(|_| Adam::new(adam));
        Trainer {
            bundle,
            opt_d: Adam::new(adam),
            opt_c,
            opt_g: Adam::new(adam),
            step: 0,
            literal_adv_g: false,
            classification_evaluations: 0,
        }
    }

    /// How many classification-loss terms this trainer has evaluated.
    pub fn classification_evaluations(&self) -> u64 {
        self.classification_evaluations
    }

    pub fn train_step(&mut self, batch: &Batch<T>) -> Result<LossReport> {
        self.train_step_with(batch, StepOptions::default())
    }

    pub fn train_step_with(&mut self, batch: &Batch<T>, opts: StepOptions) -> Result<LossReport> {
        let step = self.step + 1;
        let variant = self.bundle.variant;
        let n = batch.len() as f64;
        let mut report = LossReport::default();
        let a_tilde = corrupt(&batch.a, &batch.m)?;

        let mut g = Graph::<T>::new();
        let fwd = self.transfer_pass(&mut g, batch, &a_tilde)?;

        // Discriminator on real sources versus detached composites.
        {
            let real = g.constant(batch.a.clone());
            let fake = g.detach(fwd.y);
            let d = &self.bundle.discriminator;
            let d_real = d.forward(&mut g, real, opts.update_d)?;
            let d_fake = d.forward(&mut g, fake, opts.update_d)?;
            let l_real = g.bce(d_real, Tensor::ones(g.value(d_real).shape()), 1.0 / n)?;
            let l_fake = g.bce(d_fake, Tensor::zeros(g.value(d_fake).shape()), 1.0 / n)?;
            let adv_d = g.add(l_real, l_fake)?;
            let v = finite(g.value(adv_d).item(), "adv_d", step)?;
            report.adv_d = Some(v);
            report.total_d = Some(v);
            if opts.update_d {
                let grads = g.backward(adv_d)?.by_param();
                self.opt_d.step(&mut [&mut self.bundle.discriminator.store], &grads);
            }
        }

        if let Some(classifier) = &self.bundle.classifier {
            let real = g.constant(batch.a.clone());
            let p = classifier.forward(&mut g, real, opts.update_c)?;
            let cls_c = g.bce(p, batch.ya.clone(), 1.0 / n)?;
            self.classification_evaluations += 1;
            let v = finite(g.value(cls_c).item(), "cls_c", step)?;
            report.cls_c = Some(v);
            report.total_c = Some(v);
            if opts.update_c {
                let grads = g.backward(cls_c)?.by_param();
                let classifier = self.bundle.classifier.as_mut().expect("checked above");
                self.opt_c.as_mut().expect("classifier optimizer").step(&mut [&mut classifier.store], &grads);
            }
        }

        // Generator and exemplar encoder.
        let w = self.bundle.weights;
        let bundle = &self.bundle;
        let real = g.constant(batch.a.clone());
        let self_input = g.constant(with_mask_channel(&batch.a, &batch.m)?);
        let mut z_self = bundle.encoder.forward(&mut g, self_input, opts.update_g)?;
        if variant == Variant::AttEbgan {
            z_self = filter_var(&mut g, z_self, &batch.ya)?;
        }
        let a_rec = bundle.generator.decode_var(&mut g, fwd.z_a, z_self, opts.update_g)?;
        let rec = g.mean_abs_diff(a_rec, real)?;

        let mask = g.constant(crate::generator::broadcast_mask(&batch.m, &[batch.len(), 1, batch.a.dim(2), batch.a.dim(3)])?);
        let cyc_input = g.concat_channels(fwd.a_b, mask)?;
        let z_b_hat = bundle.encoder.forward(&mut g, cyc_input, opts.update_g)?;
        let cyc = g.mean_abs_diff(fwd.z_b, z_b_hat)?;

        let d_y = bundle.discriminator.forward(&mut g, fwd.y, false)?;
        let ones = Tensor::ones(g.value(d_y).shape());
        let adv_g = if self.literal_adv_g { g.bce(d_y, ones, -1.0 / n)? } else { g.bce(d_y, ones, 1.0 / n)? };

        let mut total = g.add(adv_g, rec)?;
        // total = adv + λ_rec·rec + λ_cyc·cyc (+ λ_g·cls_g)
        let rec_w = g.scale(rec, w.lambda_rec - 1.0);
        total = g.add(total, rec_w)?;
        let cyc_w = g.scale(cyc, w.lambda_cyc);
        total = g.add(total, cyc_w)?;

        report.rec = Some(finite(g.value(rec).item(), "rec", step)?);
        report.cyc = Some(finite(g.value(cyc).item(), "cyc", step)?);
        report.adv_g = Some(finite(g.value(adv_g).item(), "adv_g", step)?);

        if let Some(classifier) = &bundle.classifier {
            let p = classifier.forward(&mut g, fwd.a_b, false)?;
            let cls_g = g.bce(p, batch.yb.clone(), 1.0 / n)?;
            self.classification_evaluations += 1;
            report.cls_g = Some(finite(g.value(cls_g).item(), "cls_g", step)?);
            let cls_w = g.scale(cls_g, w.lambda_g);
            total = g.add(total, cls_w)?;
        }
        report.total_g = Some(finite(losses::total_g_loss(&report, &w, variant)?, "total_G", step)?);

        if opts.update_g {
            let grads = g.backward(total)?.by_param();
            self.apply_generator_update(&grads);
        }
        self.step = step;
        Ok(report)
    }

    fn transfer_pass(&self, g: &mut Graph<T>, batch: &Batch<T>, a_tilde: &Tensor<T>) -> Result<TransferPass> {
        let bundle = &self.bundle;
        let gen_in = g.constant(bundle.generator.encoder_input(a_tilde, &batch.m)?);
        let z_a = bundle.generator.encode_var(g, gen_in, true)?;
        let ex_in = g.constant(with_mask_channel(&batch.b, &batch.m)?);
        let z_b = bundle.encoder.forward(g, ex_in, true)?;
        let z_cond = match bundle.variant {
            Variant::AttEbgan => filter_var(g, z_b, &batch.yb)?,
            Variant::Ebgan => z_b,
        };
        let a_b = bundle.generator.decode_var(g, z_a, z_cond, true)?;
        let kept = g.constant(a_tilde.clone());
        let y = g.compose(a_b, kept, &batch.m)?;
        Ok(TransferPass { z_a, z_b, a_b, y })
    }

    fn apply_generator_update(&mut self, grads: &BTreeMap<ParamKey, Tensor<T>>) {
        let bundle = &mut self.bundle;
        let mut stores = [&mut bundle.encoder.store, &mut bundle.generator.enc_store, &mut bundle.generator.dec_store];
        debug_assert!(stores.iter().zip(G_GROUPS).all(|(s, g)| s.group() == g));
        self.opt_g.step(&mut stores, grads);
    }

    /// Gradients reaching each parameter group from the discriminator loss
    /// of one batch, without applying any update.
    pub fn discriminator_gradients(&self, batch: &Batch<T>) -> Result<BTreeMap<ParamKey, Tensor<T>>> {
        let a_tilde = corrupt(&batch.a, &batch.m)?;
        let mut g = Graph::<T>::new();
        let fwd = self.transfer_pass(&mut g, batch, &a_tilde)?;
        let real = g.constant(batch.a.clone());
        let fake = g.detach(fwd.y);
        let d = &self.bundle.discriminator;
        let d_real = d.forward(&mut g, real, true)?;
        let d_fake = d.forward(&mut g, fake, true)?;
        let n = batch.len() as f64;
        let l_real = g.bce(d_real, Tensor::ones(g.value(d_real).shape()), 1.0 / n)?;
        let l_fake = g.bce(d_fake, Tensor::zeros(g.value(d_fake).shape()), 1.0 / n)?;
        let adv_d = g.add(l_real, l_fake)?;
        let grads = g.backward(adv_d)?;
        let mut out = grads.by_param();
        // Parameters of the transfer branch were live leaves in this graph;
        // report them explicitly (zero when nothing flowed).
        for store in [&self.bundle.encoder.store, &self.bundle.generator.enc_store, &self.bundle.generator.dec_store] {
            for (i, p) in store.params().iter().enumerate() {
                out.entry(store.key(i as u32)).or_insert_with(|| Tensor::zeros(p.value.shape()));
            }
        }
        Ok(out)
    }
}

fn finite(v: impl Real, term: &str, step: u64) -> Result<f64> {
    let v = v.to_f64();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term: term.to_string(), step })
    }
}
