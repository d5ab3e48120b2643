//! The training loop: batches, metrics log, periodic evaluation and
//! checkpoints.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use exedit_core::data::{assemble_batch, Batch};
use exedit_core::edit::{edit_batch, infer_labels};
use exedit_core::eval::purity;
use exedit_core::{LossReport, ModelBundle, Tensor, Trainer, Variant};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::dataset::{BatchPlan, Dataset};
use crate::error::{Error, Result};

/// File layout of one run's output directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunPaths {
    pub dir: PathBuf,
    pub metrics: PathBuf,
    pub eval: PathBuf,
    pub config: PathBuf,
    pub checkpoints: PathBuf,
    pub final_checkpoint: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path) -> Self {
        RunPaths {
            dir: dir.to_path_buf(),
            metrics: dir.join("metrics.jsonl"),
            eval: dir.join("eval.jsonl"),
            config: dir.join("config.toml"),
            checkpoints: dir.join("checkpoints"),
            final_checkpoint: dir.join("final.ckpt"),
        }
    }

    pub fn checkpoint_at(&self, step: u64) -> PathBuf {
        self.checkpoints.join(format!("step-{step:06}.ckpt"))
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub step: u64,
    pub variant: String,
    pub values: BTreeMap<String, f64>,
}

pub fn format_record(step: u64, variant: Variant, report: &LossReport) -> String {
    let mut line = format!("{{\"step\":{step},\"variant\":\"{}\"", variant.name());
    for (name, value) in report.entries() {
        line.push_str(&format!(",\"{name}\":{}", serde_json::to_string(&value).expect("finite")));
    }
    line.push('}');
    line
}

pub fn parse_record(line: &str) -> Option<MetricsRecord> {
    let serde_json::Value::Object(map) = serde_json::from_str(line).ok()? else {
        return None;
    };
    let step = map.get("step")?.as_u64()?;
    let variant = map.get("variant")?.as_str()?.to_string();
    let values = map.iter().filter_map(|(k, v)| v.as_f64().filter(|_| k != "step").map(|v| (k.clone(), v))).collect();
    Some(MetricsRecord { step, variant, values })
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row: i + 1,
            message: "not a metrics record".into(),
        })?);
    }
    Ok(out)
}

/// Held-out checks run every `optim.eval_every` steps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub step: u64,
    /// Mean absolute error of self-edits (exemplar = source) to the source.
    pub self_edit_mae: f64,
    /// Out-of-region values of the emitted edits that differ from the source.
    pub purity_violations: usize,
    pub classifier_accuracy: Option<f64>,
}

/// Self-edits and classifier accuracy on the sources of `batch`, inside the
/// batch's region.
pub fn evaluate(bundle: &ModelBundle<f32>, batch: &Batch<f32>, step: u64) -> Result<EvalRecord> {
    let mask = &batch.m;
    let labels = (bundle.variant == Variant::AttEbgan).then(|| batch.ya.clone());
    let edited = edit_batch(bundle, &batch.a, &batch.a, mask, labels.as_ref())?;
    let plane = Tensor::from_vec(&[batch.a.dim(2), batch.a.dim(3)], batch.m.batch_item(0).to_vec())?;
    let (violations, _) = purity(&batch.a, &edited, &plane);
    let mae = exedit_core::losses::mean_abs_diff(&edited, &batch.a)?;
    let classifier_accuracy = match &bundle.classifier {
        None => None,
        Some(c) => {
            let probs = c.predict(&batch.a)?;
            let n = bundle.arch.n_attributes;
            let mut hits = 0;
            for i in 0..batch.len() {
                let predicted = infer_labels(probs.batch_item(i));
                let truth = &batch.ya.batch_item(i)[..n];
                hits += predicted.values().iter().zip(truth).filter(|(p, t)| **p as f32 == **t).count();
            }
            Some(hits as f64 / (batch.len() * n) as f64)
        }
    };
    Ok(EvalRecord { step, self_edit_mae: mae, purity_violations: violations, classifier_accuracy })
}

/// What a finished run leaves behind.
#[derive(Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer<f32>,
    pub paths: RunPaths,
    /// Reports of the steps executed by this call, in order.
    pub reports: Vec<(u64, LossReport)>,
}

fn truncate_metrics(path: &Path, keep_through: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let kept: Vec<String> = std::fs::read_to_string(path)
        .map_err(|e| Error::io(path, e))?
        .lines()
        .filter(|l| parse_record(l).is_some_and(|r| r.step <= keep_through))
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(path, kept.concat()).map_err(|e| Error::io(path, e))
}

/// Trains `config.optim.steps` steps in total, starting fresh or from the
/// checkpoint `resume`. `progress` sees every report as it is produced.
pub fn train(
    config: &RunConfig,
    resume: Option<&Path>,
    progress: &mut dyn FnMut(u64, &LossReport),
) -> Result<TrainOutcome> {
    config.validate()?;
    let dataset = Dataset::open(config)?;
    let plan = BatchPlan {
        dataset: &dataset,
        regions: config.regions()?,
        batch_size: config.optim.batch_size,
        seed: config.seed,
        hflip: config.dataset.hflip,
    };
    let mut trainer = match resume {
        Some(path) => load_checkpoint(path, config)?.trainer,
        None => {
            let bundle = ModelBundle::new(config.variant, config.arch(), config.weights(), config.seed)?;
            let mut t = Trainer::new(bundle, config.adam());
            t.literal_adv_g = config.loss.literal_adv_g;
            t
        }
    };
    let start = trainer.step;
    let total = config.optim.steps;
    if start > total {
        return Err(Error::Config(format!("checkpoint is at step {start}, beyond optim.steps = {total}")));
    }
    let paths = RunPaths::new(&config.output_dir);
    std::fs::create_dir_all(&paths.dir).map_err(|e| Error::io(&paths.dir, e))?;
    std::fs::write(&paths.config, config.to_toml()).map_err(|e| Error::io(&paths.config, e))?;
    truncate_metrics(&paths.metrics, start)?;
    truncate_metrics(&paths.eval, start)?;
    let open_append = |p: &Path| {
        std::fs::OpenOptions::new().create(true).append(true).open(p).map(std::io::LineWriter::new).map_err(|e| Error::io(p, e))
    };
    let mut metrics = open_append(&paths.metrics)?;
    let mut eval_log = open_append(&paths.eval)?;
    let eval_batch = if config.optim.eval_every > 0 { Some(eval_batch(&dataset, &plan)?) } else { None };
    let mut reports = Vec::new();

    let mut step_once = |trainer: &mut Trainer<f32>, step: u64, batch: Batch<f32>| -> Result<()> {
        let report = trainer.train_step(&batch)?;
        debug_assert_eq!(trainer.step, step);
        writeln!(metrics, "{}", format_record(step, trainer.bundle.variant, &report))
            .map_err(|e| Error::io(&paths.metrics, e))?;
        progress(step, &report);
        reports.push((step, report));
        if let Some(b) = &eval_batch {
            if step.is_multiple_of(config.optim.eval_every) {
                let rec = evaluate(&trainer.bundle, b, step)?;
                writeln!(eval_log, "{}", serde_json::to_string(&rec).expect("eval record serializes"))
                    .map_err(|e| Error::io(&paths.eval, e))?;
            }
        }
        let every = config.optim.checkpoint_every;
        if every > 0 && step.is_multiple_of(every) {
            save_checkpoint(&paths.checkpoint_at(step), trainer, config)?;
        }
        Ok(())
    };

    if config.optim.prefetch {
        std::thread::scope(|scope| -> Result<()> {
            let (tx, rx) = mpsc::sync_channel::<Result<Batch<f32>>>(2);
            let plan = &plan;
            scope.spawn(move || {
                for step in start + 1..=total {
                    if tx.send(plan.batch(step)).is_err() {
                        break;
                    }
                }
            });
            for step in start + 1..=total {
                let batch = rx.recv().expect("prefetch thread yields one batch per step")?;
                step_once(&mut trainer, step, batch)?;
            }
            Ok(())
        })?;
    } else {
        for step in start + 1..=total {
            let batch = plan.batch(step)?;
            step_once(&mut trainer, step, batch)?;
        }
    }
    save_checkpoint(&paths.final_checkpoint, &trainer, config)?;
    Ok(TrainOutcome { trainer, paths, reports })
}

/// A fixed evaluation batch from held-out data (test, else validation,
/// else the pool) with the first configured region.
fn eval_batch(dataset: &Dataset, plan: &BatchPlan) -> Result<Batch<f32>> {
    let held = if !dataset.test.is_empty() { &dataset.test } else if !dataset.val.is_empty() { &dataset.val } else { &dataset.pool };
    let take: Vec<usize> = held.iter().copied().take(16).collect();
    let samples = dataset.samples(&take)?;
    let mut rng = plan.rng(0);
    Ok(assemble_batch(&samples, plan.region(1), &mut rng)?)
}
