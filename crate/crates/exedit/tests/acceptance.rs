//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Criteria 6 to 8 train the 64×64 smoke model twice from scratch, which
//! takes several minutes on one CPU core.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use exedit::config::{RunConfig, SourceConfig};
use exedit::run::{read_metrics, train, TrainOutcome};
use exedit_core::data::{generate_mask, AttributeVector, Rect, RegionPreset, RegionSpec};
use exedit_core::edit::edit;
use exedit_core::eval::{classifier_accuracy, purity, transfer_test};
use exedit_core::generator::{compose, corrupt};
use exedit_core::graph::{Graph, Var};
use exedit_core::latent::{filter_by_labels, filter_var};
use exedit_core::losses::*;
use exedit_core::synth::SyntheticFaces;
use exedit_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

struct Suite {
    failures: usize,
}

impl Suite {
    fn check(&mut self, id: &str, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
            .unwrap_or_else(|_| outcome(false, "panicked"));
        let took = start.elapsed();
        let passed = result.passed && took <= limit;
        let timing = if took <= limit { format!("{:.1}s", took.as_secs_f64()) } else { format!("{:.1}s over the limit", took.as_secs_f64()) };
        println!("{} [{id}] {name}: {} ({timing})", if passed { "PASS" } else { "FAIL" }, result.detail);
        if !passed {
            self.failures += 1;
        }
    }
}

fn random_image(rng: &mut ChaCha8Rng, n: usize, res: usize) -> Tensor<f32> {
    Tensor::from_fn(&[n, 3, res, res], |_| rng.gen_range(-1.0..1.0))
}

fn random_mask(rng: &mut ChaCha8Rng, res: usize) -> Tensor<f32> {
    let rects = (0..rng.gen_range(1..4))
        .map(|_| {
            let (r0, c0) = (rng.gen_range(0..res), rng.gen_range(0..res));
            Rect::new(r0, rng.gen_range(r0 + 1..=res), c0, rng.gen_range(c0 + 1..=res))
        })
        .collect();
    generate_mask(&RegionSpec::union(rects), res, res).unwrap()
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn mask_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut failures = 0;
    for res in [16, 128] {
        let zero = Tensor::<f32>::zeros(&[res, res]);
        let one = Tensor::<f32>::ones(&[res, res]);
        for _ in 0..1000 {
            let a = random_image(&mut rng, 1, res);
            let other = random_image(&mut rng, 1, res);
            let m = random_mask(&mut rng, res);
            let ok = bits(&corrupt(&a, &zero).unwrap()) == bits(&a)
                && corrupt(&a, &one).unwrap().data().iter().all(|v| v.to_bits() == 0)
                && bits(&compose(&other, &corrupt(&a, &zero).unwrap(), &zero).unwrap()) == bits(&a)
                && bits(&compose(&other, &corrupt(&a, &one).unwrap(), &one).unwrap()) == bits(&other)
                && bits(&compose(&a, &corrupt(&a, &m).unwrap(), &m).unwrap()) == bits(&a);
            failures += usize::from(!ok);
        }
    }
    outcome(failures == 0, format!("{failures} of 2000 pairs violate an identity"))
}

fn filter_semantics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut problems = Vec::new();
    for n in [1usize, 2, 5] {
        let code = Tensor::<f64>::from_fn(&[2, 3 * n, 2, 2], |_| rng.gen_range(-1.0..1.0));
        if filter_by_labels(&code, &AttributeVector::ones(n)).unwrap() != code {
            problems.push(format!("n={n}: all-ones filter changed the code"));
        }
        if filter_by_labels(&code, &AttributeVector::zeros(n)).unwrap().data().iter().any(|&v| v != 0.0) {
            problems.push(format!("n={n}: all-zeros filter left values"));
        }
        for keep in 0..n {
            let mut y = vec![0u8; n];
            y[keep] = 1;
            let y = AttributeVector::new(y).unwrap();
            let f = filter_by_labels(&code, &y).unwrap();
            for (i, (&fv, &cv)) in f.data().iter().zip(code.data()).enumerate() {
                let block = (i / 4) % (3 * n) / 3;
                let want = if block == keep { cv } else { 0.0 };
                if fv != want {
                    problems.push(format!("n={n}: single-attribute support broken at {i}"));
                    break;
                }
            }
            if filter_by_labels(&f, &y).unwrap() != f {
                problems.push(format!("n={n}: not idempotent"));
            }
        }
        let labels: Vec<u8> = (0..n).map(|i| (i % 2 == 0) as u8).collect();
        let mut g = Graph::<f64>::new();
        let z = g.variable(code.clone());
        let lt = Tensor::from_fn(&[2, n], |i| labels[i % n] as f64);
        let f = filter_var(&mut g, z, &lt).unwrap();
        let floor = g.constant(Tensor::full(code.shape(), -10.0));
        let loss = g.mean_abs_diff(f, floor).unwrap();
        let dz = g.backward(loss).unwrap().wrt(z).unwrap().clone();
        let numel = code.len() as f64;
        let exact = dz.data().iter().enumerate().all(|(i, &d)| d * numel == labels[(i / 4) % (3 * n) / 3] as f64);
        if !exact {
            problems.push(format!("n={n}: gradient is not exactly the label"));
        }
    }
    outcome(problems.is_empty(), if problems.is_empty() { "n in {1, 2, 5}".to_string() } else { problems.join("; ") })
}

fn clamp(p: f64) -> f64 {
    p.clamp(1e-7, 1.0 - 1e-7)
}

fn loss_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut note = |got: f64, want: f64| worst = worst.max((got - want).abs());
    for _ in 0..100 {
        let n = rng.gen_range(1..8);
        let k = rng.gen_range(1..6);
        let a = Tensor::<f64>::from_fn(&[n, 3, 4, 4], |_| rng.gen_range(-1.0..1.0));
        let b = Tensor::<f64>::from_fn(&[n, 3, 4, 4], |_| rng.gen_range(-1.0..1.0));
        let mut s = 0.0;
        for (x, y) in a.data().iter().zip(b.data()) {
            s += (x - y).abs();
        }
        note(rec_loss(&a, &b).unwrap(), s / a.len() as f64);
        note(cyc_loss(&a, &b).unwrap(), s / a.len() as f64);

        let p = Tensor::<f64>::from_fn(&[n, k], |_| rng.gen_range(0.0..1.0));
        let y = Tensor::<f64>::from_fn(&[n, k], |_| rng.gen_range(0..2) as f64);
        let mut s = 0.0;
        for (pi, ti) in p.data().iter().zip(y.data()) {
            s -= ti * clamp(*pi).ln() + (1.0 - ti) * (1.0 - clamp(*pi)).ln();
        }
        note(cls_gen_loss(&p, &y).unwrap(), s / n as f64);
        note(cls_real_loss(&p, &y).unwrap(), s / n as f64);

        let real = Tensor::<f64>::from_fn(&[n], |_| rng.gen_range(0.0..1.0));
        let fake = Tensor::<f64>::from_fn(&[n], |_| rng.gen_range(0.0..1.0));
        let (mut d, mut g) = (0.0, 0.0);
        for i in 0..n {
            d -= clamp(real.data()[i]).ln() + (1.0 - clamp(fake.data()[i])).ln();
            g -= clamp(fake.data()[i]).ln();
        }
        note(adv_d_loss(&real, &fake).unwrap(), d / n as f64);
        note(adv_g_loss(&fake).unwrap(), g / n as f64);
    }
    let ln2 = std::f64::consts::LN_2;
    let half = Tensor::<f64>::full(&[3, 2], 0.5);
    note(cls_gen_loss(&half, &Tensor::from_fn(&[3, 2], |i| (i % 2) as f64)).unwrap(), 2.0 * ln2);
    let d = Tensor::<f64>::full(&[5], 0.5);
    note(adv_g_loss(&d).unwrap(), ln2);
    note(adv_d_loss(&d, &d).unwrap(), 4f64.ln());
    outcome(worst < 1e-6, format!("max abs error {worst:.2e} over 600 instances and the closed forms"))
}

fn gradient_error<F: Fn(&mut Graph<f64>, Var) -> Var>(x: &Tensor<f64>, build: F, rng: &mut ChaCha8Rng) -> f64 {
    let eval = |x: &Tensor<f64>| -> (f64, Option<Tensor<f64>>) {
        let mut g = Graph::new();
        let v = g.variable(x.clone());
        let loss = build(&mut g, v);
        (g.value(loss).item(), g.backward(loss).unwrap().wrt(v).cloned())
    };
    let analytic = eval(x).1.unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let i = rng.gen_range(0..x.len());
        let (mut up, mut down) = (x.clone(), x.clone());
        up.data_mut()[i] += h;
        down.data_mut()[i] -= h;
        let numeric = (eval(&up).0 - eval(&down).0) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let target = Tensor::<f64>::from_fn(&[2, 3, 4, 4], |_| rng.gen_range(-1.0..1.0));
    // Offsets keep every |x - target| well away from the kink.
    let x = Tensor::from_fn(&[2, 3, 4, 4], |i| target.data()[i] + if i % 2 == 0 { 0.3 } else { -0.3 });
    let logits = Tensor::<f64>::from_fn(&[4, 3], |_| rng.gen_range(-2.0..2.0));
    let labels = Tensor::<f64>::from_fn(&[4, 3], |_| rng.gen_range(0..2) as f64);
    let d_logits = Tensor::<f64>::from_fn(&[8], |_| rng.gen_range(-2.0..2.0));
    let t1 = target.clone();
    let t2 = target.clone();
    let results = [
        ("rec", gradient_error(&x, move |g, v| { let c = g.constant(t1.clone()); g.mean_abs_diff(v, c).unwrap() }, &mut rng)),
        ("cyc", gradient_error(&x, move |g, v| { let c = g.constant(t2.clone()); g.mean_abs_diff(c, v).unwrap() }, &mut rng)),
        ("cls", gradient_error(&logits, |g, v| { let p = g.sigmoid(v); g.bce(p, labels.clone(), 0.25).unwrap() }, &mut rng)),
        (
            "adv_d",
            gradient_error(&d_logits, |g, v| {
                let p = g.sigmoid(v);
                g.bce(p, Tensor::from_fn(&[8], |i| (i < 4) as u8 as f64), 0.25).unwrap()
            }, &mut rng),
        ),
        ("adv_g", gradient_error(&d_logits, |g, v| { let p = g.sigmoid(v); g.bce(p, Tensor::ones(&[8]), 0.125).unwrap() }, &mut rng)),
    ];
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let detail: Vec<String> = results.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect();
    outcome(worst < 1e-4, format!("max relative error: {}", detail.join(", ")))
}

fn weighted_objective() -> Outcome {
    let w = LossWeights::default();
    let parts = LossReport { adv_g: Some(1.0), rec: Some(0.1), cyc: Some(0.2), cls_g: Some(0.05), ..Default::default() };
    let total = total_g_loss(&parts, &w, Variant::AttEbgan).unwrap();
    let rejected = matches!(total_g_loss(&parts, &w, Variant::Ebgan), Err(exedit_core::Error::Variant(_)));
    let without = LossReport { cls_g: None, ..parts };
    let ebgan = total_g_loss(&without, &w, Variant::Ebgan).unwrap();
    outcome(
        (total - 13.5).abs() < 1e-12 && (ebgan - 13.0).abs() < 1e-12 && rejected,
        format!("att-ebgan total {total}, ebgan total {ebgan}, ebgan rejects cls_g: {rejected}"),
    )
}

struct Smoke {
    config: RunConfig,
    faces: SyntheticFaces,
    a: TrainOutcome,
    a_time: Duration,
}

fn smoke_config(root: &Path, name: &str) -> RunConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let mut config = RunConfig::load(&path).expect("smoke config");
    config.output_dir = root.join(name);
    config
}

fn run_smoke(config: &RunConfig, resume: Option<&Path>, label: &str) -> exedit::Result<TrainOutcome> {
    let start = Instant::now();
    let out = train(config, resume, &mut |step, report| {
        if step % 500 == 0 {
            eprintln!("  {label}: step {step}, rec {:.4}, {:.0}s", report.rec.unwrap_or(f64::NAN), start.elapsed().as_secs_f64());
        }
    })?;
    Ok(out)
}

fn main() {
    let mut suite = Suite { failures: 0 };
    let minute = Duration::from_secs(60);
    suite.check("1", "mask algebra identities at 16x16 and 128x128", minute, mask_identities);
    suite.check("2", "label filter semantics", minute, filter_semantics);
    suite.check("3", "loss oracles", minute, loss_oracles);
    suite.check("4", "finite-difference gradient checks", 2 * minute, gradient_checks);
    suite.check("5", "weighted generator objective", minute, weighted_objective);

    let root = tempfile::tempdir().expect("temporary directory");
    let config = smoke_config(root.path(), "a");
    let SourceConfig::Synthetic { seed, count } = config.dataset.source.clone() else {
        panic!("the smoke config uses synthetic data");
    };
    let res = config.dataset.resolution;
    let faces = SyntheticFaces::new(seed, res, config.dataset.attributes.len(), count).unwrap();
    eprintln!("training smoke run A ({} steps)", config.optim.steps);
    let start = Instant::now();
    let a = match run_smoke(&config, None, "run A") {
        Ok(a) => a,
        Err(e) => {
            println!("FAIL [6] smoke training: run A failed: {e}");
            println!("FAIL [7] out-of-hole purity: no trained model");
            println!("FAIL [8] reproducibility: no trained model");
            std::process::exit(1);
        }
    };
    let smoke = Smoke { config, faces, a, a_time: start.elapsed() };
    let test_range = {
        let data = exedit::dataset::Dataset::open(&smoke.config).unwrap();
        let first = *data.test.first().unwrap();
        first..first + data.test.len()
    };
    let bundle = &smoke.a.trainer.bundle;
    let budget = 30 * minute;

    suite.check("6a", "reconstruction term halves", minute, || {
        let rec: Vec<f64> = smoke.a.reports.iter().map(|(_, r)| r.rec.unwrap()).collect();
        let early = rec[..20].iter().sum::<f64>() / 20.0;
        let last = *rec.last().unwrap();
        let tail = rec[rec.len() - 20..].iter().sum::<f64>() / 20.0;
        outcome(
            last < 0.5 * early && smoke.a_time <= budget,
            format!(
                "final rec {last:.4} vs 0.5 x {early:.4} = {:.4} (last-20 mean {tail:.4}); run took {:.0}s of 1800s",
                0.5 * early,
                smoke.a_time.as_secs_f64()
            ),
        )
    });
    suite.check("6b", "held-out classifier accuracy", minute, || {
        let acc = classifier_accuracy(bundle, &smoke.faces, test_range.clone()).unwrap();
        outcome(acc >= 0.90, format!("{acc:.4} on {} held-out faces, need >= 0.90", test_range.len()))
    });

    let mouth = RegionPreset::Mouth.region(res);
    let mut transfer = None;
    suite.check("6c", "mustache transfer through the mouth region", 5 * minute, || {
        let report = transfer_test(bundle, &smoke.faces, test_range.start, 200, 0, &mouth).unwrap();
        let rate = report.transfer_rate();
        transfer = Some(report);
        outcome(rate >= 0.70, format!("{:.3} of 200 pairs carry the exemplar's value, need >= 0.70", rate))
    });
    suite.check("6d", "filtering removes the transferred attribute", minute, || match &transfer {
        None => outcome(false, "transfer test did not run"),
        Some(report) => {
            let (rate, eligible) = report.filter_rate();
            outcome(
                rate >= 0.70 && eligible > 0,
                format!("{rate:.3} of {eligible} transferred pairs with the attribute drop below 0.5, need >= 0.70"),
            )
        }
    });

    suite.check("7", "out-of-hole purity over evaluation edits", 5 * minute, || {
        let mut violations = 0;
        let mut checked = 0;
        if let Some(r) = &transfer {
            violations += r.purity_violations;
            checked += r.edited_pixels;
        }
        let logged: usize = std::fs::read_to_string(&smoke.a.paths.eval)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["purity_violations"].as_u64().unwrap() as usize)
            .sum();
        violations += logged;
        // Single-image edits through every preset, with and without filters.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for preset in [RegionPreset::Mouth, RegionPreset::Eyes, RegionPreset::Components, RegionPreset::Face, RegionPreset::All] {
            let region = preset.region(res);
            let mask = generate_mask::<f32>(&region, res, res).unwrap();
            for _ in 0..10 {
                let (i, j) = (rng.gen_range(test_range.clone()), rng.gen_range(test_range.clone()));
                let (s, e) = (smoke.faces.sample::<f32>(i).unwrap(), smoke.faces.sample::<f32>(j).unwrap());
                let filter = AttributeVector::new(vec![rng.gen_range(0..2), rng.gen_range(0..2)]).unwrap();
                let out = edit(bundle, &s.image, &e.image, &region, None, Some(&filter)).unwrap();
                let (v, c) = purity(&s.image, &out, &mask);
                violations += v;
                checked += c;
            }
        }
        outcome(violations == 0, format!("{violations} differing values among {checked} checked outside the hole"))
    });

    suite.check("7+", "exemplar code steers only the hole", minute, || {
        let mask = generate_mask::<f32>(&RegionPreset::Components.region(res), res, res).unwrap();
        let sources: Vec<_> = (0..8).map(|k| smoke.faces.sample::<f32>(test_range.start + k).unwrap().image).collect();
        let exemplars: Vec<_> = (8..16).map(|k| smoke.faces.sample::<f32>(test_range.start + k).unwrap().image).collect();
        let stack = |v: &[Tensor<f32>]| Tensor::stack(&v.iter().collect::<Vec<_>>()).unwrap();
        let a = stack(&sources);
        let a_tilde = corrupt(&a, &mask).unwrap();
        let z_a = bundle.generator.g_encode(&a_tilde, &mask).unwrap();
        let z1 = bundle.encoder.encode(&a, &mask).unwrap();
        let z2 = bundle.encoder.encode(&stack(&exemplars), &mask).unwrap();
        let y1 = compose(&bundle.generator.g_decode(&z_a, &z1).unwrap(), &a_tilde, &mask).unwrap();
        let y2 = compose(&bundle.generator.g_decode(&z_a, &z2).unwrap(), &a_tilde, &mask).unwrap();
        let plane = res * res;
        let (mut inside, mut count, mut outside) = (0.0, 0usize, 0usize);
        for (i, (p, q)) in y1.data().iter().zip(y2.data()).enumerate() {
            if mask.data()[i % plane] == 1.0 {
                inside += (p - q).abs() as f64;
                count += 1;
            } else if p.to_bits() != q.to_bits() {
                outside += 1;
            }
        }
        let change = inside / count as f64;
        outcome(change > 0.0 && outside == 0, format!("mean in-hole change {change:.4}, {outside} out-of-hole changes"))
    });

    let b_config = smoke_config(root.path(), "b");
    eprintln!("training smoke run B ({} steps)", b_config.optim.steps);
    suite.check("8", "reproducibility and resume", budget, || {
        let b = match run_smoke(&b_config, None, "run B") {
            Ok(b) => b,
            Err(e) => return outcome(false, format!("run B failed: {e}")),
        };
        let log_a = std::fs::read(&smoke.a.paths.metrics).unwrap();
        let log_b = std::fs::read(&b.paths.metrics).unwrap();
        let same_log = log_a == log_b && read_metrics(&b.paths.metrics).unwrap().len() == 2000;

        let mut c_config = smoke_config(root.path(), "c");
        c_config.optim.steps = 1100;
        let ckpt = smoke.a.paths.checkpoint_at(1000);
        let resumed = match run_smoke(&c_config, Some(&ckpt), "resume") {
            Ok(c) => c,
            Err(e) => return outcome(false, format!("resume failed: {e}")),
        };
        let expected = &smoke.a.reports[1000..1100];
        let same_tail = resumed.reports.len() == 100 && resumed.reports[..] == expected[..];
        outcome(
            same_log && same_tail,
            format!("metrics logs identical: {same_log}; resumed steps 1001-1100 identical: {same_tail}"),
        )
    });

    if suite.failures > 0 {
        println!("{} acceptance criteria failed", suite.failures);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
