use std::path::PathBuf;

use exedit::config::{RunConfig, SourceConfig};
use exedit::Error;
use exedit_core::Variant;

const MINIMAL: &str = r#"
variant = "att-ebgan"
[dataset.source]
kind = "synthetic"
count = 100
"#;

fn workspace_file(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

#[test]
fn defaults_follow_the_published_training_setup() {
    let c = RunConfig::from_toml(MINIMAL).unwrap();
    assert_eq!(c.optim.learning_rate, 1e-4);
    assert_eq!(c.optim.batch_size, 32);
    assert_eq!((c.optim.beta1, c.optim.beta2), (0.5, 0.999));
    assert_eq!(c.optim.steps, 2000);
    assert_eq!(c.optim.checkpoint_every, 500);
    assert_eq!((c.loss.lambda_rec, c.loss.lambda_cyc, c.loss.lambda_g), (100.0, 10.0, 10.0));
    assert!(!c.loss.literal_adv_g);
    assert_eq!(c.dataset.resolution, 128);
    assert_eq!(c.arch().n_attributes, 2);
    assert_eq!(c.regions().unwrap().len(), 4);
}

#[test]
fn batches_need_at_least_two_images() {
    let text = format!("{MINIMAL}\n[optim]\nbatch_size = 1\n");
    let e = RunConfig::from_toml(&text).unwrap_err();
    assert!(matches!(e, Error::Config(ref m) if m.contains("batch_size")));
}

#[test]
fn invalid_fields_are_config_errors() {
    for extra in [
        "[optim]\nlearning_rate = -1.0\n",
        "[optim]\nbeta1 = 1.5\n",
        "[loss]\nlambda_rec = -3.0\n",
        "[model]\ndepth = 6\n",
        "[optim]\nlearnign_rate = 0.1\n",
    ] {
        let e = RunConfig::from_toml(&format!("{MINIMAL}\n{extra}")).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{extra}: {e:?}");
    }
    let e = RunConfig::from_toml(&MINIMAL.replace("[dataset.source]", "[dataset]\nregions = [\"chin\"]\n[dataset.source]"))
        .unwrap_err();
    assert!(matches!(e, Error::Config(_)));
    let e = RunConfig::from_toml(&MINIMAL.replace("[dataset.source]", "[dataset]\nattributes = [\"Smiling\"]\n[dataset.source]"))
        .unwrap_err();
    assert!(matches!(e, Error::Config(_)));
}

#[test]
fn ebgan_ignores_the_classification_weight() {
    let text = MINIMAL.replace("att-ebgan", "ebgan") + "\n[loss]\nlambda_g = 10.0\n";
    let c = RunConfig::from_toml(&text).unwrap();
    assert_eq!(c.variant, Variant::Ebgan);
    assert_eq!(c.weights().lambda_g, 0.0);
    assert_eq!(c.weights().lambda_rec, 100.0);
}

#[test]
fn round_trips_through_toml() {
    let c = RunConfig::load(&workspace_file("configs/smoke.toml")).unwrap();
    assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
}

#[test]
fn shipped_configs_parse() {
    let smoke = RunConfig::load(&workspace_file("configs/smoke.toml")).unwrap();
    assert_eq!(smoke.dataset.resolution, 64);
    assert_eq!(smoke.optim.batch_size, 16);
    assert_eq!(smoke.optim.steps, 2000);
    assert_eq!(smoke.arch().n_attributes, 2);
    let celeba = RunConfig::load(&workspace_file("configs/celeba.toml")).unwrap();
    assert!(matches!(celeba.dataset.source, SourceConfig::Celeba { .. }));
    assert_eq!(celeba.dataset.resolution, 128);
    let e = RunConfig::load(&workspace_file("configs/missing.toml")).unwrap_err();
    assert_eq!(e.exit_code(), 4);
}
