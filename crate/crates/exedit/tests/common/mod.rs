#![allow(dead_code)]

use std::path::Path;

use exedit::config::RunConfig;

/// A run on a few hundred synthetic faces with very narrow networks.
pub fn tiny_config(dir: &Path, variant: &str, steps: u64) -> RunConfig {
    let text = format!(
        r#"
variant = "{variant}"
seed = 5
output_dir = "{dir}"

[dataset]
attributes = ["Mustache", "Eyeglasses"]
resolution = 64

[dataset.source]
kind = "synthetic"
seed = 2
count = 200

[dataset.split]
mode = "contiguous"
train = 160
val = 20
test = 20

[model]
block_channels = 4
depth = 3
encoder_width = 4
generator_width = 4
generator_latent_channels = 4
critic_width = 4
critic_max_width = 16

[optim]
batch_size = 4
steps = {steps}
checkpoint_every = 5
eval_every = 5
"#,
        dir = dir.display()
    );
    RunConfig::from_toml(&text).unwrap()
}
