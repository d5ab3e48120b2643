//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use exedit_core::data::{parse_region, AttributeVector};
use exedit_core::synth::{SyntheticFaces, ATTRIBUTE_NAMES};
use exedit_core::{Tensor, Variant};

use crate::checkpoint::read_checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::make_grid;
use crate::imageio::{load_image, save_image, save_rgb, tensor_to_rgb};

#[derive(Debug, Parser)]
#[command(name = "exedit", version, about = "Exemplar-guided face editing by region inpainting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a TOML run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print a progress line every this many steps (0 for none).
        #[arg(long, default_value_t = 50)]
        log_every: u64,
    },
    /// Edit a source image inside a region using an exemplar.
    Edit(EditArgs),
    /// Render a labeled comparison grid from a manifest of image triples.
    Grid {
        /// Text file with one `source exemplar result` path triple per line.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic faces and a CelebA-style attribute file.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        #[arg(long, default_value_t = 2)]
        attributes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Debug, clap::Args)]
pub struct EditArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub source: PathBuf,
    #[arg(long)]
    pub exemplar: PathBuf,
    /// Preset (mouth, eyes, components, full, all) or `r0,r1,c0,c1;...` in pixels.
    #[arg(long)]
    pub region: String,
    /// Attribute mask ANDed with the exemplar labels, e.g. `1,0`.
    #[arg(long)]
    pub filter: Option<String>,
    /// Exemplar labels, e.g. `1,0`. Defaults to `<exemplar>.labels` when that
    /// file exists, else to the classifier's prediction.
    #[arg(long)]
    pub labels: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a source/exemplar/result grid here.
    #[arg(long)]
    pub grid: Option<PathBuf>,
}

pub fn parse_labels(text: &str) -> Result<AttributeVector> {
    let values = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| match t {
            "1" | "+1" => Ok(1),
            "0" | "-1" => Ok(0),
            other => Err(exedit_core::Error::Validation(format!("label `{other}` is not binary"))),
        })
        .collect::<Result<Vec<u8>, _>>()?;
    Ok(AttributeVector::new(values)?)
}

fn sidecar(exemplar: &Path) -> PathBuf {
    let mut s = exemplar.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

/// Runs one edit and writes the result (and optional grid); returns the
/// edited image.
pub fn edit(args: &EditArgs) -> Result<Tensor<f32>> {
    let ckpt = read_checkpoint(&args.ckpt)?;
    let bundle = ckpt.bundle();
    let res = bundle.arch.resolution;
    if bundle.variant == Variant::Ebgan && (args.filter.is_some() || args.labels.is_some()) {
        return Err(Error::Usage("attribute filters and labels need an att-ebgan checkpoint".into()));
    }
    let region = parse_region(&args.region, res)?;
    let source = load_image(&args.source, res)?;
    let exemplar = load_image(&args.exemplar, res)?;
    let labels = match (&args.labels, bundle.variant) {
        (Some(l), _) => Some(parse_labels(l)?),
        (None, Variant::AttEbgan) => {
            let path = sidecar(&args.exemplar);
            match std::fs::read_to_string(&path) {
                Ok(text) => Some(parse_labels(&text)?),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
                Err(e) => return Err(Error::io(path, e)),
            }
        }
        (None, Variant::Ebgan) => None,
    };
    let filter = args.filter.as_deref().map(parse_labels).transpose()?;
    if let Some(f) = &filter {
        if f.len() != bundle.arch.n_attributes {
            return Err(exedit_core::Error::Validation(format!(
                "filter has {} entries, the checkpoint has {} attributes",
                f.len(),
                bundle.arch.n_attributes
            ))
            .into());
        }
    }
    let out = exedit_core::edit::edit(bundle, &source, &exemplar, &region, labels.as_ref(), filter.as_ref())?;
    save_image(&args.out, &out)?;
    if let Some(g) = &args.grid {
        let row = [tensor_to_rgb(&source)?, tensor_to_rgb(&exemplar)?, tensor_to_rgb(&out)?];
        save_rgb(g, &make_grid(&[row])?)?;
    }
    Ok(out)
}

/// Builds a grid from a manifest; relative paths resolve against the
/// manifest's directory.
pub fn grid_from_manifest(manifest: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [a, b, c] = parts[..] else {
            return Err(Error::Parse {
                path: manifest.to_path_buf(),
                row: i + 1,
                message: format!("expected `source exemplar result`, got {} fields", parts.len()),
            });
        };
        let open = |p: &str| -> Result<image::RgbImage> {
            let path = base.join(p);
            image::open(&path)
                .map(|img| img.to_rgb8())
                .map_err(|e| Error::Image { path, message: e.to_string() })
        };
        rows.push([open(a)?, open(b)?, open(c)?]);
    }
    save_rgb(out, &make_grid(&rows)?)
}

/// Writes `count` synthetic faces as PNGs plus `list_attr.txt`.
pub fn write_synthetic(out_dir: &Path, count: usize, resolution: usize, n: usize, seed: u64) -> Result<()> {
    let faces = SyntheticFaces::new(seed, resolution, n, count)?;
    let mut listing = format!("{count}\n{}\n", ATTRIBUTE_NAMES[..n].join(" "));
    for i in 0..count {
        let sample = faces.sample::<f32>(i)?;
        let name = format!("{i:06}.png");
        save_image(&out_dir.join(&name), &sample.image)?;
        let values: Vec<&str> = sample.attributes.values().iter().map(|&v| if v == 1 { "1" } else { "-1" }).collect();
        listing.push_str(&format!("{name} {}\n", values.join(" ")));
    }
    let path = out_dir.join("list_attr.txt");
    std::fs::write(&path, listing).map_err(|e| Error::io(path, e))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, resume, log_every } => {
            let config = RunConfig::load(&config)?;
            let outcome = crate::run::train(&config, resume.as_deref(), &mut |step, report| {
                if log_every > 0 && step % log_every == 0 {
                    let terms: Vec<String> = report.entries().iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
                    println!("step {step}: {}", terms.join(" "));
                }
            })?;
            println!("final checkpoint: {}", outcome.paths.final_checkpoint.display());
        }
        Command::Edit(args) => {
            edit(&args)?;
            println!("wrote {}", args.out.display());
        }
        Command::Grid { manifest, out } => {
            grid_from_manifest(&manifest, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Synth { out_dir, count, resolution, attributes, seed } => {
            write_synthetic(&out_dir, count, resolution, attributes, seed)?;
            println!("wrote {count} faces to {}", out_dir.display());
        }
    }
    Ok(())
}
