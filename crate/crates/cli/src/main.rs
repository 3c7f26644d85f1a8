//! `scenefit` command-line interface.
//!
//! Every subcommand reads an optional JSON configuration (from `--config` or
//! the `SCENEFIT_CONFIG` environment variable), applies flag overrides, runs
//! one library operation and prints a one-line summary. Exit status is 0 on
//! success, 1 on usage errors and 2 on runtime failures.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use scenefit::analysis::{gradient_alignment, recovery_study};
use scenefit::config::{load_config, Config, CONFIG_ENV};
use scenefit::dataset::{generate_dataset, read_json, write_json, Dataset};
use scenefit::generator::builtin_bank;
use scenefit::metrics::evaluate;
use scenefit::optimize::{fit_from_init, fit_opt_iter, fit_rand_optp, FitReport};
use scenefit::prototypes::discover_from_images;
use scenefit::render::Rasterization;
use scenefit::scene::DEFAULT_MAX_OBJECTS;
use scenefit::{EfdShape, Image, PrototypeBank, Scene};

const LONG_VERSION: &str = concat!(
    env!("CARGO_PKG_VERSION"),
    " (target ",
    env!("SCENEFIT_BUILD_TARGET"),
    ", profile ",
    env!("SCENEFIT_BUILD_PROFILE"),
    ")"
);

#[derive(Debug, Parser)]
#[command(name = "scenefit", version, long_version = LONG_VERSION, about = "Fit differentiable vector scenes to images")]
struct Cli {
    /// JSON configuration file (defaults to $SCENEFIT_CONFIG when set).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to the number of available cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    threads: Option<u64>,
    /// Seed for every random choice; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    OptIter,
    RandOptp,
    FromInit,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset of rendered scenes.
    GenDataset {
        /// Number of examples to generate.
        #[arg(long)]
        count: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Image width and height in pixels.
        #[arg(long)]
        size: Option<u32>,
        /// Upper bound on objects per scene.
        #[arg(long)]
        max_objects: Option<usize>,
    },
    /// Render a scene to PNG.
    Render {
        /// Scene JSON file.
        #[arg(long)]
        scene: PathBuf,
        /// Prototype bank JSON (defaults to the built-in shapes).
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Output PNG.
        #[arg(long)]
        out: PathBuf,
        /// Also write the hard label map.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Fit a scene to a target image.
    Fit {
        /// Fitting method.
        #[arg(long, value_enum)]
        method: Method,
        /// Target PNG.
        #[arg(long)]
        target: PathBuf,
        /// Initial scene (required for from-init).
        #[arg(long)]
        init: Option<PathBuf>,
        /// Output fit report JSON.
        #[arg(long)]
        out: PathBuf,
        /// Prototype bank JSON (defaults to the built-in shapes).
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Object slots for rand-optp.
        #[arg(long, default_value_t = 4)]
        n_objects: usize,
        /// Object cap for opt-iter.
        #[arg(long, default_value_t = DEFAULT_MAX_OBJECTS)]
        max_objects: usize,
        /// Also render the fitted scene to this PNG.
        #[arg(long)]
        render_out: Option<PathBuf>,
    },
    /// Discover a shape-prototype bank from images.
    Prototypes {
        /// Dataset directory or directory of PNG images.
        #[arg(long)]
        images: PathBuf,
        /// Discovery rounds (defaults to the configuration).
        #[arg(long)]
        rounds: Option<usize>,
        /// Output bank JSON.
        #[arg(long)]
        out: PathBuf,
        /// Bank used for the initial fits (defaults to the built-in shapes).
        #[arg(long)]
        bank: Option<PathBuf>,
        /// Use only the first N images.
        #[arg(long)]
        limit: Option<usize>,
        /// Object cap for the initial opt-iter fits.
        #[arg(long, default_value_t = DEFAULT_MAX_OBJECTS)]
        max_objects: usize,
        /// Also write the per-round discovery report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare predicted scenes against a ground-truth dataset.
    Eval {
        /// Directory of predicted scenes or fit reports named like the
        /// ground-truth scene files.
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth dataset directory or manifest.
        #[arg(long)]
        truth: PathBuf,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        /// Prototype bank JSON (defaults to the dataset's shapes).
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Cosine similarity between image-loss and parameter-loss gradients.
    GradAnalysis {
        /// Dataset directory or manifest.
        #[arg(long)]
        dataset: PathBuf,
        /// Scene pairs per interpolation weight.
        #[arg(long)]
        pairs: Option<usize>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        /// Prototype bank JSON (defaults to the dataset's shapes).
        #[arg(long)]
        bank: Option<PathBuf>,
    },
    /// Parameter loss before and after fitting interpolated scenes.
    Recovery {
        /// Dataset directory or manifest.
        #[arg(long)]
        dataset: PathBuf,
        /// Scene pairs per interpolation weight.
        #[arg(long)]
        pairs: Option<usize>,
        /// Adam iterations per fit.
        #[arg(long)]
        budget: Option<usize>,
        /// Output CSV.
        #[arg(long)]
        out: PathBuf,
        /// Prototype bank JSON (defaults to the dataset's shapes).
        #[arg(long)]
        bank: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(cli: &Cli) -> Result<Config> {
    let path = cli.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => load_config(&p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.generator.seed = seed;
    }
    Ok(cfg)
}

fn load_bank(path: Option<&Path>, fallback: impl FnOnce() -> Result<PrototypeBank>) -> Result<PrototypeBank> {
    match path {
        Some(p) => {
            let shapes: Vec<EfdShape> = read_json(p)?;
            PrototypeBank::new(shapes).with_context(|| format!("invalid bank {}", p.display()))
        }
        None => fallback(),
    }
}

/// Bank for a dataset: an explicit file, else the dataset's generator
/// shapes, else the built-in shapes.
fn dataset_bank(path: Option<&Path>, ds: &Dataset) -> Result<PrototypeBank> {
    load_bank(path, || Ok(ds.config().map(|c| c.generator.bank()).unwrap_or_else(|_| builtin_bank())))
}

fn load_scenes(ds: &Dataset) -> Result<Vec<Scene>> {
    (0..ds.len())
        .into_par_iter()
        .map(|i| ds.scene(i).map_err(anyhow::Error::from))
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<String> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut cfg = load(&cli)?;
    match cli.command {
        Command::GenDataset {
            count,
            out,
            size,
            max_objects,
        } => {
            if let Some(s) = size {
                cfg.generator.width = s;
                cfg.generator.height = s;
            }
            if let Some(m) = max_objects {
                cfg.generator.n_objects_range[1] = m;
                cfg.generator.n_objects_range[0] = cfg.generator.n_objects_range[0].min(m);
            }
            let entries = generate_dataset(&cfg.generator, &cfg.render, count, &out)?;
            let objects: usize = entries.iter().map(|e| e.n_objects).sum();
            Ok(format!("wrote {count} examples ({objects} objects) to {}", out.display()))
        }
        Command::Render {
            scene,
            bank,
            out,
            labels,
        } => {
            let s: Scene = read_json(&scene)?;
            let bank = load_bank(bank.as_deref(), || Ok(builtin_bank()))?;
            let raster = Rasterization::new(&s, &bank, &cfg.render)?;
            raster.image().save_png(&out)?;
            if let Some(l) = &labels {
                raster.labels().save_png(l)?;
            }
            Ok(format!("rendered {} objects to {}", s.objects.len(), out.display()))
        }
        Command::Fit {
            method,
            target,
            init,
            out,
            bank,
            n_objects,
            max_objects,
            render_out,
        } => {
            let img = Image::load_png(&target)?;
            let bank = load_bank(bank.as_deref(), || Ok(builtin_bank()))?;
            let report: FitReport = match method {
                Method::OptIter => fit_opt_iter(&img, max_objects, &bank, &cfg.render, &cfg.fit, cfg.seed)?,
                Method::RandOptp => fit_rand_optp(&img, n_objects, &bank, &cfg.render, &cfg.fit, cfg.seed)?,
                Method::FromInit => {
                    let Some(init) = init else {
                        bail!("--init is required for --method from-init");
                    };
                    let start: Scene = read_json(&init)?;
                    fit_from_init(&img, &start, &bank, &cfg.render, &cfg.fit)?
                }
            };
            write_json(&out, &report)?;
            if let Some(p) = &render_out {
                Rasterization::new(&report.scene, &bank, &cfg.render)?.image().save_png(p)?;
            }
            Ok(format!(
                "fitted {} objects in {} iterations, loss {:.6}, wrote {}",
                report.scene.objects.len(),
                report.iterations,
                report.final_loss,
                out.display()
            ))
        }
        Command::Prototypes {
            images,
            rounds,
            out,
            bank,
            limit,
            max_objects,
            report,
        } => {
            if let Some(r) = rounds {
                cfg.discovery.rounds = r;
            }
            let mut paths = image_paths(&images)?;
            if let Some(n) = limit {
                paths.truncate(n);
            }
            if paths.is_empty() {
                bail!("no images found in {}", images.display());
            }
            let imgs = paths
                .par_iter()
                .map(|p| Image::load_png(p).map_err(anyhow::Error::from))
                .collect::<Result<Vec<_>>>()?;
            let init_bank = load_bank(bank.as_deref(), || Ok(builtin_bank()))?;
            let result = discover_from_images(
                &imgs,
                &init_bank,
                &cfg.render,
                &cfg.fit,
                &cfg.discovery,
                max_objects,
                cfg.seed,
            )?;
            write_json(&out, &result.bank)?;
            if let Some(p) = &report {
                write_json(p, &result)?;
            }
            Ok(format!(
                "discovered {} prototypes from {} images, wrote {}",
                result.bank.len(),
                imgs.len(),
                out.display()
            ))
        }
        Command::Eval { pred, truth, out, bank } => {
            let ds = Dataset::open(&truth)?;
            let bank = dataset_bank(bank.as_deref(), &ds)?;
            let truth_scenes = load_scenes(&ds)?;
            let mut ids = Vec::with_capacity(ds.len());
            let mut pred_scenes = Vec::with_capacity(ds.len());
            for e in &ds.entries {
                let name = Path::new(&e.scene).file_name().context("manifest scene path has no file name")?;
                pred_scenes.push(read_prediction(&pred.join(name))?);
                ids.push(e.index);
            }
            let report = evaluate(&pred_scenes, &truth_scenes, &bank, &cfg.render)?;
            let mut csv = String::from("example,mae,mse,ssim,iou,ari\n");
            for (id, r) in ids.iter().zip(&report.rows) {
                writeln!(csv, "{id},{},{},{},{},{}", r.mae, r.mse, r.ssim, r.iou, r.ari)?;
            }
            let m = report.mean;
            writeln!(csv, "mean,{},{},{},{},{}", m.mae, m.mse, m.ssim, m.iou, m.ari)?;
            write_text(&out, &csv)?;
            Ok(format!(
                "evaluated {} examples: mae {:.5}, ssim {:.4}, iou {:.4}, ari {:.4}",
                report.rows.len(),
                m.mae,
                m.ssim,
                m.iou,
                m.ari
            ))
        }
        Command::GradAnalysis {
            dataset,
            pairs,
            out,
            bank,
        } => {
            if let Some(p) = pairs {
                cfg.analysis.pairs = p;
            }
            let ds = Dataset::open(&dataset)?;
            let bank = dataset_bank(bank.as_deref(), &ds)?;
            let scenes = load_scenes(&ds)?;
            let rows = gradient_alignment(&scenes, &bank, &cfg.render, &cfg.param_loss, &cfg.analysis, cfg.seed)?;
            let mut csv = String::from("alpha,aspect,loss_kind,mean_cosine,pairs,skipped\n");
            for r in &rows {
                writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    r.alpha,
                    r.aspect.name(),
                    r.loss_kind.name(),
                    r.mean_cosine,
                    r.pairs,
                    r.skipped
                )?;
            }
            write_text(&out, &csv)?;
            Ok(format!("wrote {} alignment rows from {} pairs to {}", rows.len(), cfg.analysis.pairs, out.display()))
        }
        Command::Recovery {
            dataset,
            pairs,
            budget,
            out,
            bank,
        } => {
            if let Some(p) = pairs {
                cfg.analysis.recovery_pairs = p;
            }
            if let Some(b) = budget {
                cfg.analysis.recovery_budget = b;
            }
            let ds = Dataset::open(&dataset)?;
            let bank = dataset_bank(bank.as_deref(), &ds)?;
            let scenes = load_scenes(&ds)?;
            let rows = recovery_study(&scenes, &bank, &cfg.render, &cfg.fit, &cfg.param_loss, &cfg.analysis, cfg.seed)?;
            let mut csv = String::from("alpha,mean_before,mean_after,pairs\n");
            for r in &rows {
                writeln!(csv, "{},{},{},{}", r.alpha, r.mean_before, r.mean_after, r.pairs)?;
            }
            write_text(&out, &csv)?;
            Ok(format!("wrote {} recovery rows to {}", rows.len(), out.display()))
        }
    }
}

/// PNG inputs for discovery: the images of a dataset, or every `.png` in a
/// directory in name order.
fn image_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(scenefit::dataset::MANIFEST_FILE).exists() {
        let ds = Dataset::open(dir)?;
        return Ok(ds.entries.iter().map(|e| ds.root.join(&e.image)).collect());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// A predicted scene, stored either bare or inside a fit report.
fn read_prediction(path: &Path) -> Result<Scene> {
    let value: serde_json::Value = read_json(path)?;
    let scene = match value.get("scene") {
        Some(s) if value.get("loss_trace").is_some() => s.clone(),
        _ => value,
    };
    serde_json::from_value(scene).with_context(|| format!("{} is not a scene or fit report", path.display()))
}
