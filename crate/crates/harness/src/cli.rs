//! Command-line interface.

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::info;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use dynaug_core::classifier::{self, evaluate, train, ClassifierModel};
use dynaug_core::numerics::Rng;
use dynaug_core::rankpool::DynamicImage;
use dynaug_core::sps::SelectionLedger;
use dynaug_core::videodata::{self, read_dataset, write_dataset, Dataset, Sample, Split, Video};
use dynaug_core::wgan::{self, train_wgan};

use crate::cache::Cache;
use crate::config::{self, ExperimentConfig, ExperimentKind};
use crate::{data, experiments};

#[derive(Debug, Parser)]
#[command(name = "dynaug", version, about = "Dynamic-image augmentation with GAN pools and self-paced selection")]
pub struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic train/test videos as DYN1 files.
    GenData,
    /// Rank-pool a DYN1 video file into dynamic images.
    Rankpool {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// One image per full video instead of sparse-sampled subvideos.
        #[arg(long)]
        full: bool,
    },
    /// Train one WGAN per class on a DYN1 image file.
    TrainGan {
        #[arg(long)]
        input: PathBuf,
        /// Only this class.
        #[arg(long)]
        class: Option<usize>,
    },
    /// Train and evaluate a classifier on DYN1 image files.
    TrainClf {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Run the experiment described by --config.
    RunExp {
        /// Recompute every stage instead of using out/cache.
        #[arg(long)]
        no_cache: bool,
    },
    /// Summarize a DYN1, WGN1, CLF1 or ledger file.
    Inspect { path: PathBuf },
}

pub fn main() -> ExitCode {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn set_threads(n: usize) -> anyhow::Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    #[cfg(not(feature = "parallel"))]
    if n > 1 {
        log::warn!("built without the `parallel` feature; --threads {n} ignored");
    }
    Ok(())
}

fn load_config(cli: &Cli, required: bool) -> anyhow::Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => config::load(path)?,
        None if required => bail!("this command needs --config <path>"),
        None => ExperimentConfig::quick(ExperimentKind::Insufficiency, 0),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        set_threads(n)?;
    }
    match &cli.command {
        Command::GenData => {
            let config = load_config(&cli, false)?;
            let (train, test) = data::generate_videos(&config.data, config.seed)?;
            std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
            for (name, ds) in [("train-videos.dyn1", &train), ("test-videos.dyn1", &test)] {
                let path = cli.out.join(name);
                write_dataset(ds, &path).with_context(|| format!("writing {}", path.display()))?;
                println!("{}: {} videos, per class {:?}", path.display(), ds.len(), ds.class_counts());
            }
        }
        Command::Rankpool { input, output, full } => {
            let config = load_config(&cli, false)?;
            let ds = read_dataset(input).with_context(|| format!("reading {}", input.display()))?;
            let videos: Vec<&Video> = ds.videos().collect();
            if videos.is_empty() {
                bail!("{} holds no videos", input.display());
            }
            let images = if *full {
                data::full_dynamic_images(&videos, &config.rankpool)?
            } else {
                data::sparse_dynamic_images(&videos, &config.data, &config.rankpool, config.seed)?
            };
            let out = Dataset::from_images(ds.split, ds.num_classes, images)?;
            let path = output.clone().unwrap_or_else(|| cli.out.join("dynamic-images.dyn1"));
            ensure_parent(&path)?;
            write_dataset(&out, &path).with_context(|| format!("writing {}", path.display()))?;
            println!("{}: {} dynamic images, per class {:?}", path.display(), out.len(), out.class_counts());
        }
        Command::TrainGan { input, class } => {
            let config = load_config(&cli, false)?;
            let ds = read_dataset(input).with_context(|| format!("reading {}", input.display()))?;
            let classes: Vec<usize> = match class {
                Some(c) if *c < ds.num_classes => vec![*c],
                Some(c) => bail!("class {c} out of range (dataset has {})", ds.num_classes),
                None => (0..ds.num_classes).collect(),
            };
            let dir = cli.out.join("checkpoints");
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for c in classes {
                let real: Vec<DynamicImage> = ds.images().filter(|d| d.label == c).cloned().collect();
                info!("training GAN for class {c} on {} images", real.len());
                let mut rng = Rng::new(config.seed).fork_str("gan").fork(c as u64);
                let mut gan = train_wgan(&real, &config.gan.model, &mut rng).with_context(|| format!("class {c}"))?;
                gan.quantize_f32();
                let path = dir.join(format!("gan-{c}.wgn1"));
                wgan::write_checkpoint(&gan, &path)?;
                let last = gan.history.critic_objective.last().copied().unwrap_or(f64::NAN);
                println!("{}: final critic objective {last:.4e}", path.display());
            }
        }
        Command::TrainClf { train: train_path, test } => {
            let config = load_config(&cli, false)?;
            let ds = read_dataset(train_path).with_context(|| format!("reading {}", train_path.display()))?;
            let images: Vec<DynamicImage> = ds.images().cloned().collect();
            let first = images.first().with_context(|| format!("{} holds no images", train_path.display()))?;
            let mut model = ClassifierModel::new(
                first.height(),
                first.width(),
                config.classifier.hidden,
                ds.num_classes,
                config.classifier.schedule.dropout,
                &mut Rng::new(config.seed).fork_str("clf-init"),
            )?;
            let history = train(&mut model, &images, &config.classifier.schedule, &Rng::new(config.seed).fork_str("clf-train"))?;
            println!("final train loss {:.4}", history.loss.last().copied().unwrap_or(f64::NAN));
            if let Some(test) = test {
                let ts = read_dataset(test).with_context(|| format!("reading {}", test.display()))?;
                let test_images: Vec<DynamicImage> = ts.images().cloned().collect();
                println!("test accuracy {:.4}", evaluate(&model, &test_images)?.accuracy);
            }
            let path = cli.out.join("checkpoints").join("classifier.clf1");
            ensure_parent(&path)?;
            classifier::write_checkpoint(&model, &path)?;
            println!("{}", path.display());
        }
        Command::RunExp { no_cache } => {
            let config = load_config(&cli, true)?;
            let cache = if *no_cache { Cache::disabled() } else { Cache::at(cli.out.join("cache")) };
            info!("running {:?} experiment, seed {}", config.kind, config.seed);
            let outcome = experiments::run(&config, &cache)?;
            experiments::verify_isolation(&outcome.report)?;
            experiments::write_outputs(&outcome, &cli.out)?;
            for arm in &outcome.report.arms {
                println!("{:<28} accuracy {:.4}", arm.name, arm.accuracy);
            }
            println!("wrote {}", cli.out.join("report.json").display());
        }
        Command::Inspect { path } => print!("{}", inspect(path)?),
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

/// Human-readable summary of a file, dispatched on its magic bytes.
pub fn inspect(path: &Path) -> anyhow::Result<String> {
    let mut magic = [0u8; 4];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .with_context(|| format!("reading {}", path.display()))?;
    let mut s = String::new();
    use std::fmt::Write as _;
    match &magic {
        m if m == videodata::MAGIC => {
            let ds = read_dataset(path)?;
            let split = match ds.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let videos = ds.items().iter().filter(|i| matches!(i, Sample::Video(_))).count();
            writeln!(s, "DYN1 {split} set: {} items ({videos} videos, {} images)", ds.len(), ds.len() - videos)?;
            for (c, n) in ds.class_counts().iter().enumerate() {
                writeln!(s, "class {c}: {n}")?;
            }
        }
        m if m == wgan::MAGIC => {
            let g = wgan::read_checkpoint(path)?;
            writeln!(s, "WGN1 GAN for class {}: {}x{} output", g.class, g.height, g.width)?;
            writeln!(s, "{}", serde_json::to_string(&g.config)?)?;
        }
        m if m == classifier::MAGIC => {
            let c = classifier::read_checkpoint(path)?;
            writeln!(
                s,
                "CLF1 classifier: {} classes, {}x{} input, hidden {}, dropout {}",
                c.num_classes,
                c.height,
                c.width,
                c.hidden(),
                c.dropout
            )?;
        }
        _ => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let ledger = SelectionLedger::from_json(&text).with_context(|| format!("{} is not a known format", path.display()))?;
            let policy = ledger.policy.map_or("none", |p| p.name());
            writeln!(s, "selection ledger ({policy}): {} events, {} selected", ledger.events.len(), ledger.selected().len())?;
            for e in &ledger.events {
                writeln!(s, "epoch {}: {} of {}{}", e.epoch, e.selected.len(), e.requested, if e.saturated { " (saturated)" } else { "" })?;
            }
        }
    }
    Ok(s)
}
