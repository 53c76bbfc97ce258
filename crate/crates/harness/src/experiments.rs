//! The four experiment shapes, assembled from the core stages.
//!
//! Stage order is videos → dynamic images → per-class GANs → pool → arms.
//! Every random stream is forked from the config seed by stage name, so
//! arms see identical inputs and may run in parallel.

use anyhow::{anyhow, Context};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use dynaug_core::classifier::{evaluate, write_checkpoint, write_checkpoint_to, ClassifierModel};
use dynaug_core::numerics::Rng;
use dynaug_core::par;
use dynaug_core::rankpool::DynamicImage;
use dynaug_core::sps::{run_training_with_selection, Policy, SelectionLedger, SelectionSchedule};
use dynaug_core::videodata::{Dataset, Split, Video};
use dynaug_core::wgan::{self, train_wgan, GanModel};

use crate::cache::{self, Cache};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::data;
use crate::report::{ArmReport, ArtifactHashes, Report, SelectionSummary, StageTiming, RND, SPS, SSDI, TSP};

pub struct Outcome {
    pub report: Report,
    pub ledgers: Vec<(String, SelectionLedger)>,
    pub classifiers: Vec<(String, ClassifierModel)>,
    pub gans: Vec<GanModel>,
}

pub fn hash_images(images: &[DynamicImage]) -> String {
    let mut h = Sha256::new();
    for d in images {
        h.update((d.id.len() as u64).to_le_bytes());
        h.update(d.id.as_bytes());
        h.update((d.label as u64).to_le_bytes());
        for &p in d.features() {
            h.update((p as f32).to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn hash_model(model: &ClassifierModel) -> String {
    let bytes = write_checkpoint_to(model, Vec::new()).expect("in-memory write");
    hex::encode(Sha256::digest(&bytes))
}

fn toml_of<T: serde::Serialize>(v: &T) -> Vec<u8> {
    toml::to_string(v).expect("config serializes").into_bytes()
}

struct Prepared {
    train: Vec<DynamicImage>,
    test: Vec<DynamicImage>,
    gans: Vec<GanModel>,
}

struct Clock {
    timings: Vec<StageTiming>,
    last: Instant,
}

impl Clock {
    fn new() -> Self {
        Self {
            timings: vec![],
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push(StageTiming {
            stage: stage.into(),
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

/// Dynamic images for train and test, plus one GAN per class in `gan_classes`.
fn prepare(
    config: &ExperimentConfig,
    cache: &Cache,
    gan_classes: &[usize],
    clock: &mut Clock,
    hits: &mut Vec<String>,
) -> anyhow::Result<Prepared> {
    let seed = config.seed.to_le_bytes();
    let data_key = cache::key(&[b"videos-v2", &seed, &toml_of(&config.data)]);
    let rp = toml_of(&config.rankpool);
    let train_key = cache::key(&[b"ssdi-v2", data_key.as_bytes(), &rp]);
    let test_key = cache::key(&[b"test-v2", data_key.as_bytes(), &rp]);

    let mut videos: Option<(Dataset, Dataset)> = None;
    let load_videos = |videos: &mut Option<(Dataset, Dataset)>| -> anyhow::Result<()> {
        if videos.is_none() {
            *videos = Some(data::generate_videos(&config.data, config.seed)?);
        }
        Ok(())
    };

    let (train, hit) = cache.images("ssdi", &train_key, Split::Train, config.data.classes, || {
        load_videos(&mut videos)?;
        let v: Vec<&Video> = videos.as_ref().unwrap().0.videos().collect();
        data::sparse_dynamic_images(&v, &config.data, &config.rankpool, config.seed)
    })?;
    if hit {
        hits.push("ssdi".into());
    }
    let (test, hit) = cache.images("test", &test_key, Split::Test, config.data.classes, || {
        load_videos(&mut videos)?;
        let v: Vec<&Video> = videos.as_ref().unwrap().1.videos().collect();
        data::full_dynamic_images(&v, &config.rankpool)
    })?;
    if hit {
        hits.push("test".into());
    }
    clock.lap("dynamic-images");

    let gan_cfg = toml_of(&config.gan.model);
    let root = Rng::new(config.seed).fork_str("gan");
    let gans = par::try_map(gan_classes, |&c| -> anyhow::Result<(GanModel, bool)> {
        let key = cache::key(&[b"gan-v2", train_key.as_bytes(), &(c as u64).to_le_bytes(), &gan_cfg]);
        cache.gan(&key, || {
            let real: Vec<DynamicImage> = train.iter().filter(|d| d.label == c).cloned().collect();
            let mut gan = train_wgan(&real, &config.gan.model, &mut root.fork(c as u64))
                .with_context(|| format!("stage gan (class {c})"))?;
            gan.quantize_f32();
            Ok(gan)
        })
    })?;
    let gans = gans
        .into_iter()
        .map(|(g, hit)| {
            if hit {
                hits.push(format!("gan{}", g.class));
            }
            g
        })
        .collect();
    clock.lap("gan");
    Ok(Prepared { train, test, gans })
}

struct ArmJob<'a> {
    name: String,
    base: &'a [DynamicImage],
    selection: Option<SelectionSchedule>,
}

struct ArmResult {
    report: ArmReport,
    ledger: SelectionLedger,
    model: ClassifierModel,
}

fn run_arm(
    config: &ExperimentConfig,
    job: &ArmJob<'_>,
    pool: &[DynamicImage],
    test: &[DynamicImage],
    init: &ClassifierModel,
) -> anyhow::Result<ArmResult> {
    let mut model = init.clone();
    let inputs = ArtifactHashes {
        train: hash_images(job.base),
        test: hash_images(test),
        pool: hash_images(pool),
        init: hash_model(init),
    };
    let rng = Rng::new(config.seed).fork_str("clf-train");
    let (_, ledger) = run_training_with_selection(
        &mut model,
        job.base,
        pool,
        job.selection.as_ref(),
        &config.classifier.schedule,
        &rng,
    )
    .with_context(|| format!("stage classifier (arm {})", job.name))?;
    let eval = evaluate(&model, test)?;

    let selection = job.selection.as_ref().map(|s| {
        let by_id: HashMap<&str, &DynamicImage> = pool.iter().map(|d| (d.id.as_str(), d)).collect();
        let chosen: Vec<&DynamicImage> = ledger.selected().iter().map(|id| by_id[id]).collect();
        let mut per_class = vec![0; config.data.classes];
        for d in &chosen {
            per_class[d.label] += 1;
        }
        SelectionSummary {
            policy: s.policy.name().into(),
            events: ledger.events.len(),
            selected: chosen.len(),
            selected_noise: chosen.iter().filter(|d| data::is_noise(d)).count(),
            selected_per_class: per_class,
        }
    });

    let mut metrics = std::collections::BTreeMap::new();
    if config.kind == ExperimentKind::Imbalance {
        let aug = &config.imbalance.augmented;
        let rest: Vec<usize> = (0..config.data.classes).filter(|c| !aug.contains(c)).collect();
        metrics.insert("augmented_accuracy".into(), eval.subset_accuracy(aug).unwrap_or(f64::NAN));
        metrics.insert("unaugmented_accuracy".into(), eval.subset_accuracy(&rest).unwrap_or(f64::NAN));
    }
    Ok(ArmResult {
        report: ArmReport {
            name: job.name.clone(),
            accuracy: eval.accuracy,
            per_class: eval.per_class.iter().map(|t| t.accuracy()).collect(),
            metrics,
            selection,
            inputs,
        },
        ledger,
        model,
    })
}

fn with_policy(base: &SelectionSchedule, policy: Policy) -> SelectionSchedule {
    SelectionSchedule { policy, ..base.clone() }
}

/// Run the experiment named by `config.kind`.
pub fn run(config: &ExperimentConfig, cache: &Cache) -> anyhow::Result<Outcome> {
    config.validate()?;
    let mut clock = Clock::new();
    let mut hits = Vec::new();
    let mut notes = Vec::new();
    let d = &config.data;
    let all: Vec<usize> = (0..d.classes).collect();
    let gan_classes = match config.kind {
        ExperimentKind::Imbalance => config.imbalance.augmented.clone(),
        _ => all.clone(),
    };
    let prepared = prepare(config, cache, &gan_classes, &mut clock, &mut hits)?;
    let gan_refs: Vec<&GanModel> = prepared.gans.iter().collect();
    let mut pool = data::generated_pool(&gan_refs, config.gan.pool_per_class, config.seed)?;
    let noise_fraction = match config.kind {
        ExperimentKind::Insufficiency => config.insufficiency.noise_fraction,
        ExperimentKind::GanCountSweep => config.gan_count_sweep.noise_fraction,
        _ => 0.0,
    };
    let n_noise = data::noise_count(pool.len(), noise_fraction);
    if n_noise > 0 {
        pool.extend(data::noise_images(n_noise, &gan_classes, d.height, d.width, config.seed));
        notes.push(format!("pool holds {} generated and {n_noise} uniform-noise images", pool.len() - n_noise));
    }

    let init = ClassifierModel::new(
        d.height,
        d.width,
        config.classifier.hidden,
        d.classes,
        config.classifier.schedule.dropout,
        &mut Rng::new(config.seed).fork_str("clf-init"),
    )?;

    let label_mix_sets: Vec<(String, Vec<DynamicImage>)> = match config.kind {
        ExperimentKind::LabelMix => label_mix_sets(config, &pool),
        _ => vec![],
    };
    let base = prepared.train.as_slice();
    let jobs: Vec<ArmJob<'_>> = match config.kind {
        ExperimentKind::Insufficiency => vec![
            ArmJob {
                name: SSDI.into(),
                base,
                selection: None,
            },
            ArmJob {
                name: RND.into(),
                base,
                selection: Some(with_policy(&config.selection, Policy::Random)),
            },
            ArmJob {
                name: TSP.into(),
                base,
                selection: Some(with_policy(&config.selection, Policy::TspLoss)),
            },
            ArmJob {
                name: SPS.into(),
                base,
                selection: Some(with_policy(&config.selection, Policy::SpsMargin)),
            },
        ],
        ExperimentKind::Imbalance => vec![
            ArmJob {
                name: SSDI.into(),
                base,
                selection: None,
            },
            ArmJob {
                name: SPS.into(),
                base,
                selection: Some(with_policy(&config.selection, Policy::SpsMargin)),
            },
        ],
        ExperimentKind::GanCountSweep => {
            let mut jobs = vec![ArmJob {
                name: SSDI.into(),
                base,
                selection: None,
            }];
            for &count in &config.gan_count_sweep.counts {
                jobs.push(ArmJob {
                    name: sweep_arm(count),
                    base,
                    selection: (count > 0).then_some(SelectionSchedule {
                        policy: Policy::SpsMargin,
                        start: config.selection.start,
                        interval: config.selection.interval,
                        extra: 0,
                        count,
                    }),
                });
            }
            jobs
        }
        ExperimentKind::LabelMix => label_mix_sets
            .iter()
            .map(|(name, set)| ArmJob {
                name: name.clone(),
                base: set,
                selection: None,
            })
            .collect(),
    };
    let arm_pool: &[DynamicImage] = if config.kind == ExperimentKind::LabelMix { &[] } else { &pool };
    let results = par::try_map(&jobs, |job| run_arm(config, job, arm_pool, &prepared.test, &init))?;
    clock.lap("arms");

    let shared = ArtifactHashes {
        train: hash_images(base),
        test: hash_images(&prepared.test),
        pool: hash_images(arm_pool),
        init: hash_model(&init),
    };
    let mut report = Report {
        config: config.clone(),
        arms: vec![],
        shared,
        timings: vec![],
        cache_hits: hits,
        notes,
    };
    let mut ledgers = vec![];
    let mut classifiers = vec![];
    for r in results {
        if r.report.selection.is_some() {
            ledgers.push((r.report.name.clone(), r.ledger));
        }
        classifiers.push((r.report.name.clone(), r.model));
        report.arms.push(r.report);
    }
    report.timings = clock.timings;
    Ok(Outcome {
        report,
        ledgers,
        classifiers,
        gans: prepared.gans,
    })
}

pub fn sweep_arm(count: usize) -> String {
    format!("{SPS}@{count}")
}

pub fn alpha_arm(alpha: f64) -> String {
    format!("alpha={alpha}")
}

/// Generated images with the first `round(α·K/100)` of a fixed permutation
/// relabelled to the other class, one set per α.
fn label_mix_sets(config: &ExperimentConfig, pool: &[DynamicImage]) -> Vec<(String, Vec<DynamicImage>)> {
    let order = Rng::new(config.seed).fork_str("flip").sample_indices(pool.len(), pool.len());
    config
        .label_mix
        .alphas
        .iter()
        .map(|&alpha| {
            let flips = (alpha / 100.0 * pool.len() as f64).round() as usize;
            let mut set = pool.to_vec();
            for &i in &order[..flips] {
                set[i].label = 1 - set[i].label;
            }
            (alpha_arm(alpha), set)
        })
        .collect()
}

fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect()
}

/// `config.toml`, `report.json`, `metrics.csv`, `ledgers/`, `checkpoints/`.
pub fn write_outputs(outcome: &Outcome, out: &Path) -> anyhow::Result<()> {
    let ledger_dir = out.join("ledgers");
    let ckpt_dir = out.join("checkpoints");
    for dir in [out, &ledger_dir, &ckpt_dir] {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let write = |path: &Path, text: &str| std::fs::write(path, text).with_context(|| format!("writing {}", path.display()));
    write(&out.join("config.toml"), &outcome.report.config.to_toml())?;
    write(&out.join("report.json"), &outcome.report.to_json())?;
    write(&out.join("metrics.csv"), &outcome.report.metrics_csv())?;
    for (name, ledger) in &outcome.ledgers {
        write(&ledger_dir.join(format!("{}.json", slug(name))), &ledger.to_json()?)?;
    }
    for (name, model) in &outcome.classifiers {
        write_checkpoint(model, ckpt_dir.join(format!("{}.clf1", slug(name))))?;
    }
    for gan in &outcome.gans {
        wgan::write_checkpoint(gan, ckpt_dir.join(format!("gan-{}.wgn1", gan.class)))?;
    }
    Ok(())
}

/// Check that every arm consumed the shared artifacts. Label-mix arms train
/// on differently labelled sets by construction, so only test set and
/// initialization are compared there.
pub fn verify_isolation(report: &Report) -> anyhow::Result<()> {
    for arm in &report.arms {
        let i = &arm.inputs;
        let s = &report.shared;
        let same = if report.config.kind == ExperimentKind::LabelMix {
            i.test == s.test && i.init == s.init
        } else {
            i == s
        };
        if !same {
            return Err(anyhow!("arm {} saw different shared artifacts", arm.name));
        }
    }
    Ok(())
}
