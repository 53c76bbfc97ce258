//! Experiment configuration, read from TOML.

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use std::path::Path;

use dynaug_core::classifier::TrainSchedule;
use dynaug_core::rankpool::RankPoolConfig;
use dynaug_core::sps::SelectionSchedule;
use dynaug_core::wgan::GanConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Insufficiency,
    LabelMix,
    GanCountSweep,
    Imbalance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub rankpool: RankPoolConfig,
    #[serde(default)]
    pub gan: GanSection,
    #[serde(default)]
    pub classifier: ClassifierSection,
    #[serde(default)]
    pub selection: SelectionSchedule,
    #[serde(default)]
    pub insufficiency: InsufficiencyParams,
    #[serde(default)]
    pub label_mix: LabelMixParams,
    #[serde(default)]
    pub gan_count_sweep: SweepParams,
    #[serde(default)]
    pub imbalance: ImbalanceParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Training videos per class; one entry per class.
    pub train_per_class: Vec<usize>,
    pub test_per_class: usize,
    pub noise: f64,
    /// Sparse-sampled subvideos per training video.
    pub repetitions: usize,
    pub fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            frames: 12,
            height: 16,
            width: 16,
            classes: 4,
            train_per_class: vec![4; 4],
            test_per_class: 20,
            noise: 0.05,
            repetitions: 10,
            fraction: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanSection {
    #[serde(flatten)]
    pub model: GanConfig,
    /// Generated images sampled per class.
    pub pool_per_class: usize,
}

impl Default for GanSection {
    fn default() -> Self {
        Self {
            model: GanConfig::default(),
            pool_per_class: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub hidden: usize,
    #[serde(flatten)]
    pub schedule: TrainSchedule,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self {
            hidden: 256,
            schedule: TrainSchedule::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InsufficiencyParams {
    /// Fraction of the final pool that is uniform-noise images.
    pub noise_fraction: f64,
}

impl Default for InsufficiencyParams {
    fn default() -> Self {
        Self { noise_fraction: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelMixParams {
    /// Percentages of generated training images whose label is flipped.
    pub alphas: Vec<f64>,
}

impl Default for LabelMixParams {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 50.0, 100.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    /// Total generated images admitted, one run per entry.
    pub counts: Vec<usize>,
    pub noise_fraction: f64,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            counts: vec![0, 25, 50, 100, 200, 400],
            noise_fraction: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImbalanceParams {
    /// Classes that receive generated images.
    pub augmented: Vec<usize>,
}

impl Default for ImbalanceParams {
    fn default() -> Self {
        Self { augmented: vec![0, 1] }
    }
}

/// Deserialization plus validation; errors name the offending key.
pub fn parse(text: &str) -> anyhow::Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
    config.validate()?;
    Ok(config)
}

pub fn load(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    parse(&text).with_context(|| format!("in config file {}", path.display()))
}

fn check(ok: bool, key: &str, msg: impl std::fmt::Display) -> anyhow::Result<()> {
    if !ok {
        bail!("invalid config key `{key}`: {msg}");
    }
    Ok(())
}

/// Core validators lead with the field name ("lr must be positive").
fn section_error(section: &str, msg: &str) -> anyhow::Error {
    match msg.split_whitespace().next() {
        Some(f) if f.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_') => {
            anyhow::anyhow!("invalid config key `{section}.{f}`: {msg}")
        }
        _ => anyhow::anyhow!("invalid config key `{section}`: {msg}"),
    }
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let d = &self.data;
        check(d.frames >= 2, "data.frames", "must be at least 2")?;
        check(d.height >= 8 && d.width >= 8, "data.height", "frames must be at least 8×8")?;
        check((2..=4).contains(&d.classes), "data.classes", "must be between 2 and 4")?;
        check(
            d.train_per_class.len() == d.classes,
            "data.train_per_class",
            format!("needs one entry per class ({})", d.classes),
        )?;
        check(d.train_per_class.iter().all(|&n| n >= 1), "data.train_per_class", "every class needs a video")?;
        check(d.test_per_class >= 1, "data.test_per_class", "must be at least 1")?;
        check((0.0..=0.5).contains(&d.noise), "data.noise", "must be in [0, 0.5]")?;
        check(d.repetitions >= 1, "data.repetitions", "must be at least 1")?;
        check(d.fraction > 0.0 && d.fraction <= 1.0, "data.fraction", "must be in (0, 1]")?;
        check(
            (d.fraction * d.frames as f64).ceil() >= 2.0,
            "data.fraction",
            "subvideos need at least two frames",
        )?;

        if let Err(e) = self.rankpool.validate() {
            return Err(section_error("rankpool", &e));
        }
        if let Err(e) = self.gan.model.validate() {
            return Err(section_error("gan", &e));
        }
        check(self.gan.pool_per_class >= 1, "gan.pool_per_class", "must be at least 1")?;
        check(self.classifier.hidden >= 1, "classifier.hidden", "must be at least 1")?;
        if let Err(e) = self.classifier.schedule.validate() {
            return Err(section_error("classifier", &e));
        }
        if let Err(e) = self.selection.validate(self.classifier.schedule.epochs) {
            return Err(section_error("selection", &e));
        }

        match self.kind {
            ExperimentKind::Insufficiency => check(
                (0.0..1.0).contains(&self.insufficiency.noise_fraction),
                "insufficiency.noise_fraction",
                "must be in [0, 1)",
            )?,
            ExperimentKind::LabelMix => {
                check(d.classes == 2, "data.classes", "label-mix needs exactly 2 classes")?;
                check(!self.label_mix.alphas.is_empty(), "label_mix.alphas", "must not be empty")?;
                check(
                    self.label_mix.alphas.iter().all(|a| (0.0..=100.0).contains(a)),
                    "label_mix.alphas",
                    "values must be in [0, 100]",
                )?;
            }
            ExperimentKind::GanCountSweep => {
                let s = &self.gan_count_sweep;
                check(!s.counts.is_empty(), "gan_count_sweep.counts", "must not be empty")?;
                check(
                    (0.0..1.0).contains(&s.noise_fraction),
                    "gan_count_sweep.noise_fraction",
                    "must be in [0, 1)",
                )?;
                check(
                    self.selection.start <= self.classifier.schedule.epochs,
                    "selection.start",
                    "must not be past the last epoch",
                )?;
            }
            ExperimentKind::Imbalance => {
                let a = &self.imbalance.augmented;
                check(!a.is_empty(), "imbalance.augmented", "must not be empty")?;
                check(a.iter().all(|&c| c < d.classes), "imbalance.augmented", "class index out of range")?;
                let mut sorted = a.clone();
                sorted.sort_unstable();
                sorted.dedup();
                check(sorted.len() == a.len(), "imbalance.augmented", "duplicate class")?;
                check(sorted.len() < d.classes, "imbalance.augmented", "must leave at least one class unaugmented")?;
            }
        }
        Ok(())
    }

    /// Small geometry and a narrower GAN; what the bundled configs and the
    /// acceptance suite use.
    pub fn quick(kind: ExperimentKind, seed: u64) -> Self {
        let mut c = Self {
            seed,
            kind,
            data: DataConfig {
                test_per_class: 50,
                ..DataConfig::default()
            },
            rankpool: RankPoolConfig::default(),
            gan: GanSection {
                model: GanConfig {
                    hidden: 64,
                    batch: 16,
                    ..GanConfig::default()
                },
                pool_per_class: 500,
            },
            classifier: ClassifierSection::default(),
            selection: SelectionSchedule::default(),
            insufficiency: InsufficiencyParams::default(),
            label_mix: LabelMixParams::default(),
            gan_count_sweep: SweepParams::default(),
            imbalance: ImbalanceParams::default(),
        };
        match kind {
            ExperimentKind::LabelMix => {
                c.data.classes = 2;
                c.data.train_per_class = vec![4; 2];
            }
            ExperimentKind::Imbalance => c.data.train_per_class = vec![5, 5, 40, 40],
            ExperimentKind::GanCountSweep => c.gan_count_sweep.noise_fraction = 0.5,
            ExperimentKind::Insufficiency => {}
        }
        c
    }
}
