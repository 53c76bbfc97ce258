//! Dataset construction: synthetic videos, sparse-sampled dynamic images
//! (SSDI), held-out test images and the generated pool.

use anyhow::Context;
use rand::RngCore;

use dynaug_core::numerics::{Rng, Tensor};
use dynaug_core::par;
use dynaug_core::rankpool::{compute_dynamic_image, normalize, DynamicImage, Provenance, RankPoolConfig};
use dynaug_core::videodata::{default_class_specs, sparse_sample, synth_video, Dataset, Split, Video};
use dynaug_core::wgan::{sample_gdi, GanModel};

use crate::config::DataConfig;

pub const NOISE_SOURCE: &str = "uniform-noise";

/// Train and test videos for every class.
pub fn generate_videos(data: &DataConfig, seed: u64) -> anyhow::Result<(Dataset, Dataset)> {
    let specs = default_class_specs(data.frames, data.height, data.width, data.noise);
    let root = Rng::new(seed).fork_str("videos");
    let mut jobs = Vec::new();
    for (split, tag) in [(Split::Train, "train"), (Split::Test, "test")] {
        for spec in specs.iter().take(data.classes) {
            let n = match split {
                Split::Train => data.train_per_class[spec.class],
                Split::Test => data.test_per_class,
            };
            for k in 0..n {
                let video_seed = root.fork_str(tag).fork(spec.class as u64).fork(k as u64).next_u64();
                jobs.push((split, spec.clone(), video_seed));
            }
        }
    }
    let videos = par::try_map(&jobs, |(split, spec, s)| {
        synth_video(spec, *s, data.frames, data.height, data.width).map(|v| (*split, v))
    })
    .context("stage videos")?;
    let (train, test): (Vec<_>, Vec<_>) = videos.into_iter().partition(|(s, _)| *s == Split::Train);
    let strip = |v: Vec<(Split, Video)>| v.into_iter().map(|(_, v)| v).collect::<Vec<_>>();
    Ok((
        Dataset::from_videos(Split::Train, data.classes, strip(train))?,
        Dataset::from_videos(Split::Test, data.classes, strip(test))?,
    ))
}

fn pooled(video: &Video, id: String, source: String, config: &RankPoolConfig) -> anyhow::Result<DynamicImage> {
    let raw = compute_dynamic_image(video, config).with_context(|| format!("rank pooling '{}'", video.id))?;
    let (mut image, _) = normalize(&raw);
    image.id = id;
    image.source = Some(source);
    image.pixels.quantize_f32();
    Ok(image)
}

/// `repetitions` sparse-sampled dynamic images per training video. Ids are
/// `<video>#<j>`; the source records which frames were kept.
pub fn sparse_dynamic_images(
    videos: &[&Video],
    data: &DataConfig,
    config: &RankPoolConfig,
    seed: u64,
) -> anyhow::Result<Vec<DynamicImage>> {
    let root = Rng::new(seed).fork_str("ssdi");
    let jobs: Vec<(usize, usize)> = (0..videos.len())
        .flat_map(|i| (0..data.repetitions).map(move |j| (i, j)))
        .collect();
    par::try_map(&jobs, |&(i, j)| {
        let v = videos[i];
        let mut rng = root.fork_str(&v.id).fork(j as u64);
        let sub = sparse_sample(v, data.fraction, &mut rng)?;
        pooled(&sub, format!("{}#{j}", v.id), sub.id.clone(), config)
    })
    .context("stage rankpool")
}

/// One dynamic image per full video.
pub fn full_dynamic_images(videos: &[&Video], config: &RankPoolConfig) -> anyhow::Result<Vec<DynamicImage>> {
    par::try_map(videos, |v| pooled(v, v.id.clone(), v.id.clone(), config)).context("stage rankpool")
}

/// `per_class` samples from each GAN, pixels rounded to f32.
pub fn generated_pool(gans: &[&GanModel], per_class: usize, seed: u64) -> anyhow::Result<Vec<DynamicImage>> {
    let root = Rng::new(seed).fork_str("pool");
    let mut pool = Vec::new();
    for gan in gans {
        let mut images = sample_gdi(gan, per_class, &mut root.fork(gan.class as u64)).context("stage sampling")?;
        for d in &mut images {
            d.pixels.quantize_f32();
            d.source = Some(format!("gan{}", gan.class));
        }
        pool.extend(images);
    }
    Ok(pool)
}

/// Number of noise images that make up `fraction` of a pool that already
/// holds `clean` images.
pub fn noise_count(clean: usize, fraction: f64) -> usize {
    if fraction <= 0.0 {
        return 0;
    }
    (clean as f64 * fraction / (1.0 - fraction)).round() as usize
}

/// Images with i.i.d. uniform pixels, labels cycling through `classes`.
pub fn noise_images(count: usize, classes: &[usize], h: usize, w: usize, seed: u64) -> Vec<DynamicImage> {
    let mut rng = Rng::new(seed).fork_str("noise");
    (0..count)
        .map(|k| {
            let px = (0..h * w).map(|_| rng.uniform() as f32 as f64).collect();
            DynamicImage {
                id: format!("noise-{k:05}"),
                label: classes[k % classes.len()],
                provenance: Provenance::GanGenerated,
                source: Some(NOISE_SOURCE.into()),
                pixels: Tensor::new(vec![h, w], px).expect("uniform pixels are finite"),
            }
        })
        .collect()
}

pub fn is_noise(d: &DynamicImage) -> bool {
    d.source.as_deref() == Some(NOISE_SOURCE)
}
