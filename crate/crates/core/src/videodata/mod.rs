//! Synthetic moving-shape videos, sparse sampling into subvideos, the frame
//! feature map and the `DYN1` dataset container.

mod container;
mod synth;

pub use container::{read_dataset, read_dataset_from, write_dataset, write_dataset_to, MAGIC};
pub use synth::{default_class_specs, synth_video, Motion, ShapeKind, SynthClassSpec};

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::numerics::{Rng, Tensor};
use crate::rankpool::DynamicImage;
use crate::{Error, Result};

/// Grayscale video: `frames` has shape `[T, H, W]` with pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: String,
    pub label: usize,
    frames: Tensor,
}

impl Video {
    pub fn new(id: impl Into<String>, label: usize, frames: Tensor) -> Result<Self> {
        let shape = frames.shape();
        if shape.len() != 3 {
            return Err(Error::invalid(format!("video frames must be [T, H, W], got {shape:?}")));
        }
        if shape[0] < 2 {
            return Err(Error::invalid(format!("a video needs at least 2 frames, got {}", shape[0])));
        }
        if frames.as_slice().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        Ok(Self {
            id: id.into(),
            label,
            frames,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn frame_len(&self) -> usize {
        self.height() * self.width()
    }

    /// Pixels of frame `t` (0-based), row-major.
    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.frame_len();
        &self.frames.as_slice()[t * n..(t + 1) * n]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.frames.as_slice().chunks_exact(self.frame_len())
    }

    pub fn pixels(&self) -> &Tensor {
        &self.frames
    }
}

/// The frame feature map: identity on raw pixels, flattened row-major.
pub fn feature_map(frame: &Tensor) -> Vec<f64> {
    frame.as_slice().to_vec()
}

/// Inverse of [`feature_map`] for an `h × w` frame.
pub fn unflatten(features: &[f64], h: usize, w: usize) -> Result<Tensor> {
    Tensor::new(vec![h, w], features.to_vec())
}

/// Keep `ceil(fraction · T)` frames chosen uniformly without replacement,
/// in their original order. `fraction == 1` returns the video unchanged.
pub fn sparse_sample(video: &Video, fraction: f64, rng: &mut Rng) -> Result<Video> {
    let (video, _) = sparse_sample_indices(video, fraction, rng)?;
    Ok(video)
}

/// [`sparse_sample`] that also reports the kept frame indices.
pub fn sparse_sample_indices(video: &Video, fraction: f64, rng: &mut Rng) -> Result<(Video, Vec<usize>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("sampling fraction must be in (0, 1], got {fraction}")));
    }
    let t = video.len();
    let keep = (fraction * t as f64).ceil() as usize;
    if keep < 2 {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {t} frames keeps {keep}; at least 2 are required"
        )));
    }
    if keep == t {
        return Ok((video.clone(), (0..t).collect()));
    }
    let mut idx = rng.sample_indices(t, keep);
    idx.sort_unstable();
    let n = video.frame_len();
    let mut data = Vec::with_capacity(keep * n);
    for &i in &idx {
        data.extend_from_slice(video.frame(i));
    }
    let frames = Tensor::new(vec![keep, video.height(), video.width()], data)?;
    let tag: Vec<String> = idx.iter().map(|i| i.to_string()).collect();
    let sub = Video {
        id: format!("{}@{}", video.id, tag.join(".")),
        label: video.label,
        frames,
    };
    Ok((sub, idx))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Sample {
    Video(Video),
    Image(DynamicImage),
}

impl Sample {
    pub fn id(&self) -> &str {
        match self {
            Sample::Video(v) => &v.id,
            Sample::Image(d) => &d.id,
        }
    }

    pub fn label(&self) -> usize {
        match self {
            Sample::Video(v) => v.label,
            Sample::Image(d) => d.label,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub split: Split,
    pub num_classes: usize,
    items: Vec<Sample>,
}

impl Dataset {
    pub fn new(split: Split, num_classes: usize, items: Vec<Sample>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(items.len());
        for s in &items {
            if s.label() >= num_classes {
                return Err(Error::invalid(format!(
                    "sample '{}' has label {} but the dataset has {num_classes} classes",
                    s.id(),
                    s.label()
                )));
            }
            if !seen.insert(s.id()) {
                return Err(Error::invalid(format!("duplicate sample id '{}'", s.id())));
            }
        }
        Ok(Self {
            split,
            num_classes,
            items,
        })
    }

    pub fn from_videos(split: Split, num_classes: usize, videos: Vec<Video>) -> Result<Self> {
        Self::new(split, num_classes, videos.into_iter().map(Sample::Video).collect())
    }

    pub fn from_images(split: Split, num_classes: usize, images: Vec<DynamicImage>) -> Result<Self> {
        Self::new(split, num_classes, images.into_iter().map(Sample::Image).collect())
    }

    pub fn items(&self) -> &[Sample] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.items {
            counts[s.label()] += 1;
        }
        counts
    }

    pub fn videos(&self) -> impl Iterator<Item = &Video> {
        self.items.iter().filter_map(|s| match s {
            Sample::Video(v) => Some(v),
            _ => None,
        })
    }

    pub fn images(&self) -> impl Iterator<Item = &DynamicImage> {
        self.items.iter().filter_map(|s| match s {
            Sample::Image(d) => Some(d),
            _ => None,
        })
    }
}
