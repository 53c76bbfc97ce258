use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::Video;
use crate::numerics::{Rng, Tensor};
use crate::{Error, Result};

const OBJECT_GAIN: f64 = 0.7;
const BACKGROUND_MAX: f64 = 0.25;
const SUPERSAMPLE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Motion {
    TranslateRight,
    TranslateUp,
    Rotate,
    Grow,
}

impl Motion {
    pub const ALL: [Motion; 4] = [Motion::TranslateRight, Motion::TranslateUp, Motion::Rotate, Motion::Grow];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Square,
    Disk,
    Bar,
}

/// How one synthetic class moves.
///
/// `speed` is in pixels per frame for translation and growth (radius) and
/// radians per frame for rotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthClassSpec {
    pub class: usize,
    pub motion: Motion,
    pub shape: ShapeKind,
    pub speed: (f64, f64),
    pub noise: f64,
}

/// The four stock classes, one per motion kind, with speeds sized so the
/// object stays inside an `h × w` frame over `t` frames.
pub fn default_class_specs(t: usize, h: usize, w: usize, noise: f64) -> Vec<SynthClassSpec> {
    let side = object_side(h, w);
    let span = |extent: usize| (extent as f64 - side - 2.0) / (t.max(2) - 1) as f64;
    let lateral = span(w.min(h)).max(0.1);
    let r_max = h.min(w) as f64 / 2.0 - 1.0;
    let grow = ((r_max - 1.5) / (t.max(2) - 1) as f64).max(0.05);
    vec![
        SynthClassSpec {
            class: 0,
            motion: Motion::TranslateRight,
            shape: ShapeKind::Square,
            speed: (0.5 * lateral, lateral),
            noise,
        },
        SynthClassSpec {
            class: 1,
            motion: Motion::TranslateUp,
            shape: ShapeKind::Square,
            speed: (0.5 * lateral, lateral),
            noise,
        },
        SynthClassSpec {
            class: 2,
            motion: Motion::Rotate,
            shape: ShapeKind::Bar,
            speed: (PI / (2.0 * t as f64), PI / t as f64),
            noise,
        },
        SynthClassSpec {
            class: 3,
            motion: Motion::Grow,
            shape: ShapeKind::Disk,
            speed: (0.5 * grow, grow),
            noise,
        },
    ]
}

fn object_side(h: usize, w: usize) -> f64 {
    (h.min(w) as f64 / 5.0).floor().max(3.0)
}

#[derive(Clone, Copy)]
enum Placement {
    /// Axis-aligned square: top-left corner and side.
    Square { x: f64, y: f64, side: f64 },
    Disk { cx: f64, cy: f64, r: f64 },
    /// Oriented bar centred at (cx, cy).
    Bar { cx: f64, cy: f64, half_len: f64, half_thick: f64, angle: f64 },
}

impl Placement {
    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Placement::Square { x, y, side } => (x, y, x + side, y + side),
            Placement::Disk { cx, cy, r } => (cx - r, cy - r, cx + r, cy + r),
            Placement::Bar { cx, cy, half_len, half_thick, .. } => {
                let e = half_len + half_thick;
                (cx - e, cy - e, cx + e, cy + e)
            }
        }
    }

    fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Placement::Square { x, y, side } => px >= x && px < x + side && py >= y && py < y + side,
            Placement::Disk { cx, cy, r } => (px - cx).powi(2) + (py - cy).powi(2) <= r * r,
            Placement::Bar { cx, cy, half_len, half_thick, angle } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (px - cx, py - cy);
                let along = dx * c + dy * s;
                let across = -dx * s + dy * c;
                along.abs() <= half_len && across.abs() <= half_thick
            }
        }
    }

    /// Fraction of pixel `[col, col+1) × [row, row+1)` covered.
    fn coverage(&self, row: usize, col: usize) -> f64 {
        if let Placement::Square { x, y, side } = *self {
            let ox = overlap(col as f64, col as f64 + 1.0, x, x + side);
            let oy = overlap(row as f64, row as f64 + 1.0, y, y + side);
            return ox * oy;
        }
        let step = 1.0 / SUPERSAMPLE as f64;
        let mut hits = 0usize;
        for i in 0..SUPERSAMPLE {
            for j in 0..SUPERSAMPLE {
                let px = col as f64 + (j as f64 + 0.5) * step;
                let py = row as f64 + (i as f64 + 0.5) * step;
                if self.contains(px, py) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64
    }

    fn with_shape(shape: ShapeKind, cx: f64, cy: f64, size: f64, angle: f64) -> Self {
        match shape {
            ShapeKind::Square => Placement::Square {
                x: cx - size / 2.0,
                y: cy - size / 2.0,
                side: size,
            },
            ShapeKind::Disk => Placement::Disk { cx, cy, r: size / 2.0 },
            ShapeKind::Bar => Placement::Bar {
                cx,
                cy,
                half_len: size / 2.0,
                half_thick: (size / 8.0).max(0.75),
                angle,
            },
        }
    }
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Render one video of the given class.
///
/// A static low-frequency background (values ≤ 0.25) is overlaid with the
/// moving object at gain 0.7, then per-pixel uniform noise of amplitude
/// `spec.noise` is added and the result clamped to `[0, 1]`.
pub fn synth_video(spec: &SynthClassSpec, seed: u64, t: usize, h: usize, w: usize) -> Result<Video> {
    if t < 2 {
        return Err(Error::invalid(format!("a video needs at least 2 frames, got {t}")));
    }
    if h < 8 || w < 8 {
        return Err(Error::invalid(format!("frames must be at least 8x8, got {h}x{w}")));
    }
    if !(spec.speed.0 > 0.0 && spec.speed.0 <= spec.speed.1) || !(spec.noise >= 0.0) {
        return Err(Error::invalid(format!(
            "class {}: need 0 < speed min <= speed max and noise >= 0",
            spec.class
        )));
    }
    let mut rng = Rng::new(seed);
    let (hf, wf) = (h as f64, w as f64);
    let steps = (t - 1) as f64;
    let side = object_side(h, w);
    let too_small = |need: f64, have: f64| {
        Error::invalid(format!(
            "{h}x{w} frame too small to render {:?} over {t} frames (needs {need:.1} px, has {have:.1})",
            spec.motion
        ))
    };
    let speed_draw = rng.uniform_in(spec.speed.0, spec.speed.1);

    let placements: Vec<Placement> = match spec.motion {
        Motion::TranslateRight | Motion::TranslateUp => {
            let along_extent = if spec.motion == Motion::TranslateRight { wf } else { hf };
            let across_extent = if spec.motion == Motion::TranslateRight { hf } else { wf };
            let need = side + 2.0 + spec.speed.0 * steps;
            if need > along_extent || side + 2.0 > across_extent {
                return Err(too_small(need, along_extent));
            }
            let speed = speed_draw.min((along_extent - side - 2.0) / steps);
            let slack = along_extent - side - 2.0 - speed * steps;
            let start = 1.0 + side / 2.0 + rng.uniform() * slack;
            let across = 1.0 + side / 2.0 + rng.uniform() * (across_extent - side - 2.0);
            (0..t)
                .map(|k| {
                    let along = start + speed * k as f64;
                    match spec.motion {
                        Motion::TranslateRight => Placement::with_shape(spec.shape, along, across, side, 0.0),
                        // rows grow downwards, so "up" walks from the bottom edge
                        _ => Placement::with_shape(spec.shape, across, hf - along, side, PI / 2.0),
                    }
                })
                .collect()
        }
        Motion::Rotate => {
            let len = 0.7 * hf.min(wf);
            let reach = len / 2.0 + 1.5;
            let (cx, cy) = (
                wf / 2.0 + rng.uniform_in(-1.0, 1.0) * (wf / 2.0 - reach).max(0.0) * 0.5,
                hf / 2.0 + rng.uniform_in(-1.0, 1.0) * (hf / 2.0 - reach).max(0.0) * 0.5,
            );
            let angle0 = rng.uniform() * PI;
            (0..t)
                .map(|k| {
                    let angle = angle0 + speed_draw * k as f64;
                    match spec.shape {
                        ShapeKind::Bar => Placement::with_shape(ShapeKind::Bar, cx, cy, len, angle),
                        // other shapes orbit the centre
                        shape => {
                            let (s, c) = angle.sin_cos();
                            let r = 0.3 * len;
                            Placement::with_shape(shape, cx + r * c, cy + r * s, side, angle)
                        }
                    }
                })
                .collect()
        }
        Motion::Grow => {
            let r_max = hf.min(wf) / 2.0 - 1.0;
            let r0 = 1.5;
            let need = 2.0 * (r0 + spec.speed.0 * steps + 1.0);
            if need > hf.min(wf) {
                return Err(too_small(need, hf.min(wf)));
            }
            let speed = speed_draw.min((r_max - r0) / steps);
            let r_end = r0 + speed * steps;
            let jitter = |extent: f64, rng: &mut Rng| extent / 2.0 + rng.uniform_in(-1.0, 1.0) * (extent / 2.0 - r_end - 1.0).max(0.0);
            let (cx, cy) = (jitter(wf, &mut rng), jitter(hf, &mut rng));
            (0..t)
                .map(|k| Placement::with_shape(spec.shape, cx, cy, 2.0 * (r0 + speed * k as f64), 0.0))
                .collect()
        }
    };

    let background = background(h, w, &mut rng);
    let mut noise_rng = rng.fork(1);
    let mut data = Vec::with_capacity(t * h * w);
    for p in &placements {
        let (x0, y0, x1, y1) = p.bounds();
        for row in 0..h {
            for col in 0..w {
                let mut v = background[row * w + col];
                let inside = (col as f64) < x1 && (col as f64 + 1.0) > x0 && (row as f64) < y1 && (row as f64 + 1.0) > y0;
                if inside {
                    v += OBJECT_GAIN * p.coverage(row, col);
                }
                if spec.noise > 0.0 {
                    v += noise_rng.uniform_in(-spec.noise, spec.noise);
                }
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    let frames = Tensor::new(vec![t, h, w], data)?;
    Video::new(format!("c{}-s{seed:016x}", spec.class), spec.class, frames)
}

fn background(h: usize, w: usize, rng: &mut Rng) -> Vec<f64> {
    let fx = rng.uniform_in(0.5, 2.0) * 2.0 * PI / w as f64;
    let fy = rng.uniform_in(0.5, 2.0) * 2.0 * PI / h as f64;
    let (px, py) = (rng.uniform() * 2.0 * PI, rng.uniform() * 2.0 * PI);
    let mut out = Vec::with_capacity(h * w);
    for row in 0..h {
        for col in 0..w {
            let s = (fx * col as f64 + px).sin() * (fy * row as f64 + py).cos();
            out.push(BACKGROUND_MAX * 0.5 * (1.0 + s));
        }
    }
    out
}
