//! Rank pooling: learn a linear scorer `d` whose scores `⟨d, V_t⟩` on the
//! running means of the frames increase with time. The scorer itself,
//! reshaped to the frame geometry, is the dynamic image.
//!
//! The objective is
//!
//! ```text
//! E(d) = λ‖d‖² + 2/(T(T−1)) · Σ_{q>t} max(0, 1 − ⟨d, V_q⟩ + ⟨d, V_t⟩)
//! ```
//!
//! The regularizer is the squared norm of `d` (sometimes typeset as
//! `‖d²‖`), which keeps `E` convex.

use serde::{Deserialize, Serialize};

use crate::numerics::Tensor;
use crate::videodata::Video;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SparseSampledReal,
    GanGenerated,
}

/// A still image summarizing a video's motion, or a generated stand-in.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicImage {
    pub id: String,
    pub label: usize,
    pub provenance: Provenance,
    /// Id of the (sub)video this image was pooled from.
    pub source: Option<String>,
    /// `[H, W]`
    pub pixels: Tensor,
}

impl DynamicImage {
    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    /// The flattened feature vector `d`.
    pub fn features(&self) -> &[f64] {
        self.pixels.as_slice()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankPoolConfig {
    pub lambda: f64,
    pub max_iters: usize,
    pub step: f64,
    /// Stop once the relative energy decrease over `window` accepted steps
    /// falls below this.
    pub tolerance: f64,
    pub window: usize,
}

impl Default for RankPoolConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            max_iters: 2000,
            step: 1e-3,
            tolerance: 1e-6,
            window: 5,
        }
    }
}

impl RankPoolConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.lambda > 0.0) {
            return Err("lambda must be positive".into());
        }
        if self.max_iters == 0 {
            return Err("max_iters must be at least 1".into());
        }
        if !(self.step > 0.0) {
            return Err("step must be positive".into());
        }
        if !(self.tolerance > 0.0) {
            return Err("tolerance must be positive".into());
        }
        if self.window == 0 {
            return Err("window must be at least 1".into());
        }
        Ok(())
    }
}

/// Running means `V_t = (1/t) Σ_{i≤t} ψ(I_i)` for `t = 1..T`.
pub fn prefix_means(video: &Video) -> Vec<Vec<f64>> {
    prefix_means_of(video.frames().map(feature_map_slice))
}

/// [`prefix_means`] over arbitrary feature vectors. Uses the incremental
/// update `V_t = V_{t−1} + (x_t − V_{t−1}) / t`, exact for constant input.
pub fn prefix_means_of<'a>(features: impl IntoIterator<Item = &'a [f64]>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    for (t, x) in features.into_iter().enumerate() {
        let next = match out.last() {
            None => x.to_vec(),
            Some(prev) => {
                let inv = 1.0 / (t + 1) as f64;
                prev.iter().zip(x).map(|(m, xi)| m + (xi - m) * inv).collect()
            }
        };
        out.push(next);
    }
    out
}

fn feature_map_slice(frame: &[f64]) -> &[f64] {
    // identity feature map, see videodata::feature_map
    frame
}

/// Ranking score `S(t|d) = ⟨d, V_t⟩`.
pub fn score(d: &[f64], v: &[f64]) -> Result<f64> {
    if d.len() != v.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![d.len()],
            found: vec![v.len()],
        });
    }
    Ok(d.iter().zip(v).map(|(a, b)| a * b).sum())
}

/// The ranking energy with precomputed running means.
#[derive(Clone, Debug)]
pub struct RankingObjective {
    means: Vec<Vec<f64>>,
    lambda: f64,
}

impl RankingObjective {
    pub fn new(video: &Video, lambda: f64) -> Self {
        Self {
            means: prefix_means(video),
            lambda,
        }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn normalizer(&self) -> f64 {
        let t = self.means.len() as f64;
        2.0 / (t * (t - 1.0))
    }

    fn check(&self, d: &[f64]) -> Result<()> {
        if d.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.dim()],
                found: vec![d.len()],
            });
        }
        Ok(())
    }

    fn scores(&self, d: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .map(|v| v.iter().zip(d).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn energy(&self, d: &[f64]) -> Result<f64> {
        self.check(d)?;
        let s = self.scores(d);
        let mut hinge = 0.0;
        for t in 0..s.len() {
            for q in t + 1..s.len() {
                hinge += (1.0 - s[q] + s[t]).max(0.0);
            }
        }
        let reg: f64 = d.iter().map(|x| x * x).sum();
        Ok(self.lambda * reg + self.normalizer() * hinge)
    }

    /// Subgradient; a hinge exactly at zero counts as inactive.
    pub fn gradient(&self, d: &[f64]) -> Result<Vec<f64>> {
        self.check(d)?;
        let s = self.scores(d);
        // net count of active pairs in which V_t enters with + (as the earlier
        // frame) or − (as the later one)
        let mut coef = vec![0.0; s.len()];
        for t in 0..s.len() {
            for q in t + 1..s.len() {
                if 1.0 - s[q] + s[t] > 0.0 {
                    coef[t] += 1.0;
                    coef[q] -= 1.0;
                }
            }
        }
        let mut g: Vec<f64> = d.iter().map(|x| 2.0 * self.lambda * x).collect();
        // Σ coef = 0, so accumulate against V_1 to keep equal means cancelling exactly
        let norm = self.normalizer();
        let base = &self.means[0];
        for (c, v) in coef.iter().zip(&self.means).skip(1) {
            if *c != 0.0 {
                let a = norm * c;
                g.iter_mut()
                    .zip(v.iter().zip(base))
                    .for_each(|(gi, (vi, bi))| *gi += a * (vi - bi));
            }
        }
        Ok(g)
    }
}

pub fn energy(d: &[f64], video: &Video, lambda: f64) -> Result<f64> {
    RankingObjective::new(video, lambda).energy(d)
}

pub fn energy_grad(d: &[f64], video: &Video, lambda: f64) -> Result<Vec<f64>> {
    RankingObjective::new(video, lambda).gradient(d)
}

/// Result of [`compute_dynamic_image_traced`].
#[derive(Clone, Debug)]
pub struct RankPoolOutcome {
    pub image: DynamicImage,
    /// Energy at `d = 0` followed by the energy after every accepted step.
    pub energies: Vec<f64>,
    pub iterations: usize,
    pub rejected_steps: usize,
    pub converged: bool,
}

pub fn compute_dynamic_image(video: &Video, config: &RankPoolConfig) -> Result<DynamicImage> {
    Ok(compute_dynamic_image_traced(video, config)?.image)
}

/// Gradient descent on the ranking energy starting from `d = 0`.
///
/// A step that would raise the energy is rejected and the step size halved,
/// so the recorded energy sequence is strictly decreasing. A trial energy
/// above ten times the starting energy aborts with [`Error::Divergence`].
pub fn compute_dynamic_image_traced(video: &Video, config: &RankPoolConfig) -> Result<RankPoolOutcome> {
    config.validate().map_err(Error::InvalidArgument)?;
    let objective = RankingObjective::new(video, config.lambda);
    let mut d = vec![0.0; objective.dim()];
    let e0 = objective.energy(&d)?;
    let mut energies = vec![e0];
    let mut current = e0;
    let mut step = config.step;
    let mut rejected_steps = 0;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; d.len()];

    while iterations < config.max_iters {
        iterations += 1;
        let g = objective.gradient(&d)?;
        if g.iter().all(|&x| x == 0.0) {
            converged = true;
            break;
        }
        for ((t, x), gi) in trial.iter_mut().zip(&d).zip(&g) {
            *t = x - step * gi;
        }
        let e = objective.energy(&trial)?;
        if !e.is_finite() || e > 10.0 * e0 {
            return Err(Error::Divergence {
                iteration: iterations,
                energy: e,
            });
        }
        if e < current {
            std::mem::swap(&mut d, &mut trial);
            current = e;
            energies.push(e);
            let k = energies.len() - 1;
            if k >= config.window {
                let past = energies[k - config.window];
                if (past - e) / past.abs().max(f64::MIN_POSITIVE) < config.tolerance {
                    converged = true;
                    break;
                }
            }
        } else {
            rejected_steps += 1;
            step *= 0.5;
            if step < config.step * 1e-12 {
                converged = true;
                break;
            }
        }
    }

    let pixels = Tensor::new(vec![video.height(), video.width()], d)?;
    Ok(RankPoolOutcome {
        image: DynamicImage {
            id: video.id.clone(),
            label: video.label,
            provenance: Provenance::SparseSampledReal,
            source: Some(video.id.clone()),
            pixels,
        },
        energies,
        iterations,
        rejected_steps,
        converged,
    })
}

/// Closed-form weights `α_t = 2(T−t+1) − (T+1)(H_T − H_{t−1})`, `t = 1..T`,
/// with `H_t` the t-th harmonic number.
pub fn approx_coefficients(t: usize) -> Vec<f64> {
    let mut harmonic = vec![0.0; t + 1];
    for i in 1..=t {
        harmonic[i] = harmonic[i - 1] + 1.0 / i as f64;
    }
    let tf = t as f64;
    (1..=t)
        .map(|k| 2.0 * (tf - k as f64 + 1.0) - (tf + 1.0) * (harmonic[t] - harmonic[k - 1]))
        .collect()
}

/// Approximate dynamic image `Σ_t α_t ψ(I_t)`, no iteration.
pub fn approx_rank_pool(video: &Video) -> Result<DynamicImage> {
    let alpha = approx_coefficients(video.len());
    let mut d = vec![0.0; video.frame_len()];
    for (a, frame) in alpha.iter().zip(video.frames()) {
        d.iter_mut().zip(frame).for_each(|(x, p)| *x += a * p);
    }
    Ok(DynamicImage {
        id: video.id.clone(),
        label: video.label,
        provenance: Provenance::SparseSampledReal,
        source: Some(video.id.clone()),
        pixels: Tensor::new(vec![video.height(), video.width()], d)?,
    })
}

/// Fraction of pairs `q > t` with `S(q|d) > S(t|d)`.
pub fn pair_ordering_accuracy(d: &[f64], video: &Video) -> Result<f64> {
    let means = prefix_means(video);
    let s = means.iter().map(|v| score(d, v)).collect::<Result<Vec<_>>>()?;
    let (mut good, mut total) = (0usize, 0usize);
    for t in 0..s.len() {
        for q in t + 1..s.len() {
            total += 1;
            if s[q] > s[t] {
                good += 1;
            }
        }
    }
    Ok(good as f64 / total as f64)
}

/// Affine map applied by [`normalize`]: `normalized = (raw − offset) / scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub offset: f64,
    pub scale: f64,
}

/// Min-max normalize to `[0, 1]`. A constant image maps to all zeros.
pub fn normalize(image: &DynamicImage) -> (DynamicImage, Affine) {
    let d = image.features();
    let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    let affine = if range > 0.0 {
        Affine { offset: lo, scale: range }
    } else {
        Affine { offset: lo, scale: 1.0 }
    };
    let mut out = image.clone();
    out.pixels
        .as_mut_slice()
        .iter_mut()
        .for_each(|x| *x = ((*x - affine.offset) / affine.scale).clamp(0.0, 1.0));
    (out, affine)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error, Rng};
    use crate::videodata::{default_class_specs, synth_video, Motion};

    fn video_from(frames: Vec<Vec<f64>>, h: usize, w: usize) -> Video {
        let t = frames.len();
        let data = frames.concat();
        Video::new("v", 0, Tensor::new(vec![t, h, w], data).unwrap()).unwrap()
    }

    fn random_video(t: usize, n: usize, rng: &mut Rng) -> Video {
        let frames = (0..t).map(|_| (0..n).map(|_| rng.uniform()).collect()).collect();
        video_from(frames, 1, n)
    }

    /// Pair-loop reference built from scratch.
    fn brute_energy(d: &[f64], video: &Video, lambda: f64) -> f64 {
        let t = video.len();
        let means: Vec<Vec<f64>> = (1..=t)
            .map(|k| {
                let mut m = vec![0.0; video.frame_len()];
                for i in 0..k {
                    for (a, b) in m.iter_mut().zip(video.frame(i)) {
                        *a += b / k as f64;
                    }
                }
                m
            })
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut sum = 0.0;
        for q in 0..t {
            for s in 0..q {
                sum += (1.0 - dot(d, &means[q]) + dot(d, &means[s])).max(0.0);
            }
        }
        lambda * dot(d, d) + 2.0 / (t * (t - 1)) as f64 * sum
    }

    #[test]
    fn prefix_means_running_average() {
        let m = prefix_means_of([&[1.0][..], &[3.0][..]]);
        assert_eq!(m, vec![vec![1.0], vec![2.0]]);
        let v = video_from(vec![vec![0.25], vec![0.75]], 1, 1);
        assert_eq!(prefix_means(&v), vec![vec![0.25], vec![0.5]]);
    }

    #[test]
    fn last_prefix_mean_is_global_mean() {
        let mut rng = Rng::new(4);
        let v = random_video(16, 9, &mut rng);
        let last = prefix_means(&v).pop().unwrap();
        for j in 0..9 {
            let direct: f64 = (0..16).map(|t| v.frame(t)[j]).sum::<f64>() / 16.0;
            assert!((last[j] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn score_basics() {
        assert_eq!(score(&[1.0, 0.0], &[3.0, 5.0]).unwrap(), 3.0);
        assert_eq!(score(&[0.0, 0.0], &[3.0, 5.0]).unwrap(), 0.0);
        assert!(score(&[1.0], &[1.0, 2.0]).is_err());
        let mut rng = Rng::new(8);
        for _ in 0..50 {
            let d: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let v: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let a = rng.normal();
            let ad: Vec<f64> = d.iter().map(|x| a * x).collect();
            assert!((score(&ad, &v).unwrap() - a * score(&d, &v).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_d_energy_is_one() {
        let mut rng = Rng::new(0);
        for t in 2..10 {
            let v = random_video(t, 5, &mut rng);
            assert!((energy(&[0.0; 5], &v, 0.3).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_video_energy() {
        let v = video_from(vec![vec![0.2, 0.7]; 5], 1, 2);
        let d = [0.4, -1.3];
        let want = 0.1 * (0.16 + 1.69) + 1.0;
        assert!((energy(&d, &v, 0.1).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn energy_matches_pair_enumeration() {
        let mut rng = Rng::new(5);
        let v = random_video(5, 7, &mut rng);
        for _ in 0..20 {
            let d: Vec<f64> = (0..7).map(|_| 3.0 * rng.normal()).collect();
            let fast = energy(&d, &v, 0.01).unwrap();
            assert!((fast - brute_energy(&d, &v, 0.01)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(6);
        let v = random_video(6, 8, &mut rng);
        let obj = RankingObjective::new(&v, 0.05);
        let mut checked = 0;
        while checked < 10 {
            let d: Vec<f64> = (0..8).map(|_| 4.0 * rng.normal()).collect();
            // skip points within h of a hinge kink
            let s = obj.scores(&d);
            let near_kink = (0..s.len()).any(|t| (t + 1..s.len()).any(|q| (1.0 - s[q] + s[t]).abs() < 1e-3));
            if near_kink {
                continue;
            }
            let analytic = obj.gradient(&d).unwrap();
            let x = Tensor::vector(d).unwrap();
            let numeric = finite_diff_grad(|p| obj.energy(p.as_slice()).unwrap(), &x, 1e-6).unwrap();
            assert!(relative_error(&analytic, numeric.as_slice(), 1e-12) < 1e-5);
            checked += 1;
        }
    }

    #[test]
    fn regularizer_dominates_with_inactive_hinges() {
        // strictly increasing scores with margins > 1 leave every hinge inactive
        let v = video_from((0..4).map(|t| vec![t as f64 / 3.0]).collect(), 1, 1);
        let d = [10.0];
        let g = energy_grad(&d, &v, 1e3).unwrap();
        assert!((g[0] - 2.0 * 1e3 * 10.0).abs() < 1e-9);
    }

    #[test]
    fn constant_video_pools_to_zero() {
        let v = video_from(vec![vec![0.5, 0.1, 0.9]; 6], 1, 3);
        let g = energy_grad(&[0.0; 3], &v, 1e-3).unwrap();
        assert!(g.iter().all(|&x| x == 0.0));
        let di = compute_dynamic_image(&v, &RankPoolConfig::default()).unwrap();
        assert!(di.features().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_frame_video_aligns_with_difference() {
        let u = [0.3, -0.2, 0.3];
        let first = vec![0.3, 0.6, 0.2];
        let second: Vec<f64> = first.iter().zip(&u).map(|(a, b)| a + 2.0 * b).collect();
        // V_2 − V_1 = (second − first)/2 = u
        let v = video_from(vec![first, second], 1, 3);
        let cfg = RankPoolConfig {
            lambda: 1e-2,
            step: 0.5,
            ..RankPoolConfig::default()
        };
        let d = compute_dynamic_image(&v, &cfg).unwrap();
        let along = score(d.features(), &u).unwrap();
        assert!(along > 0.0);

        // line-search oracle: E(α u) is minimised at a positive α
        let e = |a: f64| energy(&u.map(|x| a * x), &v, cfg.lambda).unwrap();
        let best = (-2000..=2000)
            .map(|i| i as f64 * 0.01)
            .min_by(|a, b| e(*a).partial_cmp(&e(*b)).unwrap())
            .unwrap();
        assert!(best > 0.0);
        assert!(e(best) < e(0.0));
    }

    #[test]
    fn descent_is_monotone_and_orders_frames() {
        let specs = default_class_specs(16, 32, 32, 0.0);
        let spec = specs.iter().find(|s| s.motion == Motion::TranslateRight).unwrap();
        let v = synth_video(spec, 1, 16, 32, 32).unwrap();
        let out = compute_dynamic_image_traced(&v, &RankPoolConfig::default()).unwrap();
        assert!(out.energies.windows(2).all(|w| w[1] < w[0]));
        assert!(*out.energies.last().unwrap() <= 1.0);
        assert!(pair_ordering_accuracy(out.image.features(), &v).unwrap() >= 0.9);
        assert_eq!(out.image.provenance, Provenance::SparseSampledReal);
    }

    #[test]
    fn huge_step_diverges() {
        let mut rng = Rng::new(2);
        let v = random_video(5, 4, &mut rng);
        let cfg = RankPoolConfig {
            step: 1e9,
            ..RankPoolConfig::default()
        };
        let err = compute_dynamic_image(&v, &cfg).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }));
        assert!(err.to_string().contains("smaller step"));
    }

    #[test]
    fn approx_weights_at_two_frames() {
        let a = approx_coefficients(2);
        assert!((a[0] + 0.5).abs() < 1e-12 && (a[1] - 0.5).abs() < 1e-12);
        let v = video_from(vec![vec![0.1, 0.9], vec![0.4, 0.2]], 1, 2);
        let d = approx_rank_pool(&v).unwrap();
        assert!((d.features()[0] - 0.15).abs() < 1e-12);
        assert!((d.features()[1] + 0.35).abs() < 1e-12);
    }

    #[test]
    fn approx_weights_sum_to_zero() {
        for t in 2..=64 {
            let sum: f64 = approx_coefficients(t).iter().sum();
            assert!(sum.abs() < 1e-9, "T = {t}: {sum}");
        }
    }

    #[test]
    fn approx_agrees_with_optimised() {
        let specs = default_class_specs(16, 32, 32, 0.0);
        for spec in &specs {
            for seed in 0..3 {
                let v = synth_video(spec, seed, 16, 32, 32).unwrap();
                let exact = compute_dynamic_image(&v, &RankPoolConfig::default()).unwrap();
                let approx = approx_rank_pool(&v).unwrap();
                let (a, b) = (exact.features(), approx.features());
                let cos = score(a, b).unwrap() / (score(a, a).unwrap().sqrt() * score(b, b).unwrap().sqrt());
                assert!(cos >= 0.7, "{:?} seed {seed}: cosine {cos}", spec.motion);
            }
        }
    }

    #[test]
    fn ordering_accuracy_edge_cases() {
        let mut rng = Rng::new(12);
        let v = random_video(7, 5, &mut rng);
        assert_eq!(pair_ordering_accuracy(&[0.0; 5], &v).unwrap(), 0.0);
        let d: Vec<f64> = (0..5).map(|_| rng.normal()).collect();
        let neg: Vec<f64> = d.iter().map(|x| -x).collect();
        let a = pair_ordering_accuracy(&d, &v).unwrap();
        let b = pair_ordering_accuracy(&neg, &v).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_to_unit_range() {
        let img = DynamicImage {
            id: "x".into(),
            label: 0,
            provenance: Provenance::SparseSampledReal,
            source: None,
            pixels: Tensor::new(vec![2, 2], vec![-2.0, 0.0, 2.0, 6.0]).unwrap(),
        };
        let (n, affine) = normalize(&img);
        assert_eq!(n.features(), &[0.0, 0.25, 0.5, 1.0]);
        assert_eq!(affine, Affine { offset: -2.0, scale: 8.0 });
        let flat = DynamicImage {
            pixels: Tensor::filled(&[2, 2], 3.0),
            ..img
        };
        assert!(normalize(&flat).0.features().iter().all(|&x| x == 0.0));
    }
}
