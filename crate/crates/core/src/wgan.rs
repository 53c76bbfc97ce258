//! Per-class Wasserstein GAN over dynamic images.
//!
//! The critic is kept (coarsely) Lipschitz by clipping every critic
//! parameter to `[-c, c]` after each critic update. Critic steps maximize
//! `mean D(real) − mean D(fake)`; generator steps maximize `mean D(G(z))`.

use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::nn::{Activation, Dense, Mlp};
use crate::numerics::{OptimizerKind, OptimizerState, Rng, Tensor};
use crate::rankpool::{DynamicImage, Provenance};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WGN1";

/// Training hyper-parameters.
///
/// Defaults follow the original weight-clipping WGAN recipe at desk scale
/// (RMSProp 5e-5, `n_critic` 5, `c` 0.01). Full-scale runs of the method
/// used Adam at 1e-4 for 20000 iterations on 256×256 outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GanConfig {
    pub z_dim: usize,
    pub hidden: usize,
    pub n_critic: usize,
    pub clip: f64,
    pub batch: usize,
    pub iterations: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            z_dim: 32,
            hidden: 128,
            n_critic: 5,
            clip: 0.01,
            batch: 32,
            iterations: 3000,
            optimizer: OptimizerKind::rmsprop(),
            lr: 5e-5,
        }
    }
}

impl GanConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [
            ("z_dim", self.z_dim),
            ("hidden", self.hidden),
            ("n_critic", self.n_critic),
            ("batch", self.batch),
            ("iterations", self.iterations),
        ] {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if !(self.clip > 0.0) {
            return Err("clip must be positive".into());
        }
        if !(self.lr > 0.0) {
            return Err("lr must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GanHistory {
    /// `mean D(real) − mean D(fake)` from the last critic step of each generator iteration.
    pub critic_objective: Vec<f64>,
    /// Largest `|w|` over the critic weight matrices after each critic update.
    pub critic_max_abs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GanModel {
    pub class: usize,
    pub height: usize,
    pub width: usize,
    pub config: GanConfig,
    /// `z_dim → hidden → hidden → H·W`, ReLU then sigmoid.
    pub generator: Mlp,
    /// `H·W → hidden → hidden → 1`, ReLU then linear.
    pub critic: Mlp,
    pub history: GanHistory,
}

impl GanModel {
    pub fn new(class: usize, height: usize, width: usize, config: GanConfig, rng: &mut Rng) -> Result<Self> {
        config.validate().map_err(Error::InvalidArgument)?;
        let dim = height * width;
        let mut generator = Mlp::he(
            &[config.z_dim, config.hidden, config.hidden, dim],
            Activation::Relu,
            Activation::Sigmoid,
            rng,
        );
        // Full-scale He weights saturate the sigmoid and stall learning.
        generator.layers[2].weight.scale(0.1);
        let critic = new_critic(&[dim, config.hidden, config.hidden, 1], config.clip, rng);
        Ok(Self {
            class,
            height,
            width,
            config,
            generator,
            critic,
            history: GanHistory::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.height * self.width
    }

    /// Image for latent `z`, elementwise in `[0, 1]`.
    pub fn generate(&self, z: &[f64]) -> Result<Tensor> {
        if z.len() != self.config.z_dim {
            return Err(Error::ShapeMismatch {
                expected: vec![self.config.z_dim],
                found: vec![z.len()],
            });
        }
        Tensor::new(vec![self.height, self.width], self.generator.forward(z)?)
    }

    pub fn critic_score(&self, image: &[f64]) -> Result<f64> {
        Ok(self.critic.forward(image)?[0])
    }

    pub fn latent(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.config.z_dim).map(|_| rng.normal()).collect()
    }

    pub fn critic_max_abs(&self) -> f64 {
        max_abs_weight(&self.critic)
    }

    /// Round all parameters through `f32`, the checkpoint precision.
    pub fn quantize_f32(&mut self) {
        for p in self.generator.params_mut().into_iter().chain(self.critic.params_mut()) {
            p.quantize_f32();
        }
    }
}

/// Critic with uniform weights in `[-clip, clip]` and zero biases.
pub fn new_critic(widths: &[usize], clip: f64, rng: &mut Rng) -> Mlp {
    Mlp {
        layers: widths.windows(2).map(|w| Dense::uniform(w[0], w[1], clip, rng)).collect(),
        hidden: Activation::Relu,
        output: Activation::Identity,
    }
}

/// Clamp every critic weight matrix entry to `[-clip, clip]`. Biases are
/// left free: they do not enter the Lipschitz constant.
pub fn clip_params(mlp: &mut Mlp, clip: f64) {
    for layer in &mut mlp.layers {
        layer.weight.as_mut_slice().iter_mut().for_each(|w| *w = w.clamp(-clip, clip));
    }
}

pub fn max_abs_weight(mlp: &Mlp) -> f64 {
    mlp.layers.iter().map(|l| l.weight.max_abs()).fold(0.0, f64::max)
}

/// Upper bound on the critic's Lipschitz constant: the product of the
/// layers' spectral norms (ReLU is 1-Lipschitz).
pub fn lipschitz_bound(critic: &Mlp) -> f64 {
    critic.layers.iter().map(|l| spectral_norm(l.weight.as_slice(), l.outputs(), l.inputs())).product()
}

/// Largest singular value of a row-major `rows × cols` matrix by power
/// iteration on `AᵀA`.
pub fn spectral_norm(a: &[f64], rows: usize, cols: usize) -> f64 {
    assert_eq!(a.len(), rows * cols);
    if a.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..cols).map(|c| 1.0 + c as f64 * 1e-3).collect();
    let mut sigma = 0.0;
    for _ in 0..500 {
        let u: Vec<f64> = a.chunks(cols).map(|row| row.iter().zip(&v).map(|(x, y)| x * y).sum()).collect();
        let mut w = vec![0.0; cols];
        for (row, ur) in a.chunks(cols).zip(&u) {
            w.iter_mut().zip(row).for_each(|(wc, x)| *wc += x * ur);
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // start vector orthogonal to the row space
            v = (0..cols).map(|c| if c % 2 == 0 { 1.0 } else { -0.5 }).collect();
            continue;
        }
        let next = norm.sqrt();
        v = w.into_iter().map(|x| x / norm).collect();
        if (next - sigma).abs() <= 1e-13 * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// `mean D(real) − mean D(fake)`.
pub fn estimate_w1(critic: &Mlp, real: &[Vec<f64>], fake: &[Vec<f64>]) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::invalid("estimate_w1 needs non-empty batches"));
    }
    let mean = |xs: &[Vec<f64>]| -> Result<f64> {
        let mut s = 0.0;
        for x in xs {
            s += critic.forward(x)?[0];
        }
        Ok(s / xs.len() as f64)
    };
    Ok(mean(real)? - mean(fake)?)
}

/// One clipped critic update on a real and a fake batch. Returns the
/// objective before the update.
fn critic_step(critic: &mut Mlp, opt: &mut OptimizerState, real: &[&[f64]], fake: &[Vec<f64>], clip: f64) -> Result<f64> {
    let mut grads = critic.zero_grads();
    let (mut real_mean, mut fake_mean) = (0.0, 0.0);
    let wr = 1.0 / real.len() as f64;
    let wf = 1.0 / fake.len() as f64;
    for x in real {
        let tr = critic.forward_trace(x, None)?;
        real_mean += tr.output()[0] * wr;
        // loss = −objective
        critic.backward(&tr, &[-wr], &mut grads, false);
    }
    for x in fake {
        let tr = critic.forward_trace(x, None)?;
        fake_mean += tr.output()[0] * wf;
        critic.backward(&tr, &[wf], &mut grads, false);
    }
    let grad_refs: Vec<&Tensor> = grads.iter().collect();
    opt.step(&mut critic.params_mut(), &grad_refs)?;
    clip_params(critic, clip);
    Ok(real_mean - fake_mean)
}

/// Train a fresh GAN on the dynamic images of one class.
pub fn train_wgan(real_images: &[DynamicImage], config: &GanConfig, rng: &mut Rng) -> Result<GanModel> {
    let first = real_images
        .first()
        .ok_or_else(|| Error::invalid("train_wgan needs at least one real image"))?;
    if let Some(other) = real_images.iter().find(|d| d.label != first.label) {
        return Err(Error::invalid(format!(
            "train_wgan needs a single class; got {} and {} ('{}')",
            first.label, other.label, other.id
        )));
    }
    if real_images.iter().any(|d| d.pixels.shape() != first.pixels.shape()) {
        return Err(Error::invalid("train_wgan needs images of one geometry"));
    }
    if real_images.len() < config.batch {
        return Err(Error::invalid(format!(
            "train_wgan needs at least batch = {} images, got {}",
            config.batch,
            real_images.len()
        )));
    }
    let mut init_rng = rng.fork(0);
    let mut gan = GanModel::new(first.label, first.height(), first.width(), config.clone(), &mut init_rng)?;
    let real: Vec<&[f64]> = real_images.iter().map(|d| d.features()).collect();
    train_gan_model(&mut gan, &real, rng)?;
    Ok(gan)
}

/// Continue adversarial training of `gan` on `real` feature vectors for
/// `gan.config.iterations` generator iterations.
pub fn train_gan_model(gan: &mut GanModel, real: &[&[f64]], rng: &mut Rng) -> Result<()> {
    let cfg = gan.config.clone();
    let mut step_rng = rng.fork(1);
    let mut critic_opt = OptimizerState::new(cfg.optimizer, cfg.lr, &gan.critic.params())?;
    let mut gen_opt = OptimizerState::new(cfg.optimizer, cfg.lr, &gan.generator.params())?;
    let b = cfg.batch;

    for it in 0..cfg.iterations {
        let mut objective = 0.0;
        let mut max_abs = 0.0_f64;
        for _ in 0..cfg.n_critic {
            let real_batch: Vec<&[f64]> = (0..b).map(|_| real[step_rng.below(real.len())]).collect();
            let mut fake = Vec::with_capacity(b);
            for _ in 0..b {
                let z = gan.latent(&mut step_rng);
                fake.push(gan.generator.forward(&z)?);
            }
            objective = critic_step(&mut gan.critic, &mut critic_opt, &real_batch, &fake, cfg.clip)?;
            max_abs = max_abs.max(gan.critic_max_abs());
        }

        let mut gen_grads = gan.generator.zero_grads();
        let mut scratch = gan.critic.zero_grads();
        let w = 1.0 / b as f64;
        for _ in 0..b {
            let z = gan.latent(&mut step_rng);
            let gt = gan.generator.forward_trace(&z, None)?;
            let ct = gan.critic.forward_trace(gt.output(), None)?;
            // loss = −mean D(G(z))
            let dx = gan
                .critic
                .backward(&ct, &[-w], &mut scratch, true)
                .expect("input gradient requested");
            gan.generator.backward(&gt, &dx, &mut gen_grads, false);
        }
        let refs: Vec<&Tensor> = gen_grads.iter().collect();
        gen_opt.step(&mut gan.generator.params_mut(), &refs).map_err(|_| Error::NonFiniteLoss {
            stage: "wgan",
            unit: "iteration",
            index: it,
        })?;

        if !objective.is_finite() {
            return Err(Error::NonFiniteLoss {
                stage: "wgan",
                unit: "iteration",
                index: it,
            });
        }
        gan.history.critic_objective.push(objective);
        gan.history.critic_max_abs.push(max_abs);
    }
    Ok(())
}

/// Train only a critic to separate two fixed sample sets; returns the
/// objective per step. Used to probe how well the clipped critic estimates
/// the Wasserstein-1 distance.
pub fn train_critic(
    critic: &mut Mlp,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    config: &GanConfig,
    steps: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::invalid("train_critic needs non-empty sample sets"));
    }
    let mut opt = OptimizerState::new(config.optimizer, config.lr, &critic.params())?;
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        let rb: Vec<&[f64]> = (0..config.batch).map(|_| real[rng.below(real.len())].as_slice()).collect();
        let fb: Vec<Vec<f64>> = (0..config.batch).map(|_| fake[rng.below(fake.len())].clone()).collect();
        history.push(critic_step(critic, &mut opt, &rb, &fb, config.clip)?);
    }
    Ok(history)
}

/// Draw `count` generated images labelled with the GAN's class.
pub fn sample_gdi(gan: &GanModel, count: usize, rng: &mut Rng) -> Result<Vec<DynamicImage>> {
    if count == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    (0..count)
        .map(|k| {
            let z = gan.latent(rng);
            Ok(DynamicImage {
                id: format!("gan{}-{k:05}", gan.class),
                label: gan.class,
                provenance: Provenance::GanGenerated,
                source: None,
                pixels: gan.generate(&z)?,
            })
        })
        .collect()
}

pub fn write_checkpoint(gan: &GanModel, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint_to(gan, BufWriter::new(File::create(path.as_ref())?))?;
    Ok(())
}

/// `WGN1` layout (little-endian): magic, class u32, H u32, W u32, config
/// echo (z_dim, hidden, n_critic u32; clip f64; batch, iterations u32;
/// optimizer tag u8 + three f64 hyper-parameters; lr f64), then generator
/// and critic parameters, each as a u64 count followed by f32 values.
pub fn write_checkpoint_to<W: Write>(gan: &GanModel, sink: W) -> Result<W> {
    let mut w = Writer::new(sink);
    let c = &gan.config;
    w.bytes(MAGIC)?;
    w.u32(gan.class as u32)?;
    w.u32(gan.height as u32)?;
    w.u32(gan.width as u32)?;
    w.u32(c.z_dim as u32)?;
    w.u32(c.hidden as u32)?;
    w.u32(c.n_critic as u32)?;
    w.f64(c.clip)?;
    w.u32(c.batch as u32)?;
    w.u32(c.iterations as u32)?;
    write_optimizer(&mut w, &c.optimizer)?;
    w.f64(c.lr)?;
    for net in [&gan.generator, &gan.critic] {
        let flat = net.flat_params();
        w.u64(flat.len() as u64)?;
        w.f32s(&flat)?;
    }
    w.finish()
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<GanModel> {
    read_checkpoint_from(BufReader::new(File::open(path.as_ref())?))
}

pub fn read_checkpoint_from<R: Read>(source: R) -> Result<GanModel> {
    let mut r = Reader::new(source);
    r.magic(MAGIC)?;
    let class = r.u32("class")? as usize;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let config = GanConfig {
        z_dim: r.u32("z_dim")? as usize,
        hidden: r.u32("hidden")? as usize,
        n_critic: r.u32("n_critic")? as usize,
        clip: r.f64("clip")?,
        batch: r.u32("batch")? as usize,
        iterations: r.u32("iterations")? as usize,
        optimizer: read_optimizer(&mut r)?,
        lr: r.f64("lr")?,
    };
    config.validate().map_err(|e| r.fail(e))?;
    if height == 0 || width == 0 || height * width > 1 << 24 {
        return Err(r.fail(format!("implausible geometry {height}x{width}")));
    }
    let mut gan = GanModel::new(class, height, width, config, &mut Rng::new(0))?;
    for (name, net) in [("generator", &mut gan.generator), ("critic", &mut gan.critic)] {
        r.at(format!("{name} parameters"));
        let n = r.u64("parameter count")? as usize;
        if n != net.num_params() {
            return Err(r.fail(format!("expected {} parameters, found {n}", net.num_params())));
        }
        let flat = r.f32s(n, "parameters")?;
        net.set_flat_params(&flat)?;
    }
    r.finish()?;
    Ok(gan)
}

pub(crate) fn write_optimizer<W: Write>(w: &mut Writer<W>, kind: &OptimizerKind) -> Result<()> {
    w.u8(kind.tag())?;
    let p = match *kind {
        OptimizerKind::SgdMomentum { momentum } => [momentum, 0.0, 0.0],
        OptimizerKind::Adam { beta1, beta2, eps } => [beta1, beta2, eps],
        OptimizerKind::RmsProp { alpha, eps } => [alpha, eps, 0.0],
    };
    for v in p {
        w.f64(v)?;
    }
    Ok(())
}

pub(crate) fn read_optimizer<R: Read>(r: &mut Reader<R>) -> Result<OptimizerKind> {
    let tag = r.u8("optimizer kind")?;
    let p = [r.f64("optimizer parameter")?, r.f64("optimizer parameter")?, r.f64("optimizer parameter")?];
    Ok(match tag {
        0 => OptimizerKind::SgdMomentum { momentum: p[0] },
        1 => OptimizerKind::Adam {
            beta1: p[0],
            beta2: p[1],
            eps: p[2],
        },
        2 => OptimizerKind::RmsProp { alpha: p[0], eps: p[1] },
        other => return Err(r.fail(format!("unknown optimizer tag {other}"))),
    })
}
