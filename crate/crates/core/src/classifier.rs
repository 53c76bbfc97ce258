//! Softmax classifier over dynamic images: `H·W → hidden → N` with ReLU,
//! inverted dropout before the output layer, momentum SGD with step decay.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::nn::{softmax, Activation, Dense, Mlp};
use crate::numerics::{OptimizerKind, OptimizerState, Rng, Tensor};
use crate::par;
use crate::rankpool::DynamicImage;
use crate::sps::ScoreMatrix;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CLF1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub base_lr: f64,
    pub decay_factor: f64,
    pub decay_period: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub batch: usize,
    pub dropout: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            base_lr: 1e-3,
            decay_factor: 0.1,
            decay_period: 30,
            epochs: 80,
            momentum: 0.9,
            batch: 16,
            dropout: 0.4,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.base_lr > 0.0) {
            return Err("base_lr must be positive".into());
        }
        if !(self.decay_factor > 0.0 && self.decay_factor < 1.0) {
            return Err("decay_factor must be in (0, 1)".into());
        }
        if self.decay_period == 0 {
            return Err("decay_period must be at least 1".into());
        }
        if self.epochs == 0 {
            return Err("epochs must be at least 1".into());
        }
        if self.batch == 0 {
            return Err("batch must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err("dropout must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err("momentum must be in [0, 1)".into());
        }
        Ok(())
    }

    /// Learning rate for 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * self.decay_factor.powi((epoch / self.decay_period) as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub dropout: f64,
    pub net: Mlp,
}

impl ClassifierModel {
    /// He-initialised hidden layer, zero-initialised output layer.
    pub fn new(height: usize, width: usize, hidden: usize, num_classes: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        if num_classes < 2 || hidden == 0 || height * width == 0 {
            return Err(Error::invalid("classifier needs ≥ 2 classes and positive widths"));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::invalid(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let net = Mlp {
            layers: vec![Dense::he(height * width, hidden, rng), Dense::zeros(hidden, num_classes)],
            hidden: Activation::Relu,
            output: Activation::Identity,
        };
        Ok(Self {
            num_classes,
            height,
            width,
            dropout,
            net,
        })
    }

    pub fn hidden(&self) -> usize {
        self.net.layers[0].outputs()
    }

    fn check(&self, image: &[f64]) -> Result<()> {
        if image.len() != self.height * self.width {
            return Err(Error::ShapeMismatch {
                expected: vec![self.height, self.width],
                found: vec![image.len()],
            });
        }
        Ok(())
    }

    fn dropout_mask(&self, rng: &mut Rng) -> Vec<f64> {
        let keep = 1.0 - self.dropout;
        (0..self.hidden())
            .map(|_| if rng.uniform() < self.dropout { 0.0 } else { 1.0 / keep })
            .collect()
    }

    /// Pre-softmax scores. `rng` is required in train mode.
    pub fn logits(&self, image: &[f64], mode: Mode, rng: Option<&mut Rng>) -> Result<Vec<f64>> {
        self.check(image)?;
        let mask = match (mode, rng) {
            (Mode::Eval, _) => None,
            (Mode::Train, Some(rng)) => Some(self.dropout_mask(rng)),
            (Mode::Train, None) => return Err(Error::invalid("train-mode forward needs an rng")),
        };
        Ok(self.net.forward_trace(image, mask)?.output().to_vec())
    }

    /// Softmax scores.
    pub fn forward(&self, image: &[f64], mode: Mode, rng: Option<&mut Rng>) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(image, mode, rng)?))
    }

    /// Eval-mode argmax; ties go to the smaller class index.
    pub fn predict(&self, image: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(image, Mode::Eval, None)?))
    }

    /// Eval-mode cross-entropy of `image` against `label`.
    pub fn loss(&self, image: &[f64], label: usize) -> Result<f64> {
        let p = self.forward(image, Mode::Eval, None)?;
        Ok(-p[label].max(f64::MIN_POSITIVE).ln())
    }

    pub fn quantize_f32(&mut self) {
        for p in self.net.params_mut() {
            p.quantize_f32();
        }
    }
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub loss: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub lr: Vec<f64>,
}

/// Epoch-at-a-time trainer over a fixed item list where each item can be
/// switched on or off.
///
/// Visiting order and dropout masks are keyed by `(seed, epoch, item id)`,
/// so inactive items have no influence on how active ones are processed.
pub struct Trainer<'m> {
    model: &'m mut ClassifierModel,
    schedule: TrainSchedule,
    opt: OptimizerState,
    rng: Rng,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m mut ClassifierModel, schedule: &TrainSchedule, rng: &Rng) -> Result<Self> {
        schedule.validate().map_err(Error::InvalidArgument)?;
        let opt = OptimizerState::new(OptimizerKind::sgd(schedule.momentum), schedule.base_lr, &model.net.params())?;
        Ok(Self {
            model,
            schedule: schedule.clone(),
            opt,
            rng: rng.clone(),
        })
    }

    pub fn model(&self) -> &ClassifierModel {
        self.model
    }

    /// One pass over the active items. `epoch` is 0-based. Returns mean loss
    /// and train-mode accuracy over the active items.
    pub fn run_epoch(&mut self, epoch: usize, items: &[&DynamicImage], active: &[bool]) -> Result<(f64, f64)> {
        debug_assert_eq!(items.len(), active.len());
        let epoch_rng = self.rng.fork(epoch as u64);
        let order_rng = epoch_rng.fork(0);
        let mask_rng = epoch_rng.fork(1);

        let mut order: Vec<(u64, usize)> = items
            .iter()
            .enumerate()
            .filter(|(i, _)| active[*i])
            .map(|(i, d)| (order_rng.fork_str(&d.id).next_u64(), i))
            .collect();
        if order.is_empty() {
            return Err(Error::invalid("no active training samples"));
        }
        order.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| items[a.1].id.cmp(&items[b.1].id)));

        self.opt.lr = self.schedule.lr_at(epoch);
        let n_classes = self.model.num_classes;
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(self.schedule.batch) {
            let mut grads = self.model.net.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &(_, i) in batch {
                let item = items[i];
                if item.label >= n_classes {
                    return Err(Error::invalid(format!("label {} of '{}' out of range", item.label, item.id)));
                }
                self.model.check(item.features())?;
                let mask = (self.model.dropout > 0.0).then(|| self.model.dropout_mask(&mut mask_rng.fork_str(&item.id)));
                let trace = self.model.net.forward_trace(item.features(), mask)?;
                let p = softmax(trace.output());
                loss_sum += -p[item.label].max(f64::MIN_POSITIVE).ln();
                if argmax(&p) == item.label {
                    correct += 1;
                }
                let d: Vec<f64> = p
                    .iter()
                    .enumerate()
                    .map(|(k, pk)| scale * (pk - if k == item.label { 1.0 } else { 0.0 }))
                    .collect();
                self.model.net.backward(&trace, &d, &mut grads, false);
            }
            let refs: Vec<&Tensor> = grads.iter().collect();
            self.opt
                .step(&mut self.model.net.params_mut(), &refs)
                .map_err(|_| non_finite(epoch))?;
        }
        let loss = loss_sum / order.len() as f64;
        if !loss.is_finite() {
            return Err(non_finite(epoch));
        }
        Ok((loss, correct as f64 / order.len() as f64))
    }
}

fn non_finite(epoch: usize) -> Error {
    Error::NonFiniteLoss {
        stage: "classifier",
        unit: "epoch",
        index: epoch,
    }
}

/// Mini-batch momentum SGD on cross-entropy for `schedule.epochs` epochs.
pub fn train(model: &mut ClassifierModel, train_set: &[DynamicImage], schedule: &TrainSchedule, rng: &Rng) -> Result<TrainHistory> {
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let items: Vec<&DynamicImage> = train_set.iter().collect();
    let active = vec![true; items.len()];
    let mut trainer = Trainer::new(model, schedule, rng)?;
    let mut history = TrainHistory::default();
    for epoch in 0..schedule.epochs {
        let (loss, acc) = trainer.run_epoch(epoch, &items, &active)?;
        history.loss.push(loss);
        history.accuracy.push(acc);
        history.lr.push(schedule.lr_at(epoch));
    }
    Ok(history)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTally {
    pub correct: usize,
    pub total: usize,
}

impl ClassTally {
    /// `None` when the class has no samples.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<ClassTally>,
}

impl Evaluation {
    /// Accuracy over the samples whose label is in `classes`.
    pub fn subset_accuracy(&self, classes: &[usize]) -> Option<f64> {
        let (c, t) = classes
            .iter()
            .filter_map(|&k| self.per_class.get(k))
            .fold((0, 0), |(c, t), tally| (c + tally.correct, t + tally.total));
        (t > 0).then(|| c as f64 / t as f64)
    }
}

pub fn evaluate(model: &ClassifierModel, set: &[DynamicImage]) -> Result<Evaluation> {
    if set.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let predictions = par::try_map(set, |d| model.predict(d.features()))?;
    let mut per_class = vec![ClassTally { correct: 0, total: 0 }; model.num_classes];
    let mut correct = 0;
    for (d, p) in set.iter().zip(predictions) {
        let tally = per_class
            .get_mut(d.label)
            .ok_or_else(|| Error::invalid(format!("label {} of '{}' out of range", d.label, d.id)))?;
        tally.total += 1;
        if p == d.label {
            tally.correct += 1;
            correct += 1;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / set.len() as f64,
        per_class,
    })
}

/// Eval-mode softmax rows for every pool item, in pool order.
pub fn score_matrix(model: &ClassifierModel, pool: &[&DynamicImage]) -> Result<ScoreMatrix> {
    if pool.is_empty() {
        return Err(Error::invalid("score matrix of an empty pool"));
    }
    let rows = par::try_map(pool, |d| model.forward(d.features(), Mode::Eval, None))?;
    ScoreMatrix::new(pool.iter().map(|d| d.id.clone()).collect(), rows)
}

/// Eval-mode cross-entropy of each pool item against its own label.
pub fn per_sample_losses(model: &ClassifierModel, pool: &[&DynamicImage]) -> Result<Vec<f64>> {
    par::try_map(pool, |d| model.loss(d.features(), d.label))
}

pub fn write_checkpoint(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint_to(model, BufWriter::new(File::create(path.as_ref())?))?;
    Ok(())
}

/// `CLF1` layout (little-endian): magic, classes u32, H u32, W u32,
/// hidden u32, dropout f64, then a u64 parameter count and f32 parameters.
pub fn write_checkpoint_to<W: Write>(model: &ClassifierModel, sink: W) -> Result<W> {
    let mut w = Writer::new(sink);
    w.bytes(MAGIC)?;
    w.u32(model.num_classes as u32)?;
    w.u32(model.height as u32)?;
    w.u32(model.width as u32)?;
    w.u32(model.hidden() as u32)?;
    w.f64(model.dropout)?;
    let flat = model.net.flat_params();
    w.u64(flat.len() as u64)?;
    w.f32s(&flat)?;
    w.finish()
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ClassifierModel> {
    read_checkpoint_from(BufReader::new(File::open(path.as_ref())?))
}

pub fn read_checkpoint_from<R: Read>(source: R) -> Result<ClassifierModel> {
    let mut r = Reader::new(source);
    r.magic(MAGIC)?;
    let classes = r.u32("class count")? as usize;
    let height = r.u32("height")? as usize;
    let width = r.u32("width")? as usize;
    let hidden = r.u32("hidden")? as usize;
    let dropout = r.f64("dropout")?;
    if height * width > 1 << 24 || hidden > 1 << 16 || classes > 1 << 16 {
        return Err(r.fail("implausible architecture"));
    }
    let mut model =
        ClassifierModel::new(height, width, hidden, classes, dropout, &mut Rng::new(0)).map_err(|e| r.fail(e.to_string()))?;
    r.at("parameters");
    let n = r.u64("parameter count")? as usize;
    if n != model.net.num_params() {
        return Err(r.fail(format!("expected {} parameters, found {n}", model.net.num_params())));
    }
    let flat = r.f32s(n, "parameters")?;
    model.net.set_flat_params(&flat)?;
    r.finish()?;
    Ok(model)
}
