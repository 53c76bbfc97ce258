//! Selection of generated samples into classifier training.
//!
//! At each scheduled epoch the current classifier scores every not-yet-used
//! generated image, a policy picks `N_g` of them, and they stay in the
//! training set from then on.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::classifier::{per_sample_losses, score_matrix, ClassifierModel, TrainHistory, TrainSchedule, Trainer};
use crate::numerics::Rng;
use crate::rankpool::DynamicImage;
use crate::{Error, Result};

/// Softmax rows, one per pool item, in pool order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn new(ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![ids.len()],
                found: vec![rows.len()],
            });
        }
        let width = rows.first().map_or(0, Vec::len);
        for (id, row) in ids.iter().zip(&rows) {
            if row.len() != width || width < 2 {
                return Err(Error::invalid(format!("score row of '{id}' has {} entries", row.len())));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!("score row of '{id}' is not a distribution")));
            }
        }
        Ok(Self { ids, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn margins(&self) -> Vec<f64> {
        self.rows.iter().map(|r| top_two_gap(r)).collect()
    }
}

fn top_two_gap(row: &[f64]) -> f64 {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in row {
        if v > a {
            b = a;
            a = v;
        } else if v > b {
            b = v;
        }
    }
    a - b
}

/// Largest score minus second-largest score (equal when the top is tied).
pub fn margin(row: &[f64]) -> Result<f64> {
    if row.len() < 2 {
        return Err(Error::invalid("margin needs at least two classes"));
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("score row".into()));
    }
    Ok(top_two_gap(row))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    /// Largest classifier margin first.
    SpsMargin,
    /// Smallest eval-mode cross-entropy against the generating class first.
    TspLoss,
    /// Uniform without replacement.
    Random,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::SpsMargin => "sps-margin",
            Policy::TspLoss => "tsp-loss",
            Policy::Random => "random",
        }
    }
}

/// Per-item statistic the policy ranks by.
#[derive(Clone, Copy, Debug)]
pub enum Statistics<'a> {
    Scores(&'a ScoreMatrix),
    Losses(&'a [f64]),
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Chosen ids in rank order.
    pub ids: Vec<String>,
    /// Margin or loss of each chosen id; empty for random selection.
    pub values: Vec<f64>,
}

/// Choose up to `n_g` ids from `pool_ids` minus `excluded`. Ties keep pool
/// order.
pub fn select(
    pool_ids: &[String],
    stats: Statistics<'_>,
    policy: Policy,
    n_g: usize,
    excluded: &HashSet<String>,
    rng: &mut Rng,
) -> Result<Selection> {
    if n_g == 0 {
        return Err(Error::invalid("N_g must be at least 1"));
    }
    let remaining: Vec<usize> = (0..pool_ids.len()).filter(|&i| !excluded.contains(&pool_ids[i])).collect();
    if remaining.is_empty() {
        return Err(Error::invalid("no unselected pool items remain"));
    }
    let take = n_g.min(remaining.len());

    let values: Vec<f64> = match (policy, stats) {
        (Policy::Random, _) => {
            let ids = rng
                .sample_indices(remaining.len(), take)
                .into_iter()
                .map(|k| pool_ids[remaining[k]].clone())
                .collect();
            return Ok(Selection { ids, values: vec![] });
        }
        (Policy::SpsMargin, Statistics::Scores(s)) => {
            if s.ids() != pool_ids {
                return Err(Error::invalid("score matrix rows do not match the pool"));
            }
            s.margins()
        }
        (Policy::TspLoss, Statistics::Losses(l)) => {
            if l.len() != pool_ids.len() {
                return Err(Error::ShapeMismatch {
                    expected: vec![pool_ids.len()],
                    found: vec![l.len()],
                });
            }
            l.to_vec()
        }
        (p, _) => return Err(Error::invalid(format!("policy {} got the wrong statistics", p.name()))),
    };
    if let Some(&i) = remaining.iter().find(|&&i| !values[i].is_finite()) {
        return Err(Error::NonFinite(format!("selection statistic of '{}'", pool_ids[i])));
    }

    let mut order = remaining;
    match policy {
        Policy::SpsMargin => order.sort_by(|&a, &b| values[b].total_cmp(&values[a])),
        _ => order.sort_by(|&a, &b| values[a].total_cmp(&values[b])),
    }
    order.truncate(take);
    Ok(Selection {
        ids: order.iter().map(|&i| pool_ids[i].clone()).collect(),
        values: order.iter().map(|&i| values[i]).collect(),
    })
}

/// Selection events at epochs `start, start + interval, …, start + extra·interval`
/// (1-based), each adding `count` images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSchedule {
    pub policy: Policy,
    pub start: usize,
    pub interval: usize,
    pub extra: usize,
    pub count: usize,
}

impl Default for SelectionSchedule {
    fn default() -> Self {
        Self {
            policy: Policy::SpsMargin,
            start: 20,
            interval: 10,
            extra: 4,
            count: 25,
        }
    }
}

impl SelectionSchedule {
    pub fn events(&self) -> Vec<usize> {
        (0..=self.extra).map(|k| self.start + k * self.interval).collect()
    }

    pub fn validate(&self, epochs: usize) -> std::result::Result<(), String> {
        if self.start == 0 {
            return Err("start must be at least 1 (epochs are 1-based)".into());
        }
        if self.interval == 0 && self.extra > 0 {
            return Err("interval must be at least 1".into());
        }
        if self.count == 0 {
            return Err("count must be at least 1".into());
        }
        let last = self.start + self.extra * self.interval;
        if last > epochs {
            return Err(format!("start + extra·interval = {last} is past the final epoch {epochs}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionEvent {
    pub epoch: usize,
    pub requested: usize,
    pub selected: Vec<String>,
    pub values: Vec<f64>,
    /// True when fewer than `requested` items were left.
    pub saturated: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionLedger {
    pub policy: Option<Policy>,
    pub events: Vec<SelectionEvent>,
}

impl SelectionLedger {
    /// All selected ids, in selection order.
    pub fn selected(&self) -> Vec<&str> {
        self.events.iter().flat_map(|e| e.selected.iter().map(String::as_str)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ledger: Self = serde_json::from_str(text).map_err(|e| Error::format("ledger", e.to_string()))?;
        let mut seen = HashSet::new();
        if let Some(dup) = ledger.selected().into_iter().find(|id| !seen.insert(*id)) {
            return Err(Error::format("ledger", format!("id '{dup}' selected twice")));
        }
        Ok(ledger)
    }
}

/// Train on `base` for `schedule.epochs` epochs; at each selection event the
/// current model ranks the unused part of `pool` and the chosen images join
/// training from that epoch on. `selection = None` is plain training.
pub fn run_training_with_selection(
    model: &mut ClassifierModel,
    base: &[DynamicImage],
    pool: &[DynamicImage],
    selection: Option<&SelectionSchedule>,
    schedule: &TrainSchedule,
    rng: &Rng,
) -> Result<(TrainHistory, SelectionLedger)> {
    if base.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if let Some(s) = selection {
        s.validate(schedule.epochs).map_err(Error::InvalidArgument)?;
    }
    let mut seen = HashSet::new();
    if let Some(dup) = base.iter().chain(pool).find(|d| !seen.insert(d.id.as_str())) {
        return Err(Error::invalid(format!("duplicate sample id '{}'", dup.id)));
    }

    let items: Vec<&DynamicImage> = base.iter().chain(pool).collect();
    let mut active: Vec<bool> = (0..items.len()).map(|i| i < base.len()).collect();
    let pool_ids: Vec<String> = pool.iter().map(|d| d.id.clone()).collect();
    let events = selection.map(SelectionSchedule::events).unwrap_or_default();
    let select_rng = rng.fork(0x5e1ec7);
    let mut ledger = SelectionLedger {
        policy: selection.map(|s| s.policy),
        events: vec![],
    };
    let mut used: HashSet<String> = HashSet::new();
    let mut history = TrainHistory::default();
    let mut trainer = Trainer::new(model, schedule, rng)?;

    for epoch in 1..=schedule.epochs {
        if let Some(s) = selection.filter(|_| events.contains(&epoch)) {
            let event = selection_event(trainer.model(), pool, &pool_ids, s, epoch, &used, &select_rng)?;
            for id in &event.selected {
                used.insert(id.clone());
            }
            for (i, d) in pool.iter().enumerate() {
                if used.contains(&d.id) {
                    active[base.len() + i] = true;
                }
            }
            ledger.events.push(event);
        }
        let (loss, acc) = trainer.run_epoch(epoch - 1, &items, &active)?;
        history.loss.push(loss);
        history.accuracy.push(acc);
        history.lr.push(schedule.lr_at(epoch - 1));
    }
    Ok((history, ledger))
}

fn selection_event(
    model: &ClassifierModel,
    pool: &[DynamicImage],
    pool_ids: &[String],
    s: &SelectionSchedule,
    epoch: usize,
    used: &HashSet<String>,
    rng: &Rng,
) -> Result<SelectionEvent> {
    let remaining: Vec<&DynamicImage> = pool.iter().filter(|d| !used.contains(&d.id)).collect();
    if remaining.is_empty() {
        return Ok(SelectionEvent {
            epoch,
            requested: s.count,
            selected: vec![],
            values: vec![],
            saturated: true,
        });
    }
    let ids: Vec<String> = remaining.iter().map(|d| d.id.clone()).collect();
    let none = HashSet::new();
    let mut event_rng = rng.fork(epoch as u64);
    let chosen = match s.policy {
        Policy::SpsMargin => {
            let scores = score_matrix(model, &remaining)?;
            select(&ids, Statistics::Scores(&scores), s.policy, s.count, &none, &mut event_rng)?
        }
        Policy::TspLoss => {
            let losses = per_sample_losses(model, &remaining)?;
            select(&ids, Statistics::Losses(&losses), s.policy, s.count, &none, &mut event_rng)?
        }
        Policy::Random => select(&ids, Statistics::None, s.policy, s.count, &none, &mut event_rng)?,
    };
    debug_assert!(pool_ids.len() >= chosen.ids.len());
    Ok(SelectionEvent {
        epoch,
        requested: s.count,
        saturated: remaining.len() < s.count,
        selected: chosen.ids,
        values: chosen.values,
    })
}
