//! Supervised training over closed-world targets.
//!
//! Every image contributes one item per trained relation whose target vector
//! covers all `n` findings (1 where the triple exists, 0 otherwise), so each
//! absent edge is used as a negative. Finding subjects contribute `coOccurs`
//! items the same way. Items are grouped per subject into units, units are
//! shuffled per epoch with a stream derived from `(seed, epoch)`, and the
//! optimizer steps once per minibatch of units on the mean loss.

mod checkpoint;
mod loss;
mod optim;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{bce_loss, bce_with_logit, PROB_EPS};
pub use optim::{Optimizer, OptimizerKind};

use crate::encoders::FeatureTable;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::kg::{AnnotationTable, EntityId, EntityKind, KnowledgeGraph, RelationKind, UncertainPolicy};
use crate::scoring::{EmbeddingModel, Gradients, Subject};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Minibatch size in subjects (images, or findings for `coOccurs`).
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub policy: UncertainPolicy,
    pub relations: Vec<RelationKind>,
    /// Epochs without a validation gain before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerKind::default(),
            seed: 0,
            policy: UncertainPolicy::AsPositive,
            relations: vec![RelationKind::HasFinding],
            patience: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !self.relations.contains(&RelationKind::HasFinding) {
            return Err(Error::Config("training must include hasFinding".into()));
        }
        Ok(())
    }
}

/// A knowledge graph together with the feature code of each of its images.
#[derive(Debug, Clone)]
pub struct LinkData<'a> {
    kg: &'a KnowledgeGraph,
    features: &'a FeatureTable,
    rows: Vec<usize>,
}

impl<'a> LinkData<'a> {
    /// `image_ids[i]` names image entity `i` of `kg`; each must have a code.
    pub fn new(kg: &'a KnowledgeGraph, features: &'a FeatureTable, image_ids: &[String]) -> Result<Self> {
        if image_ids.len() != kg.num_images() {
            return Err(Error::shape("LinkData", kg.num_images(), image_ids.len()));
        }
        let rows = features.align(image_ids)?;
        Ok(Self { kg, features, rows })
    }

    pub fn kg(&self) -> &KnowledgeGraph {
        self.kg
    }

    pub fn code(&self, image: usize) -> &[f64] {
        self.features.code(self.rows[image])
    }

    pub fn feature_dim(&self) -> usize {
        self.features.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ItemSubject {
    Image(usize),
    Finding(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub subject: ItemSubject,
    pub relation: RelationKind,
    pub targets: Vec<f64>,
}

pub type Batch = Vec<TrainItem>;

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Closed-world items for one epoch, shuffled and cut into minibatches.
pub fn make_batches(data: &LinkData<'_>, config: &TrainConfig, epoch: usize) -> Result<Vec<Batch>> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let kg = data.kg;
    let relations: BTreeSet<RelationKind> = config.relations.iter().copied().collect();
    let image_relations: Vec<RelationKind> = relations
        .iter()
        .copied()
        .filter(|r| r.subject_kind() == EntityKind::Image)
        .collect();

    let mut units: Vec<Vec<TrainItem>> = Vec::new();
    for i in 0..kg.num_images() {
        let unit: Vec<TrainItem> = image_relations
            .iter()
            .map(|&r| TrainItem {
                subject: ItemSubject::Image(i),
                relation: r,
                targets: kg.targets(EntityId::image(i), r),
            })
            .collect();
        if !unit.is_empty() {
            units.push(unit);
        }
    }
    if relations.contains(&RelationKind::CoOccurs) {
        for f in 0..kg.num_findings() {
            units.push(vec![TrainItem {
                subject: ItemSubject::Finding(f),
                relation: RelationKind::CoOccurs,
                targets: kg.targets(EntityId::finding(f), RelationKind::CoOccurs),
            }]);
        }
    }

    units.shuffle(&mut epoch_rng(config.seed, epoch));
    Ok(units
        .chunks(config.batch_size)
        .map(|chunk| chunk.iter().flatten().cloned().collect())
        .collect())
}

fn subject_of<'d>(data: &'d LinkData<'_>, s: ItemSubject) -> Subject<'d> {
    match s {
        ItemSubject::Image(i) => Subject::Image(data.code(i)),
        ItemSubject::Finding(f) => Subject::Finding(f),
    }
}

/// Mean BCE of one item over its `n` targets.
pub fn item_loss(model: &EmbeddingModel, data: &LinkData<'_>, item: &TrainItem) -> Result<f64> {
    let scores = model.score_all_objects(subject_of(data, item.subject), item.relation)?;
    let n = scores.len() as f64;
    Ok(scores
        .iter()
        .zip(&item.targets)
        .map(|(s, y)| bce_with_logit(*s, *y).0)
        .sum::<f64>()
        / n)
}

/// Mean item loss over `batch` and its gradient, accumulated into `grads`
/// (which is cleared first). Items are reduced in batch order.
pub fn batch_loss_and_grad(
    model: &EmbeddingModel,
    data: &LinkData<'_>,
    batch: &[TrainItem],
    grads: &mut Gradients,
) -> Result<f64> {
    grads.fill_zero();
    if batch.is_empty() {
        return Ok(0.0);
    }
    let weight = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut upstream = Vec::new();
    for item in batch {
        let subject = subject_of(data, item.subject);
        let scores = model.score_all_objects(subject, item.relation)?;
        if item.targets.len() != scores.len() {
            return Err(Error::shape("targets", scores.len(), item.targets.len()));
        }
        let per_target = 1.0 / scores.len() as f64;
        upstream.clear();
        let mut loss = 0.0;
        for (s, y) in scores.iter().zip(&item.targets) {
            let (l, g) = bce_with_logit(*s, *y);
            loss += l;
            upstream.push(g * per_target * weight);
        }
        let loss = loss * per_target;
        if !loss.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss for {:?} under {}",
                item.subject, item.relation
            )));
        }
        total += loss;
        model.backward_all_objects(subject, item.relation, &upstream, grads)?;
    }
    Ok(total * weight)
}

/// One pass over `batches`; returns the mean item loss of the epoch
/// (measured before each batch's update).
pub fn train_epoch(
    model: &mut EmbeddingModel,
    data: &LinkData<'_>,
    batches: &[Batch],
    optimizer: &mut Optimizer,
) -> Result<f64> {
    for relation in batches.iter().flatten().map(|it| it.relation).collect::<BTreeSet<_>>() {
        model.relation_row(relation)?;
    }
    let mut grads = Gradients::zeros_like(model);
    let mut loss_sum = 0.0;
    let mut items = 0usize;
    for (b, batch) in batches.iter().enumerate() {
        let mean = batch_loss_and_grad(model, data, batch, &mut grads).map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!("batch {b}: {msg}")),
            other => other,
        })?;
        loss_sum += mean * batch.len() as f64;
        items += batch.len();
        optimizer.step(model, &grads);
        if !model.is_finite() {
            return Err(Error::Numerical(format!(
                "parameters became non-finite after batch {b} (batch loss {mean})"
            )));
        }
    }
    Ok(if items == 0 { 0.0 } else { loss_sum / items as f64 })
}

/// Held-out images used for model selection.
#[derive(Debug, Clone, Copy)]
pub struct ValidationSet<'a> {
    pub features: &'a FeatureTable,
    pub truth: &'a AnnotationTable,
    pub policy: UncertainPolicy,
}

impl ValidationSet<'_> {
    pub fn evaluate(&self, model: &EmbeddingModel) -> Result<EvalReport> {
        evaluate(model, self.features, self.truth, self.policy, None, None)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_auc: Option<f64>,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: EmbeddingModel,
    /// 1-based epoch the best model comes from.
    pub best_epoch: usize,
    pub best_val_macro_auc: Option<f64>,
    pub history: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// Tab-separated history: `epoch, train_loss, val_macro_auc, improved`.
    pub fn history_tsv(&self) -> String {
        let mut out = String::from("epoch\ttrain_loss\tval_macro_auc\timproved\n");
        for r in &self.history {
            let auc = r
                .val_macro_auc
                .map_or_else(|| "undefined".into(), |v| format!("{v:.6}"));
            out.push_str(&format!(
                "{}\t{:.8}\t{auc}\t{}\n",
                r.epoch,
                r.train_loss,
                u8::from(r.improved)
            ));
        }
        out
    }
}

/// Trains until `epochs` run out or `patience` epochs pass without a gain in
/// validation macro-AUC, returning the best-validating model. Epochs whose
/// validation AUC is undefined count as a gain for the latest model.
pub fn train(
    mut model: EmbeddingModel,
    data: &LinkData<'_>,
    val: Option<&ValidationSet<'_>>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.feature_dim() != model.dims().feature_dim {
        return Err(Error::shape("train", model.dims().feature_dim, data.feature_dim()));
    }
    if data.kg.num_findings() != model.dims().findings {
        return Err(Error::shape("train", model.dims().findings, data.kg.num_findings()));
    }
    for r in &config.relations {
        model.relation_row(*r)?;
    }

    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_val: Option<f64> = None;
    let mut since_best = 0usize;
    let mut history = Vec::new();

    for epoch in 1..=config.epochs {
        let batches = make_batches(data, config, epoch)?;
        let train_loss = train_epoch(&mut model, data, &batches, &mut optimizer).map_err(|e| match e {
            Error::Numerical(msg) => Error::Numerical(format!("epoch {epoch}: {msg}")),
            other => other,
        })?;
        let val_auc = match val {
            Some(v) => v.evaluate(&model)?.macro_auc,
            None => None,
        };
        let improved = match (val_auc, best_val) {
            (Some(a), Some(b)) => a > b,
            (Some(_), None) => true,
            (None, _) => best_val.is_none(),
        };
        if improved {
            best = model.clone();
            best_epoch = epoch;
            best_val = val_auc;
            since_best = 0;
        } else {
            since_best += 1;
        }
        log::info!(
            "epoch {epoch}: loss {train_loss:.6}, val macro-AUC {}",
            val_auc.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
        );
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_macro_auc: val_auc,
            improved,
        });
        if since_best >= config.patience {
            break;
        }
    }

    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_macro_auc: best_val,
        history,
    })
}
