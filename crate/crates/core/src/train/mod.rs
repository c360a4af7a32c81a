//! Optimization loop, evaluation, the sum-pooling baseline, checkpoints and
//! ablation drivers.

mod ablation;
mod adam;
mod auc;
mod baseline;
mod checkpoint;
mod diagnostics;

pub use ablation::{
    format_table, mean_std, run_ablation, slot_grid, standard_grid, AblationCell, AblationRow,
};
pub use adam::{learning_rate, Adam, AdamConfig};
pub use auc::auc;
pub use baseline::EmbeddingMlp;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use diagnostics::{gradcheck_mimn, gradcheck_quadratic, GradcheckSetup};

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::grad::{GradError, GradientSet, Graph, ParamStore, Tape};
use crate::model::{CtrModel, HyperParams, ItemKey, MimnParams, ModelError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mimn,
    EmbeddingMlp,
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mimn" => Ok(ModelKind::Mimn),
            "embedding_mlp" | "embedding-mlp" => Ok(ModelKind::EmbeddingMlp),
            _ => Err(format!(
                "unknown model {s:?} (expected mimn or embedding_mlp)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub lr0: f64,
    pub decay_rate: f64,
    /// Optimizer steps between decays; `None` means once per epoch.
    pub decay_interval: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Samples per parallel gradient chunk. Fixed so results do not depend
    /// on the number of worker threads.
    pub chunk_size: usize,
    pub hyper: HyperParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Mimn,
            lr0: 0.001,
            decay_rate: 0.9,
            decay_interval: None,
            batch_size: 128,
            epochs: 20,
            seed: 1,
            chunk_size: 16,
            hyper: HyperParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad(format!(
                "decay_rate must be in (0, 1], got {}",
                self.decay_rate
            ));
        }
        if self.decay_interval == Some(0) {
            return bad("decay_interval must be positive".into());
        }
        if self.batch_size == 0 || self.chunk_size == 0 {
            return bad("batch_size and chunk_size must be positive".into());
        }
        self.hyper.validate()?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("metric: {0}")]
    Metric(String),
    #[error("non-finite {what} at step {step} (lr {lr:e}); gradient norms: {}", format_norms(.grad_norms))]
    NonFinite {
        what: &'static str,
        step: usize,
        lr: f64,
        grad_norms: Vec<(String, f64)>,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

fn format_norms(norms: &[(String, f64)]) -> String {
    norms
        .iter()
        .map(|(n, v)| format!("{n}={v:.3e}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// A trained model of either kind.
#[derive(Clone, Debug)]
pub enum AnyModel {
    Mimn(MimnParams),
    EmbeddingMlp(EmbeddingMlp),
}

impl AnyModel {
    pub fn new(
        kind: ModelKind,
        hyper: HyperParams,
        n_items: usize,
        n_categories: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        Ok(match kind {
            ModelKind::Mimn => AnyModel::Mimn(MimnParams::new(hyper, n_items, n_categories, seed)?),
            ModelKind::EmbeddingMlp => {
                AnyModel::EmbeddingMlp(EmbeddingMlp::new(hyper, n_items, n_categories, seed)?)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            AnyModel::Mimn(_) => ModelKind::Mimn,
            AnyModel::EmbeddingMlp(_) => ModelKind::EmbeddingMlp,
        }
    }

    pub fn hyper(&self) -> &HyperParams {
        match self {
            AnyModel::Mimn(m) => &m.hyper,
            AnyModel::EmbeddingMlp(m) => &m.hyper,
        }
    }

    pub fn as_mimn(&self) -> Option<&MimnParams> {
        match self {
            AnyModel::Mimn(m) => Some(m),
            AnyModel::EmbeddingMlp(_) => None,
        }
    }
}

impl CtrModel for AnyModel {
    fn store(&self) -> &ParamStore {
        match self {
            AnyModel::Mimn(m) => &m.store,
            AnyModel::EmbeddingMlp(m) => &m.store,
        }
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        match self {
            AnyModel::Mimn(m) => &mut m.store,
            AnyModel::EmbeddingMlp(m) => &mut m.store,
        }
    }

    fn sample_objective<G: Graph>(&self, g: &mut G, sample: &Sample) -> Result<G::Var, ModelError> {
        match self {
            AnyModel::Mimn(m) => CtrModel::sample_objective(m, g, sample),
            AnyModel::EmbeddingMlp(m) => m.sample_objective(g, sample),
        }
    }

    fn score(&self, sample: &Sample) -> Result<f64, ModelError> {
        match self {
            AnyModel::Mimn(m) => m.score(sample),
            AnyModel::EmbeddingMlp(m) => m.score(sample),
        }
    }

    fn usage_variance(&self, history: &[ItemKey]) -> Result<Option<f64>, ModelError> {
        match self {
            AnyModel::Mimn(m) => m.usage_variance(history),
            AnyModel::EmbeddingMlp(m) => m.usage_variance(history),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    /// Learning rate at the last step of the epoch.
    pub lr: f64,
    pub seconds: f64,
    pub eval_auc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Evaluation AUC after the last epoch.
    pub auc: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Mean loss of every optimizer step.
    pub loss_curve: Vec<f64>,
    /// Mean across evaluated users of the slot variance of the final usage
    /// accumulator (memory network only).
    pub usage_variance: Option<f64>,
}

impl MetricReport {
    /// One JSON object per epoch, then a summary line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        let summary = serde_json::json!({
            "summary": true,
            "auc": self.auc,
            "usage_variance": self.usage_variance,
            "steps": self.loss_curve.len(),
        });
        writeln!(w, "{summary}")
    }
}

/// Mean objective and averaged gradient of `batch`. Chunks of `chunk_size`
/// samples run in parallel on their own tapes and are reduced in order.
pub fn batch_gradient<M: CtrModel>(
    model: &M,
    batch: &[Sample],
    chunk_size: usize,
) -> Result<(f64, GradientSet), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let weight = 1.0 / batch.len() as f64;
    let store = model.store();
    let parts: Vec<Result<(f64, GradientSet), ModelError>> = batch
        .par_chunks(chunk_size.max(1))
        .map(|chunk| {
            let mut grads = GradientSet::zeros_like(store);
            let mut loss = 0.0;
            for s in chunk {
                let mut tape = Tape::new(store);
                let l = model.sample_objective(&mut tape, s)?;
                loss += tape.value(&l).item();
                tape.backward_into(l, weight, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = 0.0;
    let mut grads: Option<GradientSet> = None;
    for part in parts {
        let (l, g) = part?;
        total += l;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => acc.accumulate(&g),
        }
    }
    Ok((total * weight, grads.expect("nonempty batch")))
}

/// Click probabilities for `samples`, in order.
pub fn scores<M: CtrModel>(model: &M, samples: &[Sample]) -> Result<Vec<f64>, ModelError> {
    samples.par_iter().map(|s| model.score(s)).collect()
}

pub fn evaluate<M: CtrModel>(model: &M, samples: &[Sample]) -> Result<f64, TrainError> {
    let s = scores(model, samples)?;
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    auc(&s, &labels)
}

const VARIANCE_USERS: usize = 500;

fn mean_usage_variance<M: CtrModel>(
    model: &M,
    samples: &[Sample],
) -> Result<Option<f64>, ModelError> {
    let picked: Vec<&Sample> = samples
        .iter()
        .filter(|s| s.label == 1)
        .take(VARIANCE_USERS)
        .collect();
    let vars: Vec<Option<f64>> = picked
        .par_iter()
        .map(|s| model.usage_variance(&s.history))
        .collect::<Result<_, _>>()?;
    let vals: Vec<f64> = vars.into_iter().flatten().collect();
    Ok((!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64))
}

fn non_finite(
    what: &'static str,
    step: usize,
    lr: f64,
    store: &ParamStore,
    grads: Option<&GradientSet>,
) -> TrainError {
    let grad_norms = grads
        .map(|g| {
            g.iter()
                .map(|(id, t)| (store.name(id).to_string(), t.squared_norm().sqrt()))
                .collect()
        })
        .unwrap_or_default();
    TrainError::NonFinite {
        what,
        step,
        lr,
        grad_norms,
    }
}

/// Trains `model` in place with Adam and the staircase learning-rate decay.
pub fn fit<M: CtrModel>(
    model: &mut M,
    cfg: &TrainConfig,
    train: &[Sample],
    eval: Option<&[Sample]>,
) -> Result<MetricReport, TrainError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let interval = cfg.decay_interval.unwrap_or(steps_per_epoch);
    let mut adam = Adam::new(model.store(), AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_0de5);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut report = MetricReport::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = cfg.lr0;
        for idx in order.chunks(cfg.batch_size) {
            lr = learning_rate(cfg.lr0, cfg.decay_rate, interval, step);
            let batch: Vec<Sample> = idx.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = match batch_gradient(model, &batch, cfg.chunk_size) {
                Ok(r) => r,
                Err(ModelError::Grad(GradError::NonFinite { .. })) => {
                    return Err(non_finite("forward value", step, lr, model.store(), None));
                }
                Err(e) => return Err(e.into()),
            };
            if !loss.is_finite() {
                return Err(non_finite("loss", step, lr, model.store(), Some(&grads)));
            }
            if !grads.is_finite() {
                return Err(non_finite(
                    "gradient",
                    step,
                    lr,
                    model.store(),
                    Some(&grads),
                ));
            }
            adam.step(model.store_mut(), &grads, lr);
            report.loss_curve.push(loss);
            epoch_loss += loss * batch.len() as f64;
            step += 1;
        }
        let eval_auc = match eval {
            Some(e) if !e.is_empty() => Some(evaluate(model, e)?),
            _ => None,
        };
        report.epochs.push(EpochRecord {
            epoch,
            steps: step,
            mean_loss: epoch_loss / train.len() as f64,
            lr,
            seconds: started.elapsed().as_secs_f64(),
            eval_auc,
        });
        report.auc = eval_auc;
    }
    report.usage_variance = mean_usage_variance(model, eval.unwrap_or(train))?;
    Ok(report)
}

/// Builds a fresh model for the vocabulary sizes and trains it.
pub fn train(
    cfg: &TrainConfig,
    train: &[Sample],
    eval: Option<&[Sample]>,
    n_items: usize,
    n_categories: usize,
) -> Result<(AnyModel, MetricReport), TrainError> {
    cfg.validate()?;
    let mut model = AnyModel::new(
        cfg.model,
        cfg.hyper.clone(),
        n_items,
        n_categories,
        cfg.seed,
    )?;
    let report = fit(&mut model, cfg, train, eval)?;
    Ok((model, report))
}
