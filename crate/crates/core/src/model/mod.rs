//! The memory network: controller, NTM read/write, utilization-balanced
//! write weights, the memory induction unit and the prediction head.

mod hyper;
mod layers;
pub mod memory;
mod network;
mod state;

pub use hyper::{HyperParams, MemoryInit};
pub use layers::{gru_cell, mlp_forward, GruIds, GruVars, MlpIds};
pub use memory::{
    controller_step, memory_read, memory_write, miu_update, rebalance_write_weight, top_k,
    utilization_reg_loss, ControllerOutput, ReadResult,
};
pub use network::{click_probability, MimnParams, ProcessedSequence, UnknownIdPolicy};
pub use state::UserInterestState;

pub(crate) use layers::normal_table;
pub(crate) use network::cross_entropy;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::grad::{GradError, Graph, Objective, ParamStore};

/// Vocabulary indices of one behavior: item and its category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemKey {
    pub item: u32,
    pub category: u32,
}

impl ItemKey {
    pub fn new(item: u32, category: u32) -> Self {
        ItemKey { item, category }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Grad(#[from] GradError),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("behavior sequence is empty")]
    EmptySequence,
    #[error("batch is empty")]
    EmptyBatch,
    #[error("unknown {kind} index {index} (vocabulary size {vocab})")]
    UnknownId {
        kind: &'static str,
        index: u32,
        vocab: usize,
    },
    #[error("{what} has shape {got:?}, expected {expected:?}")]
    StateShape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("profile features have width {got}, expected {expected}")]
    ProfileWidth { expected: usize, got: usize },
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("parameter {name:?} has shape {got:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

/// A click model trainable by the optimizer loop.
pub trait CtrModel: Sync {
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Per-sample training objective (cross-entropy plus any penalty).
    fn sample_objective<G: Graph>(&self, g: &mut G, sample: &Sample) -> Result<G::Var, ModelError>;
    /// Click probability for the sample's target.
    fn score(&self, sample: &Sample) -> Result<f64, ModelError>;
    /// Variance across slots of the usage accumulator after `history`, for
    /// models that keep one.
    fn usage_variance(&self, _history: &[ItemKey]) -> Result<Option<f64>, ModelError> {
        Ok(None)
    }
}

/// Mean per-sample objective over a fixed batch, as an [`Objective`].
pub struct BatchObjective<'a, M> {
    pub model: &'a M,
    pub batch: &'a [Sample],
}

impl<M: CtrModel> Objective for BatchObjective<'_, M> {
    type Error = ModelError;

    fn build<G: Graph>(&self, g: &mut G) -> Result<G::Var, ModelError> {
        if self.batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let mut total: Option<G::Var> = None;
        for s in self.batch {
            let v = self.model.sample_objective(g, s)?;
            total = Some(match total {
                None => v,
                Some(t) => g.add(&t, &v)?,
            });
        }
        let total = total.expect("nonempty batch");
        Ok(g.scale(&total, 1.0 / self.batch.len() as f64)?)
    }
}

#[cfg(test)]
mod tests;
