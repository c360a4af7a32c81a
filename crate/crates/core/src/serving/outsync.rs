use rayon::prelude::*;

use super::{handle_request, ScoreRequest, ServingError};
use crate::data::{Sample, Vocabulary};
use crate::model::MimnParams;
use crate::train::auc;
use crate::uic::{Deployment, StateStore};

/// AUC of the same samples scored by `fresh` parameters from states that
/// were folded by `fresh` (synced) or by `stale` (out-sync).
#[derive(Clone, Debug, PartialEq)]
pub struct OutSyncReport {
    pub samples: usize,
    pub auc_synced: f64,
    pub auc_out_sync: f64,
    /// `auc_out_sync - auc_synced`.
    pub delta: f64,
}

fn score_through_store(
    builder: &MimnParams,
    scorer: &MimnParams,
    samples: &[Sample],
) -> Result<Vec<f64>, ServingError> {
    let store = StateStore::new(Deployment::new(builder.clone(), Vocabulary::new(), 1));
    let keyed: Vec<_> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (format!("s{i}"), s.history.clone()))
        .collect();
    store.warm_up_keyed(&keyed);
    samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let req = ScoreRequest::new(
                &format!("s{i}"),
                vec![s.target],
                vec![0.0; scorer.hyper.profile_dim],
            )?;
            Ok(handle_request(&req, &store, scorer)?[0])
        })
        .collect()
}

/// Replays the samples' histories through an interest store under each
/// parameter version, then scores every target with the fresh parameters.
pub fn out_sync_experiment(
    stale: &MimnParams,
    fresh: &MimnParams,
    samples: &[Sample],
) -> Result<OutSyncReport, ServingError> {
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let metric =
        |scores: Vec<f64>| auc(&scores, &labels).map_err(|e| ServingError::Dataset(e.to_string()));
    let auc_synced = metric(score_through_store(fresh, fresh, samples)?)?;
    let auc_out_sync = metric(score_through_store(stale, fresh, samples)?)?;
    Ok(OutSyncReport {
        samples: samples.len(),
        auc_synced,
        auc_out_sync,
        delta: auc_out_sync - auc_synced,
    })
}
