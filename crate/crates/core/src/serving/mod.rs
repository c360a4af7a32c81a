//! Real-time scoring against the interest store, the full-recompute
//! baseline, and the load benchmark that compares them.

mod bench;
mod outsync;

pub use bench::{
    bench_histories, crossover_length, format_table, percentile, run_bench, storage_report,
    write_csv, BenchPlan, BenchReport, LoadProfile, ServeMode, StorageRow, RAW_EVENT_BYTES,
};
pub use outsync::{out_sync_experiment, OutSyncReport};

use std::io::{BufRead, Write};

use crate::config::ConfigError;
use crate::data::Vocabulary;
use crate::model::{ItemKey, MimnParams, ModelError};
use crate::uic::{StateStore, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum ServingError {
    #[error("request for user {0:?} has no candidates")]
    NoCandidates(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("request file line {line}: {message}")]
    RequestFile { line: usize, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Dataset(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRequest {
    pub user_id: String,
    pub candidates: Vec<ItemKey>,
    pub profile: Vec<f64>,
}

impl ScoreRequest {
    pub fn new(
        user_id: &str,
        candidates: Vec<ItemKey>,
        profile: Vec<f64>,
    ) -> Result<Self, ServingError> {
        if candidates.is_empty() {
            return Err(ServingError::NoCandidates(user_id.to_string()));
        }
        Ok(ScoreRequest {
            user_id: user_id.to_string(),
            candidates,
            profile,
        })
    }
}

/// Scores every candidate from the user's stored interest state; unknown
/// users are scored from the cold-start state.
pub fn handle_request(
    req: &ScoreRequest,
    store: &StateStore,
    params: &MimnParams,
) -> Result<Vec<f64>, ServingError> {
    if req.candidates.is_empty() {
        return Err(ServingError::NoCandidates(req.user_id.clone()));
    }
    let state = store.get_state(&req.user_id);
    req.candidates
        .iter()
        .map(|&c| Ok(params.predict(&state, c, &req.profile)?))
        .collect()
}

/// Scores by folding the user's entire history inside the request.
pub fn handle_request_recompute(
    req: &ScoreRequest,
    history: &[ItemKey],
    params: &MimnParams,
) -> Result<Vec<f64>, ServingError> {
    if req.candidates.is_empty() {
        return Err(ServingError::NoCandidates(req.user_id.clone()));
    }
    let state = if history.is_empty() {
        params.hyper.init_state()
    } else {
        params.process_sequence(history)?.state
    };
    req.candidates
        .iter()
        .map(|&c| Ok(params.predict(&state, c, &req.profile)?))
        .collect()
}

/// A request read from a request file, keeping the raw candidate names.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedRequest {
    pub request_id: String,
    pub user_id: String,
    pub candidates: Vec<(String, String)>,
}

impl NamedRequest {
    /// Indexes the candidates; profile features are all zero.
    pub fn resolve(
        &self,
        vocab: &Vocabulary,
        profile_dim: usize,
    ) -> Result<ScoreRequest, ServingError> {
        ScoreRequest::new(
            &self.user_id,
            self.candidates
                .iter()
                .map(|(i, c)| vocab.key(i, c))
                .collect(),
            vec![0.0; profile_dim],
        )
    }
}

/// Reads a request file: tab-separated `request_id, user_id, item, category`
/// rows, one candidate per row. Consecutive rows sharing a request id form
/// one request. Blank lines and `#` comments are skipped.
pub fn read_requests<R: BufRead>(reader: R) -> Result<Vec<NamedRequest>, ServingError> {
    let mut out: Vec<NamedRequest> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 || f.iter().any(|s| s.is_empty()) {
            return Err(ServingError::RequestFile {
                line: i + 1,
                message: "expected request_id, user_id, item and category separated by tabs".into(),
            });
        }
        let candidate = (f[2].to_string(), f[3].to_string());
        match out.last_mut() {
            Some(last) if last.request_id == f[0] => {
                if last.user_id != f[1] {
                    return Err(ServingError::RequestFile {
                        line: i + 1,
                        message: format!("request {} names two users", f[0]),
                    });
                }
                last.candidates.push(candidate);
            }
            _ => out.push(NamedRequest {
                request_id: f[0].to_string(),
                user_id: f[1].to_string(),
                candidates: vec![candidate],
            }),
        }
    }
    Ok(out)
}

/// Writes one `request_id, user_id, item, category, p_click` row per
/// candidate.
pub fn write_scores<W: Write>(
    mut w: W,
    requests: &[NamedRequest],
    scores: &[Vec<f64>],
) -> std::io::Result<()> {
    for (req, s) in requests.iter().zip(scores) {
        for ((item, cat), p) in req.candidates.iter().zip(s) {
            writeln!(w, "{}\t{}\t{item}\t{cat}\t{p}", req.request_id, req.user_id)?;
        }
    }
    Ok(())
}
