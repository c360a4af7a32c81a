//! User interest center: per-user interest states kept current by behavior
//! events, read by the scoring path, with versioned parameters, snapshots
//! and rollback.

mod snapshot;

pub use snapshot::{Snapshot, SnapshotError, SnapshotMeta, SNAPSHOT_RETENTION};

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Mutex, MutexGuard, RwLock, RwLockReadGuard, RwLockWriteGuard};

use rayon::prelude::*;

use crate::data::{BehaviorEvent, Vocabulary};
use crate::model::{ItemKey, MimnParams, ModelError, UserInterestState};

/// Parameters in service, with the vocabulary that maps raw ids to indices.
#[derive(Debug)]
pub struct Deployment {
    pub params: MimnParams,
    pub vocab: Vocabulary,
    pub version: u64,
    cold: UserInterestState,
}

impl Deployment {
    pub fn new(params: MimnParams, vocab: Vocabulary, version: u64) -> Self {
        let mut cold = params.hyper.init_state();
        cold.version = version;
        Deployment {
            params,
            vocab,
            version,
            cold,
        }
    }

    /// State of a user with no behaviors under these parameters.
    pub fn cold_state(&self) -> &UserInterestState {
        &self.cold
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("state of user {user:?} quarantined: {reason}")]
    Quarantined { user: String, reason: String },
    #[error("parameter version {offered} is not newer than {current}")]
    StaleVersion { offered: u64, current: u64 },
    #[error("invalid event: {0:?}")]
    InvalidEvent(BehaviorEvent),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("no snapshot with id {0}")]
    UnknownSnapshot(u64),
}

/// A state pulled out of service because it no longer fits the active
/// hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct QuarantinedState {
    pub user: String,
    pub reason: String,
    pub state: UserInterestState,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WarmUpReport {
    pub initialized: usize,
    pub failed: usize,
}

type Slot = Arc<Mutex<UserInterestState>>;

/// Thread-safe map from user id to interest state.
///
/// Writers for one user serialize on that user's mutex; different users
/// update in parallel. Snapshots and rollbacks take the gate exclusively, so
/// they observe or replace a point-in-time view.
pub struct StateStore {
    states: RwLock<HashMap<String, Slot>>,
    deployed: RwLock<Arc<Deployment>>,
    gate: RwLock<()>,
    catalog: Mutex<VecDeque<Snapshot>>,
    next_snapshot: Mutex<u64>,
    retention: usize,
    quarantine: Mutex<Vec<QuarantinedState>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn read<T>(m: &RwLock<T>) -> RwLockReadGuard<'_, T> {
    m.read().unwrap_or_else(|e| e.into_inner())
}

fn write<T>(m: &RwLock<T>) -> RwLockWriteGuard<'_, T> {
    m.write().unwrap_or_else(|e| e.into_inner())
}

impl StateStore {
    pub fn new(deployment: Deployment) -> Self {
        Self::with_retention(deployment, SNAPSHOT_RETENTION)
    }

    pub fn with_retention(deployment: Deployment, retention: usize) -> Self {
        StateStore {
            states: RwLock::new(HashMap::new()),
            deployed: RwLock::new(Arc::new(deployment)),
            gate: RwLock::new(()),
            catalog: Mutex::new(VecDeque::new()),
            next_snapshot: Mutex::new(1),
            retention: retention.max(1),
            quarantine: Mutex::new(Vec::new()),
        }
    }

    /// The parameters currently in service.
    pub fn deployment(&self) -> Arc<Deployment> {
        Arc::clone(&read(&self.deployed))
    }

    pub fn len(&self) -> usize {
        read(&self.states).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn users(&self) -> Vec<String> {
        let mut u: Vec<String> = read(&self.states).keys().cloned().collect();
        u.sort();
        u
    }

    fn slot(&self, user: &str) -> Option<Slot> {
        read(&self.states).get(user).cloned()
    }

    fn slot_or_insert(&self, user: &str, dep: &Deployment) -> Slot {
        if let Some(s) = self.slot(user) {
            return s;
        }
        let mut map = write(&self.states);
        Arc::clone(
            map.entry(user.to_string())
                .or_insert_with(|| Arc::new(Mutex::new(dep.cold.clone()))),
        )
    }

    fn quarantine_user(
        &self,
        user: &str,
        state: UserInterestState,
        err: &ModelError,
    ) -> StoreError {
        write(&self.states).remove(user);
        let reason = err.to_string();
        lock(&self.quarantine).push(QuarantinedState {
            user: user.to_string(),
            reason: reason.clone(),
            state,
        });
        StoreError::Quarantined {
            user: user.to_string(),
            reason,
        }
    }

    /// Folds one behavior into the user's state, creating a cold-start
    /// state for unseen users.
    pub fn apply_event(&self, event: &BehaviorEvent) -> Result<UserInterestState, StoreError> {
        if !event.is_valid() {
            return Err(StoreError::InvalidEvent(event.clone()));
        }
        let dep = self.deployment();
        let key = dep.vocab.key(&event.item_id, &event.category_id);
        self.apply_with(&dep, &event.user_id, key)
    }

    /// As [`apply_event`](Self::apply_event) for an already indexed behavior.
    pub fn apply_key(&self, user: &str, key: ItemKey) -> Result<UserInterestState, StoreError> {
        let dep = self.deployment();
        self.apply_with(&dep, user, key)
    }

    fn apply_with(
        &self,
        dep: &Deployment,
        user: &str,
        key: ItemKey,
    ) -> Result<UserInterestState, StoreError> {
        let _gate = read(&self.gate);
        let slot = self.slot_or_insert(user, dep);
        let mut st = lock(&slot);
        if let Err(e) = st.check_shape(&dep.params.hyper) {
            return Err(self.quarantine_user(user, st.clone(), &e));
        }
        let mut next = dep.params.resume(&st, &[key])?;
        next.version = dep.version;
        *st = next;
        Ok(st.clone())
    }

    /// Stored state, or the cold-start state for unknown users. A stored
    /// state that no longer matches the active shapes is quarantined and the
    /// cold-start state returned.
    pub fn get_state(&self, user: &str) -> UserInterestState {
        let dep = self.deployment();
        let Some(slot) = self.slot(user) else {
            return dep.cold.clone();
        };
        let st = lock(&slot).clone();
        match st.check_shape(&dep.params.hyper) {
            Ok(()) => st,
            Err(e) => {
                let _gate = read(&self.gate);
                self.quarantine_user(user, st, &e);
                dep.cold.clone()
            }
        }
    }

    pub fn contains(&self, user: &str) -> bool {
        read(&self.states).contains_key(user)
    }

    /// Initializes states from historical logs: per user, events are ordered
    /// by timestamp (ties keep log order) and folded from cold start,
    /// overwriting any existing state.
    pub fn warm_up(&self, logs: &[BehaviorEvent]) -> WarmUpReport {
        let dep = self.deployment();
        let mut per_user: BTreeMap<&str, Vec<(u64, ItemKey)>> = BTreeMap::new();
        let mut report = WarmUpReport::default();
        for e in logs {
            if e.is_valid() {
                per_user
                    .entry(e.user_id.as_str())
                    .or_default()
                    .push((e.timestamp, dep.vocab.key(&e.item_id, &e.category_id)));
            } else {
                report.failed += 1;
            }
        }
        let histories: Vec<(String, Vec<ItemKey>)> = per_user
            .into_iter()
            .map(|(u, mut evs)| {
                evs.sort_by_key(|&(t, _)| t);
                (u.to_string(), evs.into_iter().map(|(_, k)| k).collect())
            })
            .collect();
        let r = self.warm_up_keyed(&histories);
        report.initialized += r.initialized;
        report.failed += r.failed;
        report
    }

    /// Warm-up from indexed, time-ordered histories.
    pub fn warm_up_keyed(&self, histories: &[(String, Vec<ItemKey>)]) -> WarmUpReport {
        let dep = self.deployment();
        let results: Vec<Option<UserInterestState>> = histories
            .par_iter()
            .map(|(_, seq)| {
                if seq.is_empty() {
                    return None;
                }
                dep.params.resume(&dep.cold, seq).ok().map(|mut s| {
                    s.version = dep.version;
                    s
                })
            })
            .collect();
        let _gate = read(&self.gate);
        let mut map = write(&self.states);
        let mut report = WarmUpReport::default();
        for ((user, _), st) in histories.iter().zip(results) {
            match st {
                Some(s) => {
                    map.insert(user.clone(), Arc::new(Mutex::new(s)));
                    report.initialized += 1;
                }
                None => report.failed += 1,
            }
        }
        report
    }

    /// Swaps in new parameters for all subsequent operations. Updates already
    /// running finish under the parameters they started with.
    pub fn deploy_params(
        &self,
        params: MimnParams,
        vocab: Vocabulary,
        version: u64,
    ) -> Result<(), StoreError> {
        let mut d = write(&self.deployed);
        if version <= d.version {
            return Err(StoreError::StaleVersion {
                offered: version,
                current: d.version,
            });
        }
        *d = Arc::new(Deployment::new(params, vocab, version));
        Ok(())
    }

    pub fn quarantined(&self) -> Vec<QuarantinedState> {
        lock(&self.quarantine).clone()
    }

    /// All states, sorted by user id, under the exclusive gate.
    fn consistent_view(&self) -> (RwLockWriteGuard<'_, ()>, Vec<(String, UserInterestState)>) {
        let gate = write(&self.gate);
        let map = read(&self.states);
        let mut states: Vec<(String, UserInterestState)> = map
            .iter()
            .map(|(u, s)| (u.clone(), lock(s).clone()))
            .collect();
        drop(map);
        states.sort_by(|a, b| a.0.cmp(&b.0));
        (gate, states)
    }

    /// Serializes every state into a new catalog entry, evicting the oldest
    /// beyond the retention limit.
    pub fn snapshot(&self) -> Result<SnapshotMeta, StoreError> {
        let dep = self.deployment();
        let (gate, states) = self.consistent_view();
        drop(gate);
        let id = {
            let mut n = lock(&self.next_snapshot);
            let id = *n;
            *n += 1;
            id
        };
        let snap = Snapshot::encode(
            id,
            snapshot::now_unix(),
            dep.version,
            &dep.params.hyper,
            &states,
        )?;
        let meta = snap.meta.clone();
        let mut cat = lock(&self.catalog);
        cat.push_back(snap);
        while cat.len() > self.retention {
            cat.pop_front();
        }
        Ok(meta)
    }

    /// Catalog entries, oldest first.
    pub fn snapshots(&self) -> Vec<SnapshotMeta> {
        lock(&self.catalog).iter().map(|s| s.meta.clone()).collect()
    }

    pub fn snapshot_by_id(&self, id: u64) -> Option<Snapshot> {
        lock(&self.catalog)
            .iter()
            .find(|s| s.meta.id == id)
            .cloned()
    }

    /// Replaces all states with those of catalog entry `id`. The snapshot is
    /// fully decoded and checked first; on any error the store is untouched.
    pub fn rollback(&self, id: u64) -> Result<(), StoreError> {
        let snap = self
            .snapshot_by_id(id)
            .ok_or(StoreError::UnknownSnapshot(id))?;
        self.restore(&snap)
    }

    /// Replaces all states with those of `snap` (which may come from a file).
    pub fn restore(&self, snap: &Snapshot) -> Result<(), StoreError> {
        let dep = self.deployment();
        let decoded = snap.decode()?;
        for (_, st) in &decoded.states {
            st.check_shape(&dep.params.hyper)?;
        }
        let map: HashMap<String, Slot> = decoded
            .states
            .into_iter()
            .map(|(u, s)| (u, Arc::new(Mutex::new(s))))
            .collect();
        let _gate = write(&self.gate);
        *write(&self.states) = map;
        Ok(())
    }

    /// Adds an externally produced snapshot (e.g. read from disk) to the
    /// catalog, subject to retention.
    pub fn import_snapshot(&self, snap: Snapshot) -> Result<SnapshotMeta, StoreError> {
        snap.decode()?;
        let meta = snap.meta.clone();
        {
            let mut n = lock(&self.next_snapshot);
            *n = (*n).max(meta.id + 1);
        }
        let mut cat = lock(&self.catalog);
        cat.push_back(snap);
        while cat.len() > self.retention {
            cat.pop_front();
        }
        Ok(meta)
    }
}

#[cfg(test)]
mod tests;
