use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{handle_request, handle_request_recompute, ScoreRequest, ServingError};
use crate::config::{ConfigDoc, ConfigError};
use crate::data::synth::zipf_stream;
use crate::data::Vocabulary;
use crate::model::{ItemKey, MimnParams};
use crate::uic::{Deployment, StateStore};

/// Bytes of one raw behavior record: item and category as `u32`, timestamp
/// as `u64`.
pub const RAW_EVENT_BYTES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ServeMode {
    /// Score from states kept current by the event stream.
    Uic,
    /// Fold the whole stored history inside every request.
    Recompute,
}

impl ServeMode {
    pub fn name(self) -> &'static str {
        match self {
            ServeMode::Uic => "uic",
            ServeMode::Recompute => "recompute",
        }
    }
}

impl FromStr for ServeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uic" => Ok(ServeMode::Uic),
            "recompute" => Ok(ServeMode::Recompute),
            _ => Err(format!("expected uic or recompute, got {s:?}")),
        }
    }
}

/// One benchmark cell. Requests and events arrive on fixed open-loop
/// schedules at their rates for `duration_secs`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadProfile {
    pub request_rate: f64,
    pub event_rate: f64,
    pub duration_secs: f64,
    pub history_len: usize,
    pub mode: ServeMode,
    pub users: usize,
    pub candidates: usize,
    pub workers: usize,
    pub seed: u64,
}

impl Default for LoadProfile {
    fn default() -> Self {
        LoadProfile {
            request_rate: 2000.0,
            event_rate: 100.0,
            duration_secs: 5.0,
            history_len: 100,
            mode: ServeMode::Uic,
            users: 100,
            candidates: 4,
            workers: 1,
            seed: 1,
        }
    }
}

const PROFILE_KEYS: [&str; 9] = [
    "request_rate",
    "event_rate",
    "duration",
    "history_len",
    "mode",
    "users",
    "candidates",
    "workers",
    "seed",
];

impl LoadProfile {
    /// Reads the keys of one config section over the defaults.
    pub fn from_doc(doc: &ConfigDoc, section: &str) -> Result<Self, ConfigError> {
        doc.check_keys(section, &PROFILE_KEYS)?;
        let d = LoadProfile::default();
        let p = LoadProfile {
            request_rate: doc
                .value(section, "request_rate")?
                .unwrap_or(d.request_rate),
            event_rate: doc.value(section, "event_rate")?.unwrap_or(d.event_rate),
            duration_secs: doc.value(section, "duration")?.unwrap_or(d.duration_secs),
            history_len: doc.value(section, "history_len")?.unwrap_or(d.history_len),
            mode: doc.value(section, "mode")?.unwrap_or(d.mode),
            users: doc.value(section, "users")?.unwrap_or(d.users),
            candidates: doc.value(section, "candidates")?.unwrap_or(d.candidates),
            workers: doc.value(section, "workers")?.unwrap_or(d.workers),
            seed: doc.value(section, "seed")?.unwrap_or(d.seed),
        };
        p.validate()?;
        Ok(p)
    }

    /// Parses a `key = value` profile file.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_doc(&ConfigDoc::parse(text)?, "")
    }

    pub fn render(&self) -> String {
        format!(
            "request_rate = {}\nevent_rate = {}\nduration = {}\nhistory_len = {}\nmode = {}\nusers = {}\ncandidates = {}\nworkers = {}\nseed = {}\n",
            self.request_rate,
            self.event_rate,
            self.duration_secs,
            self.history_len,
            self.mode.name(),
            self.users,
            self.candidates,
            self.workers,
            self.seed
        )
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.request_rate) || !positive(self.event_rate) {
            return Err(ConfigError::Invalid("rates must be positive".into()));
        }
        if !(self.duration_secs >= 0.0 && self.duration_secs.is_finite()) {
            return Err(ConfigError::Invalid("duration must be nonnegative".into()));
        }
        if self.users == 0 || self.candidates == 0 || self.workers == 0 {
            return Err(ConfigError::Invalid(
                "users, candidates and workers must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn request_count(&self) -> usize {
        (self.request_rate * self.duration_secs).round() as usize
    }

    pub fn event_count(&self) -> usize {
        (self.event_rate * self.duration_secs).round() as usize
    }
}

/// Arrival offsets in seconds, user indices and payloads of a cell, fixed
/// by the profile seed.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchPlan {
    pub requests: Vec<(f64, usize, Vec<ItemKey>)>,
    pub events: Vec<(f64, usize, ItemKey)>,
}

impl BenchPlan {
    pub fn new(profile: &LoadProfile, users: usize, n_items: usize, n_categories: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
        let key = |rng: &mut ChaCha8Rng| {
            ItemKey::new(
                rng.random_range(1..n_items.max(2) as u32),
                rng.random_range(1..n_categories.max(2) as u32),
            )
        };
        let requests = (0..profile.request_count())
            .map(|i| {
                let user = rng.random_range(0..users);
                let c = (0..profile.candidates).map(|_| key(&mut rng)).collect();
                (i as f64 / profile.request_rate, user, c)
            })
            .collect();
        let events = (0..profile.event_count())
            .map(|j| {
                let user = rng.random_range(0..users);
                (j as f64 / profile.event_rate, user, key(&mut rng))
            })
            .collect();
        BenchPlan { requests, events }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub mode: ServeMode,
    pub history_len: usize,
    pub requests: usize,
    pub events: usize,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub p99_ms: f64,
    pub mean_ms: f64,
    /// Completed requests per second of wall-clock time.
    pub qps: f64,
    pub target_qps: f64,
    /// The achieved rate fell more than 5% short of the target.
    pub saturated: bool,
    /// Fixed-size interest state of one user.
    pub state_bytes: usize,
    /// Raw behavior records of one user at `history_len`.
    pub raw_bytes: usize,
    pub wall_secs: f64,
    /// Per-request latencies, ascending.
    pub latencies_ms: Vec<f64>,
}

impl BenchReport {
    /// Summarizes per-request latencies (milliseconds, any order) observed
    /// over `wall_secs` of serving.
    #[allow(clippy::too_many_arguments)]
    pub fn from_latencies(
        mode: ServeMode,
        history_len: usize,
        mut latencies_ms: Vec<f64>,
        events: usize,
        wall_secs: f64,
        target_qps: f64,
        state_bytes: usize,
        raw_bytes: usize,
    ) -> Self {
        latencies_ms.sort_by(f64::total_cmp);
        let n = latencies_ms.len();
        let qps = if n == 0 || wall_secs <= 0.0 {
            0.0
        } else {
            n as f64 / wall_secs
        };
        let mean_ms = if n == 0 {
            0.0
        } else {
            latencies_ms.iter().sum::<f64>() / n as f64
        };
        BenchReport {
            mode,
            history_len,
            requests: n,
            events,
            p50_ms: percentile(&latencies_ms, 50.0),
            p90_ms: percentile(&latencies_ms, 90.0),
            p99_ms: percentile(&latencies_ms, 99.0),
            mean_ms,
            qps,
            target_qps,
            saturated: n > 0 && qps < 0.95 * target_qps,
            state_bytes,
            raw_bytes,
            wall_secs,
            latencies_ms,
        }
    }

    /// Merges repeated runs of one cell as if their requests had been
    /// served in a single run. `None` when `runs` is empty.
    pub fn pooled(runs: &[BenchReport]) -> Option<Self> {
        let first = runs.first()?;
        Some(Self::from_latencies(
            first.mode,
            first.history_len,
            runs.iter()
                .flat_map(|r| r.latencies_ms.iter().copied())
                .collect(),
            runs.iter().map(|r| r.events).sum(),
            runs.iter().map(|r| r.wall_secs).sum(),
            first.target_qps,
            first.state_bytes,
            first.raw_bytes,
        ))
    }

    /// Bytes each user keeps in service under this mode.
    pub fn bytes_per_user(&self) -> usize {
        match self.mode {
            ServeMode::Uic => self.state_bytes,
            ServeMode::Recompute => self.raw_bytes,
        }
    }
}

/// Nearest-rank percentile of ascending `sorted`; 0 when empty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Synthetic per-user histories with Zipf(1.1) item popularity over
/// `1..=n_items`.
pub fn bench_histories(
    users: usize,
    len: usize,
    n_items: usize,
    n_categories: usize,
    seed: u64,
) -> Vec<Vec<ItemKey>> {
    (0..users)
        .map(|u| zipf_stream(len, n_items, n_categories, 1.1, seed.wrapping_add(u as u64)))
        .collect()
}

fn sleep_until(start: Instant, offset: f64) {
    let target = start + Duration::from_secs_f64(offset);
    let now = Instant::now();
    if target > now {
        thread::sleep(target - now);
    }
}

enum Backend {
    Uic(StateStore),
    Recompute(Vec<RwLock<Vec<ItemKey>>>),
}

/// Runs one cell: the event stream and `workers` request drivers share a
/// clock. Latency is wall-clock time around each scoring call.
pub fn run_bench(
    profile: &LoadProfile,
    params: &MimnParams,
    histories: &[Vec<ItemKey>],
) -> Result<BenchReport, ServingError> {
    profile.validate()?;
    if histories.is_empty() {
        return Err(ServingError::Dataset("no users".into()));
    }
    if let Some(short) = histories.iter().position(|h| h.len() < profile.history_len) {
        return Err(ServingError::Dataset(format!(
            "user {short} has {} events, fewer than history_len {}",
            histories[short].len(),
            profile.history_len
        )));
    }
    let recent: Vec<Vec<ItemKey>> = histories
        .iter()
        .map(|h| h[h.len() - profile.history_len..].to_vec())
        .collect();
    let user_ids: Vec<String> = (0..recent.len()).map(|u| format!("u{u}")).collect();
    let plan = BenchPlan::new(
        profile,
        recent.len(),
        params.n_items(),
        params.n_categories(),
    );
    let state_bytes = params.hyper.init_state().payload_bytes();
    let raw_bytes = profile.history_len * RAW_EVENT_BYTES;

    let backend = match profile.mode {
        ServeMode::Uic => {
            let store = StateStore::new(Deployment::new(params.clone(), Vocabulary::new(), 1));
            let keyed: Vec<(String, Vec<ItemKey>)> = user_ids.iter().cloned().zip(recent).collect();
            store.warm_up_keyed(&keyed);
            Backend::Uic(store)
        }
        ServeMode::Recompute => Backend::Recompute(recent.into_iter().map(RwLock::new).collect()),
    };

    let score = |req: &ScoreRequest, user: usize| match &backend {
        Backend::Uic(store) => handle_request(req, store, params),
        Backend::Recompute(logs) => {
            let history = logs[user].read().expect("log").clone();
            handle_request_recompute(req, &history, params)
        }
    };
    let request = |user: usize, candidates: &[ItemKey]| ScoreRequest {
        user_id: user_ids[user].clone(),
        candidates: candidates.to_vec(),
        profile: vec![0.0; params.hyper.profile_dim],
    };
    // Untimed pass so every user's data is cache-warm before the clock starts.
    if let Some((_, _, candidates)) = plan.requests.first() {
        for user in 0..user_ids.len() {
            score(&request(user, candidates), user)?;
        }
    }

    let next = AtomicUsize::new(0);
    let sink: Mutex<Vec<f64>> = Mutex::new(Vec::with_capacity(plan.requests.len()));
    let failure: Mutex<Option<ServingError>> = Mutex::new(None);
    let start = Instant::now();
    let last_done = Mutex::new(start);
    thread::scope(|s| {
        s.spawn(|| {
            for (t, user, key) in &plan.events {
                sleep_until(start, *t);
                match &backend {
                    Backend::Uic(store) => {
                        if let Err(e) = store.apply_key(&user_ids[*user], *key) {
                            failure.lock().expect("sink").get_or_insert(e.into());
                            return;
                        }
                    }
                    Backend::Recompute(logs) => logs[*user].write().expect("log").push(*key),
                }
            }
        });
        for _ in 0..profile.workers {
            s.spawn(|| {
                let mut local = Vec::new();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some((t, user, candidates)) = plan.requests.get(i) else {
                        break;
                    };
                    sleep_until(start, *t);
                    let req = request(*user, candidates);
                    let t0 = Instant::now();
                    let result = score(&req, *user);
                    let elapsed = t0.elapsed();
                    if let Err(e) = result {
                        failure.lock().expect("sink").get_or_insert(e);
                        break;
                    }
                    local.push(elapsed.as_secs_f64() * 1e3);
                }
                let done = Instant::now();
                let mut last = last_done.lock().expect("sink");
                if done > *last {
                    *last = done;
                }
                sink.lock().expect("sink").extend(local);
            });
        }
    });
    if let Some(e) = failure.into_inner().expect("sink") {
        return Err(e);
    }
    let lat = sink.into_inner().expect("sink");
    let wall = last_done
        .into_inner()
        .expect("sink")
        .duration_since(start)
        .as_secs_f64();
    Ok(BenchReport::from_latencies(
        profile.mode,
        profile.history_len,
        lat,
        plan.events.len(),
        wall,
        profile.request_rate,
        state_bytes,
        raw_bytes,
    ))
}

/// Text table of benchmark cells.
pub fn format_table(reports: &[BenchReport]) -> String {
    let mut out = format!(
        "{:<10} {:>8} {:>8} {:>9} {:>9} {:>9} {:>9} {:>9} {:>12} {}\n",
        "mode",
        "history",
        "requests",
        "p50_ms",
        "p90_ms",
        "p99_ms",
        "mean_ms",
        "qps",
        "bytes/user",
        "note"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<10} {:>8} {:>8} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.1} {:>12} {}",
            r.mode.name(),
            r.history_len,
            r.requests,
            r.p50_ms,
            r.p90_ms,
            r.p99_ms,
            r.mean_ms,
            r.qps,
            r.bytes_per_user(),
            if r.saturated { "saturated" } else { "" }
        );
    }
    out
}

/// CSV with columns `mode, history_len, p50, p90, p99, qps, bytes_per_user`.
pub fn write_csv<W: Write>(w: W, reports: &[BenchReport]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record([
        "mode",
        "history_len",
        "p50",
        "p90",
        "p99",
        "qps",
        "bytes_per_user",
    ])?;
    for r in reports {
        w.write_record([
            r.mode.name().to_string(),
            r.history_len.to_string(),
            r.p50_ms.to_string(),
            r.p90_ms.to_string(),
            r.p99_ms.to_string(),
            r.qps.to_string(),
            r.bytes_per_user().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StorageRow {
    pub history_len: usize,
    pub state_bytes: usize,
    pub raw_bytes: usize,
}

/// Per-user bytes of the folded state against the raw history it replaces,
/// measured on synthetic histories of each length.
pub fn storage_report(
    params: &MimnParams,
    lengths: &[usize],
) -> Result<Vec<StorageRow>, ServingError> {
    lengths
        .iter()
        .map(|&len| {
            let state = if len == 0 {
                params.hyper.init_state()
            } else {
                let n_items = params.n_items() - 1;
                let n_cats = params.n_categories() - 1;
                let seq = zipf_stream(len, n_items.max(1), n_cats.max(1), 1.1, len as u64);
                params.process_sequence(&seq)?.state
            };
            Ok(StorageRow {
                history_len: len,
                state_bytes: state.payload_bytes(),
                raw_bytes: len * RAW_EVENT_BYTES,
            })
        })
        .collect()
}

/// Shortest history whose raw records take more bytes than the state.
pub fn crossover_length(state_bytes: usize) -> usize {
    state_bytes / RAW_EVENT_BYTES + 1
}
