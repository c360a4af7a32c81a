use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{BehaviorEvent, DataError, Sample, Vocabulary};

/// Where and how to read raw behavior logs.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    /// Amazon review dump (JSON lines with `reviewerID`, `asin`,
    /// `unixReviewTime`) plus product metadata (JSON lines with `asin` and
    /// `categories`); the category is the last entry of the first category
    /// path.
    Amazon { reviews: PathBuf, meta: PathBuf },
    /// Taobao user-behavior CSV: `user_id,item_id,category_id,behavior_type,timestamp`.
    /// Only `pv` rows are kept.
    Taobao { path: PathBuf },
    /// Plain behavior-event CSV (`user_id,item_id,category_id,timestamp`).
    Events { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IngestOptions {
    /// Users with fewer events are dropped.
    pub min_len: usize,
    /// Longest history kept; older behaviors are truncated.
    pub max_len: usize,
}

impl IngestOptions {
    pub const AMAZON: IngestOptions = IngestOptions {
        min_len: 20,
        max_len: 100,
    };
    pub const TAOBAO: IngestOptions = IngestOptions {
        min_len: 2,
        max_len: 200,
    };
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_skipped: usize,
    pub users_seen: usize,
    pub users_dropped: usize,
}

#[derive(Clone, Debug)]
pub struct Ingested {
    pub samples: Vec<Sample>,
    pub vocab: Vocabulary,
    pub report: IngestReport,
}

#[derive(Deserialize)]
struct AmazonReview {
    #[serde(rename = "reviewerID")]
    reviewer: String,
    asin: String,
    #[serde(rename = "unixReviewTime")]
    time: u64,
}

#[derive(Deserialize)]
struct AmazonMeta {
    asin: String,
    #[serde(default)]
    categories: Vec<Vec<String>>,
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| DataError::io(path, e))
}

fn read_amazon(reviews: &Path, meta: &Path) -> Result<(Vec<BehaviorEvent>, usize), DataError> {
    let mut category: HashMap<String, String> = HashMap::new();
    let mut skipped = 0;
    for line in open(meta)?.lines() {
        let line = line.map_err(|e| DataError::io(meta, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<AmazonMeta>(&line) {
            Ok(m) => {
                if let Some(cat) = m.categories.first().and_then(|p| p.last()) {
                    category.insert(m.asin, cat.clone());
                }
            }
            Err(_) => skipped += 1,
        }
    }
    let mut events = Vec::new();
    for line in open(reviews)?.lines() {
        let line = line.map_err(|e| DataError::io(reviews, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(r) = serde_json::from_str::<AmazonReview>(&line) else {
            skipped += 1;
            continue;
        };
        match category.get(&r.asin) {
            Some(cat) => {
                let ev = BehaviorEvent::new(&r.reviewer, &r.asin, cat, r.time);
                if ev.is_valid() {
                    events.push(ev);
                } else {
                    skipped += 1;
                }
            }
            None => skipped += 1,
        }
    }
    Ok((events, skipped))
}

fn read_taobao(path: &Path) -> Result<(Vec<BehaviorEvent>, usize), DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(open(path)?);
    let mut events = Vec::new();
    let mut skipped = 0;
    for (i, record) in rdr.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(e) if e.is_io_error() => return Err(e.into()),
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        if i == 0 && record.get(0) == Some("user_id") {
            continue;
        }
        if record.len() != 5 {
            skipped += 1;
            continue;
        }
        let Ok(ts) = record[4].trim().parse::<u64>() else {
            skipped += 1;
            continue;
        };
        if &record[3] != "pv" {
            continue;
        }
        let ev = BehaviorEvent::new(&record[0], &record[1], &record[2], ts);
        if ev.is_valid() {
            events.push(ev);
        } else {
            skipped += 1;
        }
    }
    Ok((events, skipped))
}

/// Reads a behavior log and turns it into positive samples.
pub fn ingest(source: &Source, opts: IngestOptions) -> Result<Ingested, DataError> {
    let (events, skipped) = match source {
        Source::Amazon { reviews, meta } => read_amazon(reviews, meta)?,
        Source::Taobao { path } => read_taobao(path)?,
        Source::Events { path } => super::event::read_events_file(path)?,
    };
    let mut out = build_samples(&events, opts)?;
    out.report.rows_skipped += skipped;
    out.report.rows_read += skipped;
    if out.samples.is_empty() {
        return Err(DataError::Empty {
            skipped: out.report.rows_skipped,
            dropped: out.report.users_dropped,
        });
    }
    Ok(out)
}

/// Groups events per user, orders them by time (ties keep input order), and
/// emits one positive sample per retained user: the last behavior is the
/// target, the most recent `max_len` before it form the history.
pub fn build_samples(events: &[BehaviorEvent], opts: IngestOptions) -> Result<Ingested, DataError> {
    if opts.max_len == 0 || opts.min_len < 2 {
        return Err(DataError::InvalidOptions(format!(
            "need max_len >= 1 and min_len >= 2, got {opts:?}"
        )));
    }
    let mut vocab = Vocabulary::new();
    let mut user_order: Vec<&str> = Vec::new();
    let mut per_user: HashMap<&str, Vec<(u64, super::super::model::ItemKey)>> = HashMap::new();
    for e in events {
        let key = vocab.insert(&e.item_id, &e.category_id);
        let entry = per_user.entry(e.user_id.as_str()).or_insert_with(|| {
            user_order.push(e.user_id.as_str());
            Vec::new()
        });
        entry.push((e.timestamp, key));
    }

    let mut report = IngestReport {
        rows_read: events.len(),
        users_seen: user_order.len(),
        ..IngestReport::default()
    };
    let mut samples = Vec::new();
    for user in user_order {
        let mut seq = per_user.remove(user).expect("user recorded");
        if seq.len() < opts.min_len {
            report.users_dropped += 1;
            continue;
        }
        seq.sort_by_key(|&(t, _)| t);
        let (_, target) = seq.pop().expect("nonempty");
        // A repeat of the target directly before it carries no signal and
        // would make the target the last history element.
        while seq.last().is_some_and(|&(_, k)| k.item == target.item) {
            seq.pop();
        }
        if seq.is_empty() {
            report.users_dropped += 1;
            continue;
        }
        let start = seq.len().saturating_sub(opts.max_len);
        samples.push(Sample {
            user: user.to_string(),
            history: seq[start..].iter().map(|&(_, k)| k).collect(),
            target,
            label: 1,
        });
    }
    Ok(Ingested {
        samples,
        vocab,
        report,
    })
}
