//! Synthetic behavior logs for tests, benchmarks and desk-scale experiments.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde_json::json;

use super::{BehaviorEvent, DataError, Sample, Vocabulary};
use crate::model::ItemKey;

/// Users whose interest wanders over a ring of categories. Each user keeps a
/// current category, moves to a nearby one at segment boundaries and
/// occasionally clicks something unrelated. Items are popular per category
/// following a Zipf law.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub min_events: usize,
    pub max_events: usize,
    /// Mean number of consecutive events spent on one category.
    pub segment_len: f64,
    /// Probability that an event ignores the current interest.
    pub noise: f64,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            users: 5000,
            items: 4000,
            categories: 20,
            min_events: 21,
            max_events: 60,
            segment_len: 8.0,
            noise: 0.1,
            zipf_exponent: 1.1,
            seed: 1,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), DataError> {
        let ok = self.users > 0
            && self.categories > 0
            && self.items >= self.categories
            && self.min_events >= 1
            && self.min_events <= self.max_events
            && self.segment_len >= 1.0
            && (0.0..=1.0).contains(&self.noise)
            && self.zipf_exponent > 0.0;
        if ok {
            Ok(())
        } else {
            Err(DataError::InvalidOptions(format!(
                "bad synthetic config {self:?}"
            )))
        }
    }
}

struct Catalog {
    /// Item indices (0-based) belonging to each category.
    by_category: Vec<Vec<usize>>,
    zipf: Vec<Zipf<f64>>,
}

impl Catalog {
    fn new(items: usize, categories: usize, s: f64) -> Self {
        let mut by_category = vec![Vec::new(); categories];
        for i in 0..items {
            by_category[i % categories].push(i);
        }
        let zipf = by_category
            .iter()
            .map(|v| Zipf::new(v.len() as f64, s).expect("valid zipf"))
            .collect();
        Catalog { by_category, zipf }
    }

    fn draw(&self, rng: &mut impl Rng, category: usize) -> usize {
        let rank = self.zipf[category].sample(rng) as usize;
        self.by_category[category][rank - 1]
    }
}

fn item_name(i: usize) -> String {
    format!("B{i:07}")
}

fn category_name(c: usize) -> String {
    format!("Genre {c}")
}

pub fn generate_events(cfg: &SynthConfig) -> Result<Vec<BehaviorEvent>, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let catalog = Catalog::new(cfg.items, cfg.categories, cfg.zipf_exponent);
    let switch = 1.0 / cfg.segment_len;
    let mut events = Vec::new();
    for u in 0..cfg.users {
        let user = format!("U{u:06}");
        let len = rng.random_range(cfg.min_events..=cfg.max_events);
        let mut current = rng.random_range(0..cfg.categories);
        let mut t: u64 = 1_200_000_000 + rng.random_range(0..10_000_000);
        for _ in 0..len {
            if rng.random::<f64>() < switch {
                let step = rng.random_range(1..=2) as usize;
                current = if rng.random::<bool>() {
                    (current + step) % cfg.categories
                } else {
                    (current + cfg.categories - step % cfg.categories) % cfg.categories
                };
            }
            let category = if rng.random::<f64>() < cfg.noise {
                rng.random_range(0..cfg.categories)
            } else {
                current
            };
            let item = catalog.draw(&mut rng, category);
            events.push(BehaviorEvent::new(
                &user,
                &item_name(item),
                &category_name(category),
                t,
            ));
            // Same-second events happen; ordering then falls back to file order.
            t += rng.random_range(0..86_400);
        }
    }
    Ok(events)
}

/// Writes events as an Amazon-style review dump and product metadata file.
pub fn write_amazon(
    events: &[BehaviorEvent],
    reviews: &Path,
    meta: &Path,
) -> Result<(), DataError> {
    let create = |p: &Path| {
        File::create(p)
            .map(BufWriter::new)
            .map_err(|e| DataError::io(p, e))
    };
    let mut r = create(reviews)?;
    let mut seen = std::collections::BTreeMap::new();
    for e in events {
        let row = json!({
            "reviewerID": e.user_id,
            "asin": e.item_id,
            "overall": 5.0,
            "unixReviewTime": e.timestamp,
        });
        writeln!(r, "{row}").map_err(|e| DataError::io(reviews, e))?;
        seen.entry(e.item_id.clone())
            .or_insert_with(|| e.category_id.clone());
    }
    r.flush().map_err(|e| DataError::io(reviews, e))?;
    let mut m = create(meta)?;
    for (asin, cat) in seen {
        let row = json!({ "asin": asin, "categories": [["Books", cat]] });
        writeln!(m, "{row}").map_err(|e| DataError::io(meta, e))?;
    }
    m.flush().map_err(|e| DataError::io(meta, e))
}

/// Writes events as a Taobao-style behavior CSV (all rows are page views).
pub fn write_taobao(events: &[BehaviorEvent], path: &Path) -> Result<(), DataError> {
    let f = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    w.write_record([
        "user_id",
        "item_id",
        "category_id",
        "behavior_type",
        "timestamp",
    ])?;
    for e in events {
        w.write_record([
            e.user_id.as_str(),
            &e.item_id,
            &e.category_id,
            "pv",
            &e.timestamp.to_string(),
        ])?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

/// A stream of item keys whose items follow Zipf(`exponent`) popularity over
/// `1..=n_items`; item `i` belongs to category `1 + (i - 1) % n_categories`.
pub fn zipf_stream(
    len: usize,
    n_items: usize,
    n_categories: usize,
    exponent: f64,
    seed: u64,
) -> Vec<ItemKey> {
    assert!(n_items > 0 && n_categories > 0, "empty vocabulary");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = Zipf::new(n_items as f64, exponent).expect("valid zipf");
    (0..len)
        .map(|_| {
            let item = zipf.sample(&mut rng) as u32;
            ItemKey::new(item, 1 + (item - 1) % n_categories as u32)
        })
        .collect()
}

/// A uniformly random sequence over indices `1..n_items` and `1..n_categories`.
pub fn uniform_sequence(
    len: usize,
    n_items: usize,
    n_categories: usize,
    seed: u64,
) -> Vec<ItemKey> {
    assert!(
        n_items > 1 && n_categories > 1,
        "need at least one non-reserved index"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            ItemKey::new(
                rng.random_range(1..n_items as u32),
                rng.random_range(1..n_categories as u32),
            )
        })
        .collect()
}

/// Labeled samples for a task with a known rule: the label is 1 exactly when
/// the history contains an item of the marker category (the last one).
/// Item `i` belongs to category `1 + (i - 1) % (n_categories - 1)`, so the
/// marker category has no items of its own; marked histories get items
/// re-tagged with it.
#[derive(Clone, Debug)]
pub struct MarkerTask {
    pub samples: Vec<Sample>,
    pub marker: u32,
    /// Names `i<k>` for items and `c<k>` for categories, `marker` last.
    pub vocab: Vocabulary,
}

pub fn marker_task(
    n: usize,
    len: usize,
    n_items: usize,
    n_categories: usize,
    seed: u64,
) -> MarkerTask {
    assert!(n_items > 1 && n_categories > 2 && len > 0, "task too small");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let marker = n_categories as u32 - 1;
    let plain = n_categories as u32 - 2;
    let key = |item: u32| ItemKey::new(item, 1 + (item - 1) % plain);
    let samples = (0..n)
        .map(|u| {
            let mut history: Vec<ItemKey> = (0..len)
                .map(|_| key(rng.random_range(1..n_items as u32)))
                .collect();
            let label = u8::from(rng.random::<bool>());
            if label == 1 {
                let at = rng.random_range(0..len);
                history[at].category = marker;
            }
            Sample {
                user: format!("m{u}"),
                history,
                target: key(rng.random_range(1..n_items as u32)),
                label,
            }
        })
        .collect();
    let categories = (1..=plain)
        .map(|c| format!("c{c}"))
        .chain(std::iter::once("marker".to_string()))
        .collect();
    let items = (1..n_items as u32)
        .map(|i| (format!("i{i}"), key(i).category))
        .collect();
    let vocab = Vocabulary::from_tables(categories, items).expect("distinct names");
    MarkerTask {
        samples,
        marker,
        vocab,
    }
}
