use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use mimn_core::data::synth::{generate_events, marker_task, write_amazon, SynthConfig};
use mimn_core::data::{
    ingest as ingest_source, negative_sample, read_events_file, read_sample_file, split,
    write_sample_file, BehaviorEvent, IngestOptions, Sample, Source, SplitPolicy, Vocabulary,
};
use mimn_core::grad::prim::inject_tanh_sign_bug;
use mimn_core::model::MimnParams;
use mimn_core::serving::{
    bench_histories, crossover_length, handle_request, out_sync_experiment, read_requests,
    run_bench, storage_report, write_csv, write_scores, BenchReport, LoadProfile, ServeMode,
};
use mimn_core::train::{
    evaluate as auc_of, fit, gradcheck_mimn, gradcheck_quadratic, load_checkpoint, run_ablation,
    save_checkpoint, slot_grid, standard_grid, train as train_model, AnyModel, Checkpoint,
    GradcheckSetup,
};
use mimn_core::uic::{Deployment, Snapshot, StateStore, SNAPSHOT_RETENTION};

use crate::settings::{List, Settings};
use crate::CliError;

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Resolves the output directory, creates it and writes the config echo.
/// Called after every setting a command reads has been resolved.
fn finish_config(s: &Settings, out: &Path) -> Result<(), CliError> {
    s.echo(out)
}

fn read_samples(path: &Path) -> Result<(Vec<Sample>, Vocabulary), CliError> {
    read_sample_file(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn read_events(path: &Path) -> Result<Vec<BehaviorEvent>, CliError> {
    let (mut events, skipped) = read_events_file(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    if skipped > 0 {
        eprintln!("{}: skipped {skipped} malformed rows", path.display());
    }
    events.sort_by_key(|e| e.timestamp);
    Ok(events)
}

fn mimn_checkpoint(path: &Path) -> Result<(MimnParams, Vocabulary, u64), CliError> {
    let ckpt =
        load_checkpoint(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    match ckpt.model {
        AnyModel::Mimn(p) => Ok((p, ckpt.vocab, ckpt.version)),
        AnyModel::EmbeddingMlp(_) => Err(CliError::Usage(format!(
            "{}: serving needs a memory-network checkpoint",
            path.display()
        ))),
    }
}

pub fn ingest(mut s: Settings) -> Result<(), CliError> {
    let out = s.out()?;
    let seed = s.seed()?;
    let kind: String = s.get("data", "source", "amazon".into())?;
    if kind == "marker" {
        return ingest_marker(s, &out, seed);
    }
    let (source, defaults) = match kind.as_str() {
        "amazon" => (
            Source::Amazon {
                reviews: s.input("data", "reviews")?,
                meta: s.input("data", "meta")?,
            },
            IngestOptions::AMAZON,
        ),
        "taobao" => (
            Source::Taobao {
                path: s.input("data", "path")?,
            },
            IngestOptions::TAOBAO,
        ),
        "events" => (
            Source::Events {
                path: s.input("data", "path")?,
            },
            IngestOptions::TAOBAO,
        ),
        "synthetic" => {
            let d = SynthConfig::default();
            let cfg = SynthConfig {
                users: s.get("synth", "users", d.users)?,
                items: s.get("synth", "items", d.items)?,
                categories: s.get("synth", "categories", d.categories)?,
                min_events: s.get("synth", "min_events", d.min_events)?,
                max_events: s.get("synth", "max_events", d.max_events)?,
                segment_len: s.get("synth", "segment_len", d.segment_len)?,
                noise: s.get("synth", "noise", d.noise)?,
                zipf_exponent: s.get("synth", "zipf", d.zipf_exponent)?,
                seed: s.get("synth", "seed", d.seed)?,
            };
            let events = generate_events(&cfg).map_err(|e| CliError::Usage(e.to_string()))?;
            let raw = out.join("raw");
            fs::create_dir_all(&raw).map_err(|e| CliError::io(&raw, e))?;
            let (reviews, meta) = (raw.join("reviews.json"), raw.join("meta.json"));
            write_amazon(&events, &reviews, &meta).map_err(CliError::runtime)?;
            (Source::Amazon { reviews, meta }, IngestOptions::AMAZON)
        }
        other => {
            return Err(CliError::Usage(format!(
                "data.source must be amazon, taobao, events, synthetic or marker, got {other:?}"
            )))
        }
    };
    let opts = IngestOptions {
        min_len: s.get("data", "min_len", defaults.min_len)?,
        max_len: s.get("data", "max_len", defaults.max_len)?,
    };
    let policy = split_policy(&mut s, seed)?;
    let negative_seed = s.get("data", "negative_seed", seed)?;
    finish_config(&s, &out)?;

    let ingested = ingest_source(&source, opts).map_err(CliError::runtime)?;
    let all = negative_sample(&ingested.samples, &ingested.vocab, negative_seed)
        .map_err(CliError::runtime)?;
    let (train, test) = write_split(&out, &all, &ingested.vocab, policy)?;
    let r = &ingested.report;
    let summary = json!({
        "rows_read": r.rows_read,
        "rows_skipped": r.rows_skipped,
        "users_seen": r.users_seen,
        "users_dropped": r.users_dropped,
        "positives": ingested.samples.len(),
        "samples": all.len(),
        "train": train.len(),
        "test": test.len(),
        "items": ingested.vocab.n_items() - 1,
        "categories": ingested.vocab.n_categories() - 1,
    });
    write_json(&out.join("ingest.json"), &summary)?;
    println!(
        "ingested {} rows ({} skipped): {} users kept, {} dropped; {} train / {} test samples",
        r.rows_read,
        r.rows_skipped,
        r.users_seen - r.users_dropped,
        r.users_dropped,
        train.len(),
        test.len()
    );
    Ok(())
}

fn split_policy(s: &mut Settings, seed: u64) -> Result<SplitPolicy, CliError> {
    Ok(SplitPolicy::UserHash {
        test_fraction: s.get("data", "test_fraction", 0.2)?,
        seed: s.get("data", "split_seed", seed)?,
    })
}

/// Splits by user and writes `train.samples` and `test.samples`.
fn write_split(
    out: &Path,
    samples: &[Sample],
    vocab: &Vocabulary,
    policy: SplitPolicy,
) -> Result<(Vec<Sample>, Vec<Sample>), CliError> {
    let (train, test) = split(samples, policy).map_err(|e| CliError::Usage(e.to_string()))?;
    write_sample_file(&out.join("train.samples"), &train, vocab).map_err(CliError::runtime)?;
    write_sample_file(&out.join("test.samples"), &test, vocab).map_err(CliError::runtime)?;
    Ok((train, test))
}

/// Labeled samples of the marker task, where the label says whether the
/// history holds an item of the marker category.
fn ingest_marker(mut s: Settings, out: &Path, seed: u64) -> Result<(), CliError> {
    let users: usize = s.get("synth", "users", 2000)?;
    let len: usize = s.get("synth", "seq_len", 8)?;
    let items: usize = s.get("synth", "items", 60)?;
    let categories: usize = s.get("synth", "categories", 8)?;
    let task_seed = s.get("synth", "seed", seed)?;
    let policy = split_policy(&mut s, seed)?;
    if users == 0 || len == 0 || items == 0 || categories < 2 {
        return Err(CliError::Usage(
            "marker task needs users, seq_len and items > 0 and categories >= 2".into(),
        ));
    }
    finish_config(&s, out)?;
    let task = marker_task(users, len, items + 1, categories + 1, task_seed);
    let (train, test) = write_split(out, &task.samples, &task.vocab, policy)?;
    write_json(
        &out.join("ingest.json"),
        &json!({ "samples": task.samples.len(), "train": train.len(), "test": test.len() }),
    )?;
    println!(
        "marker task: {} train / {} test samples",
        train.len(),
        test.len()
    );
    Ok(())
}

fn print_epochs(report: &mimn_core::train::MetricReport) {
    for e in &report.epochs {
        let auc = e.eval_auc.map_or_else(|| "-".into(), |a| format!("{a:.4}"));
        println!(
            "epoch {:>3}  loss {:.5}  lr {:.3e}  auc {auc}  {:.1}s",
            e.epoch + 1,
            e.mean_loss,
            e.lr,
            e.seconds
        );
    }
}

pub fn train(mut s: Settings) -> Result<(), CliError> {
    let out = s.out()?;
    let train_path = s.input_or("data", "train", "train.samples")?;
    let test_path = s.input_or("data", "test", "test.samples")?;
    let mut cfg = s.train_config()?;
    let resume: Option<String> = s.opt("train", "resume")?;
    let resumed = match &resume {
        Some(p) => {
            Some(load_checkpoint(Path::new(p)).map_err(|e| CliError::Usage(format!("{p}: {e}")))?)
        }
        None => None,
    };
    let version = s.get(
        "train",
        "version",
        resumed.as_ref().map_or(1, |c| c.version + 1),
    )?;
    finish_config(&s, &out)?;

    let (train_set, vocab) = read_samples(&train_path)?;
    let (test_set, _) = read_samples(&test_path)?;
    let (model, report) = match resumed {
        Some(c) => {
            let mut model = c.model;
            cfg.model = model.kind();
            cfg.hyper = model.hyper().clone();
            let report =
                fit(&mut model, &cfg, &train_set, Some(&test_set)).map_err(CliError::runtime)?;
            (model, report)
        }
        None => train_model(
            &cfg,
            &train_set,
            Some(&test_set),
            vocab.n_items(),
            vocab.n_categories(),
        )
        .map_err(CliError::runtime)?,
    };
    print_epochs(&report);
    let ckpt = Checkpoint {
        model,
        vocab,
        version,
    };
    let ckpt_path = out.join("model.ckpt");
    save_checkpoint(&ckpt_path, &ckpt).map_err(CliError::runtime)?;
    let metrics = out.join("metrics.jsonl");
    let file = fs::File::create(&metrics).map_err(|e| CliError::io(&metrics, e))?;
    report
        .write_jsonl(file)
        .map_err(|e| CliError::io(&metrics, e))?;
    println!(
        "wrote {} (version {version}); test AUC {}",
        ckpt_path.display(),
        report.auc.map_or_else(|| "-".into(), |a| format!("{a:.4}"))
    );
    Ok(())
}

pub fn evaluate(mut s: Settings) -> Result<(), CliError> {
    let out = s.out()?;
    let ckpt_path = s.input_or("serve", "checkpoint", "model.ckpt")?;
    let test_path = s.input_or("data", "test", "test.samples")?;
    finish_config(&s, &out)?;
    let ckpt = load_checkpoint(&ckpt_path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", ckpt_path.display())))?;
    let (samples, _) = read_samples(&test_path)?;
    let auc = auc_of(&ckpt.model, &samples).map_err(CliError::runtime)?;
    write_json(
        &out.join("eval.json"),
        &json!({ "auc": auc, "samples": samples.len(), "version": ckpt.version }),
    )?;
    println!("AUC {auc:.6} on {} samples", samples.len());
    Ok(())
}

pub fn ablate(mut s: Settings) -> Result<(), CliError> {
    let out = s.out()?;
    let train_path = s.input_or("data", "train", "train.samples")?;
    let test_path = s.input_or("data", "test", "test.samples")?;
    let base = s.train_config()?;
    let seeds = s.get("ablate", "seeds", List(vec![1u64, 2, 3]))?.0;
    let grid: String = s.get("ablate", "grid", "standard".into())?;
    let cells = match grid.as_str() {
        "standard" => standard_grid(&base.hyper),
        "slots" => {
            let slots = s.get("ablate", "slots", List(vec![2usize, 4, 8]))?.0;
            slot_grid(&base.hyper, &slots)
        }
        other => {
            return Err(CliError::Usage(format!(
                "ablate.grid must be standard or slots, got {other:?}"
            )))
        }
    };
    finish_config(&s, &out)?;
    let (train_set, vocab) = read_samples(&train_path)?;
    let (test_set, _) = read_samples(&test_path)?;
    let rows = run_ablation(
        &cells,
        &base,
        &train_set,
        &test_set,
        &seeds,
        vocab.n_items(),
        vocab.n_categories(),
    )
    .map_err(CliError::runtime)?;
    let table = mimn_core::train::format_table(&rows);
    print!("{table}");
    write_text(&out.join("ablation.txt"), &table)?;
    let json_rows: Vec<_> = rows
        .iter()
        .map(|r| {
            json!({
                "name": r.name,
                "seeds": r.seeds,
                "aucs": r.aucs,
                "mean": r.mean,
                "std": r.std,
                "usage_variance": r.usage_variance,
            })
        })
        .collect();
    write_json(&out.join("ablation.json"), &json!(json_rows))
}

pub fn gradcheck(mut s: Settings, inject_sign_bug: bool) -> Result<(), CliError> {
    let out = s.out()?;
    let seed = s.seed()?;
    let mode: String = s.get("gradcheck", "mode", "mimn".into())?;
    let step = s.get("gradcheck", "step", 1e-4)?;
    let report = match mode.as_str() {
        "mimn" => {
            let d = GradcheckSetup::default();
            let setup = GradcheckSetup {
                hyper: s.hyper()?,
                batch: s.get("gradcheck", "batch", d.batch)?,
                seq_len: s.get("gradcheck", "seq_len", d.seq_len)?,
                n_items: s.get("gradcheck", "n_items", d.n_items)?,
                n_categories: s.get("gradcheck", "n_categories", d.n_categories)?,
                seed,
                step,
            };
            let tolerance = s.get("gradcheck", "tolerance", 1e-4)?;
            finish_config(&s, &out)?;
            inject_tanh_sign_bug(inject_sign_bug);
            let r = gradcheck_mimn(&setup);
            inject_tanh_sign_bug(false);
            (r.map_err(CliError::runtime)?, tolerance)
        }
        "quadratic" => {
            let n = s.get("gradcheck", "n", 10)?;
            let tolerance = s.get("gradcheck", "tolerance", 1e-8)?;
            finish_config(&s, &out)?;
            (
                gradcheck_quadratic(n, seed, step).map_err(CliError::runtime)?,
                tolerance,
            )
        }
        other => {
            return Err(CliError::Usage(format!(
                "gradcheck.mode must be mimn or quadratic, got {other:?}"
            )))
        }
    };
    let (r, tolerance) = report;
    let worst = r
        .worst
        .clone()
        .map(|(name, i, a, n)| json!({"param": name, "index": i, "analytic": a, "numeric": n}));
    write_json(
        &out.join("gradcheck.json"),
        &json!({
            "mode": mode,
            "max_relative_error": r.max_relative_error,
            "tolerance": tolerance,
            "entries_checked": r.entries_checked,
            "worst": worst,
        }),
    )?;
    println!(
        "max relative error {:.3e} over {} entries (tolerance {tolerance:.0e})",
        r.max_relative_error, r.entries_checked
    );
    if let Some((name, i, a, n)) = &r.worst {
        println!("worst entry: {name}[{i}] analytic {a:.6e} numeric {n:.6e}");
    }
    if r.max_relative_error < tolerance {
        println!("PASS");
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradient check FAILED: max relative error {:.3e} >= {tolerance:.0e}",
            r.max_relative_error
        )))
    }
}

fn snapshot_path(dir: &Path, id: u64) -> PathBuf {
    dir.join(format!("snapshot-{id:06}.bin"))
}

/// Snapshot files in `dir` as `(id, path)`, oldest first.
fn catalog(dir: &Path) -> Result<Vec<(u64, PathBuf)>, CliError> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let id = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("snapshot-"))
            .and_then(|n| n.strip_suffix(".bin"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(id) = id {
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}

fn current_id(dir: &Path) -> Result<Option<u64>, CliError> {
    let path = dir.join("CURRENT");
    match fs::read_to_string(&path) {
        Ok(text) => text
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Runtime(format!("{}: not a snapshot id", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CliError::io(&path, e)),
    }
}

fn set_current(dir: &Path, id: u64) -> Result<(), CliError> {
    write_text(&dir.join("CURRENT"), &format!("{id}\n"))
}

fn read_snapshot(path: &Path) -> Result<Snapshot, CliError> {
    Snapshot::read_file(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

/// Snapshots the store into `dir`, marks it current and keeps only the most
/// recent files up to the retention limit.
fn persist_snapshot(store: &StateStore, dir: &Path) -> Result<u64, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let meta = store.snapshot().map_err(CliError::runtime)?;
    let snap = store.snapshot_by_id(meta.id).expect("just taken");
    let path = snapshot_path(dir, meta.id);
    snap.write_file(&path).map_err(CliError::runtime)?;
    set_current(dir, meta.id)?;
    let files = catalog(dir)?;
    if files.len() > SNAPSHOT_RETENTION {
        for (_, old) in &files[..files.len() - SNAPSHOT_RETENTION] {
            fs::remove_file(old).map_err(|e| CliError::io(old, e))?;
        }
    }
    println!(
        "snapshot {} written to {} ({} users, {} bytes, crc {:016x})",
        meta.id,
        path.display(),
        meta.users,
        meta.bytes,
        meta.checksum
    );
    Ok(meta.id)
}

/// A store serving the checkpoint, continuing the snapshot directory's id
/// sequence and restored to its current snapshot, if any.
fn open_store(ckpt: &Path, dir: &Path) -> Result<StateStore, CliError> {
    let (params, vocab, version) = mimn_checkpoint(ckpt)?;
    let store = StateStore::new(Deployment::new(params, vocab, version));
    let files = catalog(dir)?;
    if let Some((_, latest)) = files.last() {
        store
            .import_snapshot(read_snapshot(latest)?)
            .map_err(CliError::runtime)?;
    }
    if let Some(id) = current_id(dir)? {
        let snap = read_snapshot(&snapshot_path(dir, id))?;
        store.restore(&snap).map_err(CliError::runtime)?;
    }
    Ok(store)
}

fn apply_all(store: &StateStore, events: &[BehaviorEvent]) -> Result<usize, CliError> {
    let mut applied = 0;
    for e in events {
        match store.apply_event(e) {
            Ok(_) => applied += 1,
            Err(mimn_core::uic::StoreError::InvalidEvent(_)) => {}
            Err(err) => return Err(CliError::runtime(err)),
        }
    }
    Ok(applied)
}

pub fn warm_up(mut s: Settings) -> Result<(), CliError> {
    let out = s.out()?;
    let ckpt = s.input_or("serve", "checkpoint", "model.ckpt")?;
    let events = s.input("serve", "warmup_events")?;
    let default_dir = out.join("snapshots").display().to_string();
    let dir = PathBuf::from(s.get::<String>("serve", "snapshot_dir", default_dir)?);
    finish_config(&s, &out)?;
    let (params, vocab, version) = mimn_checkpoint(&ckpt)?;
    let store = StateStore::new(Deployment::new(params, vocab, version));
    if let Some((_, path)) = catalog(&dir)?.last() {
        store
            .import_snapshot(read_snapshot(path)?)
            .map_err(CliError::runtime)?;
    }
    let started = Instant::now();
    let report = store.warm_up(&read_events(&events)?);
    println!(
        "warm-up: {} users initialized, {} failed in {:.2}s",
        report.initialized,
        report.failed,
        started.elapsed().as_secs_f64()
    );
    persist_snapshot(&store, &dir)?;
    Ok(())
}

pub fn serve_sim(mut s: Settings) -> Result<(), CliError> {
    let out = s.out()?;
    let ckpt = s.input_or("serve", "checkpoint", "model.ckpt")?;
    let warmup: Option<String> = s.opt("serve", "warmup_events")?;
    let stream: Option<String> = s.opt("serve", "events")?;
    let requests = s.input("serve", "requests")?;
    let snapshot_at_end = s.get("serve", "snapshot_at_end", false)?;
    let default_dir = out.join("snapshots").display().to_string();
    let dir = PathBuf::from(s.get::<String>("serve", "snapshot_dir", default_dir)?);
    for p in warmup.iter().chain(stream.iter()) {
        if !Path::new(p).is_file() {
            return Err(CliError::Usage(format!("{p}: no such file")));
        }
    }
    finish_config(&s, &out)?;

    let (params, vocab, version) = mimn_checkpoint(&ckpt)?;
    let store = StateStore::new(Deployment::new(params, vocab, version));
    if let Some(p) = &warmup {
        let r = store.warm_up(&read_events(Path::new(p))?);
        println!(
            "warm-up: {} users initialized, {} failed",
            r.initialized, r.failed
        );
    }
    let mut applied = 0;
    if let Some(p) = &stream {
        applied = apply_all(&store, &read_events(Path::new(p))?)?;
        println!("applied {applied} events to {} users", store.len());
    }
    let file = fs::File::open(&requests).map_err(|e| CliError::io(&requests, e))?;
    let named = read_requests(BufReader::new(file)).map_err(|e| CliError::Usage(e.to_string()))?;
    let dep = store.deployment();
    let mut scores = Vec::with_capacity(named.len());
    let mut latencies = Vec::with_capacity(named.len());
    let started = Instant::now();
    for r in &named {
        let req = r
            .resolve(&dep.vocab, dep.params.hyper.profile_dim)
            .map_err(CliError::runtime)?;
        let t0 = Instant::now();
        let p = handle_request(&req, &store, &dep.params).map_err(CliError::runtime)?;
        latencies.push(t0.elapsed().as_secs_f64() * 1e3);
        scores.push(p);
    }
    let wall = started.elapsed().as_secs_f64();
    let scores_path = out.join("scores.tsv");
    let file = fs::File::create(&scores_path).map_err(|e| CliError::io(&scores_path, e))?;
    write_scores(std::io::BufWriter::new(file), &named, &scores)
        .map_err(|e| CliError::io(&scores_path, e))?;

    let users = store.users();
    let mean_events = if users.is_empty() {
        0
    } else {
        let total: u64 = users.iter().map(|u| store.get_state(u).events).sum();
        (total as f64 / users.len() as f64).round() as usize
    };
    let state_bytes = dep.cold_state().payload_bytes();
    let target = if wall > 0.0 {
        named.len() as f64 / wall
    } else {
        0.0
    };
    let report = BenchReport::from_latencies(
        ServeMode::Uic,
        mean_events,
        latencies,
        applied,
        wall,
        target,
        state_bytes,
        mean_events * mimn_core::serving::RAW_EVENT_BYTES,
    );
    write_bench(&out, &[report])?;
    println!(
        "scored {} requests into {}",
        named.len(),
        scores_path.display()
    );
    if snapshot_at_end {
        persist_snapshot(&store, &dir)?;
    }
    Ok(())
}

fn write_bench(out: &Path, reports: &[BenchReport]) -> Result<(), CliError> {
    let table = mimn_core::serving::format_table(reports);
    print!("{table}");
    write_text(&out.join("bench.txt"), &table)?;
    let path = out.join("bench.csv");
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_csv(file, reports).map_err(CliError::runtime)
}

pub fn bench(mut s: Settings) -> Result<(), CliError> {
    let out = s.out()?;
    let seed = s.seed()?;
    let base = match s.opt::<String>("bench", "profile")? {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| CliError::Usage(format!("{p}: {e}")))?;
            LoadProfile::parse(&text).map_err(|e| CliError::Usage(format!("{p}: {e}")))?
        }
        None => LoadProfile {
            seed,
            ..LoadProfile::default()
        },
    };
    let profile = LoadProfile {
        request_rate: s.get("bench", "request_rate", base.request_rate)?,
        event_rate: s.get("bench", "event_rate", base.event_rate)?,
        duration_secs: s.get("bench", "duration", base.duration_secs)?,
        users: s.get("bench", "users", base.users)?,
        candidates: s.get("bench", "candidates", base.candidates)?,
        workers: s.get("bench", "workers", base.workers)?,
        seed: s.get("bench", "seed", base.seed)?,
        ..base
    };
    profile
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let lengths = s
        .get("bench", "lengths", List(vec![100usize, 400, 1000]))?
        .0;
    let modes: Vec<ServeMode> = s
        .get(
            "bench",
            "modes",
            List(vec!["uic".to_string(), "recompute".to_string()]),
        )?
        .0
        .iter()
        .map(|m| m.parse::<ServeMode>().map_err(CliError::Usage))
        .collect::<Result<_, _>>()?;
    if lengths.is_empty() || modes.is_empty() {
        return Err(CliError::Usage(
            "bench.lengths and bench.modes must be nonempty".into(),
        ));
    }
    let params = match s.opt::<String>("bench", "checkpoint")? {
        Some(p) => {
            if !Path::new(&p).is_file() {
                return Err(CliError::Usage(format!("{p}: no such file")));
            }
            mimn_checkpoint(Path::new(&p))?.0
        }
        None => {
            let n_items: usize = s.get("bench", "n_items", 4000)?;
            let n_categories: usize = s.get("bench", "n_categories", 20)?;
            let hyper = s.hyper()?;
            MimnParams::new(hyper, n_items + 1, n_categories + 1, seed)
                .map_err(|e| CliError::Usage(e.to_string()))?
        }
    };
    finish_config(&s, &out)?;

    let longest = *lengths.iter().max().expect("nonempty");
    let histories = bench_histories(
        profile.users,
        longest,
        params.n_items() - 1,
        params.n_categories() - 1,
        profile.seed,
    );
    let mut reports = Vec::new();
    for &mode in &modes {
        for &history_len in &lengths {
            let cell = LoadProfile {
                mode,
                history_len,
                ..profile.clone()
            };
            eprintln!("running {} at history {history_len} ...", mode.name());
            reports.push(run_bench(&cell, &params, &histories).map_err(CliError::runtime)?);
        }
    }
    write_bench(&out, &reports)?;
    let rows = storage_report(&params, &lengths).map_err(CliError::runtime)?;
    let mut storage = format!(
        "{:>8} {:>12} {:>12}\n",
        "history", "state_bytes", "raw_bytes"
    );
    for r in &rows {
        storage += &format!(
            "{:>8} {:>12} {:>12}\n",
            r.history_len, r.state_bytes, r.raw_bytes
        );
    }
    storage += &format!(
        "state is smaller than the raw history from {} events on\n",
        crossover_length(rows[0].state_bytes)
    );
    print!("{storage}");
    write_text(&out.join("storage.txt"), &storage)
}

pub fn out_sync(mut s: Settings) -> Result<(), CliError> {
    let out = s.out()?;
    let stale = s.input("serve", "stale_checkpoint")?;
    let fresh = s.input_or("serve", "checkpoint", "model.ckpt")?;
    let test_path = s.input_or("data", "test", "test.samples")?;
    finish_config(&s, &out)?;
    let (stale_p, _, stale_v) = mimn_checkpoint(&stale)?;
    let (fresh_p, _, fresh_v) = mimn_checkpoint(&fresh)?;
    let (samples, _) = read_samples(&test_path)?;
    let r = out_sync_experiment(&stale_p, &fresh_p, &samples).map_err(CliError::runtime)?;
    write_json(
        &out.join("outsync.json"),
        &json!({
            "stale_version": stale_v,
            "fresh_version": fresh_v,
            "samples": r.samples,
            "auc_synced": r.auc_synced,
            "auc_out_sync": r.auc_out_sync,
            "delta": r.delta,
        }),
    )?;
    println!(
        "synced AUC {:.4}, out-sync AUC {:.4} (states v{stale_v}, scorer v{fresh_v}), delta {:+.4}",
        r.auc_synced, r.auc_out_sync, r.delta
    );
    Ok(())
}

pub fn snapshot(mut s: Settings) -> Result<(), CliError> {
    let out = s.out()?;
    let ckpt = s.input_or("serve", "checkpoint", "model.ckpt")?;
    let events: Option<String> = s.opt("serve", "events")?;
    let default_dir = out.join("snapshots").display().to_string();
    let dir = PathBuf::from(s.get::<String>("serve", "snapshot_dir", default_dir)?);
    if let Some(p) = &events {
        if !Path::new(p).is_file() {
            return Err(CliError::Usage(format!("{p}: no such file")));
        }
    }
    finish_config(&s, &out)?;
    let store = open_store(&ckpt, &dir)?;
    if let Some(p) = &events {
        let n = apply_all(&store, &read_events(Path::new(p))?)?;
        println!("applied {n} events");
    }
    persist_snapshot(&store, &dir)?;
    Ok(())
}

pub fn rollback(mut s: Settings) -> Result<(), CliError> {
    let out = s.out()?;
    let ckpt = s.input_or("serve", "checkpoint", "model.ckpt")?;
    let default_dir = out.join("snapshots").display().to_string();
    let dir = PathBuf::from(s.get::<String>("serve", "snapshot_dir", default_dir)?);
    let id: u64 = s
        .opt("serve", "snapshot_id")?
        .ok_or_else(|| CliError::Usage("missing snapshot id (--id)".into()))?;
    finish_config(&s, &out)?;
    let files = catalog(&dir)?;
    let Some((_, path)) = files.iter().find(|(i, _)| *i == id) else {
        let known: Vec<String> = files.iter().map(|(i, _)| i.to_string()).collect();
        return Err(CliError::Runtime(format!(
            "no snapshot {id} in {} (available: {})",
            dir.display(),
            if known.is_empty() {
                "none".into()
            } else {
                known.join(", ")
            }
        )));
    };
    let snap = read_snapshot(path)?;
    let (params, vocab, version) = mimn_checkpoint(&ckpt)?;
    let store = StateStore::new(Deployment::new(params, vocab, version));
    store.restore(&snap).map_err(CliError::runtime)?;
    set_current(&dir, id)?;
    println!(
        "rolled back to snapshot {id}: {} users restored",
        store.len()
    );
    Ok(())
}
