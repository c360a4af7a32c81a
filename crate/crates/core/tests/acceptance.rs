//! Acceptance suite. Prints one line per criterion and exits nonzero when a
//! gating criterion fails.
//!
//! Run alone with `cargo test --release -p mimn-core --test acceptance`.
//! Set `MIMN_ACCEPTANCE_ONLY=1,3,8` to run a subset.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mimn_core::data::synth::{generate_events, write_amazon, zipf_stream, SynthConfig};
use mimn_core::data::{
    ingest, negative_sample, split, BehaviorEvent, IngestOptions, Sample, Source, SplitPolicy,
    Vocabulary,
};
use mimn_core::grad::Tensor;
use mimn_core::model::{
    memory_read, memory_write, miu_update, rebalance_write_weight, utilization_reg_loss,
    HyperParams, ItemKey, MemoryInit, MimnParams, UserInterestState,
};
use mimn_core::serving::{
    bench_histories, out_sync_experiment, run_bench, BenchReport, LoadProfile, ServeMode,
};
use mimn_core::train::{
    auc, fit, gradcheck_mimn, mean_std, standard_grid, train, AnyModel, GradcheckSetup, ModelKind,
    TrainConfig,
};
use mimn_core::uic::{Deployment, StateStore, StoreError};

struct Outcome {
    criterion: u32,
    pass: bool,
    /// Failing does not fail the run.
    reported: bool,
    detail: String,
}

impl Outcome {
    fn gate(criterion: u32, pass: bool, detail: String) -> Self {
        Outcome {
            criterion,
            pass,
            reported: false,
            detail,
        }
    }
}

// ---------------------------------------------------------------- criterion 1

fn gradient_correctness() -> Vec<Outcome> {
    let setup = GradcheckSetup::default();
    let h = &setup.hyper;
    assert_eq!((h.slots, h.dim, h.miu_hidden), (4, 16, 32));
    assert_eq!((setup.batch, setup.seq_len), (4, 10));
    let started = Instant::now();
    let r = gradcheck_mimn(&setup).expect("gradient check runs");
    let secs = started.elapsed().as_secs_f64();
    vec![Outcome::gate(
        1,
        r.max_relative_error < 1e-4 && secs < 120.0,
        format!(
            "max relative error {:.2e} over {} entries (< 1e-4), {secs:.1}s (< 120s)",
            r.max_relative_error, r.entries_checked
        ),
    )]
}

// ---------------------------------------------------------------- criterion 2

fn incremental_equivalence() -> Vec<Outcome> {
    let started = Instant::now();
    let cfg = SynthConfig {
        users: 100,
        items: 2000,
        categories: 20,
        min_events: 1000,
        max_events: 1000,
        seed: 2,
        ..SynthConfig::default()
    };
    let events = generate_events(&cfg).expect("synthetic events");
    let mut vocab = Vocabulary::new();
    let mut offline: HashMap<String, Vec<ItemKey>> = HashMap::new();
    for e in &events {
        let key = vocab.insert(&e.item_id, &e.category_id);
        offline.entry(e.user_id.clone()).or_default().push(key);
    }
    let hyper = HyperParams {
        memory_init: MemoryInit::Uniform {
            scale: 0.1,
            seed: 3,
        },
        ..HyperParams::default()
    };
    let params = MimnParams::new(hyper, vocab.n_items(), vocab.n_categories(), 4).unwrap();
    let store = StateStore::new(Deployment::new(params.clone(), vocab, 1));
    for e in &events {
        store.apply_event(e).expect("valid event");
    }
    let mut mismatched = 0;
    for (user, seq) in &offline {
        assert_eq!(seq.len(), 1000);
        let expected = params.process_sequence(seq).unwrap().state;
        if !bit_equal(&store.get_state(user), &expected) {
            mismatched += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    vec![Outcome::gate(
        2,
        mismatched == 0 && offline.len() == 100 && secs < 60.0,
        format!(
            "{} users x 1000 events, {mismatched} states differ bitwise, {secs:.1}s (< 60s)",
            offline.len()
        ),
    )]
}

fn tensor_bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

fn bit_equal(a: &UserInterestState, b: &UserInterestState) -> bool {
    tensor_bits(&a.memory) == tensor_bits(&b.memory)
        && tensor_bits(&a.induction) == tensor_bits(&b.induction)
        && tensor_bits(&a.usage) == tensor_bits(&b.usage)
        && a.events == b.events
}

// ---------------------------------------------------------------- criterion 3

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .unwrap()
}

fn naive_softmax(x: &[f64]) -> Vec<f64> {
    let mut total = 0.0;
    let e: Vec<f64> = x
        .iter()
        .map(|&v| {
            let y = v.exp();
            total += y;
            y
        })
        .collect();
    e.iter().map(|y| y / total).collect()
}

fn naive_read(m: &Tensor, k: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (rows, cols) = (m.rows(), m.cols());
    let mut kn = 0.0;
    for j in 0..cols {
        kn += k.data()[j] * k.data()[j];
    }
    let kn = kn.sqrt() + 1e-8;
    let mut sims = vec![0.0; rows];
    for i in 0..rows {
        let (mut dot, mut mn) = (0.0, 0.0);
        for j in 0..cols {
            dot += k.data()[j] * m.get2(i, j);
            mn += m.get2(i, j) * m.get2(i, j);
        }
        sims[i] = dot / (kn * (mn.sqrt() + 1e-8));
    }
    let w = naive_softmax(&sims);
    let mut r = vec![0.0; cols];
    for j in 0..cols {
        for i in 0..rows {
            r[j] += w[i] * m.get2(i, j);
        }
    }
    (w, r)
}

fn naive_sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|i| (0..w.cols()).map(|j| w.get2(i, j) * x[j]).sum())
        .collect()
}

fn naive_gru(p: &MimnParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let get = |name: &str| {
        p.store
            .get(p.store.id(&format!("miu.{name}")).unwrap())
            .clone()
    };
    let gate = |w: &str, u: &str, b: &str, hh: &[f64]| -> Vec<f64> {
        let (wx, uh, bias) = (matvec(&get(w), x), matvec(&get(u), hh), get(b));
        (0..h.len())
            .map(|i| wx[i] + uh[i] + bias.data()[i])
            .collect()
    };
    let z: Vec<f64> = gate("wz", "uz", "bz", h)
        .into_iter()
        .map(naive_sigmoid)
        .collect();
    let r: Vec<f64> = gate("wr", "ur", "br", h)
        .into_iter()
        .map(naive_sigmoid)
        .collect();
    let rh: Vec<f64> = (0..h.len()).map(|i| r[i] * h[i]).collect();
    let n: Vec<f64> = gate("wn", "un", "bn", &rh)
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..h.len())
        .map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i])
        .collect()
}

fn naive_top_k(w: &[f64], k: usize) -> Vec<bool> {
    let mut taken = vec![false; w.len()];
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..w.len() {
            if !taken[i] && best.is_none_or(|b| w[i] > w[b]) {
                best = Some(i);
            }
        }
        taken[best.unwrap()] = true;
    }
    taken
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn memory_op_oracles() -> Vec<Outcome> {
    const INSTANCES: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let mut worst = [0.0f64; 5];
    for _ in 0..INSTANCES {
        let m = rng.random_range(1..=8);
        let d = rng.random_range(1..=12);
        let h = rng.random_range(1..=10);
        let mem = random_tensor(&mut rng, &[m, d], -2.0, 2.0);
        let key = random_tensor(&mut rng, &[d], -2.0, 2.0);

        let read = memory_read(&mem, &key).unwrap();
        let (w, r) = naive_read(&mem, &key);
        worst[0] = worst[0]
            .max(max_diff(read.weights.data(), &w))
            .max(max_diff(read.readout.data(), &r));

        let erase = random_tensor(&mut rng, &[d], 0.0, 1.0);
        let add = random_tensor(&mut rng, &[d], -1.0, 1.0);
        let written = memory_write(&mem, &read.weights, &erase, &add).unwrap();
        let mut naive = vec![0.0; m * d];
        for i in 0..m {
            for j in 0..d {
                naive[i * d + j] =
                    (1.0 - w[i] * erase.data()[j]) * mem.get2(i, j) + w[i] * add.data()[j];
            }
        }
        worst[1] = worst[1].max(max_diff(written.data(), &naive));

        let usage = random_tensor(&mut rng, &[m], 0.0, 20.0);
        let transfer = random_tensor(&mut rng, &[m, m], -1.0, 1.0);
        let balanced = rebalance_write_weight(&read.weights, &usage, &transfer).unwrap();
        let p = naive_softmax(&matvec(&transfer, usage.data()));
        let naive: Vec<f64> = (0..m).map(|i| w[i] * p[i]).collect();
        worst[2] = worst[2].max(max_diff(balanced.data(), &naive));

        let lambda = rng.random_range(0.0..1.0);
        let reg = utilization_reg_loss(&usage, lambda).unwrap();
        let mean = usage.data().iter().sum::<f64>() / m as f64;
        let naive = lambda * usage.data().iter().map(|g| (g - mean).powi(2)).sum::<f64>();
        worst[3] = worst[3].max((reg - naive).abs());

        let k = rng.random_range(1..=m);
        let hyper = HyperParams {
            slots: m,
            dim: d,
            miu_hidden: h,
            k_top: k,
            mlp_widths: vec![2],
            ..HyperParams::default()
        };
        let mut params = MimnParams::new(hyper, 3, 2, rng.random()).unwrap();
        for name in ["bz", "br", "bn"] {
            let id = params.store.id(&format!("miu.{name}")).unwrap();
            *params.store.get_mut(id) = random_tensor(&mut rng, &[h], -0.5, 0.5);
        }
        let induction = random_tensor(&mut rng, &[m, h], -1.0, 1.0);
        let emb = random_tensor(&mut rng, &[d], -1.0, 1.0);
        // Coarse weights so ties between slots occur.
        let read_w = Tensor::vector(
            (0..m)
                .map(|_| rng.random_range(0..4) as f64 / 4.0)
                .collect(),
        );
        let updated = miu_update(&params, &induction, &mem, &read_w, &emb, k).unwrap();
        let chosen = naive_top_k(read_w.data(), k);
        let mut naive = Vec::with_capacity(m * h);
        for i in 0..m {
            if chosen[i] {
                let x: Vec<f64> = mem.row(i).iter().chain(emb.data()).copied().collect();
                naive.extend(naive_gru(&params, &x, induction.row(i)));
            } else {
                naive.extend_from_slice(induction.row(i));
            }
        }
        worst[4] = worst[4].max(max_diff(updated.data(), &naive));
    }
    let names = [
        "memory_read",
        "memory_write",
        "rebalance_write_weight",
        "utilization_reg_loss",
        "miu_update",
    ];
    names
        .iter()
        .zip(worst)
        .map(|(name, err)| {
            Outcome::gate(
                3,
                err <= 1e-12,
                format!("{name}: max deviation {err:.1e} from loop oracle on {INSTANCES} instances (<= 1e-12)"),
            )
        })
        .collect()
}

// ---------------------------------------------------------------- criterion 4

fn auc_oracle() -> Vec<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut mismatched = 0;
    let mut instances = 0;
    while instances < 500 {
        let n = rng.random_range(2..=30);
        let levels = rng.random_range(1..=6);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / 8.0)
            .collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let pos: Vec<f64> = (0..n)
            .filter(|&i| labels[i] == 1)
            .map(|i| scores[i])
            .collect();
        let neg: Vec<f64> = (0..n)
            .filter(|&i| labels[i] == 0)
            .map(|i| scores[i])
            .collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        instances += 1;
        let mut halves = 0u64;
        for p in &pos {
            for q in &neg {
                halves += if p > q {
                    2
                } else if p == q {
                    1
                } else {
                    0
                };
            }
        }
        let exhaustive = halves as f64 / 2.0 / (pos.len() * neg.len()) as f64;
        if auc(&scores, &labels).unwrap() != exhaustive {
            mismatched += 1;
        }
    }
    vec![Outcome::gate(
        4,
        mismatched == 0,
        format!("{mismatched} of {instances} tied instances differ from exhaustive pairwise AUC"),
    )]
}

// ------------------------------------------------------------ criteria 5 and 6

const SEEDS: [u64; 3] = [1, 2, 3];
const DESK_EPOCHS: usize = 10;

struct DeskData {
    train: Vec<Sample>,
    test: Vec<Sample>,
    vocab: Vocabulary,
}

/// About 5k synthetic users written as an Amazon review dump and ingested
/// with min_len 20 and max_len 100.
fn desk_data() -> DeskData {
    let dir = tempfile::tempdir().unwrap();
    let events = generate_events(&SynthConfig::default()).unwrap();
    let (reviews, meta) = (
        dir.path().join("reviews.json"),
        dir.path().join("meta.json"),
    );
    write_amazon(&events, &reviews, &meta).unwrap();
    let ingested = ingest(&Source::Amazon { reviews, meta }, IngestOptions::AMAZON).unwrap();
    let all = negative_sample(&ingested.samples, &ingested.vocab, 1).unwrap();
    let (train, test) = split(
        &all,
        SplitPolicy::UserHash {
            test_fraction: 0.2,
            seed: 1,
        },
    )
    .unwrap();
    DeskData {
        train,
        test,
        vocab: ingested.vocab,
    }
}

fn desk_config() -> TrainConfig {
    TrainConfig {
        epochs: DESK_EPOCHS,
        hyper: HyperParams {
            memory_init: MemoryInit::Uniform {
                scale: 0.1,
                seed: 1,
            },
            ..HyperParams::default()
        },
        ..TrainConfig::default()
    }
}

/// Mean slot variance of the final usage vector over Zipf(1.1) streams.
fn zipf_usage_variance(p: &MimnParams, vocab: &Vocabulary) -> f64 {
    let n = vocab.n_items() - 1;
    let vars: Vec<f64> = (0..50)
        .map(|s| {
            let stream: Vec<ItemKey> = zipf_stream(500, n, 1, 1.1, 600 + s)
                .into_iter()
                .map(|k| ItemKey::new(k.item, vocab.category_of(k.item)))
                .collect();
            p.process_sequence(&stream).unwrap().state.usage_variance()
        })
        .collect();
    vars.iter().sum::<f64>() / vars.len() as f64
}

fn model_ordering_and_ablation() -> Vec<Outcome> {
    let started = Instant::now();
    let data = desk_data();
    let base = desk_config();
    let mut cells = standard_grid(&base.hyper);
    let mut no_penalty = cells[2].clone();
    no_penalty.name = "MIMN+MUR lambda=0".into();
    no_penalty.hyper.lambda = 0.0;
    cells.push(no_penalty);

    let mut means = Vec::new();
    let mut zipf_vars = Vec::new();
    for cell in &cells {
        let mut aucs = Vec::new();
        let mut vars = Vec::new();
        for &seed in &SEEDS {
            let cfg = TrainConfig {
                model: cell.model,
                hyper: cell.hyper.clone(),
                seed,
                ..base.clone()
            };
            let (model, report) = train(
                &cfg,
                &data.train,
                Some(&data.test),
                data.vocab.n_items(),
                data.vocab.n_categories(),
            )
            .unwrap();
            aucs.push(report.auc.unwrap());
            if let AnyModel::Mimn(p) = &model {
                vars.push(zipf_usage_variance(p, &data.vocab));
            }
        }
        let (mean, std) = mean_std(&aucs);
        println!(
            "    {:<20} AUC {mean:.4} ± {std:.4} {:?}{}",
            cell.name,
            aucs.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>(),
            if vars.is_empty() {
                String::new()
            } else {
                format!("  zipf usage variance {:.3e}", mean_std(&vars).0)
            }
        );
        means.push(mean);
        zipf_vars.push((!vars.is_empty()).then(|| mean_std(&vars).0));
    }
    let secs = started.elapsed().as_secs_f64();
    let (emb, base_m, mur, full) = (means[0], means[1], means[2], means[3]);
    let gap = full - emb;
    let var_penalty = zipf_vars[2].unwrap();
    let var_free = zipf_vars[4].unwrap();
    let reduction = 1.0 - var_penalty / var_free;
    let context = format!(
        "{} train / {} test samples, {DESK_EPOCHS} epochs, seeds {SEEDS:?}, {:.0}s",
        data.train.len(),
        data.test.len(),
        secs
    );
    vec![
        Outcome {
            criterion: 5,
            pass: gap >= 0.005,
            reported: true,
            detail: format!(
                "model ordering on synthetic stand-in data: MIMN {full:.4} vs Embedding&MLP {emb:.4}, gap {gap:+.4} (>= +0.005); {context}"
            ),
        },
        Outcome {
            criterion: 6,
            pass: full >= mur && mur >= base_m,
            reported: true,
            detail: format!(
                "ablation ordering on synthetic stand-in data: MUR+MIU {full:.4} >= MUR {mur:.4} >= base {base_m:.4}"
            ),
        },
        Outcome::gate(
            6,
            reduction >= 0.3,
            format!(
                "MUR usage variance on Zipf(1.1) streams: lambda=0.1 {var_penalty:.3e} vs lambda=0 {var_free:.3e}, reduction {:.1}% (>= 30%)",
                100.0 * reduction
            ),
        ),
    ]
}

// ---------------------------------------------------------------- criterion 7

fn serving_scaling() -> Vec<Outcome> {
    let started = Instant::now();
    let hyper = HyperParams {
        memory_init: MemoryInit::Uniform {
            scale: 0.1,
            seed: 1,
        },
        ..HyperParams::default()
    };
    let (n_items, n_cats) = (4000, 20);
    let params = MimnParams::new(hyper, n_items + 1, n_cats + 1, 7).unwrap();
    let profile = LoadProfile {
        request_rate: 2000.0,
        event_rate: 100.0,
        duration_secs: 5.0,
        ..LoadProfile::default()
    };
    let lengths = [100, 400, 1000];
    let histories = bench_histories(profile.users, 1000, n_items, n_cats, profile.seed);
    // Lengths interleave over rounds; each cell pools its rounds' latencies.
    let run = |mode: ServeMode, rounds: usize| -> Vec<BenchReport> {
        let mut runs: Vec<Vec<BenchReport>> = vec![Vec::new(); lengths.len()];
        for _ in 0..rounds {
            for (cell_runs, &history_len) in runs.iter_mut().zip(&lengths) {
                let cell = LoadProfile {
                    mode,
                    history_len,
                    ..profile.clone()
                };
                cell_runs.push(run_bench(&cell, &params, &histories).unwrap());
            }
        }
        runs.iter()
            .map(|cell_runs| {
                let r = BenchReport::pooled(cell_runs).unwrap();
                println!(
                    "    {:<9} history {:>4}: {} requests in {} rounds, p50 {:.3} ms, p99 {:.3} ms, mean {:.3} ms, {} B/user",
                    mode.name(),
                    r.history_len,
                    r.requests,
                    rounds,
                    r.p50_ms,
                    r.p99_ms,
                    r.mean_ms,
                    r.bytes_per_user()
                );
                r
            })
            .collect()
    };
    let uic = run(ServeMode::Uic, 3);
    let recompute = run(ServeMode::Recompute, 1);
    let secs = started.elapsed().as_secs_f64();

    let enough = uic.iter().chain(&recompute).all(|r| r.requests >= 10_000);
    let p99: Vec<f64> = uic.iter().map(|r| r.p99_ms).collect();
    let (lo, hi) = p99
        .iter()
        .fold((f64::MAX, 0.0f64), |(l, h), &x| (l.min(x), h.max(x)));
    let spread = hi / lo - 1.0;
    let ratio = recompute[2].mean_ms / recompute[0].mean_ms;
    let state_bytes: Vec<usize> = uic.iter().map(|r| r.state_bytes).collect();
    vec![
        Outcome::gate(
            7,
            spread <= 0.2 && enough,
            format!(
                "uic p99 {:.3}/{:.3}/{:.3} ms (p50 {:.3}/{:.3}/{:.3}) across 100/400/1000, spread {:.1}% (<= 20%), >= 10k requests per cell: {enough}",
                p99[0],
                p99[1],
                p99[2],
                uic[0].p50_ms,
                uic[1].p50_ms,
                uic[2].p50_ms,
                100.0 * spread
            ),
        ),
        Outcome::gate(
            7,
            ratio >= 5.0,
            format!(
                "recompute mean {:.3} ms at 1000 vs {:.3} ms at 100, ratio {ratio:.1} (>= 5)",
                recompute[2].mean_ms, recompute[0].mean_ms
            ),
        ),
        Outcome::gate(
            7,
            state_bytes.iter().all(|&b| b == state_bytes[0]),
            format!("state bytes per user {state_bytes:?} across lengths; {secs:.0}s"),
        ),
    ]
}

// ---------------------------------------------------------------- criterion 8

fn small_model() -> (MimnParams, Vocabulary, Vec<BehaviorEvent>) {
    let events = generate_events(&SynthConfig {
        users: 40,
        items: 300,
        categories: 10,
        min_events: 30,
        max_events: 80,
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut vocab = Vocabulary::new();
    for e in &events {
        vocab.insert(&e.item_id, &e.category_id);
    }
    let hyper = HyperParams {
        memory_init: MemoryInit::Uniform {
            scale: 0.1,
            seed: 2,
        },
        mlp_widths: vec![32, 2],
        ..HyperParams::default()
    };
    let p = MimnParams::new(hyper, vocab.n_items(), vocab.n_categories(), 9).unwrap();
    (p, vocab, events)
}

fn deployment_mechanics() -> Vec<Outcome> {
    let (params, vocab, events) = small_model();
    let dep = || Deployment::new(params.clone(), vocab.clone(), 1);
    let half = events.len() / 2;

    // Snapshot, keep applying, roll back, replay: bit-exact and deterministic.
    let store = StateStore::new(dep());
    for e in &events[..half] {
        store.apply_event(e).unwrap();
    }
    let at_snapshot: Vec<(String, UserInterestState)> = store
        .users()
        .into_iter()
        .map(|u| (u.clone(), store.get_state(&u)))
        .collect();
    let meta = store.snapshot().unwrap();
    for e in &events[half..] {
        store.apply_event(e).unwrap();
    }
    let after_first: Vec<_> = store
        .users()
        .into_iter()
        .map(|u| store.get_state(&u))
        .collect();
    store.rollback(meta.id).unwrap();
    let round_trip = store.len() == at_snapshot.len()
        && at_snapshot
            .iter()
            .all(|(u, s)| bit_equal(&store.get_state(u), s));
    let bytes = store.snapshot_by_id(meta.id).unwrap().bytes().to_vec();
    let reread = mimn_core::uic::Snapshot::from_bytes(bytes).unwrap();
    let fresh = StateStore::new(dep());
    fresh.restore(&reread).unwrap();
    let from_bytes = at_snapshot
        .iter()
        .all(|(u, s)| bit_equal(&fresh.get_state(u), s));
    for e in &events[half..] {
        store.apply_event(e).unwrap();
    }
    let replay: Vec<_> = store
        .users()
        .into_iter()
        .map(|u| store.get_state(&u))
        .collect();
    let deterministic = replay.len() == after_first.len()
        && replay
            .iter()
            .zip(&after_first)
            .all(|(a, b)| bit_equal(a, b));

    // Warm-up on all but each user's last event, then that event.
    let mut last: HashMap<&str, usize> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        last.insert(&e.user_id, i);
    }
    let (mut head, mut tail) = (Vec::new(), Vec::new());
    for (i, e) in events.iter().enumerate() {
        if last[e.user_id.as_str()] == i {
            tail.push(e.clone());
        } else {
            head.push(e.clone());
        }
    }
    let warm = StateStore::new(dep());
    let report = warm.warm_up(&head);
    for e in &tail {
        warm.apply_event(e).unwrap();
    }
    let full = StateStore::new(dep());
    for e in &events {
        full.apply_event(e).unwrap();
    }
    let warm_ok = report.failed == 0
        && warm.len() == full.len()
        && full
            .users()
            .iter()
            .all(|u| bit_equal(&warm.get_state(u), &full.get_state(u)));

    // Retention.
    let kept = StateStore::new(dep());
    let mut ids = Vec::new();
    for e in events.iter().take(9) {
        kept.apply_event(e).unwrap();
        ids.push(kept.snapshot().unwrap().id);
    }
    let catalog: Vec<u64> = kept.snapshots().iter().map(|m| m.id).collect();
    let retention_ok = catalog == ids[2..]
        && matches!(kept.rollback(ids[0]), Err(StoreError::UnknownSnapshot(_)))
        && kept.rollback(ids[2]).is_ok();

    // Out-sync: states built by a stale version, scored by the fresh one.
    let (samples, n_items, n_cats) = outsync_samples();
    let (train_set, test_set) = samples.split_at(samples.len() * 4 / 5);
    let cfg = TrainConfig {
        epochs: 2,
        lr0: 0.005,
        batch_size: 64,
        hyper: HyperParams {
            mlp_widths: vec![32, 2],
            memory_init: MemoryInit::Uniform {
                scale: 0.1,
                seed: 1,
            },
            ..HyperParams::default()
        },
        model: ModelKind::Mimn,
        ..TrainConfig::default()
    };
    let (mut model, _) = train(&cfg, train_set, None, n_items, n_cats).unwrap();
    let stale = model.as_mimn().unwrap().clone();
    fit(&mut model, &cfg, train_set, None).unwrap();
    let fresh = model.as_mimn().unwrap().clone();
    let sync = out_sync_experiment(&stale, &fresh, test_set).unwrap();

    vec![
        Outcome::gate(
            8,
            round_trip && from_bytes && deterministic,
            format!(
                "snapshot/rollback bit-exact: {round_trip}, via bytes: {from_bytes}, replay after rollback deterministic: {deterministic} ({} users)",
                at_snapshot.len()
            ),
        ),
        Outcome::gate(
            8,
            warm_ok,
            format!("warm_up + one apply_event equals full replay for {} users: {warm_ok}", full.len()),
        ),
        Outcome::gate(
            8,
            retention_ok,
            format!("9 snapshots, retained ids {catalog:?}, oldest two evicted: {retention_ok}"),
        ),
        Outcome::gate(
            8,
            sync.auc_synced.is_finite() && sync.auc_out_sync.is_finite(),
            format!(
                "out-sync on {} samples: synced AUC {:.4}, out-sync AUC {:.4}, delta {:+.4} (reported)",
                sync.samples, sync.auc_synced, sync.auc_out_sync, sync.delta
            ),
        ),
    ]
}

fn outsync_samples() -> (Vec<Sample>, usize, usize) {
    let events = generate_events(&SynthConfig {
        users: 1500,
        items: 500,
        categories: 10,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap();
    let ingested = mimn_core::data::build_samples(&events, IngestOptions::AMAZON).unwrap();
    let all = negative_sample(&ingested.samples, &ingested.vocab, 2).unwrap();
    (all, ingested.vocab.n_items(), ingested.vocab.n_categories())
}

// -------------------------------------------------------------------- harness

type Runner = (&'static [u32], fn() -> Vec<Outcome>);

fn main() -> ExitCode {
    let runners: [Runner; 7] = [
        (&[1], gradient_correctness),
        (&[2], incremental_equivalence),
        (&[3], memory_op_oracles),
        (&[4], auc_oracle),
        (&[5, 6], model_ordering_and_ablation),
        (&[7], serving_scaling),
        (&[8], deployment_mechanics),
    ];
    let only: Option<Vec<u32>> = std::env::var("MIMN_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut lines = Vec::new();
    let mut gating_failures = 0;
    for (covers, run) in runners {
        if only
            .as_ref()
            .is_some_and(|o| !covers.iter().any(|c| o.contains(c)))
        {
            continue;
        }
        println!("running criteria {covers:?}");
        for o in run() {
            let verdict = match (o.pass, o.reported) {
                (true, _) => "PASS",
                (false, false) => "FAIL",
                (false, true) => "FAIL (reported, not gating)",
            };
            if !o.pass && !o.reported {
                gating_failures += 1;
            }
            let line = format!("[{verdict}] criterion {}: {}", o.criterion, o.detail);
            println!("{line}");
            lines.push(line);
        }
    }
    println!("\nacceptance summary");
    for l in &lines {
        println!("{l}");
    }
    if gating_failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{gating_failures} gating check(s) failed");
        ExitCode::FAILURE
    }
}
