use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::grad::{check_gradients, Tensor};

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn small_hyper() -> HyperParams {
    HyperParams {
        slots: 3,
        dim: 4,
        miu_hidden: 5,
        k_top: 2,
        lambda: 0.1,
        mlp_widths: vec![6, 2],
        profile_dim: 0,
        memory_init: MemoryInit::Uniform {
            scale: 0.1,
            seed: 9,
        },
        mur: true,
        miu: true,
    }
}

fn sequence(rng: &mut ChaCha8Rng, len: usize, items: u32, cats: u32) -> Vec<ItemKey> {
    (0..len)
        .map(|_| ItemKey::new(rng.random_range(1..items), rng.random_range(1..cats)))
        .collect()
}

#[test]
fn read_concentrates_on_the_matching_slot() {
    let mut mem = Tensor::zeros(&[4, 4]);
    for i in 0..4 {
        mem.row_mut(i)[i] = 1.0;
    }
    let key = Tensor::vector(vec![2.0, 0.0, 0.0, 0.0]);
    let r = memory_read(&mem, &key).unwrap();
    let e = 1f64.exp();
    let expect = [
        e / (e + 3.0),
        1.0 / (e + 3.0),
        1.0 / (e + 3.0),
        1.0 / (e + 3.0),
    ];
    assert!(close(r.weights.data(), &expect, 1e-7));
    assert!((r.weights.data()[0] - 0.4754).abs() < 1e-4);
    assert!((r.weights.data()[1] - 0.1749).abs() < 1e-4);
    assert!(close(r.readout.data(), &expect, 1e-7));
}

#[test]
fn regularizer_of_two_slots() {
    let w = Tensor::vector(vec![0.6, 0.4]);
    assert!((utilization_reg_loss(&w, 1.0).unwrap() - 0.02).abs() < 1e-15);
    let flat = Tensor::vector(vec![0.25; 4]);
    assert_eq!(utilization_reg_loss(&flat, 3.0).unwrap(), 0.0);
}

#[test]
fn write_extremes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mem = random(&mut rng, &[3, 2], 1.0);
    let add = Tensor::vector(vec![0.5, -0.25]);
    let w = Tensor::vector(vec![1.0, 0.0, 0.0]);
    let full = memory_write(&mem, &w, &Tensor::vector(vec![1.0, 1.0]), &add).unwrap();
    assert_eq!(full.row(0), add.data());
    assert_eq!(full.row(1), mem.row(1));
    let none = memory_write(&mem, &w, &Tensor::vector(vec![0.0, 0.0]), &add).unwrap();
    assert_eq!(none.row(0), &[mem.get2(0, 0) + 0.5, mem.get2(0, 1) - 0.25]);
    assert_eq!(none.row(2), mem.row(2));
}

#[test]
fn zero_transfer_spreads_uniformly() {
    let w = Tensor::vector(vec![0.7, 0.2, 0.1]);
    let usage = Tensor::vector(vec![5.0, 1.0, 0.0]);
    let out = rebalance_write_weight(&w, &usage, &Tensor::zeros(&[3, 3])).unwrap();
    let expect: Vec<f64> = w.data().iter().map(|x| x / 3.0).collect();
    assert!(close(out.data(), &expect, 1e-15));

    let single = rebalance_write_weight(
        &Tensor::vector(vec![1.0]),
        &Tensor::vector(vec![4.0]),
        &Tensor::matrix(1, 1, vec![2.5]).unwrap(),
    )
    .unwrap();
    assert_eq!(single.data(), &[1.0]);
}

#[test]
fn top_k_prefers_low_index_on_ties() {
    assert_eq!(top_k(&[0.1, 0.4, 0.4, 0.1], 1), vec![1]);
    assert_eq!(top_k(&[0.25; 4], 2), vec![0, 1]);
    assert_eq!(top_k(&[0.1, 0.2, 0.3, 0.4], 2), vec![2, 3]);
    assert_eq!(top_k(&[0.5, 0.5], 2), vec![0, 1]);
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mat_vec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row(r).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Scalar-loop GRU used as an independent reference.
fn gru_reference(p: &MimnParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let t = |n: &str| p.store.get(p.store.id(&format!("miu.{n}")).unwrap());
    let gate = |w: &str, u: &str, b: &str, hh: &[f64]| -> Vec<f64> {
        let (wx, uh) = (mat_vec(t(w), x), mat_vec(t(u), hh));
        (0..h.len())
            .map(|i| wx[i] + uh[i] + t(b).data()[i])
            .collect()
    };
    let z: Vec<f64> = gate("wz", "uz", "bz", h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate("wr", "ur", "br", h).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let n: Vec<f64> = gate("wn", "un", "bn", &rh)
        .into_iter()
        .map(f64::tanh)
        .collect();
    (0..h.len())
        .map(|i| (1.0 - z[i]) * n[i] + z[i] * h[i])
        .collect()
}

#[test]
fn induction_updates_only_selected_rows() {
    let hp = small_hyper();
    let p = MimnParams::new(hp.clone(), 5, 3, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = random(&mut rng, &[3, 5], 1.0);
    let m = random(&mut rng, &[3, 4], 1.0);
    let emb = random(&mut rng, &[4], 1.0);
    let w = Tensor::vector(vec![0.2, 0.5, 0.3]);
    let out = miu_update(&p, &s, &m, &w, &emb, 2).unwrap();
    assert_eq!(out.row(0), s.row(0));
    for i in [1, 2] {
        let x: Vec<f64> = m.row(i).iter().chain(emb.data()).copied().collect();
        assert!(close(out.row(i), &gru_reference(&p, &x, s.row(i)), 1e-12));
    }
    assert!(miu_update(&p, &s, &m, &w, &emb, 0).is_err());
}

#[test]
fn single_event_matches_manual_composition() {
    let hp = small_hyper();
    let p = MimnParams::new(hp.clone(), 6, 3, 11).unwrap();
    let key = ItemKey::new(3, 2);
    let init = hp.init_state();
    let out = p.process_sequence(&[key]).unwrap();

    let emb = p.embedding(key).unwrap();
    let c = controller_step(&p, &emb).unwrap();
    let read = memory_read(&init.memory, &c.read_key).unwrap();
    let write = memory_read(&init.memory, &c.write_key).unwrap().weights;
    let transfer = p.store.get(p.transfer_id());
    let write = rebalance_write_weight(&write, &init.usage, transfer).unwrap();
    let memory = memory_write(&init.memory, &write, &c.erase, &c.add).unwrap();
    let induction =
        miu_update(&p, &init.induction, &memory, &read.weights, &emb, hp.k_top).unwrap();

    assert_eq!(out.state.memory, memory);
    assert_eq!(out.state.induction, induction);
    assert_eq!(out.state.usage.data(), write.data());
    assert_eq!(out.write_sum.data(), write.data());
    assert_eq!(out.state.events, 1);
}

#[test]
fn ablation_flags_disable_their_parts() {
    let mut hp = small_hyper();
    hp.miu = false;
    hp.mur = false;
    let p = MimnParams::new(hp.clone(), 6, 3, 11).unwrap();
    let out = p
        .process_sequence(&[ItemKey::new(1, 1), ItemKey::new(2, 2)])
        .unwrap();
    assert_eq!(out.state.induction, hp.init_state().induction);
    let total: f64 = out.state.usage.data().iter().sum();
    assert!((total - 2.0).abs() < 1e-12);
    assert_eq!(hp.effective_lambda(), 0.0);
}

#[test]
fn zero_head_predicts_one_half() {
    let hp = small_hyper();
    let mut p = MimnParams::new(hp, 6, 3, 5).unwrap();
    for name in ["mlp.1.w", "mlp.1.b"] {
        let id = p.store.id(name).unwrap();
        p.store.get_mut(id).data_mut().fill(0.0);
    }
    let st = p.process_sequence(&[ItemKey::new(2, 1)]).unwrap().state;
    assert_eq!(p.predict(&st, ItemKey::new(4, 2), &[]).unwrap(), 0.5);
}

#[test]
fn rejects_bad_inputs() {
    let hp = small_hyper();
    let mut p = MimnParams::new(hp.clone(), 6, 3, 5).unwrap();
    assert_eq!(p.process_sequence(&[]), Err(ModelError::EmptySequence));
    let st = hp.init_state();
    assert!(matches!(
        p.predict(&st, ItemKey::new(1, 1), &[1.0]),
        Err(ModelError::ProfileWidth { .. })
    ));
    let wrong = HyperParams {
        slots: 2,
        ..hp.clone()
    }
    .init_state();
    assert!(matches!(
        p.predict(&wrong, ItemKey::new(1, 1), &[]),
        Err(ModelError::StateShape { .. })
    ));
    // Unknown indices fall back to the reserved row unless rejected.
    let oov = p.predict(&st, ItemKey::new(0, 0), &[]).unwrap();
    assert_eq!(p.predict(&st, ItemKey::new(99, 77), &[]).unwrap(), oov);
    p.unknown_ids = UnknownIdPolicy::Reject;
    assert!(matches!(
        p.predict(&st, ItemKey::new(99, 1), &[]),
        Err(ModelError::UnknownId { .. })
    ));
    let bad_k = HyperParams { k_top: 4, ..hp };
    assert!(bad_k.validate().is_err());
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let mut hp = small_hyper();
    hp.lambda = 0.5;
    let mut p = MimnParams::new(hp, 6, 4, 3).unwrap();
    // A non-zero transfer matrix exercises the re-balance path.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t = p.transfer_id();
    *p.store.get_mut(t) = random(&mut rng, &[3, 3], 0.5);
    let batch: Vec<Sample> = (0..2)
        .map(|i| Sample {
            user: format!("u{i}"),
            history: sequence(&mut rng, 4, 6, 4),
            target: ItemKey::new(1 + i as u32, 1 + i as u32),
            label: i as u8,
        })
        .collect();
    let obj = BatchObjective {
        model: &p,
        batch: &batch,
    };
    let report = check_gradients(&obj, &p.store, 1e-4).unwrap();
    assert!(
        report.max_relative_error < 1e-5,
        "max relative error {} at {:?}",
        report.max_relative_error,
        report.worst
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn prefix_split_is_exact(seed in 0u64..1000, len in 2usize..12, cut_frac in 0.0f64..1.0) {
        let hp = small_hyper();
        let p = MimnParams::new(hp, 8, 4, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = sequence(&mut rng, len, 8, 4);
        let cut = 1 + ((len - 1) as f64 * cut_frac) as usize;
        let whole = p.process_sequence(&seq).unwrap().state;
        let head = p.process_sequence(&seq[..cut]).unwrap().state;
        let resumed = p.resume(&head, &seq[cut..]).unwrap();
        prop_assert_eq!(resumed, whole);
    }

    #[test]
    fn read_weights_are_a_distribution(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mem = random(&mut rng, &[5, 3], 2.0);
        let key = random(&mut rng, &[3], 2.0);
        let r = memory_read(&mem, &key).unwrap();
        let total: f64 = r.weights.data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(r.weights.data().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn usage_grows_by_at_most_one_per_event(seed in 0u64..1000, len in 1usize..10) {
        let hp = small_hyper();
        let p = MimnParams::new(hp, 8, 4, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 5);
        let seq = sequence(&mut rng, len, 8, 4);
        let st = p.process_sequence(&seq).unwrap().state;
        let total: f64 = st.usage.data().iter().sum();
        prop_assert!(total > 0.0 && total <= len as f64 + 1e-12);
        prop_assert!(st.usage.data().iter().all(|&u| u >= 0.0));
    }
}
