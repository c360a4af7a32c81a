use std::sync::Arc;
use std::thread;

use super::*;
use crate::data::synth::uniform_sequence;
use crate::model::{HyperParams, MemoryInit};

fn hyper() -> HyperParams {
    HyperParams {
        slots: 3,
        dim: 4,
        miu_hidden: 5,
        k_top: 2,
        mlp_widths: vec![6, 2],
        memory_init: MemoryInit::Uniform {
            scale: 0.1,
            seed: 2,
        },
        ..HyperParams::default()
    }
}

fn vocab(n: usize) -> Vocabulary {
    let mut v = Vocabulary::new();
    for i in 1..n {
        v.insert(&format!("i{i}"), &format!("c{}", i % 4));
    }
    v
}

fn params(seed: u64) -> MimnParams {
    MimnParams::new(hyper(), 20, 5, seed).unwrap()
}

fn store() -> StateStore {
    StateStore::new(Deployment::new(params(1), vocab(20), 1))
}

fn same_numbers(a: &UserInterestState, b: &UserInterestState) -> bool {
    a.memory == b.memory && a.induction == b.induction && a.usage == b.usage && a.events == b.events
}

#[test]
fn one_event_equals_length_one_sequence() {
    let s = store();
    let ev = BehaviorEvent::new("alice", "i3", "c3", 10);
    let st = s.apply_event(&ev).unwrap();
    let key = s.deployment().vocab.key("i3", "c3");
    let offline = params(1).process_sequence(&[key]).unwrap().state;
    assert!(same_numbers(&st, &offline));
    assert_eq!(st.version, 1);
    assert_eq!(s.get_state("alice"), st);
}

#[test]
fn replay_equals_offline_fold() {
    let s = store();
    let seq = uniform_sequence(300, 20, 5, 4);
    for &k in &seq {
        s.apply_key("bob", k).unwrap();
    }
    let offline = params(1).process_sequence(&seq).unwrap().state;
    assert!(same_numbers(&s.get_state("bob"), &offline));
}

#[test]
fn unknown_user_reads_cold_start() {
    let s = store();
    assert!(s.is_empty());
    let cold = s.get_state("nobody");
    assert!(same_numbers(&cold, &hyper().init_state()));
    assert!(s.is_empty());
    assert!(matches!(
        s.apply_event(&BehaviorEvent::new("", "i1", "c1", 0)),
        Err(StoreError::InvalidEvent(_))
    ));
}

#[test]
fn warm_up_then_event_equals_full_replay() {
    let s = store();
    assert_eq!(s.warm_up(&[]), WarmUpReport::default());
    let mut logs = Vec::new();
    for (u, seed) in [("u1", 1), ("u2", 2)] {
        for (t, k) in uniform_sequence(30, 20, 5, seed).iter().enumerate() {
            logs.push(BehaviorEvent::new(
                u,
                &format!("i{}", k.item),
                &format!("c{}", k.item % 4),
                t as u64,
            ));
        }
    }
    // Shuffle time order within the file; warm-up sorts by timestamp.
    logs.reverse();
    let r = s.warm_up(&logs);
    assert_eq!(
        r,
        WarmUpReport {
            initialized: 2,
            failed: 0
        }
    );
    let extra = BehaviorEvent::new("u1", "i7", "c3", 99);
    let after = s.apply_event(&extra).unwrap();

    let replay = store();
    let mut ordered: Vec<&BehaviorEvent> = logs.iter().filter(|e| e.user_id == "u1").collect();
    ordered.sort_by_key(|e| e.timestamp);
    for e in ordered {
        replay.apply_event(e).unwrap();
    }
    assert_eq!(replay.apply_event(&extra).unwrap(), after);

    let before = s.get_state("u2");
    s.warm_up(&logs);
    assert_eq!(s.get_state("u2"), before);
}

#[test]
fn snapshot_rollback_round_trip() {
    let s = store();
    for (i, k) in uniform_sequence(20, 20, 5, 3).into_iter().enumerate() {
        s.apply_key(&format!("user{}", i % 4), k).unwrap();
    }
    let before: Vec<_> = s.users().iter().map(|u| s.get_state(u)).collect();
    let meta = s.snapshot().unwrap();
    assert_eq!(meta.users, 4);
    s.rollback(meta.id).unwrap();
    let after: Vec<_> = s.users().iter().map(|u| s.get_state(u)).collect();
    assert_eq!(before, after);

    let tail = uniform_sequence(10, 20, 5, 8);
    for &k in &tail {
        s.apply_key("user0", k).unwrap();
    }
    let first = s.get_state("user0");
    s.rollback(meta.id).unwrap();
    for &k in &tail {
        s.apply_key("user0", k).unwrap();
    }
    assert_eq!(s.get_state("user0"), first);
    assert!(matches!(
        s.rollback(999),
        Err(StoreError::UnknownSnapshot(999))
    ));

    let snap = s.snapshot_by_id(meta.id).unwrap();
    let copy = Snapshot::from_bytes(snap.bytes().to_vec()).unwrap();
    assert_eq!(copy.meta, snap.meta);
    assert_eq!(copy.states().unwrap(), snap.states().unwrap());
}

#[test]
fn retention_evicts_oldest() {
    let s = store();
    s.apply_key("a", ItemKey::new(1, 1)).unwrap();
    let ids: Vec<u64> = (0..8).map(|_| s.snapshot().unwrap().id).collect();
    let kept: Vec<u64> = s.snapshots().iter().map(|m| m.id).collect();
    assert_eq!(kept, ids[1..].to_vec());
    assert!(s.rollback(ids[0]).is_err());
}

#[test]
fn every_single_bit_flip_is_detected() {
    let s = store();
    s.apply_key("a", ItemKey::new(1, 1)).unwrap();
    let bytes = s
        .snapshot_by_id(s.snapshot().unwrap().id)
        .unwrap()
        .bytes()
        .to_vec();
    for i in 0..bytes.len() {
        for bit in [0, 3, 7] {
            let mut bad = bytes.clone();
            bad[i] ^= 1 << bit;
            assert!(
                Snapshot::from_bytes(bad).is_err(),
                "flip at byte {i} bit {bit}"
            );
        }
    }
}

#[test]
fn failed_restore_leaves_store_untouched() {
    let s = store();
    s.apply_key("a", ItemKey::new(1, 1)).unwrap();
    let meta = s.snapshot().unwrap();
    s.apply_key("a", ItemKey::new(2, 1)).unwrap();
    let current = s.get_state("a");
    // Same ids, different shapes: restoring must be refused.
    let wide = HyperParams {
        slots: 4,
        ..hyper()
    };
    let other = StateStore::new(Deployment::new(
        MimnParams::new(wide, 20, 5, 1).unwrap(),
        vocab(20),
        1,
    ));
    other.apply_key("a", ItemKey::new(1, 1)).unwrap();
    let foreign = other.snapshot_by_id(other.snapshot().unwrap().id).unwrap();
    assert!(s.restore(&foreign).is_err());
    assert_eq!(s.get_state("a"), current);
    assert!(s.rollback(meta.id).is_ok());
}

#[test]
fn deploy_swaps_parameters_between_events() {
    let s = store();
    let k1 = ItemKey::new(3, 1);
    let k2 = ItemKey::new(4, 2);
    let a = s.apply_key("u", k1).unwrap();
    assert!(matches!(
        s.deploy_params(params(2), vocab(20), 1),
        Err(StoreError::StaleVersion { .. })
    ));
    s.deploy_params(params(2), vocab(20), 2).unwrap();
    let b = s.apply_key("u", k2).unwrap();
    assert_eq!(b.version, 2);
    let expect = params(2).resume(&a, &[k2]).unwrap();
    assert!(same_numbers(&b, &expect));
}

#[test]
fn shape_change_quarantines_old_states() {
    let s = store();
    s.apply_key("old", ItemKey::new(1, 1)).unwrap();
    let wide = HyperParams {
        slots: 4,
        ..hyper()
    };
    s.deploy_params(
        MimnParams::new(wide.clone(), 20, 5, 3).unwrap(),
        vocab(20),
        2,
    )
    .unwrap();
    match s.apply_key("old", ItemKey::new(2, 2)) {
        Err(StoreError::Quarantined { user, .. }) => assert_eq!(user, "old"),
        other => panic!("{other:?}"),
    }
    assert_eq!(s.quarantined().len(), 1);
    assert!(!s.contains("old"));
    // The user restarts from the new cold state.
    let fresh = s.apply_key("old", ItemKey::new(2, 2)).unwrap();
    assert_eq!(fresh.memory.shape(), &[4, 4]);
}

#[test]
fn concurrent_users_match_serial_replay() {
    let s = Arc::new(store());
    let users: Vec<(String, Vec<ItemKey>)> = (0..6)
        .map(|u| (format!("p{u}"), uniform_sequence(40, 20, 5, 100 + u)))
        .collect();
    let mut handles = Vec::new();
    for (u, seq) in users.clone() {
        let s = Arc::clone(&s);
        handles.push(thread::spawn(move || {
            for k in seq {
                s.apply_key(&u, k).unwrap();
                let _ = s.get_state("p0");
            }
        }));
    }
    let reader = {
        let s = Arc::clone(&s);
        thread::spawn(move || {
            for _ in 0..200 {
                for u in 0..6 {
                    let st = s.get_state(&format!("p{u}"));
                    assert!(st.memory.is_finite());
                }
            }
        })
    };
    let snapper = {
        let s = Arc::clone(&s);
        thread::spawn(move || {
            for _ in 0..5 {
                let m = s.snapshot().unwrap();
                let snap = s.snapshot_by_id(m.id);
                // A snapshot only holds whole events: every state is a
                // prefix fold of its user's sequence.
                if let Some(snap) = snap {
                    for (_, st) in snap.states().unwrap() {
                        assert!(st.events <= 40);
                    }
                }
            }
        })
    };
    for h in handles {
        h.join().unwrap();
    }
    reader.join().unwrap();
    snapper.join().unwrap();
    let p = params(1);
    for (u, seq) in &users {
        let offline = p.process_sequence(seq).unwrap().state;
        assert!(same_numbers(&s.get_state(u), &offline), "{u}");
    }
}

#[test]
fn concurrent_deploys_never_tear_parameters() {
    let s = Arc::new(store());
    let versions: Vec<MimnParams> = (0..5).map(|v| params(v + 1)).collect();
    let mut handles = Vec::new();
    for u in 0..3 {
        let s = Arc::clone(&s);
        handles.push(thread::spawn(move || {
            let mut log = Vec::new();
            for k in uniform_sequence(60, 20, 5, u) {
                let prev = s.get_state(&format!("w{u}"));
                let next = s.apply_key(&format!("w{u}"), k).unwrap();
                log.push((prev, k, next));
            }
            log
        }));
    }
    for (i, p) in versions.iter().enumerate().skip(1) {
        thread::yield_now();
        s.deploy_params(p.clone(), vocab(20), i as u64 + 1).unwrap();
    }
    for h in handles {
        for (prev, k, next) in h.join().unwrap() {
            let p = &versions[next.version as usize - 1];
            let expect = p.resume(&prev, &[k]).unwrap();
            assert!(same_numbers(&next, &expect));
        }
    }
}
