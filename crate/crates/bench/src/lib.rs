//! Fixtures shared by the benchmarks.

use mimn_core::data::synth::zipf_stream;
use mimn_core::data::Vocabulary;
use mimn_core::model::{HyperParams, ItemKey, MemoryInit, MimnParams};
use mimn_core::uic::{Deployment, StateStore};

pub const N_ITEMS: usize = 4000;
pub const N_CATEGORIES: usize = 20;

/// Default-sized parameters over a 4000-item, 20-category vocabulary.
pub fn params() -> MimnParams {
    let hyper = HyperParams {
        memory_init: MemoryInit::Uniform {
            scale: 0.1,
            seed: 1,
        },
        ..HyperParams::default()
    };
    MimnParams::new(hyper, N_ITEMS + 1, N_CATEGORIES + 1, 1).expect("valid hyperparameters")
}

pub fn history(len: usize, seed: u64) -> Vec<ItemKey> {
    zipf_stream(len, N_ITEMS, N_CATEGORIES, 1.1, seed)
}

/// A store holding `users` users warmed up on `len` events each.
pub fn warm_store(params: &MimnParams, users: usize, len: usize) -> StateStore {
    let store = StateStore::new(Deployment::new(params.clone(), Vocabulary::new(), 1));
    let logs: Vec<(String, Vec<ItemKey>)> = (0..users)
        .map(|u| (format!("u{u}"), history(len, u as u64)))
        .collect();
    store.warm_up_keyed(&logs);
    store
}
