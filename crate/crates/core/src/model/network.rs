use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{lookup, mlp_forward, normal_table, xavier, GruIds, GruVars, MlpIds};
use super::memory::{
    address, controller, induct, rebalance, utilization_penalty, write, ControllerVars,
};
use super::{CtrModel, HyperParams, ItemKey, ModelError, UserInterestState};
use crate::data::Sample;
use crate::grad::{Eval, Graph, ParamId, ParamStore, Tensor};

/// What to do with an item or category index outside the embedding tables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnknownIdPolicy {
    Reject,
    /// Use row 0, the reserved out-of-vocabulary embedding.
    #[default]
    Oov,
}

/// Trainable tensors of the memory network plus the ids that locate them.
#[derive(Clone, Debug)]
pub struct MimnParams {
    pub hyper: HyperParams,
    pub store: ParamStore,
    pub unknown_ids: UnknownIdPolicy,
    item_emb: ParamId,
    cat_emb: ParamId,
    ctrl: [(ParamId, ParamId); 4],
    transfer: ParamId,
    pub(crate) gru: GruIds,
    mlp: MlpIds,
}

const CTRL_HEADS: [&str; 4] = ["read", "write", "add", "erase"];

pub(crate) struct Bound<V> {
    ctrl: ControllerVars<V>,
    transfer: V,
    gru: GruVars<V>,
    mlp: Vec<(V, V)>,
}

pub(crate) struct StateVars<V> {
    pub memory: V,
    pub induction: V,
    pub usage: V,
}

/// Final state after folding a sequence, with the sum of the write weights
/// applied along the way.
#[derive(Clone, Debug, PartialEq)]
pub struct ProcessedSequence {
    pub state: UserInterestState,
    pub write_sum: Tensor,
}

impl MimnParams {
    /// Randomly initialized parameters for vocabularies of the given sizes
    /// (both including the reserved index 0).
    pub fn new(
        hyper: HyperParams,
        n_items: usize,
        n_categories: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (hyper.dim, hyper.miu_hidden);
        let mut store = ParamStore::new();
        store.add("item_emb", normal_table(&mut rng, n_items.max(1), d, 0.1));
        store.add(
            "cat_emb",
            normal_table(&mut rng, n_categories.max(1), d, 0.1),
        );
        for head in CTRL_HEADS {
            store.add(format!("ctrl.{head}.w"), xavier(&mut rng, d, d));
            store.add(format!("ctrl.{head}.b"), Tensor::zeros(&[d]));
        }
        store.add("transfer", Tensor::zeros(&[hyper.slots, hyper.slots]));
        GruIds::register(&mut store, "miu", 2 * d, h, &mut rng);
        MlpIds::register(
            &mut store,
            "mlp",
            hyper.head_input_width(),
            &hyper.mlp_widths,
            &mut rng,
        );
        Self::from_store(hyper, store)
    }

    /// Wraps an existing parameter set, checking every expected tensor.
    pub fn from_store(hyper: HyperParams, store: ParamStore) -> Result<Self, ModelError> {
        hyper.validate()?;
        let (m, d, h) = (hyper.slots, hyper.dim, hyper.miu_hidden);
        let table = |name: &str| -> Result<ParamId, ModelError> {
            let id = store
                .id(name)
                .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
            let shape = store.get(id).shape();
            if shape.len() != 2 || shape[1] != d {
                return Err(ModelError::ParamShape {
                    name: name.to_string(),
                    expected: vec![shape[0], d],
                    got: shape.to_vec(),
                });
            }
            Ok(id)
        };
        let item_emb = table("item_emb")?;
        let cat_emb = table("cat_emb")?;
        let mut ctrl = [(ParamId(0), ParamId(0)); 4];
        for (slot, head) in ctrl.iter_mut().zip(CTRL_HEADS) {
            *slot = (
                lookup(&store, &format!("ctrl.{head}.w"), &[d, d])?,
                lookup(&store, &format!("ctrl.{head}.b"), &[d])?,
            );
        }
        let transfer = lookup(&store, "transfer", &[m, m])?;
        let gru = GruIds::resolve(&store, "miu", 2 * d, h)?;
        let mlp = MlpIds::resolve(&store, "mlp", hyper.head_input_width(), &hyper.mlp_widths)?;
        Ok(MimnParams {
            hyper,
            store,
            unknown_ids: UnknownIdPolicy::default(),
            item_emb,
            cat_emb,
            ctrl,
            transfer,
            gru,
            mlp,
        })
    }

    pub fn n_items(&self) -> usize {
        self.store.get(self.item_emb).rows()
    }

    pub fn n_categories(&self) -> usize {
        self.store.get(self.cat_emb).rows()
    }

    pub fn transfer_id(&self) -> ParamId {
        self.transfer
    }

    pub fn embedding_ids(&self) -> (ParamId, ParamId) {
        (self.item_emb, self.cat_emb)
    }

    pub fn head_bias_ids(&self) -> Vec<ParamId> {
        self.mlp.bias_ids().collect()
    }

    pub(crate) fn bind_controller<G: Graph>(&self, g: &mut G) -> ControllerVars<G::Var> {
        let mut pair = |i: usize| (g.param(self.ctrl[i].0), g.param(self.ctrl[i].1));
        ControllerVars {
            read: pair(0),
            write: pair(1),
            add: pair(2),
            erase: pair(3),
        }
    }

    pub(crate) fn bind<G: Graph>(&self, g: &mut G) -> Bound<G::Var> {
        Bound {
            ctrl: self.bind_controller(g),
            transfer: g.param(self.transfer),
            gru: self.gru.bind(g),
            mlp: self.mlp.bind(g),
        }
    }

    pub fn resolve(&self, key: ItemKey) -> Result<ItemKey, ModelError> {
        let fix = |index: u32, len: usize, kind: &'static str| -> Result<u32, ModelError> {
            if (index as usize) < len {
                Ok(index)
            } else {
                match self.unknown_ids {
                    UnknownIdPolicy::Oov => Ok(0),
                    UnknownIdPolicy::Reject => Err(ModelError::UnknownId {
                        kind,
                        index,
                        vocab: len,
                    }),
                }
            }
        };
        Ok(ItemKey {
            item: fix(key.item, self.n_items(), "item")?,
            category: fix(key.category, self.n_categories(), "category")?,
        })
    }

    /// Behavior embedding: item row plus category row.
    pub(crate) fn embed<G: Graph>(&self, g: &mut G, key: ItemKey) -> Result<G::Var, ModelError> {
        let key = self.resolve(key)?;
        let item = g.param_row(self.item_emb, key.item as usize)?;
        let cat = g.param_row(self.cat_emb, key.category as usize)?;
        Ok(g.add(&item, &cat)?)
    }

    pub fn embedding(&self, key: ItemKey) -> Result<Tensor, ModelError> {
        let mut g = Eval::new(&self.store);
        Ok(self.embed(&mut g, key)?.into_owned())
    }

    /// One event of the per-user update: embed, controller, read, re-balance,
    /// write, accumulate, induct.
    pub(crate) fn step<G: Graph>(
        &self,
        g: &mut G,
        b: &Bound<G::Var>,
        st: &StateVars<G::Var>,
        key: ItemKey,
    ) -> Result<StateVars<G::Var>, ModelError> {
        let hp = &self.hyper;
        let emb = self.embed(g, key)?;
        let heads = controller(g, &b.ctrl, &emb)?;
        let read_w = address(g, &heads.read_key, &st.memory)?;
        let write_w = address(g, &heads.write_key, &st.memory)?;
        let write_w = if hp.mur {
            rebalance(g, &write_w, &st.usage, &b.transfer)?
        } else {
            write_w
        };
        let memory = write(g, &st.memory, &write_w, &heads.erase, &heads.add)?;
        let usage = g.add(&st.usage, &write_w)?;
        let induction = if hp.miu {
            induct(g, &b.gru, &st.induction, &memory, &read_w, &emb, hp.k_top)?
        } else {
            st.induction.clone()
        };
        Ok(StateVars {
            memory,
            induction,
            usage,
        })
    }

    fn fold<G: Graph>(
        &self,
        g: &mut G,
        b: &Bound<G::Var>,
        start: StateVars<G::Var>,
        seq: &[ItemKey],
    ) -> Result<StateVars<G::Var>, ModelError> {
        let mut st = start;
        for &key in seq {
            st = self.step(g, b, &st, key)?;
        }
        Ok(st)
    }

    /// Folds `seq` into the cold-start state.
    pub fn process_sequence(&self, seq: &[ItemKey]) -> Result<ProcessedSequence, ModelError> {
        if seq.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let init = self.hyper.init_state();
        let state = self.resume(&init, seq)?;
        let write_sum = Tensor::vector(
            state
                .usage
                .data()
                .iter()
                .zip(init.usage.data())
                .map(|(a, b)| a - b)
                .collect(),
        );
        Ok(ProcessedSequence { state, write_sum })
    }

    /// Continues from `state` over `seq`; an empty `seq` returns `state`.
    pub fn resume(
        &self,
        state: &UserInterestState,
        seq: &[ItemKey],
    ) -> Result<UserInterestState, ModelError> {
        state.check_shape(&self.hyper)?;
        let mut g = Eval::new(&self.store);
        let b = self.bind(&mut g);
        let start = StateVars {
            memory: g.constant(state.memory.clone()),
            induction: g.constant(state.induction.clone()),
            usage: g.constant(state.usage.clone()),
        };
        let end = self.fold(&mut g, &b, start, seq)?;
        Ok(UserInterestState {
            memory: end.memory.into_owned(),
            induction: end.induction.into_owned(),
            usage: end.usage.into_owned(),
            events: state.events + seq.len() as u64,
            version: state.version,
        })
    }

    fn head<G: Graph>(
        &self,
        g: &mut G,
        b: &Bound<G::Var>,
        memory: &G::Var,
        induction: &G::Var,
        target: ItemKey,
        profile: &[f64],
    ) -> Result<G::Var, ModelError> {
        if profile.len() != self.hyper.profile_dim {
            return Err(ModelError::ProfileWidth {
                expected: self.hyper.profile_dim,
                got: profile.len(),
            });
        }
        let target = self.resolve(target)?;
        let mem_pool = g.sum_rows(memory)?;
        let ind_pool = g.sum_rows(induction)?;
        let item = g.param_row(self.item_emb, target.item as usize)?;
        let cat = g.param_row(self.cat_emb, target.category as usize)?;
        let features = if profile.is_empty() {
            g.concat(&[&mem_pool, &ind_pool, &item, &cat])?
        } else {
            let p = g.constant(Tensor::vector(profile.to_vec()));
            g.concat(&[&mem_pool, &ind_pool, &item, &cat, &p])?
        };
        Ok(mlp_forward(g, &b.mlp, &features)?)
    }

    /// Two-way logits of the prediction head for a stored state.
    pub fn logits(
        &self,
        state: &UserInterestState,
        target: ItemKey,
        profile: &[f64],
    ) -> Result<Tensor, ModelError> {
        state.check_shape(&self.hyper)?;
        let mut g = Eval::new(&self.store);
        let b = self.bind(&mut g);
        let memory = g.constant(state.memory.clone());
        let induction = g.constant(state.induction.clone());
        Ok(self
            .head(&mut g, &b, &memory, &induction, target, profile)?
            .into_owned())
    }

    /// Click probability of `target` given a user's interest state.
    pub fn predict(
        &self,
        state: &UserInterestState,
        target: ItemKey,
        profile: &[f64],
    ) -> Result<f64, ModelError> {
        let logits = self.logits(state, target, profile)?;
        Ok(click_probability(&logits))
    }

    /// Cross-entropy of one sample plus its utilization penalty.
    pub fn sample_objective<G: Graph>(
        &self,
        g: &mut G,
        sample: &Sample,
    ) -> Result<G::Var, ModelError> {
        if sample.history.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let b = self.bind(g);
        let init = self.hyper.init_state();
        let start = StateVars {
            memory: g.constant(init.memory),
            induction: g.constant(init.induction),
            usage: g.constant(init.usage),
        };
        let end = self.fold(g, &b, start, &sample.history)?;
        let profile = vec![0.0; self.hyper.profile_dim];
        let logits = self.head(g, &b, &end.memory, &end.induction, sample.target, &profile)?;
        let xent = cross_entropy(g, &logits, sample.label)?;
        let lambda = self.hyper.effective_lambda();
        if lambda > 0.0 {
            // Usage starts at zero, so the final usage is the summed write weights.
            let reg = utilization_penalty(g, &end.usage, lambda)?;
            Ok(g.add(&xent, &reg)?)
        } else {
            Ok(xent)
        }
    }

    /// Mean per-sample objective over a batch.
    pub fn training_loss(&self, batch: &[Sample]) -> Result<f64, ModelError> {
        batch_loss(self, batch)
    }
}

pub(crate) fn cross_entropy<G: Graph>(
    g: &mut G,
    logits: &G::Var,
    label: u8,
) -> Result<G::Var, ModelError> {
    let lp = g.log_softmax(logits)?;
    let pick = g.slice(&lp, label as usize, 1)?;
    Ok(g.scale(&pick, -1.0)?)
}

/// Probability of the "click" class (index 1) under a softmax of `logits`.
pub fn click_probability(logits: &Tensor) -> f64 {
    let (a, b) = (logits.data()[0], logits.data()[1]);
    let max = a.max(b);
    let (ea, eb) = ((a - max).exp(), (b - max).exp());
    eb / (ea + eb)
}

pub(crate) fn batch_loss<M: CtrModel>(model: &M, batch: &[Sample]) -> Result<f64, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = 0.0;
    for s in batch {
        let mut g = Eval::new(model.store());
        let v = model.sample_objective(&mut g, s)?;
        total += g.value(&v).item();
    }
    Ok(total / batch.len() as f64)
}

impl CtrModel for MimnParams {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn sample_objective<G: Graph>(&self, g: &mut G, sample: &Sample) -> Result<G::Var, ModelError> {
        MimnParams::sample_objective(self, g, sample)
    }

    fn score(&self, sample: &Sample) -> Result<f64, ModelError> {
        let state = self.process_sequence(&sample.history)?.state;
        self.predict(&state, sample.target, &vec![0.0; self.hyper.profile_dim])
    }

    fn usage_variance(&self, history: &[ItemKey]) -> Result<Option<f64>, ModelError> {
        Ok(Some(self.process_sequence(history)?.state.usage_variance()))
    }
}
