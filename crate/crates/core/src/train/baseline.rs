use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::grad::{Eval, Graph, ParamId, ParamStore, Tensor};
use crate::model::{
    click_probability, cross_entropy, mlp_forward, normal_table, CtrModel, HyperParams, ItemKey,
    MlpIds, ModelError,
};

/// Sum-pooled behavior embeddings, concatenated with the target embedding
/// and profile features, fed to the same MLP head as the memory network.
///
/// Only `dim`, `mlp_widths` and `profile_dim` of the hyperparameters apply.
#[derive(Clone, Debug)]
pub struct EmbeddingMlp {
    pub hyper: HyperParams,
    pub store: ParamStore,
    item_emb: ParamId,
    cat_emb: ParamId,
    mlp: MlpIds,
}

fn input_width(hyper: &HyperParams) -> usize {
    3 * hyper.dim + hyper.profile_dim
}

impl EmbeddingMlp {
    pub fn new(
        hyper: HyperParams,
        n_items: usize,
        n_categories: usize,
        seed: u64,
    ) -> Result<Self, ModelError> {
        hyper.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        store.add(
            "item_emb",
            normal_table(&mut rng, n_items.max(1), hyper.dim, 0.1),
        );
        store.add(
            "cat_emb",
            normal_table(&mut rng, n_categories.max(1), hyper.dim, 0.1),
        );
        MlpIds::register(
            &mut store,
            "mlp",
            input_width(&hyper),
            &hyper.mlp_widths,
            &mut rng,
        );
        Self::from_store(hyper, store)
    }

    pub fn from_store(hyper: HyperParams, store: ParamStore) -> Result<Self, ModelError> {
        hyper.validate()?;
        let table = |name: &str| -> Result<ParamId, ModelError> {
            let id = store
                .id(name)
                .ok_or_else(|| ModelError::MissingParam(name.into()))?;
            let shape = store.get(id).shape();
            if shape.len() != 2 || shape[1] != hyper.dim {
                return Err(ModelError::ParamShape {
                    name: name.into(),
                    expected: vec![shape[0], hyper.dim],
                    got: shape.to_vec(),
                });
            }
            Ok(id)
        };
        let item_emb = table("item_emb")?;
        let cat_emb = table("cat_emb")?;
        let mlp = MlpIds::resolve(&store, "mlp", input_width(&hyper), &hyper.mlp_widths)?;
        Ok(EmbeddingMlp {
            hyper,
            store,
            item_emb,
            cat_emb,
            mlp,
        })
    }

    fn rows(&self, key: ItemKey) -> (usize, usize) {
        let clamp = |i: u32, n: usize| if (i as usize) < n { i as usize } else { 0 };
        (
            clamp(key.item, self.store.get(self.item_emb).rows()),
            clamp(key.category, self.store.get(self.cat_emb).rows()),
        )
    }

    fn embed<G: Graph>(&self, g: &mut G, key: ItemKey) -> Result<G::Var, ModelError> {
        let (i, c) = self.rows(key);
        let a = g.param_row(self.item_emb, i)?;
        let b = g.param_row(self.cat_emb, c)?;
        Ok(g.add(&a, &b)?)
    }

    fn logits<G: Graph>(
        &self,
        g: &mut G,
        history: &[ItemKey],
        target: ItemKey,
        profile: &[f64],
    ) -> Result<G::Var, ModelError> {
        if history.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        if profile.len() != self.hyper.profile_dim {
            return Err(ModelError::ProfileWidth {
                expected: self.hyper.profile_dim,
                got: profile.len(),
            });
        }
        let mut pooled = self.embed(g, history[0])?;
        for &k in &history[1..] {
            let e = self.embed(g, k)?;
            pooled = g.add(&pooled, &e)?;
        }
        let (i, c) = self.rows(target);
        let item = g.param_row(self.item_emb, i)?;
        let cat = g.param_row(self.cat_emb, c)?;
        let features = if profile.is_empty() {
            g.concat(&[&pooled, &item, &cat])?
        } else {
            let p = g.constant(Tensor::vector(profile.to_vec()));
            g.concat(&[&pooled, &item, &cat, &p])?
        };
        let layers = self.mlp.bind(g);
        Ok(mlp_forward(g, &layers, &features)?)
    }

    pub fn predict(
        &self,
        history: &[ItemKey],
        target: ItemKey,
        profile: &[f64],
    ) -> Result<f64, ModelError> {
        let mut g = Eval::new(&self.store);
        let l = self.logits(&mut g, history, target, profile)?;
        Ok(click_probability(g.value(&l)))
    }
}

impl CtrModel for EmbeddingMlp {
    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn sample_objective<G: Graph>(&self, g: &mut G, sample: &Sample) -> Result<G::Var, ModelError> {
        let profile = vec![0.0; self.hyper.profile_dim];
        let logits = self.logits(g, &sample.history, sample.target, &profile)?;
        cross_entropy(g, &logits, sample.label)
    }

    fn score(&self, sample: &Sample) -> Result<f64, ModelError> {
        self.predict(
            &sample.history,
            sample.target,
            &vec![0.0; self.hyper.profile_dim],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyper() -> HyperParams {
        HyperParams {
            dim: 3,
            mlp_widths: vec![5, 2],
            ..HyperParams::default()
        }
    }

    fn tanh_layer(w: &Tensor, b: &Tensor, x: &[f64], act: bool) -> Vec<f64> {
        (0..w.rows())
            .map(|r| {
                let s: f64 = w.row(r).iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b.data()[r];
                if act {
                    s.tanh()
                } else {
                    s
                }
            })
            .collect()
    }

    #[test]
    fn matches_naive_oracle() {
        let m = EmbeddingMlp::new(hyper(), 6, 3, 2).unwrap();
        let history = [ItemKey::new(1, 1), ItemKey::new(4, 2), ItemKey::new(1, 1)];
        let target = ItemKey::new(5, 2);
        let t = |n: &str| m.store.get(m.store.id(n).unwrap());
        let mut x = vec![0.0; 3];
        for k in &history {
            for j in 0..3 {
                x[j] += t("item_emb").get2(k.item as usize, j)
                    + t("cat_emb").get2(k.category as usize, j);
            }
        }
        x.extend_from_slice(t("item_emb").row(5));
        x.extend_from_slice(t("cat_emb").row(2));
        let h = tanh_layer(t("mlp.0.w"), t("mlp.0.b"), &x, true);
        let o = tanh_layer(t("mlp.1.w"), t("mlp.1.b"), &h, false);
        let p = 1.0 / (1.0 + (o[0] - o[1]).exp());
        let got = m.predict(&history, target, &[]).unwrap();
        assert!((got - p).abs() < 1e-12, "{got} vs {p}");
    }

    #[test]
    fn order_invariant_and_zero_head_is_one_half() {
        let mut m = EmbeddingMlp::new(hyper(), 6, 3, 2).unwrap();
        let a = [ItemKey::new(1, 1), ItemKey::new(2, 2), ItemKey::new(3, 1)];
        let b = [ItemKey::new(3, 1), ItemKey::new(1, 1), ItemKey::new(2, 2)];
        let t = ItemKey::new(4, 2);
        let (pa, pb) = (
            m.predict(&a, t, &[]).unwrap(),
            m.predict(&b, t, &[]).unwrap(),
        );
        assert!((pa - pb).abs() < 1e-12);
        for n in ["mlp.1.w", "mlp.1.b"] {
            let id = m.store.id(n).unwrap();
            m.store.get_mut(id).data_mut().fill(0.0);
        }
        assert_eq!(m.predict(&a, t, &[]).unwrap(), 0.5);
    }
}
