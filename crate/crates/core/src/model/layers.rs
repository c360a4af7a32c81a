//! Parameter blocks shared by the memory network and the baseline.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelError;
use crate::grad::{GradError, Graph, ParamId, ParamStore, Tensor};

pub(crate) fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

pub(crate) fn normal_table(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Looks up `name` and checks its shape.
pub(crate) fn lookup(
    store: &ParamStore,
    name: &str,
    shape: &[usize],
) -> Result<ParamId, ModelError> {
    let id = store
        .id(name)
        .ok_or_else(|| ModelError::MissingParam(name.to_string()))?;
    let got = store.get(id).shape();
    if got != shape {
        return Err(ModelError::ParamShape {
            name: name.to_string(),
            expected: shape.to_vec(),
            got: got.to_vec(),
        });
    }
    Ok(id)
}

/// Gated recurrent unit weights, shared across all induction channels.
#[derive(Clone, Debug)]
pub struct GruIds {
    wz: ParamId,
    uz: ParamId,
    bz: ParamId,
    wr: ParamId,
    ur: ParamId,
    br: ParamId,
    wn: ParamId,
    un: ParamId,
    bn: ParamId,
}

pub struct GruVars<V> {
    pub wz: V,
    pub uz: V,
    pub bz: V,
    pub wr: V,
    pub ur: V,
    pub br: V,
    pub wn: V,
    pub un: V,
    pub bn: V,
}

const GRU_NAMES: [&str; 9] = ["wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn"];

impl GruIds {
    pub(crate) fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut ids = Vec::with_capacity(9);
        for name in GRU_NAMES {
            let t = match &name[..1] {
                "w" => xavier(rng, hidden, input),
                "u" => xavier(rng, hidden, hidden),
                _ => Tensor::zeros(&[hidden]),
            };
            ids.push(store.add(format!("{prefix}.{name}"), t));
        }
        Self::from_ids(&ids)
    }

    pub(crate) fn resolve(
        store: &ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self, ModelError> {
        let mut ids = Vec::with_capacity(9);
        for name in GRU_NAMES {
            let shape: Vec<usize> = match &name[..1] {
                "w" => vec![hidden, input],
                "u" => vec![hidden, hidden],
                _ => vec![hidden],
            };
            ids.push(lookup(store, &format!("{prefix}.{name}"), &shape)?);
        }
        Ok(Self::from_ids(&ids))
    }

    fn from_ids(ids: &[ParamId]) -> Self {
        GruIds {
            wz: ids[0],
            uz: ids[1],
            bz: ids[2],
            wr: ids[3],
            ur: ids[4],
            br: ids[5],
            wn: ids[6],
            un: ids[7],
            bn: ids[8],
        }
    }

    pub fn bind<G: Graph>(&self, g: &mut G) -> GruVars<G::Var> {
        GruVars {
            wz: g.param(self.wz),
            uz: g.param(self.uz),
            bz: g.param(self.bz),
            wr: g.param(self.wr),
            ur: g.param(self.ur),
            br: g.param(self.br),
            wn: g.param(self.wn),
            un: g.param(self.un),
            bn: g.param(self.bn),
        }
    }
}

/// `z = σ(Wz x + Uz h + bz)`, `r = σ(Wr x + Ur h + br)`,
/// `n = tanh(Wn x + Un (r ⊙ h) + bn)`, `h' = n + z ⊙ (h - n)`.
pub fn gru_cell<G: Graph>(
    g: &mut G,
    p: &GruVars<G::Var>,
    x: &G::Var,
    h: &G::Var,
) -> Result<G::Var, GradError> {
    let gate = |g: &mut G, w: &G::Var, u: &G::Var, b: &G::Var, hh: &G::Var| {
        let wx = g.matmul(w, x)?;
        let uh = g.matmul(u, hh)?;
        let s = g.add(&wx, &uh)?;
        g.add(&s, b)
    };
    let z_pre = gate(g, &p.wz, &p.uz, &p.bz, h)?;
    let z = g.sigmoid(&z_pre)?;
    let r_pre = gate(g, &p.wr, &p.ur, &p.br, h)?;
    let r = g.sigmoid(&r_pre)?;
    let rh = g.mul(&r, h)?;
    let n_pre = gate(g, &p.wn, &p.un, &p.bn, &rh)?;
    let n = g.tanh(&n_pre)?;
    let diff = g.sub(h, &n)?;
    let zd = g.mul(&z, &diff)?;
    g.add(&n, &zd)
}

/// Fully connected stack with `tanh` hidden activations and a linear output.
#[derive(Clone, Debug)]
pub struct MlpIds {
    layers: Vec<(ParamId, ParamId)>,
}

impl MlpIds {
    pub(crate) fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        widths: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            let wid = store.add(format!("{prefix}.{i}.w"), xavier(rng, w, fan_in));
            let bid = store.add(format!("{prefix}.{i}.b"), Tensor::zeros(&[w]));
            layers.push((wid, bid));
            fan_in = w;
        }
        MlpIds { layers }
    }

    pub(crate) fn resolve(
        store: &ParamStore,
        prefix: &str,
        input: usize,
        widths: &[usize],
    ) -> Result<Self, ModelError> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            let wid = lookup(store, &format!("{prefix}.{i}.w"), &[w, fan_in])?;
            let bid = lookup(store, &format!("{prefix}.{i}.b"), &[w])?;
            layers.push((wid, bid));
            fan_in = w;
        }
        Ok(MlpIds { layers })
    }

    pub fn bind<G: Graph>(&self, g: &mut G) -> Vec<(G::Var, G::Var)> {
        self.layers
            .iter()
            .map(|&(w, b)| (g.param(w), g.param(b)))
            .collect()
    }

    pub fn bias_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.layers.iter().map(|&(_, b)| b)
    }
}

pub fn mlp_forward<G: Graph>(
    g: &mut G,
    layers: &[(G::Var, G::Var)],
    input: &G::Var,
) -> Result<G::Var, GradError> {
    let mut x = input.clone();
    for (i, (w, b)) in layers.iter().enumerate() {
        let pre = g.affine(w, &x, b)?;
        x = if i + 1 < layers.len() {
            g.tanh(&pre)?
        } else {
            pre
        };
    }
    Ok(x)
}
