//! NTM memory addressing, re-balanced writes, the utilization penalty and
//! the induction unit.
//!
//! Each operation is written once against [`Graph`] and also exposed on
//! plain tensors for direct use and testing.

use std::cmp::Ordering;

use super::layers::{gru_cell, GruVars};
use super::{MimnParams, ModelError};
use crate::grad::{Eval, GradError, Graph, ParamStore, Tensor};

/// Per-event heads produced by the controller.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerOutput {
    pub read_key: Tensor,
    pub write_key: Tensor,
    /// `tanh`, in `[-1, 1]`.
    pub add: Tensor,
    /// `sigmoid`, in `(0, 1)`.
    pub erase: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadResult {
    pub weights: Tensor,
    pub readout: Tensor,
}

pub(crate) struct ControllerVars<V> {
    pub read: (V, V),
    pub write: (V, V),
    pub add: (V, V),
    pub erase: (V, V),
}

pub(crate) struct Heads<V> {
    pub read_key: V,
    pub write_key: V,
    pub add: V,
    pub erase: V,
}

pub(crate) fn controller<G: Graph>(
    g: &mut G,
    c: &ControllerVars<G::Var>,
    emb: &G::Var,
) -> Result<Heads<G::Var>, GradError> {
    let read_key = g.affine(&c.read.0, emb, &c.read.1)?;
    let write_key = g.affine(&c.write.0, emb, &c.write.1)?;
    let add_pre = g.affine(&c.add.0, emb, &c.add.1)?;
    let add = g.tanh(&add_pre)?;
    let erase_pre = g.affine(&c.erase.0, emb, &c.erase.1)?;
    let erase = g.sigmoid(&erase_pre)?;
    Ok(Heads {
        read_key,
        write_key,
        add,
        erase,
    })
}

/// Content addressing: softmax over cosine similarity of `key` to each slot.
pub(crate) fn address<G: Graph>(
    g: &mut G,
    key: &G::Var,
    memory: &G::Var,
) -> Result<G::Var, GradError> {
    let sims = g.cosine(key, memory)?;
    g.softmax(&sims)
}

/// `softmax(W_g · usage) ⊙ w`.
pub(crate) fn rebalance<G: Graph>(
    g: &mut G,
    weights: &G::Var,
    usage: &G::Var,
    transfer: &G::Var,
) -> Result<G::Var, GradError> {
    let logits = g.matmul(transfer, usage)?;
    let p = g.softmax(&logits)?;
    g.mul(weights, &p)
}

/// `(1 - w ⊗ erase) ⊙ M + w ⊗ add`.
pub(crate) fn write<G: Graph>(
    g: &mut G,
    memory: &G::Var,
    weights: &G::Var,
    erase: &G::Var,
    add: &G::Var,
) -> Result<G::Var, GradError> {
    let shape = g.value(memory).shape().to_vec();
    let ones = g.constant(Tensor::filled(&shape, 1.0));
    let erase_m = g.outer(weights, erase)?;
    let keep = g.sub(&ones, &erase_m)?;
    let kept = g.mul(&keep, memory)?;
    let add_m = g.outer(weights, add)?;
    g.add(&kept, &add_m)
}

/// `λ Σ_i (w_i - mean(w))²`.
pub(crate) fn utilization_penalty<G: Graph>(
    g: &mut G,
    w_sum: &G::Var,
    lambda: f64,
) -> Result<G::Var, GradError> {
    let m = g.value(w_sum).len();
    let averaging = g.constant(Tensor::filled(&[m, m], 1.0 / m as f64));
    let mean = g.matmul(&averaging, w_sum)?;
    let centered = g.sub(w_sum, &mean)?;
    let sq = g.mul(&centered, &centered)?;
    let total = g.sum(&sq)?;
    g.scale(&total, lambda)
}

/// Indices of the `k` largest weights, ties resolved toward the lower slot.
/// Returned in ascending slot order.
pub fn top_k(weights: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        weights[b]
            .partial_cmp(&weights[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut chosen: Vec<usize> = order.into_iter().take(k).collect();
    chosen.sort_unstable();
    chosen
}

/// Advances the induction memory: selected rows pass through the shared
/// GRU with input `[M(i); emb]`, all other rows are carried over.
pub(crate) fn induct<G: Graph>(
    g: &mut G,
    gru: &GruVars<G::Var>,
    induction: &G::Var,
    memory: &G::Var,
    read_weights: &G::Var,
    emb: &G::Var,
    k_top: usize,
) -> Result<G::Var, GradError> {
    let chosen = top_k(g.value(read_weights).data(), k_top);
    let m = g.value(induction).rows();
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let s_i = g.row(induction, i)?;
        if chosen.binary_search(&i).is_ok() {
            let m_i = g.row(memory, i)?;
            let x = g.concat(&[&m_i, emb])?;
            rows.push(gru_cell(g, gru, &x, &s_i)?);
        } else {
            rows.push(s_i);
        }
    }
    let refs: Vec<&G::Var> = rows.iter().collect();
    g.stack(&refs)
}

// Tensor-level entry points.

pub fn controller_step(params: &MimnParams, emb: &Tensor) -> Result<ControllerOutput, ModelError> {
    let mut g = Eval::new(&params.store);
    let c = params.bind_controller(&mut g);
    let e = g.constant(emb.clone());
    let h = controller(&mut g, &c, &e)?;
    Ok(ControllerOutput {
        read_key: h.read_key.into_owned(),
        write_key: h.write_key.into_owned(),
        add: h.add.into_owned(),
        erase: h.erase.into_owned(),
    })
}

pub fn memory_read(memory: &Tensor, key: &Tensor) -> Result<ReadResult, ModelError> {
    let empty = ParamStore::new();
    let mut g = Eval::new(&empty);
    let m = g.constant(memory.clone());
    let k = g.constant(key.clone());
    let w = address(&mut g, &k, &m)?;
    let r = g.matmul(&w, &m)?;
    Ok(ReadResult {
        weights: w.into_owned(),
        readout: r.into_owned(),
    })
}

pub fn memory_write(
    memory: &Tensor,
    weights: &Tensor,
    erase: &Tensor,
    add: &Tensor,
) -> Result<Tensor, ModelError> {
    let empty = ParamStore::new();
    let mut g = Eval::new(&empty);
    let vars = [memory, weights, erase, add].map(|t| g.constant(t.clone()));
    Ok(write(&mut g, &vars[0], &vars[1], &vars[2], &vars[3])?.into_owned())
}

pub fn rebalance_write_weight(
    weights: &Tensor,
    usage: &Tensor,
    transfer: &Tensor,
) -> Result<Tensor, ModelError> {
    let empty = ParamStore::new();
    let mut g = Eval::new(&empty);
    let vars = [weights, usage, transfer].map(|t| g.constant(t.clone()));
    Ok(rebalance(&mut g, &vars[0], &vars[1], &vars[2])?.into_owned())
}

pub fn utilization_reg_loss(w_sum: &Tensor, lambda: f64) -> Result<f64, ModelError> {
    let empty = ParamStore::new();
    let mut g = Eval::new(&empty);
    let w = g.constant(w_sum.clone());
    Ok(utilization_penalty(&mut g, &w, lambda)?.item())
}

pub fn miu_update(
    params: &MimnParams,
    induction: &Tensor,
    memory: &Tensor,
    read_weights: &Tensor,
    emb: &Tensor,
    k_top: usize,
) -> Result<Tensor, ModelError> {
    if k_top == 0 || k_top > read_weights.len() {
        return Err(ModelError::InvalidHyper(format!(
            "k_top {k_top} outside 1..={}",
            read_weights.len()
        )));
    }
    let mut g = Eval::new(&params.store);
    let gru = params.gru.bind(&mut g);
    let vars = [induction, memory, read_weights, emb].map(|t| g.constant(t.clone()));
    Ok(induct(&mut g, &gru, &vars[0], &vars[1], &vars[2], &vars[3], k_top)?.into_owned())
}
