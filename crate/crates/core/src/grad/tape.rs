use std::borrow::Cow;

use super::prim::{self, Prim};
use super::{GradError, GradientSet, Graph, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Source {
    Constant,
    Param(ParamId),
    ParamRow(ParamId, usize),
    Op(Prim, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node<'p> {
    source: Source,
    value: Cow<'p, Tensor>,
}

/// Linear record of primitive evaluations, replayed in reverse for gradients.
#[derive(Clone, Debug)]
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The most recently recorded node.
    pub fn last(&self) -> Option<NodeId> {
        self.nodes.len().checked_sub(1).map(NodeId)
    }

    /// Number of recorded primitive applications (excludes leaves).
    pub fn op_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.source, Source::Op(..)))
            .count()
    }

    pub fn ops(&self) -> impl Iterator<Item = Prim> + '_ {
        self.nodes.iter().filter_map(|n| match n.source {
            Source::Op(p, _) => Some(p),
            _ => None,
        })
    }

    /// Recomputes every node from its recorded inputs. The result is
    /// compared bit-for-bit against the recorded values in tests.
    pub fn replay(&self) -> Result<Vec<Tensor>, GradError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.source {
                Source::Constant => node.value.as_ref().clone(),
                Source::Param(id) => self.params.get(*id).clone(),
                Source::ParamRow(id, r) => prim::forward(Prim::Row(*r), &[self.params.get(*id)])?,
                Source::Op(op, inputs) => {
                    let args: Vec<&Tensor> = inputs.iter().map(|&i| &values[i]).collect();
                    prim::forward(*op, &args)?
                }
            };
            values.push(v);
        }
        Ok(values)
    }

    pub fn recorded_values(&self) -> impl Iterator<Item = &Tensor> {
        self.nodes.iter().map(|n| n.value.as_ref())
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Result<GradientSet, GradError> {
        let mut grads = GradientSet::zeros_like(self.params);
        self.backward_into(loss, 1.0, &mut grads)?;
        Ok(grads)
    }

    /// Adds `weight · ∂loss/∂θ` into `grads`.
    pub fn backward_into(
        &self,
        loss: NodeId,
        weight: f64,
        grads: &mut GradientSet,
    ) -> Result<(), GradError> {
        let loss_value = self.nodes[loss.0].value.as_ref();
        if !loss_value.is_scalar() {
            return Err(GradError::NonScalarLoss {
                shape: loss_value.shape().to_vec(),
            });
        }
        let mut node_grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        node_grads[loss.0] = Some(Tensor::filled(loss_value.shape(), weight));

        for idx in (0..=loss.0).rev() {
            let Some(grad) = node_grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match &node.source {
                Source::Constant => {}
                Source::Param(id) => grads.get_mut(*id).add_assign(&grad),
                Source::ParamRow(id, r) => {
                    let row = grads.get_mut(*id).row_mut(*r);
                    for (a, b) in row.iter_mut().zip(grad.data()) {
                        *a += b;
                    }
                }
                Source::Op(op, inputs) => {
                    let args: Vec<&Tensor> = inputs
                        .iter()
                        .map(|&i| self.nodes[i].value.as_ref())
                        .collect();
                    let input_grads = prim::backward(*op, &args, &node.value, &grad);
                    for (&i, g) in inputs.iter().zip(input_grads) {
                        match &mut node_grads[i] {
                            Some(acc) => acc.add_assign(&g),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn push(&mut self, source: Source, value: Cow<'p, Tensor>) -> NodeId {
        self.nodes.push(Node { source, value });
        NodeId(self.nodes.len() - 1)
    }
}

impl<'p> Graph for Tape<'p> {
    type Var = NodeId;

    fn params(&self) -> &ParamStore {
        self.params
    }

    fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Source::Constant, Cow::Owned(value))
    }

    fn param(&mut self, id: ParamId) -> NodeId {
        let params = self.params;
        self.push(Source::Param(id), Cow::Borrowed(params.get(id)))
    }

    fn param_row(&mut self, id: ParamId, row: usize) -> Result<NodeId, GradError> {
        let value = prim::forward(Prim::Row(row), &[self.params.get(id)])?;
        Ok(self.push(Source::ParamRow(id, row), Cow::Owned(value)))
    }

    fn apply(&mut self, op: Prim, inputs: &[&NodeId]) -> Result<NodeId, GradError> {
        let value = {
            let args: Vec<&Tensor> = inputs
                .iter()
                .map(|n| self.nodes[n.0].value.as_ref())
                .collect();
            prim::forward(op, &args)?
        };
        let idx = inputs.iter().map(|n| n.0).collect();
        Ok(self.push(Source::Op(op, idx), Cow::Owned(value)))
    }

    fn value<'a>(&'a self, var: &'a NodeId) -> &'a Tensor {
        self.nodes[var.0].value.as_ref()
    }
}

/// Runs `build` on a fresh tape and returns the output value with the tape.
pub fn evaluate<'p, F>(params: &'p ParamStore, build: F) -> Result<(Tensor, Tape<'p>), GradError>
where
    F: FnOnce(&mut Tape<'p>) -> Result<NodeId, GradError>,
{
    let mut tape = Tape::new(params);
    let out = build(&mut tape)?;
    let value = tape.value(&out).clone();
    Ok((value, tape))
}
